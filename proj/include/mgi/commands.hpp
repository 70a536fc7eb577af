#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mgi/model.hpp"
#include "mgi/synthetic.hpp"
#include "mgi/training.hpp"

namespace mgi {

/// Effective configuration of a pipeline run: the structured config file
/// with command-line and environment overrides applied.
struct RunConfig {
    std::filesystem::path data_dir = "data";
    std::filesystem::path cache_dir = "cache";
    std::filesystem::path out_dir = "out";
    std::uint64_t seed = 0;
    int fold = -1; // -1 = run every fold
    std::size_t num_folds = 5;
    int workers = 1; // data-stage parallelism; 1 keeps runs deterministic

    ModelConfig model = ModelConfig::defaults_for(Variant::MGI);
    TrainConfig train;
    SyntheticSpec synthetic;

    std::size_t bootstrap_n = 1000;
    double evaluation_threshold = 0.5;
    std::optional<std::size_t> num_scans; // FROC denominator override
    double max_slice_thickness_mm = 2.5;

    static RunConfig from_json_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

/// Exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

int cmd_synth(const RunConfig& cfg);
int cmd_extract(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_predict(const RunConfig& cfg, const std::optional<std::filesystem::path>& checkpoint);
int cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& predictions_csv,
                 const std::filesystem::path& gt_csv);

} // namespace mgi
