#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mgi/commands.hpp"
#include "mgi/errors.hpp"

namespace {

/// Precedence: command-line flags > MGICNN_* environment variables >
/// config file > built-in defaults. Environment overrides exist for the
/// path roots only.
void apply_env_paths(mgi::RunConfig& cfg) {
    if (const char* v = std::getenv("MGICNN_DATA_DIR")) cfg.data_dir = v;
    if (const char* v = std::getenv("MGICNN_CACHE_DIR")) cfg.cache_dir = v;
    if (const char* v = std::getenv("MGICNN_OUT_DIR")) cfg.out_dir = v;
}

struct CommonFlags {
    std::string config_file;
    std::optional<std::string> data_dir, cache_dir, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> fold;
    std::optional<int> workers;
    std::optional<int> threads;
    std::optional<std::string> variant, fusion;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr;

    void add_to(CLI::App& app) {
        app.add_option("--config", config_file, "JSON config file");
        app.add_option("--data-dir", data_dir, "dataset directory");
        app.add_option("--cache-dir", cache_dir, "patch cache directory");
        app.add_option("--out-dir", out_dir, "output directory");
        app.add_option("--seed", seed, "master seed for every stochastic component");
        app.add_option("--fold", fold, "fold index (default: all folds)");
        app.add_option("--workers", workers, "data-stage worker count (default 1)");
        app.add_option("--threads", threads, "model math threads (0 = hardware)");
        app.add_option("--variant", variant, "model variant: MGI, RI, LR, ZI, ZO");
        app.add_option("--fusion", fusion, "MGI stream fusion: concat, sum, conv1x1");
        app.add_option("--epochs", epochs, "training epochs");
        app.add_option("--batch-size", batch_size, "mini-batch size");
        app.add_option("--lr", lr, "base learning rate");
    }

    mgi::RunConfig resolve() const {
        mgi::RunConfig cfg;
        if (!config_file.empty())
            cfg = mgi::RunConfig::from_json_file(config_file);
        apply_env_paths(cfg);
        if (data_dir) cfg.data_dir = *data_dir;
        if (cache_dir) cfg.cache_dir = *cache_dir;
        if (out_dir) cfg.out_dir = *out_dir;
        if (seed) cfg.seed = *seed;
        if (fold) cfg.fold = *fold;
        if (workers) cfg.workers = *workers;
        if (threads) cfg.train.threads = *threads;
        if (variant) {
            const auto v = mgi::parse_variant(*variant);
            // Re-derive width defaults when the config file did not pin them.
            const bool custom = !config_file.empty() &&
                                cfg.model.fc_widths !=
                                    mgi::ModelConfig::defaults_for(cfg.model.variant).fc_widths;
            const auto fusion_keep = cfg.model.fusion;
            if (!custom) cfg.model = mgi::ModelConfig::defaults_for(v);
            cfg.model.variant = v;
            cfg.model.fusion = fusion_keep;
        }
        if (fusion) cfg.model.fusion = mgi::parse_fusion(*fusion);
        if (epochs) cfg.train.epochs = *epochs;
        if (batch_size) cfg.train.batch_size = *batch_size;
        if (lr) cfg.train.base_lr = *lr;
        return cfg;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pulmonary nodule false-positive reduction pipeline"};
    app.require_subcommand(1);

    CommonFlags synth_flags, extract_flags, train_flags, predict_flags, eval_flags;
    std::string checkpoint, predictions_csv, gt_csv;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_flags.add_to(*synth);
    auto* extract = app.add_subcommand("extract", "build the multi-scale patch cache");
    extract_flags.add_to(*extract);
    auto* train = app.add_subcommand("train", "train per-fold models");
    train_flags.add_to(*train);
    auto* predict = app.add_subcommand("predict", "write test-fold probabilities");
    predict_flags.add_to(*predict);
    predict->add_option("--checkpoint", checkpoint, "explicit checkpoint (requires --fold)");
    auto* evaluate = app.add_subcommand("evaluate", "FROC/CPM report from CSVs");
    eval_flags.add_to(*evaluate);
    evaluate->add_option("--predictions", predictions_csv, "prediction CSV")->required();
    evaluate->add_option("--gt", gt_csv, "ground-truth CSV")->required();

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return mgi::cmd_synth(synth_flags.resolve());
        if (extract->parsed()) return mgi::cmd_extract(extract_flags.resolve());
        if (train->parsed()) return mgi::cmd_train(train_flags.resolve());
        if (predict->parsed()) {
            std::optional<std::filesystem::path> ckpt;
            if (!checkpoint.empty()) ckpt = checkpoint;
            return mgi::cmd_predict(predict_flags.resolve(), ckpt);
        }
        if (evaluate->parsed())
            return mgi::cmd_evaluate(eval_flags.resolve(), predictions_csv, gt_csv);
        return mgi::kExitUsage;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : mgi::kExitUsage;
    } catch (const mgi::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return mgi::kExitUsage;
    } catch (const mgi::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return mgi::kExitNumeric;
    } catch (const mgi::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return mgi::kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return mgi::kExitData;
    }
}
