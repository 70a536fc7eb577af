#include "mgi/commands.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "mgi/errors.hpp"
#include "mgi/evaluation.hpp"
#include "mgi/patching.hpp"

namespace mgi {

namespace {

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"base_lr", c.base_lr},
                          {"lr_decay_per_epoch", c.lr_decay_per_epoch},
                          {"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"momentum", c.momentum},
                          {"dropout", c.dropout},
                          {"l2", c.l2},
                          {"threads", c.threads}};
}

void train_config_from_json(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("base_lr")) c.base_lr = j.at("base_lr").get<double>();
    if (j.contains("lr_decay_per_epoch"))
        c.lr_decay_per_epoch = j.at("lr_decay_per_epoch").get<double>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("l2")) c.l2 = j.at("l2").get<double>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
    return nlohmann::json{{"num_scans", s.num_scans},
                          {"volume_shape", s.volume_shape},
                          {"spacing_mm", s.spacing_mm},
                          {"nodules_per_scan", s.nodules_per_scan},
                          {"nodule_radius_mm", {s.nodule_radius_mm_min, s.nodule_radius_mm_max}},
                          {"nodule_hu", {s.nodule_hu_min, s.nodule_hu_max}},
                          {"distractors_per_scan", s.distractors_per_scan},
                          {"tube_radius_mm", {s.tube_radius_mm_min, s.tube_radius_mm_max}},
                          {"tube_length_mm", {s.tube_length_mm_min, s.tube_length_mm_max}},
                          {"noise_sigma_hu", s.noise_sigma_hu}};
}

void synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec& s) {
    if (j.contains("num_scans")) s.num_scans = j.at("num_scans").get<std::size_t>();
    if (j.contains("volume_shape"))
        s.volume_shape = j.at("volume_shape").get<std::array<std::size_t, 3>>();
    if (j.contains("spacing_mm")) s.spacing_mm = j.at("spacing_mm").get<Vec3>();
    if (j.contains("nodules_per_scan"))
        s.nodules_per_scan = j.at("nodules_per_scan").get<std::size_t>();
    if (j.contains("nodule_radius_mm")) {
        s.nodule_radius_mm_min = j.at("nodule_radius_mm").at(0).get<double>();
        s.nodule_radius_mm_max = j.at("nodule_radius_mm").at(1).get<double>();
    }
    if (j.contains("nodule_hu")) {
        s.nodule_hu_min = j.at("nodule_hu").at(0).get<double>();
        s.nodule_hu_max = j.at("nodule_hu").at(1).get<double>();
    }
    if (j.contains("distractors_per_scan"))
        s.distractors_per_scan = j.at("distractors_per_scan").get<std::size_t>();
    if (j.contains("tube_radius_mm")) {
        s.tube_radius_mm_min = j.at("tube_radius_mm").at(0).get<double>();
        s.tube_radius_mm_max = j.at("tube_radius_mm").at(1).get<double>();
    }
    if (j.contains("tube_length_mm")) {
        s.tube_length_mm_min = j.at("tube_length_mm").at(0).get<double>();
        s.tube_length_mm_max = j.at("tube_length_mm").at(1).get<double>();
    }
    if (j.contains("noise_sigma_hu")) s.noise_sigma_hu = j.at("noise_sigma_hu").get<double>();
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    nlohmann::json extra = {}) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    nlohmann::json j;
    j["command"] = command;
    j["effective_config"] = cfg.to_json();
    if (!extra.is_null()) j["run"] = std::move(extra);
    std::ofstream out(cfg.out_dir / ("manifest_" + command + ".json"));
    if (out) out << j.dump(2) << '\n';
}

std::filesystem::path checkpoint_path(const RunConfig& cfg, std::size_t fold) {
    return cfg.out_dir / ("model_fold" + std::to_string(fold) + ".ckpt");
}

std::vector<std::size_t> selected_folds(const RunConfig& cfg) {
    if (cfg.fold >= 0) {
        if (static_cast<std::size_t>(cfg.fold) >= cfg.num_folds)
            throw UsageError("fold index " + std::to_string(cfg.fold) +
                             " out of range for " + std::to_string(cfg.num_folds) +
                             " folds");
        return {static_cast<std::size_t>(cfg.fold)};
    }
    std::vector<std::size_t> all(cfg.num_folds);
    for (std::size_t f = 0; f < cfg.num_folds; ++f) all[f] = f;
    return all;
}

} // namespace

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
    }

    RunConfig cfg;
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        if (p.contains("data_dir")) cfg.data_dir = p.at("data_dir").get<std::string>();
        if (p.contains("cache_dir")) cfg.cache_dir = p.at("cache_dir").get<std::string>();
        if (p.contains("out_dir")) cfg.out_dir = p.at("out_dir").get<std::string>();
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("fold")) cfg.fold = j.at("fold").get<int>();
    if (j.contains("num_folds")) cfg.num_folds = j.at("num_folds").get<std::size_t>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) train_config_from_json(j.at("train"), cfg.train);
    if (j.contains("synthetic")) synthetic_spec_from_json(j.at("synthetic"), cfg.synthetic);
    if (j.contains("evaluate")) {
        const auto& e = j.at("evaluate");
        if (e.contains("bootstrap_n")) cfg.bootstrap_n = e.at("bootstrap_n").get<std::size_t>();
        if (e.contains("threshold"))
            cfg.evaluation_threshold = e.at("threshold").get<double>();
        if (e.contains("num_scans")) cfg.num_scans = e.at("num_scans").get<std::size_t>();
    }
    if (j.contains("max_slice_thickness_mm"))
        cfg.max_slice_thickness_mm = j.at("max_slice_thickness_mm").get<double>();
    return cfg;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["paths"] = {{"data_dir", data_dir.string()},
                  {"cache_dir", cache_dir.string()},
                  {"out_dir", out_dir.string()}};
    j["seed"] = seed;
    j["fold"] = fold;
    j["num_folds"] = num_folds;
    j["workers"] = workers;
    j["model"] = model_config_to_json(model);
    j["train"] = train_config_to_json(train);
    j["synthetic"] = synthetic_spec_to_json(synthetic);
    j["evaluate"] = {{"bootstrap_n", bootstrap_n}, {"threshold", evaluation_threshold}};
    if (num_scans) j["evaluate"]["num_scans"] = *num_scans;
    j["max_slice_thickness_mm"] = max_slice_thickness_mm;
    return j;
}

int cmd_synth(const RunConfig& cfg) {
    SyntheticSpec spec = cfg.synthetic;
    spec.seed = cfg.seed;
    const SyntheticDataset data = generate(spec);
    export_dataset(data, cfg.data_dir);
    write_manifest(cfg, "synth",
                   {{"scans", data.volumes.size()},
                    {"gt_nodules", data.gt.size()},
                    {"candidates", data.candidates.size()}});
    std::cout << "synth: wrote " << data.volumes.size() << " scans, " << data.gt.size()
              << " ground-truth nodules, " << data.candidates.size() << " candidates to "
              << cfg.data_dir.string() << '\n';
    return kExitOk;
}

int cmd_extract(const RunConfig& cfg) {
    const auto candidates = read_candidates_csv(cfg.data_dir / "candidates.csv");

    // Candidates grouped by series; series processed in sorted order so the
    // cache layout is independent of worker count.
    std::map<std::string, std::vector<std::size_t>> by_series;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        by_series[candidates[i].series_id].push_back(i);

    PatchCache cache;
    std::vector<std::string> missing_series;
    std::vector<std::string> skipped_thickness;
    std::vector<std::string> degenerate;

    for (const auto& [series, indices] : by_series) {
        const auto mhd = cfg.data_dir / (series + ".mhd");
        if (!std::filesystem::exists(mhd)) {
            missing_series.push_back(series);
            continue;
        }
        const Volume volume = load_volume(mhd);
        if (volume.slice_thickness_mm() > cfg.max_slice_thickness_mm) {
            skipped_thickness.push_back(series);
            continue;
        }

        std::vector<PatchRecord> records(indices.size());
        std::vector<std::string> errors(indices.size());
        const int workers = cfg.workers <= 0 ? omp_get_max_threads() : cfg.workers;
#pragma omp parallel for schedule(static) num_threads(workers)
        for (long k = 0; k < static_cast<long>(indices.size()); ++k) {
            const auto& c = candidates[indices[static_cast<std::size_t>(k)]];
            auto& rec = records[static_cast<std::size_t>(k)];
            rec.candidate = c;
            try {
                if (c.is_nodule()) {
                    rec.shift_variants.reserve(27);
                    for (const auto& shift : all_shift_vectors())
                        rec.shift_variants.push_back(extract_multiscale(volume, c, shift));
                } else {
                    rec.shift_variants.push_back(extract_multiscale(volume, c));
                }
            } catch (const Error& e) {
                errors[static_cast<std::size_t>(k)] = e.what();
            }
        }
        for (std::size_t k = 0; k < indices.size(); ++k) {
            if (!errors[k].empty())
                degenerate.push_back(errors[k]);
            else
                cache.records.push_back(std::move(records[k]));
        }
    }

    std::error_code ec;
    std::filesystem::create_directories(cfg.cache_dir, ec);
    if (ec)
        throw DataError("cannot create cache directory " + cfg.cache_dir.string() + ": " +
                        ec.message());
    write_patch_cache(cache, cfg.cache_dir / "patches.bin");

    write_manifest(cfg, "extract",
                   {{"candidates", candidates.size()},
                    {"records", cache.records.size()},
                    {"missing_series", missing_series},
                    {"skipped_thickness", skipped_thickness},
                    {"degenerate", degenerate.size()}});
    std::cout << "extract: " << cache.records.size() << " of " << candidates.size()
              << " candidates cached";
    if (!skipped_thickness.empty())
        std::cout << "; " << skipped_thickness.size() << " series over "
                  << cfg.max_slice_thickness_mm << " mm slice thickness";
    std::cout << '\n';
    for (const auto& s : missing_series)
        std::cerr << "extract: no volume for series " << s << '\n';
    for (const auto& msg : degenerate) std::cerr << "extract: skipped: " << msg << '\n';
    return missing_series.empty() && degenerate.empty() ? kExitOk : kExitData;
}

int cmd_train(const RunConfig& cfg) {
    const PatchCache cache = read_patch_cache(cfg.cache_dir / "patches.bin");
    const FoldPlan plan = make_folds(cache.series_ids(), cfg.num_folds, cfg.seed);

    nlohmann::json fold_runs = nlohmann::json::array();
    for (const std::size_t f : selected_folds(cfg)) {
        ModelConfig mc = cfg.model;
        mc.dropout_rate = cfg.train.dropout;
        Model<float> model(mc);
        model.initialize(derive_seed(cfg.seed, 1000 + f));
        model.set_threads(cfg.train.threads);

        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, 2000 + f);

        std::vector<std::string> warnings;
        const auto stream = assemble_training_set(
            plan.folds[f], cache, [&](const std::string& w) {
                warnings.push_back(w);
                std::cerr << "train fold " << f << ": warning: " << w << '\n';
            });

        const auto t0 = std::chrono::steady_clock::now();
        const TrainResult result = train(model, cache, stream, tc);
        const double wall = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();

        save_checkpoint(model, checkpoint_path(cfg, f));
        fold_runs.push_back({{"fold", f},
                             {"seed", tc.seed},
                             {"samples_per_epoch", stream.size()},
                             {"epoch_loss", result.epoch_loss},
                             {"wall_time_sec", wall},
                             {"warnings", warnings}});
        std::cout << "train fold " << f << ": " << stream.size() << " samples/epoch, "
                  << cfg.train.epochs << " epochs, final loss "
                  << result.epoch_loss.back() << ", " << wall << " s\n";
    }
    write_manifest(cfg, "train", {{"folds", fold_runs}});
    return kExitOk;
}

int cmd_predict(const RunConfig& cfg,
                const std::optional<std::filesystem::path>& checkpoint) {
    const PatchCache cache = read_patch_cache(cfg.cache_dir / "patches.bin");
    const FoldPlan plan = make_folds(cache.series_ids(), cfg.num_folds, cfg.seed);

    const auto folds = selected_folds(cfg);
    if (checkpoint && folds.size() != 1)
        throw UsageError("an explicit checkpoint requires --fold");

    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);

    std::vector<Candidate> combined;
    for (const std::size_t f : folds) {
        const auto path = checkpoint ? *checkpoint : checkpoint_path(cfg, f);
        Model<float> model = load_checkpoint<float>(path);
        if (model.config().variant != cfg.model.variant)
            throw UsageError("checkpoint " + path.string() + " holds variant " +
                             to_string(model.config().variant) +
                             " but the configuration asks for " +
                             to_string(cfg.model.variant));
        model.set_threads(cfg.train.threads);

        std::vector<const PatchRecord*> test_records;
        for (const auto& rec : cache.records)
            if (plan.folds[f].test_series.contains(rec.candidate.series_id))
                test_records.push_back(&rec);

        std::vector<Candidate> predictions;
        predictions.reserve(test_records.size());
        const std::size_t batch_size = static_cast<std::size_t>(
            std::max(1, cfg.train.batch_size));
        for (std::size_t begin = 0; begin < test_records.size(); begin += batch_size) {
            const std::size_t end = std::min(test_records.size(), begin + batch_size);
            std::vector<const PatchTriple*> triples;
            triples.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i)
                triples.push_back(&test_records[i]->base());
            const auto batch =
                make_batch<float>(std::span<const PatchTriple* const>(triples));
            const Tensor<float> probs = model.forward_probs(batch);
            for (std::size_t i = begin; i < end; ++i) {
                Candidate c = test_records[i]->candidate;
                c.probability = static_cast<double>(probs.data[(i - begin) * 2 + 1]);
                predictions.push_back(std::move(c));
            }
        }

        const auto csv = cfg.out_dir / ("predictions_fold" + std::to_string(f) + ".csv");
        write_predictions_csv(predictions, csv);
        std::cout << "predict fold " << f << ": " << predictions.size() << " rows -> "
                  << csv.string() << '\n';
        combined.insert(combined.end(), predictions.begin(), predictions.end());
    }

    if (folds.size() > 1) {
        write_predictions_csv(combined, cfg.out_dir / "predictions.csv");
        std::cout << "predict: combined " << combined.size() << " rows -> "
                  << (cfg.out_dir / "predictions.csv").string() << '\n';
    }
    write_manifest(cfg, "predict", {{"rows", combined.size()}});
    return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& predictions_csv,
                 const std::filesystem::path& gt_csv) {
    const auto predictions = read_predictions_csv(predictions_csv);
    const auto gt = read_gt_csv(gt_csv);

    std::set<std::string> series;
    for (const auto& p : predictions) series.insert(p.series_id);
    for (const auto& n : gt) series.insert(n.series_id);
    const std::size_t num_scans = cfg.num_scans.value_or(series.size());

    const FrocCurve curve = froc(predictions, gt, num_scans);
    const CpmResult result = cpm(predictions, gt, num_scans, cfg.bootstrap_n, cfg.seed);
    const ConfusionCounts counts =
        confusion_counts(predictions, gt, cfg.evaluation_threshold);
    const FpTriage triage = triage_fps(predictions, gt);

    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    write_froc_csv(curve, cfg.out_dir / "froc.csv");
    write_froc_svg(curve, cfg.out_dir / "froc.svg");

    nlohmann::json report;
    for (std::size_t i = 0; i < kCpmFpPerScan.size(); ++i) {
        report["sensitivity"][std::to_string(kCpmFpPerScan[i])] = result.sensitivities[i];
        std::cout << "sensitivity @ " << kCpmFpPerScan[i] << " FP/scan: "
                  << result.sensitivities[i] << '\n';
    }
    std::cout << "CPM: " << result.average << "  (95% CI " << result.ci_low << " - "
              << result.ci_high << ", " << cfg.bootstrap_n << " bootstrap replicates)\n";
    std::cout << "at threshold " << cfg.evaluation_threshold << ": TP in GT "
              << counts.tp_in_gt << " / " << gt.size() << ", FP " << counts.fp << ", FN "
              << counts.fn << '\n';
    std::cout << "FP triage: LC [0.5,0.7) " << triage.low.size() << ", MC [0.7,0.9) "
              << triage.moderate.size() << ", HC [0.9,1] " << triage.high.size() << '\n';

    report["cpm"] = {{"average", result.average},
                     {"ci_low", result.ci_low},
                     {"ci_high", result.ci_high},
                     {"bootstrap_n", cfg.bootstrap_n}};
    report["num_scans"] = num_scans;
    report["confusion"] = {{"threshold", cfg.evaluation_threshold},
                           {"tp_in_gt", counts.tp_in_gt},
                           {"fp", counts.fp},
                           {"fn", counts.fn}};
    report["fp_triage"] = {{"low", triage.low.size()},
                           {"moderate", triage.moderate.size()},
                           {"high", triage.high.size()}};
    std::ofstream rep(cfg.out_dir / "report.json");
    rep << report.dump(2) << '\n';

    write_manifest(cfg, "evaluate",
                   {{"predictions", predictions.size()}, {"gt", gt.size()}});
    return kExitOk;
}

} // namespace mgi
