#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mgi/errors.hpp"
#include "mgi/training.hpp"

using namespace mgi;

namespace {

/// Cache with `nodules` nodule records and `plains` non-nodule records per
/// series. Patch values carry a class-dependent blob so the tiny network has
/// something learnable.
PatchCache synthetic_cache(const std::vector<std::string>& series, std::size_t nodules,
                           std::size_t plains, std::uint64_t seed = 1) {
    Rng rng(seed);
    PatchCache cache;
    const auto fill = [&](Patch& p, bool nodule) {
        p.shape = kPatchShape;
        p.values.resize(p.size());
        for (std::size_t z = 0; z < 6; ++z)
            for (std::size_t y = 0; y < 20; ++y)
                for (std::size_t x = 0; x < 20; ++x) {
                    const double cx = x - 9.5, cy = y - 9.5, cz = (z - 2.5) * 3;
                    const double r = std::sqrt(cx * cx + cy * cy + cz * cz);
                    double v = rng.uniform(0.0, 0.15);
                    if (nodule && r < 6) v += 0.6;        // blob
                    if (!nodule && std::abs(cx) < 2) v += 0.6; // slab
                    p.at(x, y, z) = static_cast<float>(std::min(1.0, v));
                }
    };
    for (const auto& sid : series) {
        for (std::size_t i = 0; i < nodules; ++i) {
            PatchRecord rec;
            rec.candidate.series_id = sid;
            rec.candidate.label = CandidateLabel::Nodule;
            rec.candidate.world_mm = {static_cast<double>(i), 0, 0};
            rec.shift_variants.resize(27);
            for (auto& t : rec.shift_variants) {
                t.source_candidate = rec.candidate;
                fill(t.s1, true);
                fill(t.s2, true);
                fill(t.s3, true);
            }
            cache.records.push_back(std::move(rec));
        }
        for (std::size_t i = 0; i < plains; ++i) {
            PatchRecord rec;
            rec.candidate.series_id = sid;
            rec.candidate.label = CandidateLabel::NonNodule;
            rec.candidate.world_mm = {static_cast<double>(i), 10, 0};
            rec.shift_variants.resize(1);
            auto& t = rec.shift_variants[0];
            t.source_candidate = rec.candidate;
            fill(t.s1, false);
            fill(t.s2, false);
            fill(t.s3, false);
            cache.records.push_back(std::move(rec));
        }
    }
    return cache;
}

ModelConfig tiny_model(double dropout = 0.0) {
    ModelConfig c;
    c.variant = Variant::MGI;
    c.stage_channels = {2, 3, 4, 4};
    c.head_channels = {4};
    c.fc_widths = {12};
    c.dropout_rate = dropout;
    return c;
}

FoldPlan::Fold fold_training_on(const std::vector<std::string>& series) {
    FoldPlan::Fold f;
    f.train_series.insert(series.begin(), series.end());
    return f;
}

} // namespace

TEST_CASE("learning rate schedule") {
    TrainConfig cfg;
    CHECK(learning_rate_at(cfg, 0) == 0.003);
    CHECK(learning_rate_at(cfg, 1) == doctest::Approx(0.002925).epsilon(1e-12));
    CHECK(learning_rate_at(cfg, 2) == doctest::Approx(0.00285188).epsilon(1e-5));
    CHECK(learning_rate_at(cfg, 2) == doctest::Approx(0.003 * 0.975 * 0.975).epsilon(1e-12));

    // Strictly decreasing and positive across the full schedule.
    double prev = std::numeric_limits<double>::infinity();
    for (int e = 0; e < cfg.epochs; ++e) {
        const double lr = learning_rate_at(cfg, e);
        CHECK(lr > 0.0);
        CHECK(lr < prev);
        prev = lr;
    }
}

TEST_CASE("make_folds splits by scan with balanced sizes") {
    std::vector<std::string> series;
    for (int i = 0; i < 888; ++i) series.push_back("scan" + std::to_string(i));

    const FoldPlan plan = make_folds(series, 5, 99);
    REQUIRE(plan.folds.size() == 5);

    std::multiset<std::size_t> train_sizes;
    std::set<std::string> all_test;
    for (const auto& fold : plan.folds) {
        train_sizes.insert(fold.train_series.size());
        CHECK(fold.train_series.size() + fold.test_series.size() == 888);
        for (const auto& sid : fold.test_series) {
            CHECK(!fold.train_series.contains(sid)); // no scan-level leakage
            CHECK(all_test.insert(sid).second);      // test sets are disjoint
        }
    }
    CHECK(all_test.size() == 888); // test sets partition the series
    CHECK(train_sizes == std::multiset<std::size_t>{710, 710, 710, 711, 711});
}

TEST_CASE("make_folds edge cases and determinism") {
    const std::vector<std::string> five{"a", "b", "c", "d", "e"};
    const FoldPlan plan = make_folds(five, 5, 3);
    for (const auto& fold : plan.folds) {
        CHECK(fold.train_series.size() == 4);
        CHECK(fold.test_series.size() == 1);
    }

    const FoldPlan again = make_folds(five, 5, 3);
    for (std::size_t f = 0; f < 5; ++f)
        CHECK(plan.folds[f].test_series == again.folds[f].test_series);

    CHECK_THROWS_AS(make_folds({"a", "b"}, 5, 0), DataError);
}

TEST_CASE("assemble_training_set rebalancing arithmetic") {
    const std::vector<std::string> series{"s0", "s1"};
    const PatchCache cache = synthetic_cache(series, 2, 9);
    const auto stream = assemble_training_set(fold_training_on(series), cache);

    // |stream| = |non-nodules| + 82 * |nodules|
    const std::size_t nodules = 4, non = 18;
    CHECK(stream.size() == non + 82 * nodules);

    std::size_t plain_nodules = 0, augmented = 0, plain_non = 0;
    for (const auto& s : stream) {
        const bool nodule = cache.records[s.record].candidate.is_nodule();
        if (s.augmentation == TrainingSample::kPlainSample)
            (nodule ? plain_nodules : plain_non) += 1;
        else {
            CHECK(nodule); // augmented samples inherit the nodule label
            CHECK(sample_label(cache, s) == 1);
            ++augmented;
        }
    }
    CHECK(plain_nodules == nodules);
    CHECK(plain_non == non);
    CHECK(augmented == 81 * nodules);
}

TEST_CASE("assemble_training_set warns when a fold has no nodules") {
    const std::vector<std::string> series{"s0"};
    const PatchCache cache = synthetic_cache(series, 0, 5);
    std::vector<std::string> warnings;
    const auto stream = assemble_training_set(
        fold_training_on(series), cache,
        [&](const std::string& w) { warnings.push_back(w); });
    CHECK(stream.size() == 5);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("no nodule") != std::string::npos);
}

TEST_CASE("realize_sample rotates the cached shift variant") {
    const std::vector<std::string> series{"s0"};
    const PatchCache cache = synthetic_cache(series, 1, 0);
    const auto specs = all_augmentation_specs();

    for (const std::uint8_t a : {std::uint8_t{0}, std::uint8_t{13}, std::uint8_t{40}}) {
        const PatchTriple t = realize_sample(cache, {0, a});
        const auto& shifted = cache.records[0].shift_variants[a % 27];
        const Patch expect = rotate_transverse(shifted.s3, specs[a].rotation_deg);
        CHECK(t.s3.values == expect.values);
    }

    const PatchTriple plain = realize_sample(cache, {0, TrainingSample::kPlainSample});
    CHECK(plain.s1.values == cache.records[0].base().s1.values);
}

TEST_CASE("xavier_init bounds, symmetry and zero biases") {
    // 3D conv fans: fan_in = 1*27, fan_out = 8*27 -> bound sqrt(6/243).
    const auto w = xavier_init<float>({8, 1, 3, 3, 3}, 7);
    const double bound = std::sqrt(6.0 / 243.0);
    for (const float v : w.data) CHECK(std::abs(v) <= bound);

    // Mean of many draws is within 3 sigma of zero.
    const auto big = xavier_init<double>({250, 400}, 11);
    REQUIRE(big.data.size() == 100000);
    double mean = 0;
    for (const double v : big.data) mean += v;
    mean /= static_cast<double>(big.data.size());
    const double b = std::sqrt(6.0 / 650.0);
    const double sigma_mean = (2 * b / std::sqrt(12.0)) / std::sqrt(1e5);
    CHECK(std::abs(mean) < 3 * sigma_mean);

    const auto bias = xavier_init<float>({16}, 3);
    for (const float v : bias.data) CHECK(v == 0.0f);
}

TEST_CASE("momentum zero equals vanilla gradient descent") {
    auto model = Model<double>(tiny_model());
    model.initialize(21);
    auto reference = Model<double>(tiny_model());
    reference.initialize(21);

    const std::vector<std::string> series{"s0"};
    const PatchCache cache = synthetic_cache(series, 1, 2);
    std::vector<PatchTriple> triples;
    std::vector<int> labels;
    for (const auto& rec : cache.records) {
        triples.push_back(rec.base());
        labels.push_back(rec.candidate.is_nodule() ? 1 : 0);
    }
    const auto batch = make_batch<double>(std::span<const PatchTriple>(triples));

    const double lr = 0.01;
    model.compute_loss_and_gradients(batch, labels, nullptr);
    std::vector<Tensor<double>> velocity;
    sgd_momentum_step(model.params(), velocity, lr, /*momentum=*/0.0);

    // Oracle: explicit w -= lr * g.
    reference.compute_loss_and_gradients(batch, labels, nullptr);
    for (auto& p : reference.params())
        for (std::size_t j = 0; j < p.value.data.size(); ++j)
            p.value.data[j] -= lr * p.grad.data[j];

    for (std::size_t i = 0; i < model.params().size(); ++i)
        CHECK(model.params()[i].value.data == reference.params()[i].value.data);
}

TEST_CASE("one small-step update decreases the loss on a frozen batch") {
    auto model = Model<double>(tiny_model());
    model.initialize(33);
    const std::vector<std::string> series{"s0"};
    const PatchCache cache = synthetic_cache(series, 2, 4);
    std::vector<PatchTriple> triples;
    std::vector<int> labels;
    for (const auto& rec : cache.records) {
        triples.push_back(rec.base());
        labels.push_back(rec.candidate.is_nodule() ? 1 : 0);
    }
    const auto batch = make_batch<double>(std::span<const PatchTriple>(triples));

    const double before = model.compute_loss_and_gradients(batch, labels, nullptr);
    std::vector<Tensor<double>> velocity;
    sgd_momentum_step(model.params(), velocity, 1e-3, 0.0);
    const double after = model.compute_loss_and_gradients(batch, labels, nullptr);
    CHECK(after < before);
}

TEST_CASE("training separates a linearly separable toy set") {
    // 64 samples across 4 series, strongly class-dependent patches.
    const std::vector<std::string> series{"a", "b", "c", "d"};
    const PatchCache cache = synthetic_cache(series, 2, 14, 5);

    // Use the plain samples only (batch one epoch by hand) to keep runtime
    // small: the stream here is non-nodules + nodules, no augmentation needed
    // for separability.
    FoldPlan::Fold fold = fold_training_on(series);
    auto stream = assemble_training_set(fold, cache);
    stream.erase(std::remove_if(stream.begin(), stream.end(),
                                [](const TrainingSample& s) {
                                    return s.augmentation != TrainingSample::kPlainSample;
                                }),
                 stream.end());
    REQUIRE(stream.size() == 64);

    auto model = Model<float>(tiny_model(0.0));
    model.initialize(17);
    model.set_threads(2);

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.base_lr = 0.02;
    cfg.seed = 9;
    const TrainResult result = train(model, cache, stream, cfg);

    // Loss strictly decreases over the first 5 epochs.
    REQUIRE(result.epoch_loss.size() == 5);
    for (std::size_t e = 1; e < result.epoch_loss.size(); ++e)
        CHECK(result.epoch_loss[e] < result.epoch_loss[e - 1]);

    // Final accuracy 100%.
    std::vector<PatchTriple> triples;
    std::vector<int> labels;
    for (const auto& s : stream) {
        triples.push_back(realize_sample(cache, s));
        labels.push_back(sample_label(cache, s));
    }
    const auto batch = make_batch<float>(std::span<const PatchTriple>(triples));
    const Tensor<float> probs = model.forward_probs(batch);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const int predicted = probs.data[n * 2 + 1] > 0.5f ? 1 : 0;
        CHECK(predicted == labels[n]);
    }
}

TEST_CASE("training is bit-reproducible under a fixed seed") {
    const std::vector<std::string> series{"a", "b"};
    const PatchCache cache = synthetic_cache(series, 1, 3, 8);
    const auto stream = assemble_training_set(fold_training_on(series), cache);

    const auto run = [&]() {
        auto model = Model<float>(tiny_model(0.5));
        model.initialize(77);
        model.set_threads(1);
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.batch_size = 32;
        cfg.seed = 123;
        train(model, cache, stream, cfg);
        return model;
    };
    const auto m1 = run();
    const auto m2 = run();
    for (std::size_t i = 0; i < m1.params().size(); ++i)
        CHECK(m1.params()[i].value.data == m2.params()[i].value.data);
}

TEST_CASE("train validates its configuration") {
    TrainConfig cfg;
    cfg.base_lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = TrainConfig{};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = TrainConfig{};
    cfg.lr_decay_per_epoch = 1.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
}
