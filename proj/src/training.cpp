#include "mgi/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mgi/errors.hpp"

namespace mgi {

void TrainConfig::validate() const {
    if (base_lr <= 0.0) throw DataError("TrainConfig: base_lr must be > 0");
    if (lr_decay_per_epoch < 0.0 || lr_decay_per_epoch >= 1.0)
        throw DataError("TrainConfig: lr_decay_per_epoch must lie in [0, 1)");
    if (epochs < 1) throw DataError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw DataError("TrainConfig: batch_size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0)
        throw DataError("TrainConfig: momentum must lie in [0, 1)");
    if (dropout < 0.0 || dropout >= 1.0)
        throw DataError("TrainConfig: dropout must lie in [0, 1)");
    if (l2 < 0.0) throw DataError("TrainConfig: l2 must be >= 0");
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
    return cfg.base_lr * std::pow(1.0 - cfg.lr_decay_per_epoch, epoch);
}

FoldPlan make_folds(const std::vector<std::string>& series_ids, std::size_t k,
                    std::uint64_t seed) {
    if (k < 1) throw DataError("make_folds: k must be >= 1");
    if (series_ids.size() < k)
        throw DataError("make_folds: need at least " + std::to_string(k) +
                        " series for " + std::to_string(k) + " folds, got " +
                        std::to_string(series_ids.size()));

    // Sort before shuffling so the split depends only on the seed and the
    // set of ids, not on caller ordering.
    std::vector<std::string> ids = series_ids;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng(seed);
    rng.shuffle(ids);

    FoldPlan plan;
    plan.folds.resize(k);
    const std::size_t n = ids.size();
    std::size_t start = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n / k + (f < n % k ? 1 : 0);
        auto& fold = plan.folds[f];
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= start && i < start + size)
                fold.test_series.insert(ids[i]);
            else
                fold.train_series.insert(ids[i]);
        }
        start += size;
    }
    return plan;
}

std::vector<TrainingSample> assemble_training_set(
    const FoldPlan::Fold& fold, const PatchCache& cache,
    const std::function<void(const std::string&)>& warn) {
    std::vector<TrainingSample> stream;
    std::size_t nodules = 0;
    for (std::size_t r = 0; r < cache.records.size(); ++r) {
        const auto& rec = cache.records[r];
        if (!fold.train_series.contains(rec.candidate.series_id)) continue;
        if (!rec.candidate.label)
            throw DataError("assemble_training_set: candidate without label in series " +
                            rec.candidate.series_id);
        stream.push_back({r, TrainingSample::kPlainSample});
        if (rec.candidate.is_nodule()) {
            ++nodules;
            if (rec.shift_variants.size() != 27)
                throw DataError("assemble_training_set: nodule record in series " +
                                rec.candidate.series_id +
                                " lacks the 27 shift variants; re-run extraction");
            for (std::uint8_t a = 0; a < 81; ++a) stream.push_back({r, a});
        }
    }
    if (nodules == 0 && warn)
        warn("training fold contains no nodule samples; the classifier will "
             "collapse to the majority class");
    return stream;
}

PatchTriple realize_sample(const PatchCache& cache, const TrainingSample& sample) {
    const auto& rec = cache.records[sample.record];
    if (sample.augmentation == TrainingSample::kPlainSample) return rec.base();

    // Augmentation a = rotation index (a / 27) over shift index (a % 27);
    // shifts were materialized at extraction time, rotations happen here.
    static const std::vector<AugmentationSpec> specs = all_augmentation_specs();
    const auto& spec = specs[sample.augmentation];
    const auto& shifted = rec.shift_variants.at(sample.augmentation % 27);
    PatchTriple out;
    out.source_candidate = rec.candidate;
    out.s1 = rotate_transverse(shifted.s1, spec.rotation_deg);
    out.s2 = rotate_transverse(shifted.s2, spec.rotation_deg);
    out.s3 = rotate_transverse(shifted.s3, spec.rotation_deg);
    return out;
}

int sample_label(const PatchCache& cache, const TrainingSample& sample) {
    return cache.records[sample.record].candidate.is_nodule() ? 1 : 0;
}

template <typename T>
Tensor<T> xavier_init(const std::vector<std::size_t>& shape, std::uint64_t seed) {
    Tensor<T> t(shape);
    if (shape.size() <= 1) return t; // bias vectors stay zero
    std::size_t fan_in, fan_out;
    if (shape.size() == 5) {
        const std::size_t k3 = shape[2] * shape[3] * shape[4];
        fan_in = shape[1] * k3;
        fan_out = shape[0] * k3;
    } else {
        fan_in = shape[1];
        fan_out = shape[0];
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
void sgd_momentum_step(std::vector<Param<T>>& params, std::vector<Tensor<T>>& velocity,
                       double lr, double momentum, double l2) {
    if (velocity.size() != params.size()) {
        velocity.clear();
        for (const auto& p : params) velocity.emplace_back(p.value.shape);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& v = velocity[i];
        for (std::size_t j = 0; j < p.value.data.size(); ++j) {
            const T g = p.grad.data[j] + static_cast<T>(l2) * p.value.data[j];
            v.data[j] = static_cast<T>(momentum) * v.data[j] - static_cast<T>(lr) * g;
            p.value.data[j] += v.data[j];
        }
    }
}

TrainResult train(Model<float>& model, const PatchCache& cache,
                  const std::vector<TrainingSample>& stream, const TrainConfig& cfg) {
    cfg.validate();
    if (stream.empty()) throw DataError("train: empty sample stream");

    Rng shuffle_rng(derive_seed(cfg.seed, 1));
    Rng dropout_rng(derive_seed(cfg.seed, 2));

    std::vector<std::size_t> order(stream.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<Tensor<float>> velocity;
    TrainResult result;
    result.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate_at(cfg, epoch);
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            std::vector<PatchTriple> triples;
            std::vector<int> labels;
            triples.reserve(end - begin);
            labels.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                triples.push_back(realize_sample(cache, stream[order[i]]));
                labels.push_back(sample_label(cache, stream[order[i]]));
            }
            const auto batch = make_batch<float>(std::span<const PatchTriple>(triples));
            float loss;
            try {
                loss = model.compute_loss_and_gradients(batch, labels, &dropout_rng);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batches) + ")");
            }
            sgd_momentum_step(model.params(), velocity, lr, cfg.momentum, cfg.l2);
            loss_sum += loss;
            ++batches;
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    }
    return result;
}

template Tensor<float> xavier_init<float>(const std::vector<std::size_t>&, std::uint64_t);
template Tensor<double> xavier_init<double>(const std::vector<std::size_t>&, std::uint64_t);
template void sgd_momentum_step<float>(std::vector<Param<float>>&,
                                       std::vector<Tensor<float>>&, double, double, double);
template void sgd_momentum_step<double>(std::vector<Param<double>>&,
                                        std::vector<Tensor<double>>&, double, double,
                                        double);

} // namespace mgi
