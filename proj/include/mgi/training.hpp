#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "mgi/model.hpp"
#include "mgi/patching.hpp"
#include "mgi/rng.hpp"
#include "mgi/tensor.hpp"

namespace mgi {

struct TrainConfig {
    double base_lr = 0.003;
    double lr_decay_per_epoch = 0.025; // multiplicative decay of the learning rate
    int epochs = 40;
    int batch_size = 128;
    double momentum = 0.9;
    double dropout = 0.5;
    double l2 = 0.0; // optional weight penalty, off by default
    std::uint64_t seed = 0;
    int threads = 0; // conv-layer threads; 0 = hardware default

    void validate() const;
};

/// Learning rate for epoch e (0-based): base_lr * (1 - decay)^e.
double learning_rate_at(const TrainConfig& cfg, int epoch);

/// Scan-level cross-validation plan: per fold, disjoint train/test series.
struct FoldPlan {
    struct Fold {
        std::set<std::string> train_series;
        std::set<std::string> test_series;
    };
    std::vector<Fold> folds;
};

/// Deterministic k-fold split by series. Test sets partition the series;
/// fold sizes differ by at most one.
FoldPlan make_folds(const std::vector<std::string>& series_ids, std::size_t k,
                    std::uint64_t seed);

/// One training sample: a cache record plus the augmentation applied to it
/// (augmentation == 81 means the plain, unaugmented sample).
struct TrainingSample {
    std::size_t record = 0;      // index into PatchCache.records
    std::uint8_t augmentation = kPlainSample; // index into all_augmentation_specs()
    static constexpr std::uint8_t kPlainSample = 81;
};

/// All fold-train candidates: every non-nodule once, every nodule once plus
/// its 81 augmentations. Order is by cache record; per-epoch shuffling is the
/// trainer's job. Emits a warning via `warn` when the fold has no nodules.
std::vector<TrainingSample> assemble_training_set(
    const FoldPlan::Fold& fold, const PatchCache& cache,
    const std::function<void(const std::string&)>& warn = {});

/// Materialize the patch triple of a sample (rotating the cached shifted
/// extraction when the sample is augmented).
PatchTriple realize_sample(const PatchCache& cache, const TrainingSample& sample);

int sample_label(const PatchCache& cache, const TrainingSample& sample);

struct TrainResult {
    std::vector<double> epoch_loss; // mean cross-entropy per epoch
};

/// Momentum SGD over the sample stream: epoch shuffle, mini-batches of
/// cfg.batch_size, learning-rate decay per epoch, dropout on the
/// fully-connected layers. Aborts with NumericError (naming the batch) on a
/// non-finite loss.
TrainResult train(Model<float>& model, const PatchCache& cache,
                  const std::vector<TrainingSample>& stream, const TrainConfig& cfg);

/// Xavier-uniform tensor: +-sqrt(6 / (fan_in + fan_out)), where conv fans
/// include the kernel volume. 1-D shapes are treated as bias vectors and
/// returned zero.
template <typename T>
Tensor<T> xavier_init(const std::vector<std::size_t>& shape, std::uint64_t seed);

/// One momentum-SGD update: v = momentum * v - lr * grad; param += v.
/// Exposed for oracle tests; `train` uses it internally.
template <typename T>
void sgd_momentum_step(std::vector<Param<T>>& params, std::vector<Tensor<T>>& velocity,
                       double lr, double momentum, double l2 = 0.0);

} // namespace mgi
