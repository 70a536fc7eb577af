#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgi/patching.hpp"
#include "mgi/rng.hpp"
#include "mgi/tensor.hpp"

namespace mgi {

enum class Variant { MGI, RI, LR, ZI, ZO };
enum class Fusion { Concat, Sum, Conv1x1 };

std::string to_string(Variant v);
std::string to_string(Fusion f);
Variant parse_variant(const std::string& s);
Fusion parse_fusion(const std::string& s);

/// Architecture descriptor. stage_channels holds the widths of the three
/// gradual feature-extraction stages plus the per-stream conv that precedes
/// the first pooling; widths must be non-decreasing. head_channels are the
/// post-fusion conv widths, fc_widths the hidden fully-connected widths.
struct ModelConfig {
    Variant variant = Variant::MGI;
    Fusion fusion = Fusion::Sum; // used by MGI only
    std::vector<int> stage_channels{32, 48, 64, 96};
    std::vector<int> head_channels{128};
    std::vector<int> fc_widths{1179, 512};
    double dropout_rate = 0.5;
    int num_classes = 2;

    /// Per-variant default widths. The trunk is shared; the first
    /// fully-connected width is tuned per variant so the five parameter
    /// counts sit within a fraction of a percent of one another.
    static ModelConfig defaults_for(Variant v);
};

/// Inputs of one forward pass: the three patch scales as (N, 1, 6, 20, 20)
/// tensors, plus optional labels for training.
template <typename T>
struct BatchInputs {
    Tensor<T> s1, s2, s3;
    std::size_t batch() const { return s1.shape.empty() ? 0 : s1.shape[0]; }
};

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

namespace detail {
template <typename T> struct Graph; // node list + execution (model.cpp)
template <typename T> struct Exec;  // reusable activation/gradient buffers
}

/// A built network: layer graph plus named parameter tensors. Instantiated
/// for float (pipeline) and double (finite-difference checks). Immutable in
/// inference; training mutates parameters from a single writer.
template <typename T>
class Model {
public:
    explicit Model(const ModelConfig& config);
    Model(Model&&) noexcept;
    Model& operator=(Model&&) noexcept;
    ~Model();

    const ModelConfig& config() const { return config_; }

    /// Xavier-uniform weights, zero biases, in parameter order.
    void initialize(std::uint64_t seed);

    std::vector<Param<T>>& params() { return params_; }
    const std::vector<Param<T>>& params() const { return params_; }

    std::size_t count_parameters() const;

    /// Class probabilities, dropout disabled. Thread safe.
    Tensor<T> forward_probs(const BatchInputs<T>& in) const;

    /// Training pass: forward with dropout (when dropout_rng is non-null),
    /// mean cross-entropy loss, backward filling every param's grad.
    /// Throws NumericError if the loss is not finite.
    T compute_loss_and_gradients(const BatchInputs<T>& in,
                                 const std::vector<int>& labels, Rng* dropout_rng);

    /// Intermediate activations by stage tag for one sample.
    std::map<std::string, Tensor<T>> dump_feature_maps(
        const BatchInputs<T>& in, std::span<const std::string> tags) const;

    /// Registered stage tags, e.g. "zi.f1".
    std::vector<std::string> feature_map_tags() const;

    /// Number of OpenMP threads used by conv layers; 0 = hardware default.
    void set_threads(int n) { threads_ = n; }
    int threads() const { return threads_; }

private:
    ModelConfig config_;
    std::vector<Param<T>> params_;
    std::unique_ptr<detail::Graph<T>> graph_;
    std::unique_ptr<detail::Exec<T>> scratch_; // training-path buffers
    int threads_ = 0;
};

template <typename T>
Model<T> build(const ModelConfig& config) {
    return Model<T>(config);
}

/// Elementwise-sum / channel-concat / learned 1x1x1-projection merge of two
/// feature maps shaped (N, C, Z, Y, X). The conv1x1 mode takes the
/// projection weights (Cout, Ca+Cb, 1, 1, 1) and bias as tensors.
template <typename T>
Tensor<T> fuse_streams(const Tensor<T>& a, const Tensor<T>& b, Fusion mode,
                       const Tensor<T>* conv_weight = nullptr,
                       const Tensor<T>* conv_bias = nullptr);

/// Assemble batch tensors from patch triples (values already in [0, 1]).
template <typename T>
BatchInputs<T> make_batch(std::span<const PatchTriple* const> triples);
template <typename T>
BatchInputs<T> make_batch(std::span<const PatchTriple> triples);

/// Checkpoint container: JSON manifest (format version, config echo, tensor
/// names and shapes) followed by raw little-endian float32 data.
template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path);
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

/// Mean cross-entropy over rows of logits (N, K) given labels, and its
/// gradient with respect to the logits.
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        Tensor<T>& dlogits);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

} // namespace mgi
