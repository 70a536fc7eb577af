#define EIGEN_DONT_PARALLELIZE
#include "mgi/model.hpp"

#include <Eigen/Dense>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "mgi/errors.hpp"

namespace mgi {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::MGI: return "MGI";
        case Variant::RI: return "RI";
        case Variant::LR: return "LR";
        case Variant::ZI: return "ZI";
        case Variant::ZO: return "ZO";
    }
    return "?";
}

std::string to_string(Fusion f) {
    switch (f) {
        case Fusion::Concat: return "concat";
        case Fusion::Sum: return "sum";
        case Fusion::Conv1x1: return "conv1x1";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    if (s == "MGI") return Variant::MGI;
    if (s == "RI") return Variant::RI;
    if (s == "LR") return Variant::LR;
    if (s == "ZI") return Variant::ZI;
    if (s == "ZO") return Variant::ZO;
    throw UsageError("unknown model variant '" + s + "' (expected MGI, RI, LR, ZI or ZO)");
}

Fusion parse_fusion(const std::string& s) {
    if (s == "concat") return Fusion::Concat;
    if (s == "sum") return Fusion::Sum;
    if (s == "conv1x1") return Fusion::Conv1x1;
    throw UsageError("unknown fusion mode '" + s + "' (expected concat, sum or conv1x1)");
}

ModelConfig ModelConfig::defaults_for(Variant v) {
    ModelConfig c;
    c.variant = v;
    switch (v) {
        case Variant::MGI: c.fc_widths = {1179, 512}; break;
        case Variant::RI: c.fc_widths = {1249, 512}; break;
        case Variant::LR: c.fc_widths = {1242, 512}; break;
        case Variant::ZI:
        case Variant::ZO: c.fc_widths = {1249, 512}; break;
    }
    return c;
}

namespace detail {

enum class Op { Input, Conv, ReLU, MaxPool, Concat, Add, Flatten, Dense, Dropout };

struct Node {
    Op op{};
    std::vector<int> inputs;
    int w = -1, b = -1;  // param indices (Conv, Dense)
    int kernel = 3;      // Conv kernel edge (1 or 3)
    int input_slot = 0;  // Input: 0..2 for S1..S3
    double rate = 0.0;   // Dropout
    std::vector<std::size_t> shape; // per-sample: (C,Z,Y,X) or (F)
    bool dense_space = false;
};

template <typename T>
struct Graph {
    std::vector<Node> nodes;
    int output = -1; // logits node
    std::map<std::string, int> tags;
};

/// Per-forward execution state: activations, gradients, pooling argmax
/// indices and dropout masks, indexed by node id. Reused between batches so
/// buffers stay warm; grad_valid marks which gradients belong to the current
/// backward pass.
template <typename T>
struct Exec {
    std::vector<Tensor<T>> act;
    std::vector<Tensor<T>> grad;
    std::vector<char> grad_valid;
    std::vector<std::vector<std::int32_t>> argmax;
    std::vector<std::vector<std::uint8_t>> keep;
};

namespace {

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using MapConst = Eigen::Map<const Mat<T>>;

/// Builds the node list for one config; shared by all scalar types.
class Builder {
public:
    explicit Builder(const ModelConfig& cfg) : cfg_(cfg) { validate(); }

    struct ParamSpec {
        std::string name;
        std::vector<std::size_t> shape;
    };

    std::vector<Node> nodes;
    std::vector<ParamSpec> params;
    std::map<std::string, int> tags;
    int output = -1;

    void build() {
        const int s1 = input(0), s2 = input(1), s3 = input(2);
        int merged = -1;
        switch (cfg_.variant) {
            case Variant::MGI: {
                const int zi = stream("zi", s1, s2, s3);
                const int zo = stream("zo", s3, s2, s1);
                merged = fuse(zi, zo);
                break;
            }
            case Variant::ZI: merged = stream("zi", s1, s2, s3); break;
            case Variant::ZO: merged = stream("zo", s3, s2, s1); break;
            case Variant::RI: {
                int x = concat(concat(s1, s2), s3);
                x = block(x, cfg_.stage_channels[0], "ri.stage1");
                tag("ri.f1", x);
                x = block(x, cfg_.stage_channels[1], "ri.stage2");
                tag("ri.f2", x);
                x = block(x, cfg_.stage_channels[2], "ri.stage3");
                tag("ri.f3", x);
                x = relu(conv(x, cfg_.stage_channels[3], 3, "ri.reduce"));
                merged = pool(x);
                break;
            }
            case Variant::LR: {
                const int b1 = block(s1, cfg_.stage_channels[0], "lr.scale1");
                const int b2 = block(s2, cfg_.stage_channels[0], "lr.scale2");
                const int b3 = block(s3, cfg_.stage_channels[0], "lr.scale3");
                int x = add(add(b1, b2), b3);
                tag("lr.f1", x);
                x = block(x, cfg_.stage_channels[1], "lr.stage2");
                tag("lr.f2", x);
                x = block(x, cfg_.stage_channels[2], "lr.stage3");
                tag("lr.f3", x);
                x = relu(conv(x, cfg_.stage_channels[3], 3, "lr.reduce"));
                merged = pool(x);
                break;
            }
        }

        int x = merged;
        for (std::size_t i = 0; i < cfg_.head_channels.size(); ++i)
            x = relu(conv(x, cfg_.head_channels[i], 3, "head.conv" + std::to_string(i + 1)));
        x = pool(x);
        x = flatten(x);
        for (std::size_t i = 0; i < cfg_.fc_widths.size(); ++i) {
            x = relu(dense(x, cfg_.fc_widths[i], "fc" + std::to_string(i + 1)));
            x = dropout(x);
        }
        output = dense(x, cfg_.num_classes, "out");
    }

private:
    const ModelConfig& cfg_;

    void validate() const {
        if (cfg_.stage_channels.size() != 4)
            throw DataError("ModelConfig: stage_channels must hold 4 widths (three "
                            "gradual stages + stream tail), got " +
                            std::to_string(cfg_.stage_channels.size()));
        for (const int c : cfg_.stage_channels)
            if (c < 1) throw DataError("ModelConfig: stage channel widths must be >= 1");
        for (std::size_t i = 1; i < cfg_.stage_channels.size(); ++i)
            if (cfg_.stage_channels[i] < cfg_.stage_channels[i - 1])
                throw DataError("ModelConfig: stage channel widths must be non-decreasing "
                                "(feature maps grow as inputs are connected)");
        for (const int c : cfg_.head_channels)
            if (c < 1) throw DataError("ModelConfig: head channel widths must be >= 1");
        for (const int c : cfg_.fc_widths)
            if (c < 1) throw DataError("ModelConfig: fc widths must be >= 1");
        if (cfg_.dropout_rate < 0.0 || cfg_.dropout_rate >= 1.0)
            throw DataError("ModelConfig: dropout_rate must lie in [0, 1)");
        if (cfg_.num_classes != 2)
            throw DataError("ModelConfig: the classifier head is a 2-way softmax");
    }

    int add_node(Node n) {
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    int add_param(const std::string& name, std::vector<std::size_t> shape) {
        params.push_back({name, std::move(shape)});
        return static_cast<int>(params.size()) - 1;
    }

    void tag(const std::string& name, int node) { tags[name] = node; }

    int input(int slot) {
        Node n;
        n.op = Op::Input;
        n.input_slot = slot;
        n.shape = {1, 6, 20, 20}; // (C,Z,Y,X)
        return add_node(std::move(n));
    }

    int conv(int in, int co, int kernel, const std::string& name) {
        const auto& s = nodes[static_cast<std::size_t>(in)].shape;
        const auto ci = s[0];
        Node n;
        n.op = Op::Conv;
        n.inputs = {in};
        n.kernel = kernel;
        const auto k = static_cast<std::size_t>(kernel);
        n.w = add_param(name + ".weight", {static_cast<std::size_t>(co), ci, k, k, k});
        n.b = add_param(name + ".bias", {static_cast<std::size_t>(co)});
        n.shape = {static_cast<std::size_t>(co), s[1], s[2], s[3]};
        return add_node(std::move(n));
    }

    int relu(int in) {
        Node n;
        n.op = Op::ReLU;
        n.inputs = {in};
        n.shape = nodes[static_cast<std::size_t>(in)].shape;
        n.dense_space = nodes[static_cast<std::size_t>(in)].dense_space;
        return add_node(std::move(n));
    }

    int pool(int in) {
        const auto& s = nodes[static_cast<std::size_t>(in)].shape;
        Node n;
        n.op = Op::MaxPool;
        n.inputs = {in};
        n.shape = {s[0], (s[1] + 1) / 2, (s[2] + 1) / 2, (s[3] + 1) / 2};
        return add_node(std::move(n));
    }

    int concat(int a, int b) {
        const auto& sa = nodes[static_cast<std::size_t>(a)].shape;
        const auto& sb = nodes[static_cast<std::size_t>(b)].shape;
        if (sa[1] != sb[1] || sa[2] != sb[2] || sa[3] != sb[3])
            throw DataError("concat: spatial dimensions differ");
        Node n;
        n.op = Op::Concat;
        n.inputs = {a, b};
        n.shape = {sa[0] + sb[0], sa[1], sa[2], sa[3]};
        return add_node(std::move(n));
    }

    int add(int a, int b) {
        const auto& sa = nodes[static_cast<std::size_t>(a)].shape;
        const auto& sb = nodes[static_cast<std::size_t>(b)].shape;
        if (sa != sb)
            throw DataError("element-wise sum: operand shapes differ");
        Node n;
        n.op = Op::Add;
        n.inputs = {a, b};
        n.shape = sa;
        return add_node(std::move(n));
    }

    int flatten(int in) {
        const auto& s = nodes[static_cast<std::size_t>(in)].shape;
        Node n;
        n.op = Op::Flatten;
        n.inputs = {in};
        n.shape = {s[0] * s[1] * s[2] * s[3]};
        n.dense_space = true;
        return add_node(std::move(n));
    }

    int dense(int in, int width, const std::string& name) {
        const auto in_width = nodes[static_cast<std::size_t>(in)].shape[0];
        Node n;
        n.op = Op::Dense;
        n.inputs = {in};
        n.w = add_param(name + ".weight", {static_cast<std::size_t>(width), in_width});
        n.b = add_param(name + ".bias", {static_cast<std::size_t>(width)});
        n.shape = {static_cast<std::size_t>(width)};
        n.dense_space = true;
        return add_node(std::move(n));
    }

    int dropout(int in) {
        if (cfg_.dropout_rate == 0.0) return in;
        Node n;
        n.op = Op::Dropout;
        n.inputs = {in};
        n.rate = cfg_.dropout_rate;
        n.shape = nodes[static_cast<std::size_t>(in)].shape;
        n.dense_space = true;
        return add_node(std::move(n));
    }

    /// Two zero-padded 3x3x3 convolutions, each followed by a ReLU.
    int block(int in, int width, const std::string& name) {
        int x = relu(conv(in, width, 3, name + ".conv1"));
        x = relu(conv(x, width, 3, name + ".conv2"));
        return x;
    }

    /// One gradual-integration pathway: stage blocks interleaved with
    /// concatenation of the next scale, then the pre-pooling conv.
    int stream(const std::string& prefix, int first, int second, int third) {
        int x = block(first, cfg_.stage_channels[0], prefix + ".stage1");
        tag(prefix + ".f1", x);
        x = block(concat(x, second), cfg_.stage_channels[1], prefix + ".stage2");
        tag(prefix + ".f12", x);
        x = block(concat(x, third), cfg_.stage_channels[2], prefix + ".stage3");
        tag(prefix + ".f123", x);
        x = relu(conv(x, cfg_.stage_channels[3], 3, prefix + ".reduce"));
        return pool(x);
    }

    int fuse(int a, int b) {
        switch (cfg_.fusion) {
            case Fusion::Sum: return add(a, b);
            case Fusion::Concat: return concat(a, b);
            case Fusion::Conv1x1: {
                const auto ca = nodes[static_cast<std::size_t>(a)].shape[0];
                const int x = concat(a, b);
                return relu(conv(x, static_cast<int>(ca), 1, "fuse.proj"));
            }
        }
        throw DataError("unknown fusion mode");
    }
};

std::size_t spatial_count(const Node& n) { return n.shape[1] * n.shape[2] * n.shape[3]; }

/// Gather the zero-padded k^3 neighborhoods of one sample into a
/// (Ci*k^3) x (Z*Y*X) column matrix, x-contiguous rows.
template <typename T>
void im2col(const T* src, std::size_t ci, std::size_t Z, std::size_t Y, std::size_t X,
            int kernel, T* col) {
    const int pad = kernel / 2;
    const std::size_t volume = Z * Y * X;
    std::size_t row = 0;
    for (std::size_t c = 0; c < ci; ++c) {
        for (int kz = -pad; kz <= pad; ++kz) {
            for (int ky = -pad; ky <= pad; ++ky) {
                for (int kx = -pad; kx <= pad; ++kx, ++row) {
                    T* dst_row = col + row * volume;
                    for (std::size_t z = 0; z < Z; ++z) {
                        const long sz = static_cast<long>(z) + kz;
                        for (std::size_t y = 0; y < Y; ++y) {
                            const long sy = static_cast<long>(y) + ky;
                            T* dst = dst_row + (z * Y + y) * X;
                            if (sz < 0 || sz >= static_cast<long>(Z) || sy < 0 ||
                                sy >= static_cast<long>(Y)) {
                                std::fill(dst, dst + X, T(0));
                                continue;
                            }
                            const T* s =
                                src + (c * Z + static_cast<std::size_t>(sz)) * Y * X +
                                static_cast<std::size_t>(sy) * X;
                            // x range [kx, X + kx) clipped to [0, X)
                            const long lo = std::max<long>(0, -kx);
                            const long hi = std::min<long>(static_cast<long>(X),
                                                           static_cast<long>(X) - kx);
                            for (long x = 0; x < lo; ++x) dst[x] = T(0);
                            for (long x = hi; x < static_cast<long>(X); ++x) dst[x] = T(0);
                            if (hi > lo)
                                std::memcpy(dst + lo, s + lo + kx,
                                            static_cast<std::size_t>(hi - lo) * sizeof(T));
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of the column gradient back onto the padded input gradient.
template <typename T>
void col2im_add(const T* col, std::size_t ci, std::size_t Z, std::size_t Y, std::size_t X,
                int kernel, T* dst_grad) {
    const int pad = kernel / 2;
    const std::size_t volume = Z * Y * X;
    std::size_t row = 0;
    for (std::size_t c = 0; c < ci; ++c) {
        for (int kz = -pad; kz <= pad; ++kz) {
            for (int ky = -pad; ky <= pad; ++ky) {
                for (int kx = -pad; kx <= pad; ++kx, ++row) {
                    const T* src_row = col + row * volume;
                    for (std::size_t z = 0; z < Z; ++z) {
                        const long sz = static_cast<long>(z) + kz;
                        if (sz < 0 || sz >= static_cast<long>(Z)) continue;
                        for (std::size_t y = 0; y < Y; ++y) {
                            const long sy = static_cast<long>(y) + ky;
                            if (sy < 0 || sy >= static_cast<long>(Y)) continue;
                            const T* s = src_row + (z * Y + y) * X;
                            T* d = dst_grad +
                                   (c * Z + static_cast<std::size_t>(sz)) * Y * X +
                                   static_cast<std::size_t>(sy) * X;
                            const long lo = std::max<long>(0, -kx);
                            const long hi = std::min<long>(static_cast<long>(X),
                                                           static_cast<long>(X) - kx);
                            for (long x = lo; x < hi; ++x) d[x + kx] += s[x];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
int resolve_threads(int requested) {
    if (requested == 1) return 1;
    const int hw = omp_get_max_threads();
    return requested <= 0 ? hw : std::min(requested, hw);
}

/// Per-thread scratch reused across conv calls; conv buffers are fully
/// overwritten before use, so stale contents are harmless.
template <typename T>
std::vector<T>& thread_scratch(int which, std::size_t size) {
    thread_local std::vector<T> buffers[2];
    auto& buf = buffers[which];
    if (buf.size() < size) buf.resize(size);
    return buf;
}

} // namespace

} // namespace detail

using detail::Exec;
using detail::Node;
using detail::Op;

namespace {

template <typename T>
void conv_forward(const Node& node, const std::vector<Param<T>>& params,
                  const Tensor<T>& in, Tensor<T>& out, int threads) {
    const auto& w = params[static_cast<std::size_t>(node.w)].value;
    const auto& b = params[static_cast<std::size_t>(node.b)].value;
    const auto& ishape = in.shape;
    const std::size_t N = ishape[0], Ci = ishape[1], Z = ishape[2], Y = ishape[3],
                      X = ishape[4];
    const std::size_t Co = node.shape[0];
    const std::size_t volume = Z * Y * X;
    const std::size_t k3 = static_cast<std::size_t>(node.kernel * node.kernel * node.kernel);
    const std::size_t rows = Ci * k3;

    detail::MapConst<T> W(w.ptr(), static_cast<Eigen::Index>(Co),
                          static_cast<Eigen::Index>(rows));

#pragma omp parallel num_threads(threads)
    {
        auto& col = detail::thread_scratch<T>(0, rows * volume);
#pragma omp for schedule(static)
        for (long n = 0; n < static_cast<long>(N); ++n) {
            const T* src = in.ptr() + static_cast<std::size_t>(n) * Ci * volume;
            T* dst = out.ptr() + static_cast<std::size_t>(n) * Co * volume;
            detail::im2col(src, Ci, Z, Y, X, node.kernel, col.data());
            detail::MapConst<T> C(col.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(volume));
            detail::MapMat<T> O(dst, static_cast<Eigen::Index>(Co),
                                static_cast<Eigen::Index>(volume));
            O.noalias() = W * C;
            for (std::size_t co = 0; co < Co; ++co)
                O.row(static_cast<Eigen::Index>(co)).array() += b.data[co];
        }
    }
}

template <typename T>
void conv_backward(const Node& node, std::vector<Param<T>>& params, const Tensor<T>& in,
                   const Tensor<T>& dout, Tensor<T>& din, int threads) {
    auto& wp = params[static_cast<std::size_t>(node.w)];
    auto& bp = params[static_cast<std::size_t>(node.b)];
    const auto& ishape = in.shape;
    const std::size_t N = ishape[0], Ci = ishape[1], Z = ishape[2], Y = ishape[3],
                      X = ishape[4];
    const std::size_t Co = node.shape[0];
    const std::size_t volume = Z * Y * X;
    const std::size_t k3 = static_cast<std::size_t>(node.kernel * node.kernel * node.kernel);
    const std::size_t rows = Ci * k3;

    detail::MapConst<T> W(wp.value.ptr(), static_cast<Eigen::Index>(Co),
                          static_cast<Eigen::Index>(rows));

    const int nthreads = detail::resolve_threads<T>(threads);
    std::vector<std::vector<T>> dw_part(static_cast<std::size_t>(nthreads));
    std::vector<std::vector<T>> db_part(static_cast<std::size_t>(nthreads));

#pragma omp parallel num_threads(nthreads)
    {
        const auto tid = static_cast<std::size_t>(omp_get_thread_num());
        dw_part[tid].assign(Co * rows, T(0));
        db_part[tid].assign(Co, T(0));
        auto& col = detail::thread_scratch<T>(0, rows * volume);
        auto& dcol = detail::thread_scratch<T>(1, rows * volume);
        detail::MapMat<T> dWt(dw_part[tid].data(), static_cast<Eigen::Index>(Co),
                              static_cast<Eigen::Index>(rows));
#pragma omp for schedule(static)
        for (long n = 0; n < static_cast<long>(N); ++n) {
            const T* src = in.ptr() + static_cast<std::size_t>(n) * Ci * volume;
            const T* dy = dout.ptr() + static_cast<std::size_t>(n) * Co * volume;
            T* dx = din.ptr() + static_cast<std::size_t>(n) * Ci * volume;
            detail::im2col(src, Ci, Z, Y, X, node.kernel, col.data());
            detail::MapConst<T> C(col.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(volume));
            detail::MapConst<T> dY(dy, static_cast<Eigen::Index>(Co),
                                   static_cast<Eigen::Index>(volume));
            dWt.noalias() += dY * C.transpose();
            for (std::size_t co = 0; co < Co; ++co)
                db_part[tid][co] += dY.row(static_cast<Eigen::Index>(co)).sum();
            detail::MapMat<T> dC(dcol.data(), static_cast<Eigen::Index>(rows),
                                 static_cast<Eigen::Index>(volume));
            dC.noalias() = W.transpose() * dY;
            detail::col2im_add(dcol.data(), Ci, Z, Y, X, node.kernel, dx);
        }
    }

    // Fixed-order reduction keeps results identical for a given thread count.
    for (std::size_t t = 0; t < static_cast<std::size_t>(nthreads); ++t) {
        if (dw_part[t].empty()) continue;
        for (std::size_t i = 0; i < wp.grad.data.size(); ++i)
            wp.grad.data[i] += dw_part[t][i];
        for (std::size_t i = 0; i < bp.grad.data.size(); ++i)
            bp.grad.data[i] += db_part[t][i];
    }
}

template <typename T>
void maxpool_forward(const Node& node, const Tensor<T>& in, Tensor<T>& out,
                     std::vector<std::int32_t>& argmax) {
    const std::size_t N = in.shape[0], C = in.shape[1], Z = in.shape[2], Y = in.shape[3],
                      X = in.shape[4];
    const std::size_t OZ = node.shape[1], OY = node.shape[2], OX = node.shape[3];
    argmax.resize(N * C * OZ * OY * OX);
    std::size_t o = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const T* sample = in.ptr() + n * C * Z * Y * X;
        for (std::size_t c = 0; c < C; ++c) {
            const T* plane = sample + c * Z * Y * X;
            for (std::size_t oz = 0; oz < OZ; ++oz) {
                const std::size_t z1 = std::min(2 * oz + 2, Z);
                for (std::size_t oy = 0; oy < OY; ++oy) {
                    const std::size_t y1 = std::min(2 * oy + 2, Y);
                    for (std::size_t ox = 0; ox < OX; ++ox, ++o) {
                        const std::size_t x1 = std::min(2 * ox + 2, X);
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t best_idx = 0;
                        for (std::size_t z = 2 * oz; z < z1; ++z)
                            for (std::size_t y = 2 * oy; y < y1; ++y)
                                for (std::size_t x = 2 * ox; x < x1; ++x) {
                                    const std::size_t idx = (z * Y + y) * X + x;
                                    if (plane[idx] > best) {
                                        best = plane[idx];
                                        best_idx = idx;
                                    }
                                }
                        out.data[o] = best;
                        argmax[o] = static_cast<std::int32_t>(c * Z * Y * X + best_idx);
                    }
                }
            }
        }
    }
}

template <typename T>
void dense_forward(const Node& node, const std::vector<Param<T>>& params,
                   const Tensor<T>& in, Tensor<T>& out) {
    const auto& w = params[static_cast<std::size_t>(node.w)].value; // (O, I)
    const auto& b = params[static_cast<std::size_t>(node.b)].value;
    const std::size_t N = in.shape[0], I = in.shape[1], O = node.shape[0];
    detail::MapConst<T> X(in.ptr(), static_cast<Eigen::Index>(N),
                          static_cast<Eigen::Index>(I));
    detail::MapConst<T> W(w.ptr(), static_cast<Eigen::Index>(O),
                          static_cast<Eigen::Index>(I));
    detail::MapMat<T> Y(out.ptr(), static_cast<Eigen::Index>(N),
                        static_cast<Eigen::Index>(O));
    Y.noalias() = X * W.transpose();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) Y(static_cast<Eigen::Index>(n),
                                              static_cast<Eigen::Index>(o)) += b.data[o];
}

template <typename T>
void dense_backward(const Node& node, std::vector<Param<T>>& params, const Tensor<T>& in,
                    const Tensor<T>& dout, Tensor<T>& din) {
    auto& wp = params[static_cast<std::size_t>(node.w)];
    auto& bp = params[static_cast<std::size_t>(node.b)];
    const std::size_t N = in.shape[0], I = in.shape[1], O = node.shape[0];
    detail::MapConst<T> X(in.ptr(), static_cast<Eigen::Index>(N),
                          static_cast<Eigen::Index>(I));
    detail::MapConst<T> W(wp.value.ptr(), static_cast<Eigen::Index>(O),
                          static_cast<Eigen::Index>(I));
    detail::MapConst<T> dY(dout.ptr(), static_cast<Eigen::Index>(N),
                           static_cast<Eigen::Index>(O));
    detail::MapMat<T> dX(din.ptr(), static_cast<Eigen::Index>(N),
                         static_cast<Eigen::Index>(I));
    detail::MapMat<T> dW(wp.grad.ptr(), static_cast<Eigen::Index>(O),
                         static_cast<Eigen::Index>(I));
    dX.noalias() += dY * W;
    dW.noalias() += dY.transpose() * X;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            bp.grad.data[o] += dout.data[n * O + o];
}

} // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config) : config_(config) {
    detail::Builder builder(config);
    builder.build();
    graph_ = std::make_unique<detail::Graph<T>>();
    graph_->nodes = std::move(builder.nodes);
    graph_->output = builder.output;
    graph_->tags = std::move(builder.tags);
    params_.reserve(builder.params.size());
    for (auto& spec : builder.params) {
        Param<T> p;
        p.name = spec.name;
        p.value = Tensor<T>(spec.shape);
        p.grad = Tensor<T>(spec.shape);
        params_.push_back(std::move(p));
    }
}

template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;
template <typename T>
Model<T>::~Model() = default;

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
        if (p.name.ends_with(".bias")) {
            p.value.zero();
            continue;
        }
        // Xavier-uniform. Conv fans include the kernel volume.
        std::size_t fan_in, fan_out;
        if (p.value.shape.size() == 5) {
            const std::size_t k3 = p.value.shape[2] * p.value.shape[3] * p.value.shape[4];
            fan_in = p.value.shape[1] * k3;
            fan_out = p.value.shape[0] * k3;
        } else {
            fan_in = p.value.shape[1];
            fan_out = p.value.shape[0];
        }
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : p.value.data)
            v = static_cast<T>(rng.uniform(-bound, bound));
    }
}

template <typename T>
std::size_t Model<T>::count_parameters() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.count();
    return total;
}

namespace {

template <typename T>
std::vector<std::size_t> with_batch(const Node& node, std::size_t N) {
    std::vector<std::size_t> s;
    s.reserve(node.shape.size() + 1);
    s.push_back(N);
    s.insert(s.end(), node.shape.begin(), node.shape.end());
    return s;
}

template <typename T>
void run_forward(const detail::Graph<T>& graph, const std::vector<Param<T>>& params,
                 const BatchInputs<T>& in, bool training, Rng* dropout_rng,
                 Exec<T>& exec, int threads) {
    const std::size_t N = in.batch();
    if (N == 0) throw DataError("forward: empty batch");
    const std::array<const Tensor<T>*, 3> slots{&in.s1, &in.s2, &in.s3};
    for (const auto* s : slots) {
        if (s->shape != std::vector<std::size_t>{N, 1, 6, 20, 20})
            throw DataError("forward: input tensors must be shaped (N, 1, 6, 20, 20), got " +
                            shape_string(*s));
    }

    const auto& nodes = graph.nodes;
    exec.act.resize(nodes.size());
    exec.argmax.resize(nodes.size());
    exec.keep.resize(nodes.size());

    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Node& node = nodes[i];
        Tensor<T>& out = exec.act[i];
        if (auto shape = with_batch<T>(node, N); out.shape != shape) {
            out.shape = std::move(shape);
            out.data.resize(out.count());
        }

        switch (node.op) {
            case Op::Input:
                out = *slots[static_cast<std::size_t>(node.input_slot)];
                break;
            case Op::Conv:
                conv_forward(node, params, exec.act[static_cast<std::size_t>(node.inputs[0])],
                             out, detail::resolve_threads<T>(threads));
                break;
            case Op::ReLU: {
                const auto& src = exec.act[static_cast<std::size_t>(node.inputs[0])];
                for (std::size_t j = 0; j < src.data.size(); ++j)
                    out.data[j] = src.data[j] > T(0) ? src.data[j] : T(0);
                break;
            }
            case Op::MaxPool:
                maxpool_forward(node, exec.act[static_cast<std::size_t>(node.inputs[0])], out,
                                exec.argmax[i]);
                break;
            case Op::Concat: {
                const auto& a = exec.act[static_cast<std::size_t>(node.inputs[0])];
                const auto& b = exec.act[static_cast<std::size_t>(node.inputs[1])];
                const std::size_t ca = a.shape[1], cb = b.shape[1];
                const std::size_t vol = detail::spatial_count(node);
                for (std::size_t n = 0; n < N; ++n) {
                    std::memcpy(out.ptr() + n * (ca + cb) * vol, a.ptr() + n * ca * vol,
                                ca * vol * sizeof(T));
                    std::memcpy(out.ptr() + (n * (ca + cb) + ca) * vol,
                                b.ptr() + n * cb * vol, cb * vol * sizeof(T));
                }
                break;
            }
            case Op::Add: {
                const auto& a = exec.act[static_cast<std::size_t>(node.inputs[0])];
                const auto& b = exec.act[static_cast<std::size_t>(node.inputs[1])];
                for (std::size_t j = 0; j < a.data.size(); ++j)
                    out.data[j] = a.data[j] + b.data[j];
                break;
            }
            case Op::Flatten:
                std::memcpy(out.ptr(), exec.act[static_cast<std::size_t>(node.inputs[0])].ptr(),
                            out.data.size() * sizeof(T));
                break;
            case Op::Dense:
                dense_forward(node, params, exec.act[static_cast<std::size_t>(node.inputs[0])],
                              out);
                break;
            case Op::Dropout: {
                const auto& src = exec.act[static_cast<std::size_t>(node.inputs[0])];
                if (training && dropout_rng) {
                    auto& keep = exec.keep[i];
                    keep.resize(src.data.size());
                    const T scale = T(1) / static_cast<T>(1.0 - node.rate);
                    for (std::size_t j = 0; j < src.data.size(); ++j) {
                        keep[j] = dropout_rng->uniform() >= node.rate ? 1 : 0;
                        out.data[j] = keep[j] ? src.data[j] * scale : T(0);
                    }
                } else {
                    out = src;
                }
                break;
            }
        }
    }
}

template <typename T>
void run_backward(const detail::Graph<T>& graph, std::vector<Param<T>>& params,
                  Exec<T>& exec, int threads) {
    const auto& nodes = graph.nodes;
    for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i) {
        const Node& node = nodes[static_cast<std::size_t>(i)];
        if (!exec.grad_valid[static_cast<std::size_t>(i)]) continue;
        Tensor<T>& dout = exec.grad[static_cast<std::size_t>(i)];

        const auto ensure_grad = [&](int src) -> Tensor<T>& {
            auto& g = exec.grad[static_cast<std::size_t>(src)];
            if (!exec.grad_valid[static_cast<std::size_t>(src)]) {
                exec.grad_valid[static_cast<std::size_t>(src)] = 1;
                const auto& a = exec.act[static_cast<std::size_t>(src)];
                g.shape = a.shape;
                g.data.assign(a.data.size(), T(0));
            }
            return g;
        };

        switch (node.op) {
            case Op::Input:
                break;
            case Op::Conv:
                conv_backward(node, params,
                              exec.act[static_cast<std::size_t>(node.inputs[0])], dout,
                              ensure_grad(node.inputs[0]), threads);
                break;
            case Op::ReLU: {
                auto& din = ensure_grad(node.inputs[0]);
                const auto& src = exec.act[static_cast<std::size_t>(node.inputs[0])];
                for (std::size_t j = 0; j < src.data.size(); ++j)
                    if (src.data[j] > T(0)) din.data[j] += dout.data[j];
                break;
            }
            case Op::MaxPool: {
                auto& din = ensure_grad(node.inputs[0]);
                const auto& src = exec.act[static_cast<std::size_t>(node.inputs[0])];
                const std::size_t sample =
                    src.shape[1] * src.shape[2] * src.shape[3] * src.shape[4];
                const std::size_t out_sample = dout.data.size() / dout.shape[0];
                const auto& argmax = exec.argmax[static_cast<std::size_t>(i)];
                for (std::size_t n = 0; n < dout.shape[0]; ++n)
                    for (std::size_t j = 0; j < out_sample; ++j)
                        din.data[n * sample +
                                 static_cast<std::size_t>(argmax[n * out_sample + j])] +=
                            dout.data[n * out_sample + j];
                break;
            }
            case Op::Concat: {
                auto& da = ensure_grad(node.inputs[0]);
                auto& db = ensure_grad(node.inputs[1]);
                const std::size_t ca = da.shape[1], cb = db.shape[1];
                const std::size_t vol = detail::spatial_count(node);
                for (std::size_t n = 0; n < dout.shape[0]; ++n) {
                    const T* src = dout.ptr() + n * (ca + cb) * vol;
                    T* pa = da.ptr() + n * ca * vol;
                    T* pb = db.ptr() + n * cb * vol;
                    for (std::size_t j = 0; j < ca * vol; ++j) pa[j] += src[j];
                    for (std::size_t j = 0; j < cb * vol; ++j) pb[j] += src[ca * vol + j];
                }
                break;
            }
            case Op::Add: {
                auto& da = ensure_grad(node.inputs[0]);
                auto& db = ensure_grad(node.inputs[1]);
                for (std::size_t j = 0; j < dout.data.size(); ++j) {
                    da.data[j] += dout.data[j];
                    db.data[j] += dout.data[j];
                }
                break;
            }
            case Op::Flatten: {
                auto& din = ensure_grad(node.inputs[0]);
                for (std::size_t j = 0; j < dout.data.size(); ++j)
                    din.data[j] += dout.data[j];
                break;
            }
            case Op::Dense:
                dense_backward(node, params,
                               exec.act[static_cast<std::size_t>(node.inputs[0])], dout,
                               ensure_grad(node.inputs[0]));
                break;
            case Op::Dropout: {
                auto& din = ensure_grad(node.inputs[0]);
                const auto& keep = exec.keep[static_cast<std::size_t>(i)];
                if (keep.empty()) {
                    for (std::size_t j = 0; j < dout.data.size(); ++j)
                        din.data[j] += dout.data[j];
                } else {
                    const T scale = T(1) / static_cast<T>(1.0 - node.rate);
                    for (std::size_t j = 0; j < dout.data.size(); ++j)
                        if (keep[j]) din.data[j] += dout.data[j] * scale;
                }
                break;
            }
        }
    }
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    Tensor<T> probs(logits.shape);
    const std::size_t N = logits.shape[0], K = logits.shape[1];
    for (std::size_t n = 0; n < N; ++n) {
        const T* row = logits.ptr() + n * K;
        T* out = probs.ptr() + n * K;
        T mx = row[0];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T sum = T(0);
        for (std::size_t k = 0; k < K; ++k) {
            out[k] = std::exp(row[k] - mx);
            sum += out[k];
        }
        for (std::size_t k = 0; k < K; ++k) out[k] /= sum;
    }
    return probs;
}

} // namespace

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        Tensor<T>& dlogits) {
    const std::size_t N = logits.shape[0], K = logits.shape[1];
    if (labels.size() != N)
        throw DataError("softmax_cross_entropy: label count does not match batch");
    const Tensor<T> probs = softmax_rows(logits);
    dlogits = probs;
    T loss = T(0);
    for (std::size_t n = 0; n < N; ++n) {
        const auto label = static_cast<std::size_t>(labels[n]);
        const T p = std::max(probs.data[n * K + label],
                             std::numeric_limits<T>::min());
        loss -= std::log(p);
        dlogits.data[n * K + label] -= T(1);
    }
    const T inv = T(1) / static_cast<T>(N);
    for (auto& g : dlogits.data) g *= inv;
    return loss * inv;
}

template <typename T>
Tensor<T> Model<T>::forward_probs(const BatchInputs<T>& in) const {
    Exec<T> exec;
    run_forward(*graph_, params_, in, /*training=*/false, nullptr, exec, threads_);
    return softmax_rows(exec.act[static_cast<std::size_t>(graph_->output)]);
}

template <typename T>
T Model<T>::compute_loss_and_gradients(const BatchInputs<T>& in,
                                       const std::vector<int>& labels, Rng* dropout_rng) {
    if (!scratch_) scratch_ = std::make_unique<Exec<T>>();
    Exec<T>& exec = *scratch_;
    run_forward(*graph_, params_, in, /*training=*/true, dropout_rng, exec, threads_);
    const auto out_id = static_cast<std::size_t>(graph_->output);

    for (auto& p : params_) p.grad.zero();
    exec.grad.resize(graph_->nodes.size());
    exec.grad_valid.assign(graph_->nodes.size(), 0);
    Tensor<T> dlogits;
    const T loss = softmax_cross_entropy(exec.act[out_id], labels, dlogits);
    if (!std::isfinite(static_cast<double>(loss)))
        throw NumericError("training loss is not finite");
    exec.grad[out_id] = std::move(dlogits);
    exec.grad_valid[out_id] = 1;
    run_backward(*graph_, params_, exec, threads_);
    return loss;
}

template <typename T>
std::map<std::string, Tensor<T>> Model<T>::dump_feature_maps(
    const BatchInputs<T>& in, std::span<const std::string> tags) const {
    for (const auto& tag : tags)
        if (!graph_->tags.contains(tag))
            throw DataError("unknown feature-map tag '" + tag + "'");
    Exec<T> exec;
    run_forward(*graph_, params_, in, /*training=*/false, nullptr, exec, threads_);
    std::map<std::string, Tensor<T>> out;
    for (const auto& tag : tags)
        out[tag] = exec.act[static_cast<std::size_t>(graph_->tags.at(tag))];
    return out;
}

template <typename T>
std::vector<std::string> Model<T>::feature_map_tags() const {
    std::vector<std::string> out;
    out.reserve(graph_->tags.size());
    for (const auto& [tag, node] : graph_->tags) out.push_back(tag);
    return out;
}

template <typename T>
Tensor<T> fuse_streams(const Tensor<T>& a, const Tensor<T>& b, Fusion mode,
                       const Tensor<T>* conv_weight, const Tensor<T>* conv_bias) {
    if (a.shape.size() != 5 || b.shape.size() != 5)
        throw DataError("fuse_streams: operands must be (N, C, Z, Y, X) feature maps");
    const bool spatial_match = a.shape[0] == b.shape[0] && a.shape[2] == b.shape[2] &&
                               a.shape[3] == b.shape[3] && a.shape[4] == b.shape[4];
    switch (mode) {
        case Fusion::Sum: {
            if (a.shape != b.shape)
                throw DataError("fuse_streams: element-wise sum requires identical shapes, got " +
                                shape_string(a) + " vs " + shape_string(b));
            Tensor<T> out(a.shape);
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] = a.data[i] + b.data[i];
            return out;
        }
        case Fusion::Concat: {
            if (!spatial_match)
                throw DataError("fuse_streams: concat requires matching spatial dims, got " +
                                shape_string(a) + " vs " + shape_string(b));
            Tensor<T> out({a.shape[0], a.shape[1] + b.shape[1], a.shape[2], a.shape[3],
                           a.shape[4]});
            const std::size_t vol = a.shape[2] * a.shape[3] * a.shape[4];
            for (std::size_t n = 0; n < a.shape[0]; ++n) {
                std::memcpy(out.ptr() + n * (a.shape[1] + b.shape[1]) * vol,
                            a.ptr() + n * a.shape[1] * vol, a.shape[1] * vol * sizeof(T));
                std::memcpy(out.ptr() + (n * (a.shape[1] + b.shape[1]) + a.shape[1]) * vol,
                            b.ptr() + n * b.shape[1] * vol, b.shape[1] * vol * sizeof(T));
            }
            return out;
        }
        case Fusion::Conv1x1: {
            if (!spatial_match)
                throw DataError("fuse_streams: conv1x1 requires matching spatial dims, got " +
                                shape_string(a) + " vs " + shape_string(b));
            if (!conv_weight || !conv_bias)
                throw DataError("fuse_streams: conv1x1 requires projection weights");
            const Tensor<T> cat = fuse_streams(a, b, Fusion::Concat);
            const std::size_t ci = cat.shape[1];
            if (conv_weight->shape.size() != 5 || conv_weight->shape[1] != ci ||
                conv_weight->shape[2] != 1 || conv_weight->shape[3] != 1 ||
                conv_weight->shape[4] != 1)
                throw DataError("fuse_streams: projection weight must be (Cout, " +
                                std::to_string(ci) + ", 1, 1, 1)");
            const std::size_t co = conv_weight->shape[0];
            const std::size_t vol = cat.shape[2] * cat.shape[3] * cat.shape[4];
            Tensor<T> out({cat.shape[0], co, cat.shape[2], cat.shape[3], cat.shape[4]});
            detail::MapConst<T> W(conv_weight->ptr(), static_cast<Eigen::Index>(co),
                                  static_cast<Eigen::Index>(ci));
            for (std::size_t n = 0; n < cat.shape[0]; ++n) {
                detail::MapConst<T> C(cat.ptr() + n * ci * vol,
                                      static_cast<Eigen::Index>(ci),
                                      static_cast<Eigen::Index>(vol));
                detail::MapMat<T> O(out.ptr() + n * co * vol,
                                    static_cast<Eigen::Index>(co),
                                    static_cast<Eigen::Index>(vol));
                O.noalias() = W * C;
                for (std::size_t k = 0; k < co; ++k)
                    O.row(static_cast<Eigen::Index>(k)).array() += conv_bias->data[k];
            }
            return out;
        }
    }
    throw DataError("fuse_streams: unknown fusion mode");
}

namespace {

template <typename T>
void fill_slot(Tensor<T>& slot, std::size_t n, const Patch& p) {
    // Patch layout (z, y, x) matches the (C=1, Z, Y, X) activation layout.
    T* dst = slot.ptr() + n * p.values.size();
    for (std::size_t i = 0; i < p.values.size(); ++i) dst[i] = static_cast<T>(p.values[i]);
}

} // namespace

template <typename T>
BatchInputs<T> make_batch(std::span<const PatchTriple* const> triples) {
    BatchInputs<T> in;
    const std::size_t N = triples.size();
    in.s1 = Tensor<T>({N, 1, 6, 20, 20});
    in.s2 = Tensor<T>({N, 1, 6, 20, 20});
    in.s3 = Tensor<T>({N, 1, 6, 20, 20});
    for (std::size_t n = 0; n < N; ++n) {
        fill_slot(in.s1, n, triples[n]->s1);
        fill_slot(in.s2, n, triples[n]->s2);
        fill_slot(in.s3, n, triples[n]->s3);
    }
    return in;
}

template <typename T>
BatchInputs<T> make_batch(std::span<const PatchTriple> triples) {
    std::vector<const PatchTriple*> ptrs;
    ptrs.reserve(triples.size());
    for (const auto& t : triples) ptrs.push_back(&t);
    return make_batch<T>(std::span<const PatchTriple* const>(ptrs));
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"variant", to_string(c.variant)},
                          {"fusion", to_string(c.fusion)},
                          {"stage_channels", c.stage_channels},
                          {"head_channels", c.head_channels},
                          {"fc_widths", c.fc_widths},
                          {"dropout_rate", c.dropout_rate},
                          {"num_classes", c.num_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c = ModelConfig::defaults_for(
        j.contains("variant") ? parse_variant(j.at("variant").get<std::string>())
                              : Variant::MGI);
    if (j.contains("fusion")) c.fusion = parse_fusion(j.at("fusion").get<std::string>());
    if (j.contains("stage_channels"))
        c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    if (j.contains("head_channels"))
        c.head_channels = j.at("head_channels").get<std::vector<int>>();
    if (j.contains("fc_widths")) c.fc_widths = j.at("fc_widths").get<std::vector<int>>();
    if (j.contains("dropout_rate")) c.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int>();
    return c;
}

namespace {
constexpr char kCheckpointMagic[4] = {'M', 'G', 'C', 'K'};
} // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
    nlohmann::json manifest;
    manifest["format"] = 1;
    manifest["config"] = model_config_to_json(model.config());
    auto tensors = nlohmann::json::array();
    for (const auto& p : model.params())
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape}});
    manifest["tensors"] = tensors;
    const std::string header = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write checkpoint: " + path.string());
    out.write(kCheckpointMagic, 4);
    const auto len = static_cast<std::uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& p : model.params()) {
        std::vector<float> buf(p.value.data.size());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<float>(p.value.data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out)
        throw DataError("failed writing checkpoint: " + path.string());
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path.string());
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    in.read(header.data(), len);
    if (!in)
        throw DataError("checkpoint truncated: " + path.string());

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: bad manifest in " + path.string() + ": " + e.what());
    }
    if (manifest.at("format").get<int>() != 1)
        throw DataError("checkpoint: unsupported format version in " + path.string());

    Model<T> model(model_config_from_json(manifest.at("config")));
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != model.params().size())
        throw DataError("checkpoint: tensor count mismatch in " + path.string());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        auto& p = model.params()[i];
        const auto name = tensors[i].at("name").get<std::string>();
        const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
        if (name != p.name || shape != p.value.shape)
            throw DataError("checkpoint: tensor '" + name +
                            "' does not match the built graph (expected '" + p.name + "' " +
                            shape_string(p.value) + ")");
        std::vector<float> buf(p.value.data.size());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in)
            throw DataError("checkpoint truncated: " + path.string());
        for (std::size_t j = 0; j < buf.size(); ++j)
            p.value.data[j] = static_cast<T>(buf[j]);
    }
    return model;
}

template class Model<float>;
template class Model<double>;
template float softmax_cross_entropy<float>(const Tensor<float>&, const std::vector<int>&,
                                             Tensor<float>&);
template double softmax_cross_entropy<double>(const Tensor<double>&,
                                              const std::vector<int>&, Tensor<double>&);
template Tensor<float> fuse_streams<float>(const Tensor<float>&, const Tensor<float>&,
                                           Fusion, const Tensor<float>*,
                                           const Tensor<float>*);
template Tensor<double> fuse_streams<double>(const Tensor<double>&, const Tensor<double>&,
                                             Fusion, const Tensor<double>*,
                                             const Tensor<double>*);
template BatchInputs<float> make_batch<float>(std::span<const PatchTriple* const>);
template BatchInputs<double> make_batch<double>(std::span<const PatchTriple* const>);
template BatchInputs<float> make_batch<float>(std::span<const PatchTriple>);
template BatchInputs<double> make_batch<double>(std::span<const PatchTriple>);
template void save_checkpoint<float>(const Model<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const Model<double>&, const std::filesystem::path&);
template Model<float> load_checkpoint<float>(const std::filesystem::path&);
template Model<double> load_checkpoint<double>(const std::filesystem::path&);

} // namespace mgi
