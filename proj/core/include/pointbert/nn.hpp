#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "pointbert/ops.hpp"
#include "pointbert/optim.hpp"
#include "pointbert/rng.hpp"

namespace pointbert::nn {

/// Training flag and the random streams a forward pass may consume.
struct ForwardContext {
    bool training = false;
    Rng* dropout_rng = nullptr;
};

class Module {
public:
    virtual ~Module() = default;
    virtual void collect(NamedTensors& out, const std::string& prefix) const = 0;

    NamedTensors named_parameters(const std::string& prefix = "") const;
    std::vector<Tensor> parameters() const;
};

/// Copies values of `source` into `target`; both must list identical names and shapes.
void copy_parameters(const NamedTensors& target, const NamedTensors& source);
void zero_parameters(const NamedTensors& params);

enum class Activation { relu, leaky_relu, gelu, identity };
Tensor activate(const Tensor& x, Activation act);
Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

enum class InitKind {
    uniform_fan_in,  // U(-1/sqrt(in), 1/sqrt(in))
    he_uniform,      // U(-sqrt(6/in), sqrt(6/in)), for layers feeding a rectifier
    normal_002,      // N(0, 0.02^2) truncated at 2 sigma
};

class Linear : public Module {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, InitKind init = InitKind::uniform_fan_in, bool bias = true);

    /// Applies to the last axis of x.
    Tensor forward(const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

    Tensor weight;  // [in, out]
    Tensor bias;    // [out] or undefined

private:
    std::size_t in_ = 0, out_ = 0;
};

/// Linear layers with `act` between consecutive layers (none after the last).
/// Hidden layers of a fan-in initialized MLP use he_uniform; the output layer keeps fan-in scaling.
class Mlp : public Module {
public:
    Mlp() = default;
    Mlp(const std::vector<std::size_t>& widths, Activation act, Rng& rng, InitKind init = InitKind::uniform_fan_in);

    Tensor forward(const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    std::vector<Linear> layers;
    Activation activation = Activation::relu;
};

class LayerNorm : public Module {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim, double eps = 1e-5);
    Tensor forward(const Tensor& x) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    Tensor gain, bias;
    double eps = 1e-5;
};

/// Patch embedder: shared per-point MLP, max over points, then a second MLP.
class MiniPointNet : public Module {
public:
    MiniPointNet() = default;
    MiniPointNet(std::size_t hidden1, std::size_t hidden2, std::size_t out_dim, Rng& rng);

    /// [n,3] -> [1,d] or [g,n,3] -> [g,d].
    Tensor forward(const Tensor& patches) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    Mlp point_mlp;
    Mlp global_mlp;
};

/// Two-layer MLP R^3 -> R^d applied to patch centers.
class PositionalEmbed : public Module {
public:
    PositionalEmbed() = default;
    PositionalEmbed(std::size_t hidden, std::size_t dim, Rng& rng);
    Tensor forward(const Tensor& centers) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    Mlp mlp;
};

/// Normalizes each column of [r, c] over its r rows, then applies a per-column affine map.
Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Dynamic-graph edge convolution: for node i and each of its k nearest
/// neighbours j, h = act(norm(W [x_i, x_j - x_i] + b)), then max over neighbours.
/// The norm runs per channel over all edges of the graph.

class EdgeConv : public Module {
public:
    EdgeConv() = default;
    EdgeConv(std::size_t in_dim, std::size_t out_dim, std::size_t k, Rng& rng);

    /// Neighbour graph from kNN over `graph_features` rows (self included);
    /// an undefined tensor means use `features`.
    Tensor forward(const Tensor& features, const Tensor& graph_features = {}) const;
    /// Bipartite form: node i of `query` aggregates over rows
    /// `neighbours[i*k .. i*k+k)` of `reference`.
    Tensor forward_bipartite(const Tensor& query, const Tensor& reference,
                             const std::vector<std::size_t>& neighbours) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    std::size_t k() const { return k_; }
    Linear edge_mlp;
    Tensor norm_gain, norm_bias;  // undefined when normalization is off
    Activation activation = Activation::leaky_relu;
    /// Use min(k, node count) instead of raising SizeError on small graphs.
    bool clamp_k = false;

    void disable_norm();

private:
    Tensor aggregate(const Tensor& query, const Tensor& reference, const std::vector<std::size_t>& neighbours,
                     std::size_t k) const;
    std::size_t k_ = 1;
};

/// Multi-head scaled dot-product self-attention with scale 1/sqrt(head_dim).
class MultiHeadAttention : public Module {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

    /// [T,d] -> [T,d]
    Tensor forward(const Tensor& h) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    std::size_t heads() const { return heads_; }
    Linear query, key, value, output;

private:
    std::size_t heads_ = 1;
};

struct TransformerConfig {
    std::size_t depth = 4;
    std::size_t model_dim = 48;
    std::size_t heads = 4;
    std::size_t ffn_dim = 192;
    double drop_path_rate = 0.1;
    double dropout = 0.0;
    Activation ffn_activation = Activation::relu;

    void validate() const;
};

/// Branch survives with probability 1-rate, rescaled by 1/(1-rate); identity
/// outside training.
Tensor stochastic_depth(const Tensor& branch, double rate, bool training, Rng* rng);

/// Pre-norm block: h + DropPath(MHA(LN(h))), then + DropPath(FFN(LN(.))).
class TransformerBlock : public Module {
public:
    TransformerBlock() = default;
    TransformerBlock(const TransformerConfig& cfg, double drop_path, Rng& rng);

    Tensor forward(const Tensor& h, const ForwardContext& ctx) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    LayerNorm norm1, norm2;
    MultiHeadAttention attention;
    Linear ffn_in, ffn_out;
    double drop_path = 0.0;
    double dropout = 0.0;
    Activation ffn_activation = Activation::relu;
};

class TransformerEncoder : public Module {
public:
    TransformerEncoder() = default;
    TransformerEncoder(const TransformerConfig& cfg, Rng& rng);

    /// Final-norm output. When `layer_outputs` is given, it receives the
    /// final-normed output of every block (index 0 = first block).
    Tensor forward(const Tensor& h, const ForwardContext& ctx, std::vector<Tensor>* layer_outputs = nullptr) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    TransformerConfig config;
    std::vector<TransformerBlock> blocks;
    LayerNorm final_norm;
};

/// softmax((logits + noise) / temperature) over the last axis. An undefined
/// `noise` means zero noise.
Tensor gumbel_softmax(const Tensor& logits, double temperature, const Tensor& noise = {});
/// Gumbel draws -log(-log u) shaped like `shape`.
Tensor sample_gumbel(const Shape& shape, Rng& rng);

/// Deforms an s x s grid over [-1,1]^2 into 3-D points conditioned on a
/// feature vector. Only the first `points` grid nodes (row-major) are used.
class FoldingLayer : public Module {
public:
    FoldingLayer() = default;
    FoldingLayer(std::size_t feature_dim, std::size_t hidden, std::size_t points, Rng& rng);

    static std::size_t grid_side(std::size_t points);
    /// Row-major (u, v) nodes of an s x s grid spanning [-1,1]^2.
    static std::vector<std::array<double, 2>> grid(std::size_t side);

    /// [g,c] -> [g, points, 3]
    Tensor forward(const Tensor& features) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    std::size_t points() const { return points_; }
    std::size_t side() const { return side_; }
    Mlp mlp;

private:
    std::size_t points_ = 1, side_ = 1;
};

/// Row indices [0,0,..,1,1,..] repeating each of `rows` indices `times` times.
std::vector<std::size_t> repeat_each(std::size_t rows, std::size_t times);

}  // namespace pointbert::nn
