#include "pointbert/nn.hpp"

#include <algorithm>
#include <cmath>

#include "pointbert/error.hpp"
#include "pointbert/geometry.hpp"

namespace pointbert::nn {

NamedTensors Module::named_parameters(const std::string& prefix) const {
    NamedTensors out;
    collect(out, prefix);
    return out;
}

std::vector<Tensor> Module::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

void copy_parameters(const NamedTensors& target, const NamedTensors& source) {
    if (target.size() != source.size()) throw ShapeError("copy_parameters: parameter count mismatch");
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i].second.shape() != source[i].second.shape()) {
            throw ShapeError("copy_parameters: shape mismatch at " + target[i].first);
        }
        Tensor dst = target[i].second;
        const auto src = source[i].second.data();
        std::copy(src.begin(), src.end(), dst.mutable_data().begin());
    }
}

void zero_parameters(const NamedTensors& params) {
    for (const auto& [name, t] : params) {
        Tensor dst = t;
        std::fill(dst.mutable_data().begin(), dst.mutable_data().end(), 0.0);
    }
}

Tensor activate(const Tensor& x, Activation act) {
    switch (act) {
        case Activation::relu: return relu(x);
        case Activation::leaky_relu: return leaky_relu(x, 0.2);
        case Activation::gelu: return gelu(x);
        case Activation::identity: return x;
    }
    return x;
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "leaky_relu") return Activation::leaky_relu;
    if (name == "gelu") return Activation::gelu;
    if (name == "identity") return Activation::identity;
    throw DomainError("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::gelu: return "gelu";
        case Activation::identity: return "identity";
    }
    return "relu";
}

// --- Linear ------------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, InitKind init, bool with_bias) : in_(in), out_(out) {
    std::vector<double> w(in * out);
    if (init == InitKind::uniform_fan_in || init == InitKind::he_uniform) {
        const double bound = init == InitKind::he_uniform ? std::sqrt(6.0 / static_cast<double>(in))
                                                          : 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& v : w) v = rng.uniform(-bound, bound);
    } else {
        for (auto& v : w) {
            double z;
            do {
                z = rng.normal();
            } while (std::abs(z) > 2.0);
            v = 0.02 * z;
        }
    }
    weight = Tensor::from({in, out}, std::move(w), true);
    if (with_bias) bias = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.dim(-1) != in_) {
        throw ShapeError("Linear: expected last axis " + std::to_string(in_) + ", got " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / in_;
    const Tensor x2 = x.rank() == 2 ? x : reshape(x, {rows, in_});
    Tensor y = matmul(x2, weight);
    if (bias.defined()) y = add(y, bias);
    if (x.rank() == 2) return y;
    Shape shape = x.shape();
    shape.back() = out_;
    return reshape(y, std::move(shape));
}

void Linear::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + "weight", weight);
    if (bias.defined()) out.emplace_back(prefix + "bias", bias);
}

// --- Mlp ---------------------------------------------------------------------

Mlp::Mlp(const std::vector<std::size_t>& widths, Activation act, Rng& rng, InitKind init) : activation(act) {
    if (widths.size() < 2) throw ShapeError("Mlp: need at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool hidden = i + 2 < widths.size();
        const InitKind kind = init == InitKind::uniform_fan_in && hidden ? InitKind::he_uniform : init;
        layers.emplace_back(widths[i], widths[i + 1], rng, kind);
    }
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size()) h = activate(h, activation);
    }
    return h;
}

void Mlp::collect(NamedTensors& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + std::to_string(i) + ".");
}

// --- LayerNorm ---------------------------------------------------------------

LayerNorm::LayerNorm(std::size_t dim, double eps_)
    : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)), eps(eps_) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layernorm(x, gain, bias, eps); }

void LayerNorm::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + "gain", gain);
    out.emplace_back(prefix + "bias", bias);
}

// --- MiniPointNet ------------------------------------------------------------

MiniPointNet::MiniPointNet(std::size_t hidden1, std::size_t hidden2, std::size_t out_dim, Rng& rng)
    : point_mlp({3, hidden1, hidden2}, Activation::relu, rng),
      global_mlp({hidden2, hidden2, out_dim}, Activation::relu, rng) {}

Tensor MiniPointNet::forward(const Tensor& patches) const {
    const Tensor batched = patches.rank() == 2 ? reshape(patches, {1, patches.dim(0), 3}) : patches;
    if (batched.rank() != 3 || batched.dim(2) != 3) {
        throw ShapeError("MiniPointNet: expected [g,n,3], got " + shape_str(patches.shape()));
    }
    const Tensor per_point = point_mlp.forward(batched);        // [g,n,h2]
    const Tensor pooled = reduce(per_point, ReduceKind::max, 1);  // [g,h2]
    return global_mlp.forward(pooled);
}

void MiniPointNet::collect(NamedTensors& out, const std::string& prefix) const {
    point_mlp.collect(out, prefix + "point_mlp.");
    global_mlp.collect(out, prefix + "global_mlp.");
}

// --- PositionalEmbed ---------------------------------------------------------

PositionalEmbed::PositionalEmbed(std::size_t hidden, std::size_t dim, Rng& rng)
    : mlp({3, hidden, dim}, Activation::gelu, rng) {}

Tensor PositionalEmbed::forward(const Tensor& centers) const { return mlp.forward(centers); }

void PositionalEmbed::collect(NamedTensors& out, const std::string& prefix) const { mlp.collect(out, prefix + "mlp."); }

// --- EdgeConv ----------------------------------------------------------------

std::vector<std::size_t> repeat_each(std::size_t rows, std::size_t times) {
    std::vector<std::size_t> idx(rows * times);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t t = 0; t < times; ++t) idx[r * times + t] = r;
    }
    return idx;
}

EdgeConv::EdgeConv(std::size_t in_dim, std::size_t out_dim, std::size_t k, Rng& rng)
    : edge_mlp(2 * in_dim, out_dim, rng, InitKind::he_uniform, false),
      norm_gain(Tensor::full({out_dim}, 1.0, true)),
      norm_bias(Tensor::zeros({out_dim}, true)),
      k_(k) {
    if (k == 0) throw SizeError("EdgeConv: k must be positive");
}

// The norm cancels a per-channel shift, so the edge MLP only carries a bias without it.
void EdgeConv::disable_norm() {
    norm_gain = Tensor{};
    norm_bias = Tensor{};
    if (!edge_mlp.bias.defined()) edge_mlp.bias = Tensor::zeros({edge_mlp.out_features()}, true);
}

Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 2) throw ShapeError("channel_norm: expected [r,c]");
    const std::size_t r = x.dim(0);
    const Tensor normalized = transpose(layernorm(transpose(x), Tensor::full({r}, 1.0), Tensor::zeros({r}), eps));
    return add(mul(normalized, gain), bias);
}

Tensor EdgeConv::forward(const Tensor& features, const Tensor& graph_features) const {
    if (features.rank() != 2) throw ShapeError("EdgeConv: features must be [m,c]");
    const std::size_t m = features.dim(0);
    if (k_ > m && !clamp_k) {
        throw SizeError("EdgeConv: k=" + std::to_string(k_) + " exceeds node count " + std::to_string(m));
    }
    const std::size_t k = std::min(k_, m);
    const Tensor& graph = graph_features.defined() ? graph_features : features;
    if (graph.dim(0) != m) throw ShapeError("EdgeConv: graph feature rows must match features");
    const auto neighbours = geometry::knn_rows(graph.data(), graph.data(), graph.dim(1), k);
    return aggregate(features, features, neighbours, k);
}

Tensor EdgeConv::forward_bipartite(const Tensor& query, const Tensor& reference,
                                   const std::vector<std::size_t>& neighbours) const {
    return aggregate(query, reference, neighbours, k_);
}

Tensor EdgeConv::aggregate(const Tensor& query, const Tensor& reference, const std::vector<std::size_t>& neighbours,
                           std::size_t k) const {
    const std::size_t m = query.dim(0);
    if (neighbours.size() != m * k) throw ShapeError("EdgeConv: neighbour table has wrong size");
    if (query.dim(1) != reference.dim(1)) throw ShapeError("EdgeConv: query/reference width mismatch");
    const Tensor xi = gather_rows(query, repeat_each(m, k));
    const Tensor xj = gather_rows(reference, neighbours);
    const Tensor edge = concat({xi, sub(xj, xi)}, 1);
    Tensor h = edge_mlp.forward(edge);  // [m*k, out]
    if (norm_gain.defined()) h = channel_norm(h, norm_gain, norm_bias);
    h = activate(h, activation);
    return reduce(reshape(h, {m, k, edge_mlp.out_features()}), ReduceKind::max, 1);
}

void EdgeConv::collect(NamedTensors& out, const std::string& prefix) const {
    edge_mlp.collect(out, prefix + "mlp.");
    if (norm_gain.defined()) {
        out.emplace_back(prefix + "norm.gain", norm_gain);
        out.emplace_back(prefix + "norm.bias", norm_bias);
    }
}

// --- Attention ---------------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng)
    : query(dim, dim, rng, InitKind::normal_002, false),
      key(dim, dim, rng, InitKind::normal_002, false),
      value(dim, dim, rng, InitKind::normal_002, false),
      output(dim, dim, rng, InitKind::normal_002, true),
      heads_(heads) {
    if (heads == 0 || dim % heads != 0) throw ShapeError("MultiHeadAttention: dim must be divisible by heads");
}

Tensor MultiHeadAttention::forward(const Tensor& h) const {
    const std::size_t d = query.in_features();
    if (h.rank() != 2 || h.dim(1) != d) throw ShapeError("MultiHeadAttention: expected [T," + std::to_string(d) + "]");
    const std::size_t dh = d / heads_;
    const double factor = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor q = query.forward(h);
    const Tensor k = key.forward(h);
    const Tensor v = value.forward(h);
    std::vector<Tensor> per_head;
    per_head.reserve(heads_);
    for (std::size_t i = 0; i < heads_; ++i) {
        const Tensor qh = slice(q, 1, i * dh, dh);
        const Tensor kh = slice(k, 1, i * dh, dh);
        const Tensor vh = slice(v, 1, i * dh, dh);
        const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), factor), 1);
        per_head.push_back(matmul(weights, vh));
    }
    const Tensor merged = heads_ == 1 ? per_head.front() : concat(per_head, 1);
    return output.forward(merged);
}

void MultiHeadAttention::collect(NamedTensors& out, const std::string& prefix) const {
    query.collect(out, prefix + "query.");
    key.collect(out, prefix + "key.");
    value.collect(out, prefix + "value.");
    output.collect(out, prefix + "output.");
}

// --- Transformer -------------------------------------------------------------

void TransformerConfig::validate() const {
    if (depth == 0 || model_dim == 0 || heads == 0 || ffn_dim == 0) {
        throw ShapeError("TransformerConfig: sizes must be positive");
    }
    if (model_dim % heads != 0) throw ShapeError("TransformerConfig: model_dim must be divisible by heads");
    if (drop_path_rate < 0.0 || drop_path_rate >= 1.0) throw DomainError("TransformerConfig: drop_path_rate in [0,1)");
    if (dropout < 0.0 || dropout >= 1.0) throw DomainError("TransformerConfig: dropout in [0,1)");
}

Tensor stochastic_depth(const Tensor& branch, double rate, bool training, Rng* rng) {
    if (rate < 0.0 || rate >= 1.0) throw DomainError("stochastic_depth: rate must be in [0,1)");
    if (!training || rate == 0.0) return branch;
    if (!rng) throw DomainError("stochastic_depth: training mode needs a generator");
    if (rng->uniform() < rate) return scale(branch, 0.0);
    return scale(branch, 1.0 / (1.0 - rate));
}

TransformerBlock::TransformerBlock(const TransformerConfig& cfg, double drop_path_, Rng& rng)
    : norm1(cfg.model_dim),
      norm2(cfg.model_dim),
      attention(cfg.model_dim, cfg.heads, rng),
      ffn_in(cfg.model_dim, cfg.ffn_dim, rng, InitKind::normal_002),
      ffn_out(cfg.ffn_dim, cfg.model_dim, rng, InitKind::normal_002),
      drop_path(drop_path_),
      dropout(cfg.dropout),
      ffn_activation(cfg.ffn_activation) {}

Tensor TransformerBlock::forward(const Tensor& h, const ForwardContext& ctx) const {
    Rng* rng = ctx.dropout_rng;
    if (ctx.training && (drop_path > 0.0 || dropout > 0.0) && !rng) {
        throw DomainError("TransformerBlock: training mode needs a dropout generator");
    }
    const Tensor attn = attention.forward(norm1.forward(h));
    const Tensor h1 = add(h, stochastic_depth(attn, drop_path, ctx.training, rng));
    Tensor f = activate(ffn_in.forward(norm2.forward(h1)), ffn_activation);
    if (ctx.training && dropout > 0.0) f = pointbert::dropout(f, dropout, *rng, true);
    f = ffn_out.forward(f);
    if (ctx.training && dropout > 0.0) f = pointbert::dropout(f, dropout, *rng, true);
    return add(h1, stochastic_depth(f, drop_path, ctx.training, rng));
}

void TransformerBlock::collect(NamedTensors& out, const std::string& prefix) const {
    norm1.collect(out, prefix + "norm1.");
    attention.collect(out, prefix + "attn.");
    norm2.collect(out, prefix + "norm2.");
    ffn_in.collect(out, prefix + "ffn_in.");
    ffn_out.collect(out, prefix + "ffn_out.");
}

TransformerEncoder::TransformerEncoder(const TransformerConfig& cfg, Rng& rng) : config(cfg), final_norm(cfg.model_dim) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const double rate =
            cfg.depth > 1 ? cfg.drop_path_rate * static_cast<double>(i) / static_cast<double>(cfg.depth - 1) : 0.0;
        blocks.emplace_back(cfg, rate, rng);
    }
}

Tensor TransformerEncoder::forward(const Tensor& h, const ForwardContext& ctx, std::vector<Tensor>* layer_outputs) const {
    Tensor x = h;
    if (layer_outputs) layer_outputs->clear();
    for (const auto& block : blocks) {
        x = block.forward(x, ctx);
        if (layer_outputs) layer_outputs->push_back(final_norm.forward(x));
    }
    return layer_outputs ? layer_outputs->back() : final_norm.forward(x);
}

void TransformerEncoder::collect(NamedTensors& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + "blocks." + std::to_string(i) + ".");
    final_norm.collect(out, prefix + "norm.");
}

// --- Gumbel-softmax ----------------------------------------------------------

Tensor gumbel_softmax(const Tensor& logits, double temperature, const Tensor& noise) {
    if (!(temperature > 0.0)) throw DomainError("gumbel_softmax: temperature must be positive");
    const Tensor perturbed = noise.defined() ? add(logits, noise) : logits;
    return softmax(scale(perturbed, 1.0 / temperature), -1);
}

Tensor sample_gumbel(const Shape& shape, Rng& rng) {
    std::vector<double> g(shape_numel(shape));
    for (auto& v : g) v = rng.gumbel();
    return Tensor::from(shape, std::move(g));
}

// --- FoldingLayer ------------------------------------------------------------

std::size_t FoldingLayer::grid_side(std::size_t points) {
    std::size_t s = 1;
    while (s * s < points) ++s;
    return s;
}

std::vector<std::array<double, 2>> FoldingLayer::grid(std::size_t side) {
    if (side == 0) throw SizeError("FoldingLayer: grid side must be positive");
    std::vector<std::array<double, 2>> nodes;
    nodes.reserve(side * side);
    auto coord = [side](std::size_t i) {
        return side == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(side - 1);
    };
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) nodes.push_back({coord(c), coord(r)});
    }
    return nodes;
}

FoldingLayer::FoldingLayer(std::size_t feature_dim, std::size_t hidden, std::size_t points, Rng& rng)
    : mlp({feature_dim + 2, hidden, hidden, 3}, Activation::relu, rng), points_(points), side_(grid_side(points)) {
    if (points == 0) throw SizeError("FoldingLayer: point count must be positive");
}

Tensor FoldingLayer::forward(const Tensor& features) const {
    if (features.rank() != 2) throw ShapeError("FoldingLayer: features must be [g,c]");
    const std::size_t g = features.dim(0);
    const auto nodes = grid(side_);
    std::vector<double> grid_values;
    grid_values.reserve(g * points_ * 2);
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = 0; j < points_; ++j) grid_values.insert(grid_values.end(), nodes[j].begin(), nodes[j].end());
    }
    const Tensor tiled = gather_rows(features, repeat_each(g, points_));
    const Tensor input = concat({tiled, Tensor::from({g * points_, 2}, std::move(grid_values))}, 1);
    return reshape(mlp.forward(input), {g, points_, 3});
}

void FoldingLayer::collect(NamedTensors& out, const std::string& prefix) const { mlp.collect(out, prefix + "mlp."); }

}  // namespace pointbert::nn
