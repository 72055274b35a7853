#include "pointbert/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pointbert/dvae.hpp"
#include "pointbert/error.hpp"
#include "pointbert/geometry.hpp"
#include "pointbert/nn.hpp"
#include "pointbert/ops.hpp"
#include "pointbert/pretrain.hpp"
#include "pointbert/rng.hpp"

namespace pointbert {

namespace {

using CheckFn = std::function<GradCheckResult(Rng&)>;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Values bounded away from zero so kinks (relu, |x|) are never straddled.
Tensor away_from_zero(Shape shape, Rng& rng) {
    Tensor t = random_tensor(std::move(shape), rng, 0.1, 1.0);
    auto d = t.mutable_data();
    for (auto& x : d) x *= rng.bernoulli(0.5) ? 1.0 : -1.0;
    return t;
}

// Fixed random linear read-out, so every output element affects the loss.
Tensor readout(const Tensor& out, std::uint64_t seed) {
    Rng r(seed);
    std::vector<double> w(out.numel());
    for (auto& x : w) x = r.uniform(-1.0, 1.0);
    return sum_all(mul(out, Tensor::from(out.shape(), std::move(w))));
}

GradCheckOptions capped(std::size_t cap) {
    GradCheckOptions o;
    o.max_elements = cap;
    return o;
}

// Freshly initialized biases are zero, which can put a rectifier exactly on its
// kink (a row whose hidden units are all inactive). Random rank-1 parameters
// move the check to a generic, differentiable point.
std::vector<Tensor> with_params(std::vector<Tensor> inputs, const nn::Module& m, Rng& rng) {
    for (auto p : m.parameters()) {
        if (p.rank() == 1) {
            for (auto& v : p.mutable_data()) v += rng.uniform(-0.5, 0.5);
        }
        inputs.push_back(p);
    }
    return inputs;
}

std::vector<std::pair<std::string, CheckFn>> build_families() {
    std::vector<std::pair<std::string, CheckFn>> f;
    auto unary = [&f](const std::string& name, Tensor (*op)(const Tensor&), double lo, double hi) {
        f.emplace_back(name, [op, lo, hi](Rng& rng) {
            Tensor a = random_tensor({4, 5}, rng, lo, hi);
            const auto s = rng.next_u64();
            return gradcheck([&] { return readout(op(a), s); }, {a});
        });
    };
    auto binary = [&f](const std::string& name, Tensor (*op)(const Tensor&, const Tensor&), double lo, double hi) {
        f.emplace_back(name, [op, lo, hi](Rng& rng) {
            Tensor a = random_tensor({4, 5}, rng, -1.0, 1.0);
            Tensor b = random_tensor({4, 5}, rng, lo, hi);
            Tensor row = random_tensor({5}, rng, lo, hi);
            const auto s = rng.next_u64();
            return gradcheck([&] { return readout(add(op(a, b), op(a, row)), s); }, {a, b, row});
        });
    };
    binary("add", add, -1.0, 1.0);
    binary("sub", sub, -1.0, 1.0);
    binary("mul", mul, -1.0, 1.0);
    binary("div", div, 0.5, 2.0);
    unary("neg", neg, -1.0, 1.0);
    unary("exp", exp, -1.0, 1.0);
    unary("log", log, 0.5, 2.0);
    unary("sqrt", sqrt, 0.5, 2.0);
    unary("gelu", gelu, -2.0, 2.0);
    f.emplace_back("relu", [](Rng& rng) {
        Tensor a = away_from_zero({4, 5}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(relu(a), s); }, {a});
    });
    f.emplace_back("leaky_relu", [](Rng& rng) {
        Tensor a = away_from_zero({4, 5}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(leaky_relu(a, 0.2), s); }, {a});
    });
    f.emplace_back("scale", [](Rng& rng) {
        Tensor a = random_tensor({3, 4}, rng);
        const double c = rng.uniform(-2.0, 2.0);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(add_scalar(scale(a, c), 0.3), s); }, {a});
    });
    f.emplace_back("matmul", [](Rng& rng) {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(matmul(a, b), s); }, {a, b});
    });
    f.emplace_back("matmul_batched", [](Rng& rng) {
        Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 2}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(matmul(a, b), s); }, {a, b});
    });
    f.emplace_back("transpose_reshape", [](Rng& rng) {
        Tensor a = random_tensor({2, 3, 4}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(reshape(transpose(a), {6, 4}), s); }, {a});
    });
    f.emplace_back("softmax", [](Rng& rng) {
        Tensor a = random_tensor({3, 5}, rng, -2.0, 2.0);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(add(softmax(a, 1), transpose(softmax(transpose(a), 0))), s); }, {a});
    });
    f.emplace_back("layernorm", [](Rng& rng) {
        Tensor x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng, 0.5, 1.5), b = random_tensor({6}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(layernorm(x, g, b), s); }, {x, g, b});
    });
    f.emplace_back("reduce", [](Rng& rng) {
        Tensor x = random_tensor({4, 5}, rng);
        const auto s = rng.next_u64();
        return gradcheck(
            [&] {
                return add(add(readout(reduce(x, ReduceKind::max, 1), s), readout(reduce(x, ReduceKind::mean, 0), s)),
                           add(readout(reduce(x, ReduceKind::sum, 1), s), add(sum_all(x), mean_all(mul(x, x)))));
            },
            {x});
    });
    f.emplace_back("cross_entropy", [](Rng& rng) {
        Tensor x = random_tensor({4, 6}, rng, -2.0, 2.0);
        std::vector<std::size_t> t(4);
        std::vector<double> w(4);
        for (std::size_t i = 0; i < 4; ++i) {
            t[i] = rng.randint(6);
            w[i] = rng.uniform(0.1, 1.0);
        }
        return gradcheck([&] { return add(cross_entropy_logits(x, t, w), cross_entropy_logits(x, t)); }, {x});
    });
    f.emplace_back("concat_slice_gather", [](Rng& rng) {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 2}, rng), c = random_tensor({2, 6}, rng);
        const std::vector<std::size_t> idx{4, 0, 0, 2, 3};
        const auto s = rng.next_u64();
        return gradcheck(
            [&] {
                const Tensor ab = concat({a, b}, 1);
                const Tensor all = concat({ab, c}, 0);
                return add(readout(gather_rows(all, idx), s), readout(slice(all, 1, 1, 3), s));
            },
            {a, b, c});
    });
    f.emplace_back("dropout", [](Rng& rng) {
        Tensor x = random_tensor({5, 6}, rng);
        const auto s = rng.next_u64();
        return gradcheck(
            [&] {
                Rng mask(s);
                return readout(dropout(x, 0.3, mask, true), s);
            },
            {x});
    });
    f.emplace_back("l2_normalize", [](Rng& rng) {
        Tensor x = random_tensor({3, 5}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(l2_normalize(x), s); }, {x});
    });
    f.emplace_back("chamfer_l1", [](Rng& rng) {
        Tensor p = random_tensor({7, 3}, rng), q = random_tensor({5, 3}, rng);
        Tensor bp = random_tensor({2, 6, 3}, rng), bq = random_tensor({2, 4, 3}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return add(geometry::chamfer_l1(p, q), readout(geometry::chamfer_l1(bp, bq), s)); },
                         {p, q, bp, bq});
    });
    f.emplace_back("gumbel_softmax", [](Rng& rng) {
        Tensor x = random_tensor({3, 6}, rng, -2.0, 2.0);
        const Tensor noise = nn::sample_gumbel({3, 6}, rng);
        const double tau = rng.uniform(0.5, 1.5);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(nn::gumbel_softmax(x, tau, noise), s); }, {x});
    });
    f.emplace_back("stochastic_depth", [](Rng& rng) {
        Tensor x = random_tensor({4, 3}, rng);
        const auto s = rng.next_u64();
        return gradcheck(
            [&] {
                Rng r(s);
                return readout(nn::stochastic_depth(x, 0.3, true, &r), s);
            },
            {x});
    });
    f.emplace_back("channel_norm", [](Rng& rng) {
        Tensor x = random_tensor({6, 4}, rng), g = random_tensor({4}, rng, 0.5, 1.5), b = random_tensor({4}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(nn::channel_norm(x, g, b), s); }, {x, g, b});
    });
    f.emplace_back("kl_to_uniform", [](Rng& rng) {
        Tensor x = random_tensor({4, 8}, rng, -2.0, 2.0);
        return gradcheck([&] { return dvae::kl_to_uniform(softmax(x, 1)); }, {x});
    });

    // Composites.
    f.emplace_back("linear_mlp", [](Rng& rng) {
        nn::Mlp mlp({4, 6, 3}, nn::Activation::gelu, rng);
        Tensor x = random_tensor({5, 4}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(mlp.forward(x), s); }, with_params({x}, mlp, rng), capped(30));
    });
    f.emplace_back("mini_pointnet", [](Rng& rng) {
        nn::MiniPointNet net(6, 8, 5, rng);
        Tensor x = random_tensor({3, 6, 3}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(net.forward(x), s); }, with_params({x}, net, rng), capped(30));
    });
    f.emplace_back("positional_embed", [](Rng& rng) {
        nn::PositionalEmbed pe(6, 4, rng);
        Tensor c = random_tensor({5, 3}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(pe.forward(c), s); }, with_params({c}, pe, rng), capped(30));
    });
    f.emplace_back("edgeconv", [](Rng& rng) {
        nn::EdgeConv conv(4, 5, 3, rng);
        Tensor x = random_tensor({7, 4}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(conv.forward(x), s); }, with_params({x}, conv, rng), capped(30));
    });
    f.emplace_back("edgeconv_bipartite", [](Rng& rng) {
        nn::EdgeConv conv(3, 4, 2, rng);
        Tensor q = random_tensor({5, 3}, rng), r = random_tensor({4, 3}, rng);
        // Distinct neighbours per node: repeated rows would tie in the max.
        std::vector<std::size_t> nb;
        for (int i = 0; i < 5; ++i) {
            for (auto j : rng.sample_without_replacement(4, 2)) nb.push_back(j);
        }
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(conv.forward_bipartite(q, r, nb), s); }, with_params({q, r}, conv, rng),
                         capped(30));
    });
    f.emplace_back("attention", [](Rng& rng) {
        nn::MultiHeadAttention mha(8, 2, rng);
        Tensor h = random_tensor({5, 8}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(mha.forward(h), s); }, with_params({h}, mha, rng), capped(24));
    });
    f.emplace_back("transformer_block", [](Rng& rng) {
        nn::TransformerConfig cfg;
        cfg.depth = 1;
        cfg.model_dim = 8;
        cfg.heads = 2;
        cfg.ffn_dim = 12;
        nn::TransformerBlock block(cfg, 0.0, rng);
        Tensor h = random_tensor({4, 8}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(block.forward(h, nn::ForwardContext{}), s); }, with_params({h}, block, rng),
                         capped(16));
    });
    f.emplace_back("folding_layer", [](Rng& rng) {
        nn::FoldingLayer fold(5, 8, 6, rng);
        Tensor x = random_tensor({2, 5}, rng);
        const auto s = rng.next_u64();
        return gradcheck([&] { return readout(fold.forward(x), s); }, with_params({x}, fold, rng), capped(24));
    });
    f.emplace_back("dvae_loss", [](Rng& rng) {
        Tensor coarse = random_tensor({2, 3, 3}, rng), fine = random_tensor({2, 5, 3}, rng);
        const Tensor truth = random_tensor({2, 6, 3}, rng);
        Tensor logits = random_tensor({2, 8}, rng, -2.0, 2.0);
        const double alpha = rng.uniform(0.01, 0.1);
        return gradcheck([&] { return dvae::dvae_loss(coarse, fine, truth, softmax(logits, 1), alpha).total; },
                         {coarse, fine, logits});
    });
    f.emplace_back("mpm_loss", [](Rng& rng) {
        Tensor logits = random_tensor({5, 9}, rng, -2.0, 2.0);
        std::vector<std::size_t> t(5);
        for (auto& x : t) x = rng.randint(9);
        return gradcheck([&] { return pretrain::mpm_loss(logits, t); }, {logits});
    });
    f.emplace_back("moco_loss", [](Rng& rng) {
        Tensor q = random_tensor({3, 4}, rng), k1 = random_tensor({3, 4}, rng), k2 = random_tensor({3, 4}, rng);
        const Tensor bank = l2_normalize(random_tensor({6, 4}, rng));
        std::vector<double> r(3);
        for (auto& x : r) x = rng.uniform(0.0, 1.0);
        return gradcheck(
            [&] { return pretrain::moco_loss(l2_normalize(q), l2_normalize(k1), l2_normalize(k2), bank, r, 0.5); },
            {q, k1, k2});
    });
    return f;
}

}  // namespace

std::vector<std::string> gradient_suite_families() {
    std::vector<std::string> names;
    for (const auto& [name, _] : build_families()) names.push_back(name);
    return names;
}

std::vector<GradSuiteEntry> run_gradient_suite(std::size_t seeds, std::uint64_t root_seed,
                                               const std::function<void(const GradSuiteEntry&)>& on_entry) {
    std::vector<GradSuiteEntry> out;
    for (const auto& [name, check] : build_families()) {
        GradSuiteEntry e;
        e.family = name;
        for (std::size_t s = 0; s < seeds; ++s) {
            Rng rng = Rng::substream(root_seed, "gradcheck/" + name + "/" + std::to_string(s));
            const GradCheckResult r = check(rng);
            e.max_relative_error = std::max(e.max_relative_error, r.max_relative_error);
            e.elements_checked += r.elements_checked;
            ++e.seeds;
        }
        if (on_entry) on_entry(e);
        out.push_back(e);
    }
    return out;
}

}  // namespace pointbert
