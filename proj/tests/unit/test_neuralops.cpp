#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pointbert/error.hpp"
#include "pointbert/nn.hpp"
#include "support.hpp"

using namespace pointbert;
using namespace pointbert::nn;
using testing::grad_error;
using testing::randn;
using testing::values;

namespace {

// Biases start at zero; shifting them keeps rectifiers off their kinks during finite differencing.
void jitter_rank1(const Module& m, Rng& rng) {
    for (auto& p : m.parameters()) {
        if (p.rank() != 1) continue;
        for (auto& v : p.mutable_data()) v += rng.uniform(-0.5, 0.5);
    }
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const Module& m) {
    for (auto& p : m.parameters()) inputs.push_back(p);
    return inputs;
}

void zero_all(const Module& m) { zero_parameters(m.named_parameters()); }

bool all_zero(const Tensor& t) {
    for (double v : t.data()) {
        if (v != 0.0) return false;
    }
    return true;
}

}  // namespace

TEST_SUITE("neuralops") {

TEST_CASE("activations") {
    const Tensor x = Tensor::from({3}, {-2.0, 0.0, 1.5});
    CHECK(values(leaky_relu(x, 0.2)) == std::vector<double>{-0.4, 0.0, 1.5});
    const auto g = values(gelu(x));
    const double c = std::sqrt(2.0 / std::numbers::pi);
    for (int i = 0; i < 3; ++i) {
        const double v = x[i];
        CHECK(g[i] == doctest::Approx(0.5 * v * (1 + std::tanh(c * (v + 0.044715 * v * v * v)))).epsilon(1e-15));
    }
    CHECK(parse_activation(activation_name(Activation::gelu)) == Activation::gelu);
    CHECK_THROWS_AS(parse_activation("swish"), DomainError);
}

TEST_CASE("linear layer computes xW + b") {
    Rng rng(1);
    Linear l(2, 3, rng);
    CHECK(l.weight.shape() == Shape{2, 3});
    const Tensor x = Tensor::from({1, 2}, {1.0, -2.0});
    const auto y = values(l.forward(x));
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(y[j] == doctest::Approx(l.weight[j] - 2.0 * l.weight[3 + j] + l.bias[j]).epsilon(1e-15));
    }
}

TEST_CASE("mini pointnet") {
    Rng rng(2);
    MiniPointNet net(8, 16, 12, rng);
    jitter_rank1(net, rng);
    const Tensor patch = randn({2, 6, 3}, rng, false);

    SUBCASE("point order does not matter") {
        std::vector<double> permuted(36);
        const std::size_t order[6] = {4, 1, 5, 0, 3, 2};
        for (std::size_t g = 0; g < 2; ++g) {
            for (std::size_t j = 0; j < 6; ++j) {
                for (std::size_t c = 0; c < 3; ++c) permuted[(g * 6 + j) * 3 + c] = patch[(g * 6 + order[j]) * 3 + c];
            }
        }
        CHECK(values(net.forward(patch)) == values(net.forward(Tensor::from({2, 6, 3}, permuted))));
        CHECK(net.forward(patch).shape() == Shape{2, 12});
    }
    SUBCASE("zero output layer gives zero features") {
        zero_parameters({{"w", net.global_mlp.layers.back().weight}, {"b", net.global_mlp.layers.back().bias}});
        CHECK(all_zero(net.forward(patch)));
    }
    SUBCASE("gradient check") {
        Tensor x = randn({2, 5, 3}, rng);
        const Tensor w = randn({2, 12}, rng, false);
        CHECK(grad_error([&] { return sum_all(mul(net.forward(x), w)); }, with_params({x}, net)) < 1e-4);
    }
}

TEST_CASE("positional embedding") {
    Rng rng(3);
    PositionalEmbed pos(16, 8, rng);
    jitter_rank1(pos, rng);
    const Tensor centers = Tensor::from({2, 3}, {0.1, 0.2, 0.3, 0.1, 0.2, 0.3});
    const auto out = values(pos.forward(centers));
    CHECK(std::vector<double>(out.begin(), out.begin() + 8) == std::vector<double>(out.begin() + 8, out.end()));

    Tensor c = randn({3, 3}, rng);
    const Tensor w = randn({3, 8}, rng, false);
    CHECK(grad_error([&] { return sum_all(mul(pos.forward(c), w)); }, with_params({c}, pos)) < 1e-4);

    zero_all(pos);
    CHECK(all_zero(pos.forward(c)));
}

TEST_CASE("channel norm standardizes columns") {
    Rng rng(4);
    const Tensor x = randn({10, 3}, rng, false, 5.0);
    const auto y = values(channel_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3}), 0.0));
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (std::size_t r = 0; r < 10; ++r) mean += y[r * 3 + c] / 10;
        for (std::size_t r = 0; r < 10; ++r) var += (y[r * 3 + c] - mean) * (y[r * 3 + c] - mean) / 10;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("edge convolution") {
    Rng rng(5);
    EdgeConv conv(4, 6, 3, rng);
    jitter_rank1(conv, rng);

    SUBCASE("k=1 reduces to a per-node map of [x, 0]") {
        EdgeConv self(4, 6, 1, rng);
        jitter_rank1(self, rng);
        const Tensor x = randn({5, 4}, rng, false);
        const Tensor edge = concat({x, Tensor::zeros({5, 4})}, 1);
        const Tensor expected =
            leaky_relu(channel_norm(self.edge_mlp.forward(edge), self.norm_gain, self.norm_bias), 0.2);
        CHECK(values(self.forward(x)) == values(expected));
    }
    SUBCASE("neighbour order does not matter") {
        const Tensor q = randn({3, 4}, rng, false), r = randn({5, 4}, rng, false);
        const std::vector<std::size_t> a{0, 1, 2, 4, 3, 1, 2, 2, 0};
        const std::vector<std::size_t> b{2, 0, 1, 1, 4, 3, 0, 2, 2};
        // The edge norm sums in edge order, so equality holds up to rounding.
        const auto ya = values(conv.forward_bipartite(q, r, a)), yb = values(conv.forward_bipartite(q, r, b));
        CHECK(testing::max_rel_err(ya, yb) < 1e-12);
    }
    SUBCASE("gradient check on a 6-node graph with k=3") {
        Tensor x = randn({6, 4}, rng);
        const Tensor graph = randn({6, 4}, rng, false);
        const Tensor w = randn({6, 6}, rng, false);
        CHECK(grad_error([&] { return sum_all(mul(conv.forward(x, graph), w)); }, with_params({x}, conv)) < 1e-4);
    }
    SUBCASE("too few nodes") {
        CHECK_THROWS_AS(conv.forward(randn({2, 4}, rng, false)), SizeError);
        conv.clamp_k = true;
        CHECK(conv.forward(randn({2, 4}, rng, false)).shape() == Shape{2, 6});
    }
}

TEST_CASE("multi-head attention") {
    Rng rng(6);
    MultiHeadAttention mha(8, 2, rng);
    jitter_rank1(mha, rng);

    SUBCASE("single token attends to itself") {
        const Tensor h = randn({1, 8}, rng, false);
        const auto expected = values(mha.output.forward(mha.value.forward(h)));
        const auto got = values(mha.forward(h));
        for (std::size_t i = 0; i < 8; ++i) CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-14));
    }
    SUBCASE("zero value projection leaves only the output bias") {
        zero_parameters({{"v", mha.value.weight}});
        const auto out = values(mha.forward(randn({4, 8}, rng, false)));
        for (std::size_t t = 0; t < 4; ++t) {
            for (std::size_t j = 0; j < 8; ++j) CHECK(out[t * 8 + j] == mha.output.bias[j]);
        }
    }
    SUBCASE("gradient check with 3 tokens") {
        MultiHeadAttention wide(8, 2, rng);
        for (auto& p : wide.parameters()) {
            for (auto& v : p.mutable_data()) v *= 20;  // away from the near-uniform attention regime
        }
        Tensor h = randn({3, 8}, rng);
        const Tensor w = randn({3, 8}, rng, false);
        CHECK(grad_error([&] { return sum_all(mul(wide.forward(h), w)); }, with_params({h}, wide)) < 1e-4);
    }
    CHECK_THROWS_AS(MultiHeadAttention(9, 2, rng), ShapeError);
}

TEST_CASE("transformer block") {
    Rng rng(7);
    TransformerConfig cfg{1, 8, 2, 16, 0.0, 0.0, Activation::relu};
    TransformerBlock block(cfg, 0.0, rng);
    jitter_rank1(block, rng);
    const Tensor h = randn({4, 8}, rng, false);

    SUBCASE("eval mode is deterministic") {
        CHECK(values(block.forward(h, {})) == values(block.forward(h, {})));
    }
    SUBCASE("zero sublayers give the identity") {
        zero_parameters({{"a", block.attention.output.weight},
                         {"b", block.attention.output.bias},
                         {"c", block.ffn_out.weight},
                         {"d", block.ffn_out.bias}});
        CHECK(values(block.forward(h, {})) == values(h));
    }
    SUBCASE("gradient check") {
        Tensor x = randn({3, 8}, rng);
        const Tensor w = randn({3, 8}, rng, false);
        CHECK(grad_error([&] { return sum_all(mul(block.forward(x, {}), w)); }, with_params({x}, block)) < 1e-4);
    }
    SUBCASE("encoder reports every layer") {
        TransformerEncoder enc({3, 8, 2, 16, 0.1, 0.0, Activation::relu}, rng);
        std::vector<Tensor> layers;
        const Tensor out = enc.forward(h, {}, &layers);
        CHECK(layers.size() == 3);
        CHECK(values(layers.back()) == values(out));
    }
}

TEST_CASE("stochastic depth") {
    Rng rng(8);
    const Tensor branch = Tensor::full({2, 2}, 3.0);
    CHECK(values(stochastic_depth(branch, 0.0, true, &rng)) == values(branch));
    CHECK(values(stochastic_depth(branch, 0.0, false, nullptr)) == values(branch));
    CHECK(values(stochastic_depth(branch, 0.5, false, nullptr)) == values(branch));

    int dropped = 0;
    for (int i = 0; i < 10000; ++i) {
        const Tensor out = stochastic_depth(branch, 0.1, true, &rng);
        if (out[0] == 0.0) {
            ++dropped;
        } else {
            CHECK(out[0] == doctest::Approx(3.0 / 0.9).epsilon(1e-15));
        }
    }
    CHECK(std::abs(dropped / 10000.0 - 0.1) <= 0.02);
}

TEST_CASE("gumbel softmax") {
    const Tensor logits = Tensor::from({1, 3}, {2.0, 0.0, 0.0});
    CHECK(values(gumbel_softmax(logits, 1.0)) == values(softmax(logits, -1)));
    const auto hard = values(gumbel_softmax(logits, 0.01));
    CHECK(std::abs(hard[0] - 1.0) < 1e-3);
    CHECK(hard[1] < 1e-3);
    CHECK_THROWS_AS(gumbel_softmax(logits, 0.0), DomainError);

    Rng rng(9);
    Tensor x = randn({3, 5}, rng);
    const Tensor noise = sample_gumbel({3, 5}, rng);
    const Tensor w = randn({3, 5}, rng, false);
    CHECK(grad_error([&] { return sum_all(mul(gumbel_softmax(x, 0.5, noise), w)); }, {x}) < 1e-4);
}

TEST_CASE("folding layer") {
    Rng rng(10);
    const auto grid = FoldingLayer::grid(3);
    CHECK(grid.size() == 9);
    CHECK(grid.front() == std::array<double, 2>{-1.0, -1.0});
    CHECK(grid[2] == std::array<double, 2>{1.0, -1.0});
    CHECK(grid[6] == std::array<double, 2>{-1.0, 1.0});
    CHECK(grid.back() == std::array<double, 2>{1.0, 1.0});
    CHECK(FoldingLayer::grid_side(16) == 4);
    CHECK(FoldingLayer::grid_side(17) == 5);

    FoldingLayer fold(6, 12, 7, rng);
    jitter_rank1(fold, rng);
    Tensor f = randn({2, 6}, rng);
    CHECK(fold.forward(f).shape() == Shape{2, 7, 3});
    const Tensor w = randn({2, 7, 3}, rng, false);
    CHECK(grad_error([&] { return sum_all(mul(fold.forward(f), w)); }, {f}) < 1e-4);

    const Linear& last = fold.mlp.layers.back();
    for (const auto& layer : fold.mlp.layers) zero_parameters({{"w", layer.weight}});
    const auto pts = values(fold.forward(f));
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK(pts[i] == last.bias[i % 3]);
}

TEST_CASE("parameter copy checks names and shapes") {
    Rng rng(11);
    Mlp a({3, 4, 2}, Activation::relu, rng), b({3, 4, 2}, Activation::relu, rng), c({3, 5, 2}, Activation::relu, rng);
    copy_parameters(b.named_parameters(), a.named_parameters());
    CHECK(squared_norm(b.parameters()) == squared_norm(a.parameters()));
    CHECK_THROWS(copy_parameters(c.named_parameters(), a.named_parameters()));
}

}
