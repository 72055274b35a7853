#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pointbert/checkpoint.hpp"
#include "pointbert/csv_log.hpp"
#include "pointbert/error.hpp"
#include "pointbert/gradcheck.hpp"
#include "pointbert/ops.hpp"
#include "pointbert/optim.hpp"
#include "support.hpp"

using namespace pointbert;
using testing::grad_error;
using testing::randn;
using testing::values;

TEST_SUITE("numcore") {

TEST_CASE("tensor construction enforces shape/data agreement") {
    const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.dim(-1) == 3);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("elementwise examples") {
    const Tensor a = Tensor::from({2}, {1, 2});
    const Tensor b = Tensor::from({2}, {3, 4});
    CHECK(values(add(a, b)) == std::vector<double>{4, 6});
    CHECK(values(relu(Tensor::from({2}, {-1, 2}))) == std::vector<double>{0, 2});
    CHECK(values(sub(a, b)) == std::vector<double>{-2, -2});
    CHECK(values(mul(a, b)) == std::vector<double>{3, 8});
    CHECK(values(elementwise(ElementwiseKind::scale, a, {}, 3.0)) == std::vector<double>{3, 6});
}

TEST_CASE("elementwise errors") {
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), ShapeError);
    CHECK_THROWS_AS(log(Tensor::from({2}, {1, 0})), DomainError);
    CHECK_THROWS_AS(div(Tensor::from({1}, {1}), Tensor::from({1}, {0})), DomainError);
}

TEST_CASE("exp derivative matches central differences") {
    Tensor x = Tensor::from({1}, {1.0}, true);
    exp(x).backward();
    const double h = 1e-5;
    const double numeric = (std::exp(1 + h) - std::exp(1 - h)) / (2 * h);
    CHECK(std::abs(x.grad()[0] - numeric) / numeric < 1e-6);
    CHECK(x.grad()[0] == doctest::Approx(std::numbers::e).epsilon(1e-14));
}

TEST_CASE("matmul examples") {
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(values(matmul(eye, m)) == values(m));
    CHECK(values(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}))) == std::vector<double>{11});
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(3);
    Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng);
    CHECK(grad_error([&] { return sum_all(matmul(a, b)); }, {a, b}) < 1e-6);
    Tensor ba = randn({2, 3, 4}, rng), bb = randn({2, 4, 5}, rng);
    const Tensor w = randn({2, 3, 5}, rng, false);
    CHECK(grad_error([&] { return sum_all(mul(matmul(ba, bb), w)); }, {ba, bb}) < 1e-6);
}

TEST_CASE("softmax examples and stability") {
    CHECK(values(softmax(Tensor::from({1, 2}, {0, 0}), -1)) == std::vector<double>{0.5, 0.5});
    const auto big = values(softmax(Tensor::from({1, 2}, {1000, 1000}), -1));
    CHECK(big[0] == 0.5);
    CHECK(big[1] == 0.5);
    Rng rng(5);
    Tensor x = randn({3, 4}, rng);
    const Tensor v = randn({3, 4}, rng, false);
    CHECK(grad_error([&] { return sum_all(mul(softmax(x, -1), v)); }, {x}) < 1e-5);
    Tensor y = randn({4, 3}, rng);
    const Tensor w = randn({4, 3}, rng, false);
    CHECK(grad_error([&] { return sum_all(mul(softmax(y, 0), w)); }, {y}) < 1e-5);
}

TEST_CASE("layernorm examples") {
    const Tensor gain = Tensor::full({2}, 1.0), bias = Tensor::zeros({2});
    const auto c = values(layernorm(Tensor::from({1, 2}, {4, 4}), gain, bias));
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.0);
    const auto r = values(layernorm(Tensor::from({1, 2}, {1, 3}), gain, bias, 1e-14));
    CHECK(r[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(7);
    Tensor x = randn({3, 5}, rng), g = randn({5}, rng), b = randn({5}, rng);
    const Tensor w = randn({3, 5}, rng, false);
    CHECK(grad_error([&] { return sum_all(mul(layernorm(x, g, b), w)); }, {x, g, b}) < 1e-5);
}

TEST_CASE("reductions") {
    const Tensor m = Tensor::from({2, 2}, {1, 5, 2, 2});
    CHECK(values(reduce(m, ReduceKind::max, 1)) == std::vector<double>{5, 2});
    CHECK(mean_all(Tensor::from({2}, {2, 4})).item() == 3.0);

    Tensor x = Tensor::from({1, 4}, {1, 7, 7, 3}, true);
    sum_all(reduce(x, ReduceKind::max, 1)).backward();
    CHECK(x.grad() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("cross entropy") {
    const std::vector<std::size_t> target{3};
    const Tensor uniform = Tensor::zeros({1, 8});
    CHECK(cross_entropy_logits(uniform, target).item() == doctest::Approx(std::log(8.0)).epsilon(1e-14));

    const Tensor confident = Tensor::from({1, 3}, {0, 0, 800});
    const std::vector<std::size_t> t2{2};
    CHECK(cross_entropy_logits(confident, t2).item() < 1e-300);

    const std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(cross_entropy_logits(Tensor::zeros({1, 3}), bad), LabelError);

    Rng rng(9);
    Tensor logits = randn({4, 5}, rng);
    const std::vector<std::size_t> targets{0, 4, 2, 2};
    const std::vector<double> weights{1.0, 0.5, 0.0, 2.0};
    CHECK(grad_error([&] { return cross_entropy_logits(logits, targets); }, {logits}) < 1e-5);
    CHECK(grad_error([&] { return cross_entropy_logits(logits, targets, weights); }, {logits}) < 1e-5);
}

TEST_CASE("backward on simple graphs") {
    Tensor x = Tensor::from({3}, {1, -2, 4}, true);
    sum_all(x).backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 1});

    Tensor s = Tensor::from({1}, {3.0}, true);
    mul(s, s).backward();
    CHECK(s.grad()[0] == 6.0);

    CHECK_THROWS_AS(mul(x, x).backward(), ShapeError);
}

TEST_CASE("shared subexpressions are visited once") {
    // f = (a + a) * a with a = 2x, so f = 8x^2 and df/dx = 16x.
    Tensor x = Tensor::from({1}, {1.5}, true);
    const Tensor a = scale(x, 2.0);
    mul(add(a, a), a).backward();
    CHECK(x.grad()[0] == doctest::Approx(24.0).epsilon(1e-14));
}

TEST_CASE("two-layer MLP gradients match finite differences") {
    Rng rng(11);
    Tensor x = randn({5, 3}, rng, false);
    Tensor w1 = randn({3, 6}, rng), b1 = randn({6}, rng), w2 = randn({6, 2}, rng), b2 = randn({2}, rng);
    const std::vector<std::size_t> targets{0, 1, 1, 0, 1};
    auto loss = [&] {
        const Tensor h = gelu(add(matmul(x, w1), b1));
        return cross_entropy_logits(add(matmul(h, w2), b2), targets);
    };
    CHECK(grad_error(loss, {w1, b1, w2, b2}) < 1e-4);
}

TEST_CASE("no-grad guard suppresses recording") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    {
        NoGradGuard guard;
        CHECK_FALSE(mul(x, x).requires_grad());
    }
    CHECK(mul(x, x).requires_grad());
}

TEST_CASE("concat, slice and gather") {
    const Tensor a = Tensor::from({1, 2}, {1, 2}), b = Tensor::from({1, 2}, {3, 4});
    CHECK(values(concat({a, b}, 0)) == std::vector<double>{1, 2, 3, 4});
    CHECK(values(concat({a, b}, 1)) == std::vector<double>{1, 2, 3, 4});
    CHECK(concat({a, b}, 1).shape() == Shape{1, 4});
    const Tensor m = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK(values(slice(m, 0, 1, 2)) == std::vector<double>{3, 4, 5, 6});
    const std::vector<std::size_t> idx{2, 0, 2};
    CHECK(values(gather_rows(m, idx)) == std::vector<double>{5, 6, 1, 2, 5, 6});
}

TEST_CASE("l2 normalize gives unit rows") {
    const auto v = values(l2_normalize(Tensor::from({2, 2}, {3, 4, 0, 2})));
    CHECK(v[0] == doctest::Approx(0.6));
    CHECK(v[1] == doctest::Approx(0.8));
    CHECK(v[3] == doctest::Approx(1.0));
}

TEST_CASE("dropout is identity outside training and unbiased inside") {
    Rng rng(1);
    const Tensor x = Tensor::full({10000}, 1.0);
    CHECK(values(dropout(x, 0.3, rng, false)) == values(x));
    const Tensor d = dropout(x, 0.3, rng, true);
    double kept = 0;
    for (double v : d.data()) {
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.7)));
        kept += v != 0.0;
    }
    CHECK(kept / 10000 == doctest::Approx(0.7).epsilon(0.03));
}

TEST_CASE("gradcheck helper flags a wrong gradient") {
    Tensor x = Tensor::from({3}, {0.3, -0.2, 0.9}, true);
    const auto good = gradcheck([&] { return sum_all(mul(x, x)); }, {x});
    CHECK(good.max_relative_error < 1e-8);

    // Forward value x^2 but gradient claims 3x.
    auto wrong = [&] {
        const Tensor y = Tensor::from(x.shape(), {x[0] * x[0], x[1] * x[1], x[2] * x[2]});
        return detail::make_result({1}, {y[0] + y[1] + y[2]}, {x}, "wrong", [x](detail::TensorImpl& out) {
            auto* g = detail::grad_sink(x.impl_ptr());
            for (std::size_t i = 0; i < 3; ++i) (*g)[i] += 3 * x[i] * out.grad[0];
        });
    };
    CHECK(gradcheck(wrong, {x}).max_relative_error > 0.1);
}

TEST_CASE("adamw fixed points and hand-evaluated step") {
    SUBCASE("zero gradient without decay leaves the parameter") {
        Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
        AdamW opt({p}, {1e-3, 0.9, 0.999, 1e-8, 0.0, false});
        p.mutable_grad();
        opt.step();
        CHECK(values(p) == std::vector<double>{1, 2, 3, 4});
    }
    SUBCASE("unit gradient moves by lr") {
        Tensor p = Tensor::from({1, 1}, {0.5}, true);
        AdamW opt({p}, {1e-3, 0.9, 0.999, 1e-8, 0.0, false});
        p.mutable_grad()[0] = 1.0;
        opt.step();
        CHECK(p[0] - 0.5 == doctest::Approx(-1e-3).epsilon(1e-6));
        CHECK(opt.state().step == 1);
        opt.step();
        CHECK(opt.state().step == 2);
        CHECK(opt.state().first_moment[0].size() == p.numel());
    }
    SUBCASE("decoupled decay scales the parameter") {
        Tensor p = Tensor::from({1, 2}, {2.0, -4.0}, true);
        AdamW opt({p}, {1e-2, 0.9, 0.999, 1e-8, 0.05, false});
        p.mutable_grad();
        opt.step();
        CHECK(p[0] == doctest::Approx(2.0 * (1 - 1e-2 * 0.05)).epsilon(1e-14));
        CHECK(p[1] == doctest::Approx(-4.0 * (1 - 1e-2 * 0.05)).epsilon(1e-14));
    }
    SUBCASE("non-finite gradient aborts before any update") {
        Tensor p = Tensor::from({1, 2}, {1.0, 1.0}, true);
        Tensor q = Tensor::from({1, 1}, {1.0}, true);
        AdamW opt({p, q}, {});
        p.mutable_grad()[0] = 1.0;
        q.mutable_grad()[0] = std::nan("");
        CHECK_THROWS_AS(opt.step(), NumericsError);
        CHECK(values(p) == std::vector<double>{1.0, 1.0});
    }
}

TEST_CASE("lr schedule endpoints") {
    const LrSchedule s{1e-3, 10, 110, 1e-5};
    CHECK(lr_at(s, 10) == doctest::Approx(1e-3).epsilon(1e-14));
    CHECK(lr_at(s, 110) == doctest::Approx(1e-5).epsilon(1e-14));
    CHECK(lr_at(s, 500) == doctest::Approx(1e-5).epsilon(1e-14));
    CHECK(lr_at(s, 5) < lr_at(s, 10));
    const LrSchedule z{1e-3, 10, 110, 0.0};
    CHECK(lr_at(z, 60) == doctest::Approx(5e-4).epsilon(1e-12));
}

TEST_CASE("rng substreams are deterministic and independent") {
    Rng a = Rng::substream(42, "mask"), b = Rng::substream(42, "mask"), c = Rng::substream(42, "gumbel");
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
    Rng r(3);
    r.normal();
    const auto saved = r.state();
    const double next = r.normal();
    Rng s(99);
    s.set_state(saved);
    CHECK(s.normal() == next);
    const auto picks = r.sample_without_replacement(10, 10);
    std::vector<std::size_t> sorted = picks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("checkpoint round trip and strict loading") {
    Checkpoint ck;
    ck.tensors = {{"w", Tensor::from({2, 2}, {1, 2, 3, 4})}, {"b", Tensor::from({2}, {-0.5, 1e-300})}};
    ck.metadata["note"] = "x";
    const std::string bytes = encode_checkpoint(ck);
    CHECK(bytes.substr(0, 8) == "PBCKPT01");
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK(values(*back.find("b")) == std::vector<double>{-0.5, 1e-300});

    const NamedTensors targets{{"w", Tensor::zeros({2, 2})}, {"b", Tensor::zeros({2})}};
    CHECK(load_into(targets, back, true) == 2);
    CHECK(values(targets[0].second) == std::vector<double>{1, 2, 3, 4});

    const NamedTensors missing{{"other", Tensor::zeros({1})}};
    CHECK_THROWS_AS(load_into(missing, back, true), FormatError);
    CHECK(load_into(missing, back, false) == 0);
    const NamedTensors wrong{{"w", Tensor::zeros({4})}};
    CHECK_THROWS_AS(load_into(wrong, back, true), ShapeError);
    CHECK_THROWS_AS(decode_checkpoint("garbage"), FormatError);
}

TEST_CASE("csv values format reproducibly") {
    CHECK(format_csv_value(0.1) == "0.1");
    CHECK(format_csv_value(-0.0) == "0");
    CHECK(format_csv_value(std::int64_t{-3}) == "-3");
    CHECK(format_csv_value(std::string("a,b")) == "\"a,b\"");
    const double third = 1.0 / 3.0;
    CHECK(std::stod(format_csv_value(third)) == third);
}

}
