#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pointbert/geometry.hpp"
#include "pointbert/rng.hpp"
#include "pointbert/tensor.hpp"

namespace testing {

using pointbert::Rng;
using pointbert::Shape;
using pointbert::Tensor;
using pointbert::geometry::Vec3;

inline Tensor randn(const Shape& shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> v(pointbert::shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(shape, std::move(v), requires_grad);
}

inline std::vector<Vec3> random_points(std::size_t n, Rng& rng) {
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    return pts;
}

/// Central-difference gradient of `f` w.r.t. every element of `x`.
inline std::vector<double> numeric_grad(const std::function<double()>& f, Tensor& x, double h = 1e-5) {
    auto data = x.mutable_data();
    std::vector<double> g(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + h;
        const double up = f();
        data[i] = saved - h;
        const double down = f();
        data[i] = saved;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0, scale = 1e-8;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return diff / scale;
}

/// Worst relative error between autograd and central differences over `inputs`.
inline double grad_error(const std::function<Tensor()>& loss, std::vector<Tensor> inputs) {
    for (auto& t : inputs) t.zero_grad();
    loss().backward();
    double worst = 0;
    for (auto& t : inputs) {
        const auto analytic = t.grad();
        const auto numeric = numeric_grad([&] { return loss().item(); }, t);
        worst = std::max(worst, max_rel_err(analytic, numeric));
    }
    return worst;
}

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Fresh empty directory under the system temp root.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("pointbert_unit_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
