#include "pointbert/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pointbert/error.hpp"

namespace pointbert {

GradCheckResult gradcheck(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                          GradCheckOptions options) {
    for (auto t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    loss().backward();
    std::vector<std::vector<double>> analytic;
    for (const auto& t : inputs) analytic.push_back(t.grad());

    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor t = inputs[k];
        auto values = t.mutable_data();
        const std::size_t n = values.size();
        const std::size_t stride = options.max_elements == 0 || n <= options.max_elements
                                       ? 1
                                       : (n + options.max_elements - 1) / options.max_elements;
        double diff_max = 0.0, a_max = 0.0, n_max = 0.0;
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double up = loss().item();
            values[i] = saved - options.step;
            const double down = loss().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            if (!std::isfinite(numeric)) throw NumericsError("gradcheck: non-finite finite difference");
            diff_max = std::max(diff_max, std::abs(numeric - analytic[k][i]));
            a_max = std::max(a_max, std::abs(analytic[k][i]));
            n_max = std::max(n_max, std::abs(numeric));
            ++result.elements_checked;
        }
        const double rel = diff_max / std::max({a_max, n_max, options.floor});
        if (rel > result.max_relative_error) {
            result.max_relative_error = rel;
            result.worst_input = k;
        }
    }
    return result;
}

}  // namespace pointbert
