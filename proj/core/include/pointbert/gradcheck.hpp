#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pointbert/tensor.hpp"

namespace pointbert {

struct GradCheckResult {
    /// max over inputs of ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, floor)
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t elements_checked = 0;
};

struct GradCheckOptions {
    double step = 1e-5;
    double floor = 1e-8;
    /// Per-input cap on perturbed elements (0 = all); picked with a fixed stride.
    std::size_t max_elements = 0;
};

/// Central finite-difference check of d loss / d inputs. `loss` must rebuild
/// the graph from the current input values on every call.
GradCheckResult gradcheck(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                          GradCheckOptions options = {});

}  // namespace pointbert
