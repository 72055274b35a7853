#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pointbert/tensor.hpp"

namespace pointbert {

class Rng;

// Elementwise. Binary ops accept `b` with the same shape as `a`, a single
// element, or a vector matching a's last axis (broadcast over rows).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

enum class ElementwiseKind { add, sub, mul, div, neg, exp, log, relu, gelu, scale };

/// Dispatcher over the elementwise family; `factor` is used by `scale`.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b = {}, double factor = 1.0);

/// [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax(const Tensor& x, int axis);
/// Normalizes over the last axis.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

enum class ReduceKind { max, mean, sum };
/// Removes `axis` (a rank-1 input reduces to shape [1]). Max routes gradient
/// to the first maximal element.
Tensor reduce(const Tensor& x, ReduceKind kind, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Weighted mean of -log softmax(logits)[target] over rows. Empty `weights`
/// means all ones.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const std::size_t> targets,
                            std::span<const double> weights = {});

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
/// Rows (first-axis slabs) of `x` selected by index; repeats allowed.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);
/// Row-wise x / sqrt(sum(x^2) + eps) over the last axis.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

/// Sum of squares of every element across `tensors` (for diagnostics).
double squared_norm(const std::vector<Tensor>& tensors);

}  // namespace pointbert
