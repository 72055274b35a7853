#include "pointbert/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pointbert/error.hpp"
#include "pointbert/rng.hpp"

namespace pointbert {

using detail::grad_sink;
using detail::make_result;
using detail::TensorImpl;

namespace {

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit out;
    for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
    out.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
    return out;
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.defined() || !b.defined()) throw ShapeError(std::string(op) + ": undefined operand");
    if (a.shape() == b.shape()) return;
    if (b.numel() == 1) return;
    if (b.rank() == 1 && b.dim(0) == a.dim(-1)) return;
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                     shape_str(a.shape()));
}

template <typename Fwd, typename Da, typename Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd f, Da dfa, Db dfb) {
    check_broadcast(a, b, op);
    const auto& x = a.data();
    const auto& y = b.data();
    const std::size_t n = x.size(), bn = y.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i % bn]);
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    return make_result(a.shape(), std::move(out), {a, b}, op, [ai, bi, dfa, dfb](TensorImpl& o) {
        const std::size_t n = ai->data.size(), bn = bi->data.size();
        if (auto* ga = grad_sink(ai)) {
            for (std::size_t i = 0; i < n; ++i) {
                (*ga)[i] += o.grad[i] * dfa(ai->data[i], bi->data[i % bn], o.data[i]);
            }
        }
        if (auto* gb = grad_sink(bi)) {
            for (std::size_t i = 0; i < n; ++i) {
                (*gb)[i % bn] += o.grad[i] * dfb(ai->data[i], bi->data[i % bn], o.data[i]);
            }
        }
    });
}

template <typename Fwd, typename Dx>
Tensor unary(const Tensor& a, const char* op, Fwd f, Dx df) {
    if (!a.defined()) throw ShapeError(std::string(op) + ": undefined operand");
    const auto& x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    auto ai = a.impl_ptr();
    return make_result(a.shape(), std::move(out), {a}, op, [ai, df](TensorImpl& o) {
        if (auto* ga = grad_sink(ai)) {
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                (*ga)[i] += o.grad[i] * df(ai->data[i], o.data[i]);
            }
        }
    });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_broadcast(a, b, "div");
    for (double v : b.data()) {
        if (v == 0.0) throw DomainError("div: division by zero");
    }
    return binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
    return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
    return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.data()) {
        if (!(v > 0.0)) throw DomainError("log: non-positive input");
    }
    return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    for (double v : a.data()) {
        if (v < 0.0) throw DomainError("sqrt: negative input");
    }
    return unary(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor relu(const Tensor& a) {
    return unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& a) {
    return unary(
        a, "gelu",
        [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
        [](double x, double) {
            const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(
        a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b, double factor) {
    switch (kind) {
        case ElementwiseKind::add: return add(a, b);
        case ElementwiseKind::sub: return sub(a, b);
        case ElementwiseKind::mul: return mul(a, b);
        case ElementwiseKind::div: return div(a, b);
        case ElementwiseKind::neg: return neg(a);
        case ElementwiseKind::exp: return exp(a);
        case ElementwiseKind::log: return log(a);
        case ElementwiseKind::relu: return relu(a);
        case ElementwiseKind::gelu: return gelu(a);
        case ElementwiseKind::scale: return scale(a, factor);
    }
    throw DomainError("elementwise: unknown kind");
}

namespace {

// Four partial sums let the compiler vectorize the reduction.
double dot(const double* x, const double* y, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += x[j] * y[j];
        s1 += x[j + 1] * y[j + 1];
        s2 += x[j + 2] * y[j + 2];
        s3 += x[j + 3] * y[j + 3];
    }
    for (; j < n; ++j) s0 += x[j] * y[j];
    return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const bool batched = a.rank() == 3;
    if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
        throw ShapeError("matmul: expected 2-D or batched 3-D operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const std::size_t batch = batched ? a.dim(0) : 1;
    if (batched && b.dim(0) != batch) throw ShapeError("matmul: batch mismatch");
    const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(batch * m * n, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t t = 0; t < batch; ++t) {
        const double* At = A + t * m * k;
        const double* Bt = B + t * k * n;
        double* Ct = out.data() + t * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = Ct + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = At[i * k + p];
                if (av == 0.0) continue;
                const double* brow = Bt + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    return make_result(std::move(shape), std::move(out), {a, b}, "matmul",
                       [ai, bi, batch, m, k, n](TensorImpl& o) {
                           auto* ga = grad_sink(ai);
                           auto* gb = grad_sink(bi);
                           for (std::size_t t = 0; t < batch; ++t) {
                               const double* At = ai->data.data() + t * m * k;
                               const double* Bt = bi->data.data() + t * k * n;
                               const double* Gt = o.grad.data() + t * m * n;
                               if (ga) {
                                   double* gat = ga->data() + t * m * k;
                                   for (std::size_t i = 0; i < m; ++i) {
                                       const double* grow = Gt + i * n;
                                       for (std::size_t p = 0; p < k; ++p) {
                                           const double* brow = Bt + p * n;
                                           gat[i * k + p] += dot(grow, brow, n);
                                       }
                                   }
                               }
                               if (gb) {
                                   double* gbt = gb->data() + t * k * n;
                                   for (std::size_t i = 0; i < m; ++i) {
                                       const double* grow = Gt + i * n;
                                       for (std::size_t p = 0; p < k; ++p) {
                                           const double av = At[i * k + p];
                                           if (av == 0.0) continue;
                                           double* gbrow = gbt + p * n;
                                           for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() < 2) throw ShapeError("transpose: rank < 2");
    const std::size_t m = a.dim(-2), n = a.dim(-1);
    const std::size_t batch = a.numel() / (m * n);
    std::vector<double> out(a.numel());
    const auto& x = a.data();
    for (std::size_t t = 0; t < batch; ++t) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) out[t * m * n + j * m + i] = x[t * m * n + i * n + j];
        }
    }
    Shape shape = a.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    auto ai = a.impl_ptr();
    return make_result(std::move(shape), std::move(out), {a}, "transpose", [ai, batch, m, n](TensorImpl& o) {
        if (auto* ga = grad_sink(ai)) {
            for (std::size_t t = 0; t < batch; ++t) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        (*ga)[t * m * n + i * n + j] += o.grad[t * m * n + j * m + i];
                    }
                }
            }
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    auto ai = a.impl_ptr();
    return make_result(std::move(shape), std::move(out), {a}, "reshape", [ai](TensorImpl& o) {
        if (auto* ga = grad_sink(ai)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i];
        }
    });
}

Tensor softmax(const Tensor& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
    const auto sp = split_axis(x.shape(), ax);
    const auto& in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.len * sp.inner + i;
            double mx = in[base];
            for (std::size_t j = 1; j < sp.len; ++j) mx = std::max(mx, in[base + j * sp.inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < sp.len; ++j) {
                const double e = std::exp(in[base + j * sp.inner] - mx);
                out[base + j * sp.inner] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < sp.len; ++j) out[base + j * sp.inner] /= sum;
        }
    }
    auto xi = x.impl_ptr();
    return make_result(x.shape(), std::move(out), {x}, "softmax", [xi, sp](TensorImpl& o) {
        auto* gx = grad_sink(xi);
        if (!gx) return;
        for (std::size_t a = 0; a < sp.outer; ++a) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = a * sp.len * sp.inner + i;
                double dot = 0.0;
                for (std::size_t j = 0; j < sp.len; ++j) {
                    dot += o.grad[base + j * sp.inner] * o.data[base + j * sp.inner];
                }
                for (std::size_t j = 0; j < sp.len; ++j) {
                    const std::size_t idx = base + j * sp.inner;
                    (*gx)[idx] += o.data[idx] * (o.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t c = x.dim(-1);
    if (gain.numel() != c || bias.numel() != c) {
        throw ShapeError("layernorm: gain/bias must match last axis " + std::to_string(c));
    }
    const std::size_t rows = x.numel() / c;
    const auto& in = x.data();
    const auto& gw = gain.data();
    const auto& bw = bias.data();
    std::vector<double> out(in.size());
    std::vector<double> xhat(in.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gw[j] + bw[j];
        }
    }
    auto xi = x.impl_ptr();
    auto gi = gain.impl_ptr();
    auto bi = bias.impl_ptr();
    return make_result(x.shape(), std::move(out), {x, gain, bias}, "layernorm",
                       [xi, gi, bi, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& o) {
                           auto* gx = grad_sink(xi);
                           auto* gg = grad_sink(gi);
                           auto* gb = grad_sink(bi);
                           std::vector<double> dh(c);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* go = o.grad.data() + r * c;
                               const double* h = xhat.data() + r * c;
                               double mean_dh = 0.0, mean_dh_h = 0.0;
                               for (std::size_t j = 0; j < c; ++j) {
                                   if (gg) (*gg)[j] += go[j] * h[j];
                                   if (gb) (*gb)[j] += go[j];
                                   dh[j] = go[j] * gi->data[j];
                                   mean_dh += dh[j];
                                   mean_dh_h += dh[j] * h[j];
                               }
                               if (!gx) continue;
                               mean_dh /= static_cast<double>(c);
                               mean_dh_h /= static_cast<double>(c);
                               for (std::size_t j = 0; j < c; ++j) {
                                   (*gx)[r * c + j] += inv_std[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                               }
                           }
                       });
}

Tensor reduce(const Tensor& x, ReduceKind kind, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "reduce");
    const auto sp = split_axis(x.shape(), ax);
    Shape shape;
    for (std::size_t i = 0; i < x.rank(); ++i) {
        if (i != ax) shape.push_back(x.shape()[i]);
    }
    if (shape.empty()) shape.push_back(1);
    const auto& in = x.data();
    std::vector<double> out(sp.outer * sp.inner);
    std::vector<std::size_t> argmax;
    if (kind == ReduceKind::max) argmax.resize(out.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.len * sp.inner + i;
            const std::size_t oi = o * sp.inner + i;
            if (kind == ReduceKind::max) {
                std::size_t best = 0;
                double bv = in[base];
                for (std::size_t j = 1; j < sp.len; ++j) {
                    const double v = in[base + j * sp.inner];
                    if (v > bv) {
                        bv = v;
                        best = j;
                    }
                }
                out[oi] = bv;
                argmax[oi] = base + best * sp.inner;
            } else {
                double s = 0.0;
                for (std::size_t j = 0; j < sp.len; ++j) s += in[base + j * sp.inner];
                out[oi] = kind == ReduceKind::mean ? s / static_cast<double>(sp.len) : s;
            }
        }
    }
    auto xi = x.impl_ptr();
    const char* name = kind == ReduceKind::max ? "reduce_max" : kind == ReduceKind::mean ? "reduce_mean" : "reduce_sum";
    return make_result(std::move(shape), std::move(out), {x}, name,
                       [xi, sp, kind, argmax = std::move(argmax)](TensorImpl& o) {
                           auto* gx = grad_sink(xi);
                           if (!gx) return;
                           if (kind == ReduceKind::max) {
                               for (std::size_t oi = 0; oi < argmax.size(); ++oi) (*gx)[argmax[oi]] += o.grad[oi];
                               return;
                           }
                           const double f = kind == ReduceKind::mean ? 1.0 / static_cast<double>(sp.len) : 1.0;
                           for (std::size_t a = 0; a < sp.outer; ++a) {
                               for (std::size_t i = 0; i < sp.inner; ++i) {
                                   const double g = o.grad[a * sp.inner + i] * f;
                                   const std::size_t base = a * sp.len * sp.inner + i;
                                   for (std::size_t j = 0; j < sp.len; ++j) (*gx)[base + j * sp.inner] += g;
                               }
                           }
                       });
}

Tensor sum_all(const Tensor& x) { return reduce(reshape(x, {x.numel()}), ReduceKind::sum, 0); }

Tensor mean_all(const Tensor& x) { return reduce(reshape(x, {x.numel()}), ReduceKind::mean, 0); }

Tensor cross_entropy_logits(const Tensor& logits, std::span<const std::size_t> targets,
                            std::span<const double> weights) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy_logits: logits must be [B,N]");
    const std::size_t rows = logits.dim(0), n = logits.dim(1);
    if (targets.size() != rows) throw ShapeError("cross_entropy_logits: target count mismatch");
    if (!weights.empty() && weights.size() != rows) throw ShapeError("cross_entropy_logits: weight count mismatch");
    std::vector<double> w(rows, 1.0);
    if (!weights.empty()) w.assign(weights.begin(), weights.end());
    double wsum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= n) {
            throw LabelError("cross_entropy_logits: target " + std::to_string(targets[r]) + " outside [0," +
                             std::to_string(n) + ")");
        }
        if (w[r] < 0.0) throw DomainError("cross_entropy_logits: negative weight");
        wsum += w[r];
    }
    if (!(wsum > 0.0)) throw DomainError("cross_entropy_logits: weights sum to zero");
    const auto& z = logits.data();
    std::vector<double> probs(z.size());
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = z.data() + r * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            probs[r * n + j] = std::exp(row[j] - mx);
            s += probs[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) probs[r * n + j] /= s;
        const double lse = mx + std::log(s);
        loss += w[r] * (lse - row[targets[r]]);
    }
    loss /= wsum;
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    auto li = logits.impl_ptr();
    return make_result({1}, {loss}, {logits}, "cross_entropy",
                       [li, rows, n, wsum, w = std::move(w), tgt = std::move(tgt), probs = std::move(probs)](TensorImpl& o) {
                           auto* gl = grad_sink(li);
                           if (!gl) return;
                           const double g = o.grad[0];
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double f = g * w[r] / wsum;
                               if (f == 0.0) continue;
                               for (std::size_t j = 0; j < n; ++j) {
                                   (*gl)[r * n + j] += f * (probs[r * n + j] - (j == tgt[r] ? 1.0 : 0.0));
                               }
                           }
                       });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t rank = parts[0].rank();
    const std::size_t ax = normalize_axis(axis, rank, "concat");
    Shape shape = parts[0].shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < rank; ++i) {
            if (i != ax && p.shape()[i] != shape[i]) {
                throw ShapeError("concat: incompatible shapes " + shape_str(p.shape()) + " vs " + shape_str(shape));
            }
        }
        total += p.shape()[ax];
    }
    shape[ax] = total;
    const auto sp = split_axis(shape, ax);
    std::vector<double> out(shape_numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t len = p.shape()[ax];
        const auto& d = p.data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(d.data() + o * len * sp.inner, len * sp.inner,
                        out.data() + (o * total + off) * sp.inner);
        }
        off += len;
    }
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    return make_result(std::move(shape), std::move(out), parts, "concat",
                       [impls, offsets, sp, total, ax](TensorImpl& o) {
                           for (std::size_t k = 0; k < impls.size(); ++k) {
                               auto* g = grad_sink(impls[k]);
                               if (!g) continue;
                               const std::size_t len = impls[k]->shape[ax];
                               for (std::size_t a = 0; a < sp.outer; ++a) {
                                   const double* src = o.grad.data() + (a * total + offsets[k]) * sp.inner;
                                   double* dst = g->data() + a * len * sp.inner;
                                   for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                               }
                           }
                       });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
    if (length == 0 || start + length > x.shape()[ax]) throw ShapeError("slice: range out of bounds");
    const auto sp = split_axis(x.shape(), ax);
    Shape shape = x.shape();
    shape[ax] = length;
    std::vector<double> out(shape_numel(shape));
    const auto& d = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(d.data() + (o * sp.len + start) * sp.inner, length * sp.inner,
                    out.data() + o * length * sp.inner);
    }
    auto xi = x.impl_ptr();
    return make_result(std::move(shape), std::move(out), {x}, "slice", [xi, sp, start, length](TensorImpl& o) {
        auto* g = grad_sink(xi);
        if (!g) return;
        for (std::size_t a = 0; a < sp.outer; ++a) {
            const double* src = o.grad.data() + a * length * sp.inner;
            double* dst = g->data() + (a * sp.len + start) * sp.inner;
            for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ShapeError("gather_rows: empty index list");
    const std::size_t rows = x.dim(0);
    const std::size_t width = x.numel() / rows;
    Shape shape = x.shape();
    shape[0] = indices.size();
    std::vector<double> out(indices.size() * width);
    const auto& d = x.data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= rows) throw ShapeError("gather_rows: index out of range");
        std::copy_n(d.data() + indices[r] * width, width, out.data() + r * width);
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    auto xi = x.impl_ptr();
    return make_result(std::move(shape), std::move(out), {x}, "gather_rows",
                       [xi, width, idx = std::move(idx)](TensorImpl& o) {
                           auto* g = grad_sink(xi);
                           if (!g) return;
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                               const double* src = o.grad.data() + r * width;
                               double* dst = g->data() + idx[r] * width;
                               for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                           }
                       });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return x;
    std::vector<double> mask(x.numel());
    const double keep = 1.0 / (1.0 - rate);
    for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep;
    return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

Tensor l2_normalize(const Tensor& x, double eps) {
    const Tensor sq = reduce(mul(x, x), ReduceKind::sum, -1);
    const Tensor norm = sqrt(add_scalar(sq, eps));
    if (x.rank() == 1) return div(x, norm);
    // Broadcast one norm per row by repeating each value across the row.
    const std::size_t c = x.dim(-1);
    const std::size_t rows = x.numel() / c;
    std::vector<std::size_t> idx(rows * c);
    for (std::size_t r = 0; r < rows; ++r) std::fill_n(idx.begin() + static_cast<std::ptrdiff_t>(r * c), c, r);
    const Tensor flat_norm = reshape(gather_rows(reshape(norm, {rows, 1}), idx), x.shape());
    return div(x, flat_norm);
}

double squared_norm(const std::vector<Tensor>& tensors) {
    double s = 0.0;
    for (const auto& t : tensors) {
        for (double v : t.data()) s += v * v;
    }
    return s;
}

}  // namespace pointbert
