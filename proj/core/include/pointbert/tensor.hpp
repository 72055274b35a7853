#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pointbert {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;
using BackwardFn = std::function<void(TensorImpl& out)>;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    BackwardFn backward_fn;
    const char* op = "leaf";
};

}  // namespace detail

/// N-dimensional row-major array of doubles and a node in the reverse-mode
/// differentiation graph.
///
/// Tensor is a shared handle: copies alias the same storage. Parameters are
/// leaf tensors with requires_grad set; every op on them records a backward
/// closure while grad mode is enabled.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    /// Size of `axis`; negative values count from the back.
    std::size_t dim(int axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Writable view. Mutating a tensor that already feeds a graph invalidates
    /// that graph's gradients; intended for parameters and constants.
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool is_leaf() const;
    const char* op_name() const;

    bool has_grad() const;
    /// Gradient view; all zeros if none has been accumulated yet.
    std::vector<double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Same values, no graph history.
    Tensor detach() const;
    /// Deep copy of values into a fresh leaf.
    Tensor clone(bool requires_grad = false) const;

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are recomputed each call.
    void backward() const;

    detail::TensorImpl* impl() const noexcept { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const noexcept { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime (thread-local).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

/// Builds an op result. Records `backward` only when grad mode is on and some
/// input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* op, BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   const char* op, BackwardFn backward);

/// Gradient buffer of `t` if it participates in differentiation, else null.
std::vector<double>* grad_sink(const std::shared_ptr<TensorImpl>& t);

}  // namespace detail

}  // namespace pointbert
