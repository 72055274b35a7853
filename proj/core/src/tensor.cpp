#include "pointbert/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "pointbert/error.hpp"

namespace pointbert {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto s : shape) {
        if (s == 0) throw ShapeError("Tensor: zero-sized axis in " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ShapeError("Tensor: undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::dim(int axis) const {
    const auto& s = shape();
    const int r = static_cast<int>(s.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("Tensor::dim: axis out of range for " + shape_str(s));
    return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    if (!impl_) throw ShapeError("Tensor: undefined tensor");
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!impl_) throw ShapeError("Tensor: undefined tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("Tensor::item on non-scalar " + shape_str(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!impl_) throw ShapeError("Tensor: undefined tensor");
    impl_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return !impl_ || !impl_->backward_fn; }

const char* Tensor::op_name() const { return impl_ ? impl_->op : "undefined"; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::vector<double> Tensor::grad() const {
    if (!impl_) throw ShapeError("Tensor: undefined tensor");
    if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!impl_) throw ShapeError("Tensor: undefined tensor");
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), impl_->data, requires_grad); }

void Tensor::backward() const {
    if (!impl_) throw ShapeError("backward: undefined tensor");
    if (impl_->data.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(impl_->shape));
    }
    if (!impl_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (node->backward_fn) node->grad.assign(node->data.size(), 0.0);
    }
    if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
    impl_->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

namespace detail {

namespace {

template <typename Range>
Tensor make_result_impl(Shape shape, std::vector<double> data, const Range& inputs, const char* op,
                        BackwardFn backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->op = op;
    if (g_grad_enabled) {
        for (const auto& t : inputs) {
            if (t.requires_grad()) {
                impl->requires_grad = true;
                impl->parents.push_back(t.impl_ptr());
            }
        }
        if (impl->requires_grad) impl->backward_fn = std::move(backward);
    }
    return Tensor(std::move(impl));
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* op, BackwardFn backward) {
    return make_result_impl(std::move(shape), std::move(data), inputs, op, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   const char* op, BackwardFn backward) {
    return make_result_impl(std::move(shape), std::move(data), inputs, op, std::move(backward));
}

std::vector<double>* grad_sink(const std::shared_ptr<TensorImpl>& t) {
    if (!t || !t->requires_grad) return nullptr;
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    return &t->grad;
}

}  // namespace detail

}  // namespace pointbert
