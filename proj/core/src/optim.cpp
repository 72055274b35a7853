#include "pointbert/optim.hpp"

#include <cmath>
#include <numbers>

#include "pointbert/error.hpp"

namespace pointbert {

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
    if (options_.lr < 0.0) throw DomainError("AdamW: negative learning rate");
    if (options_.weight_decay < 0.0) throw DomainError("AdamW: negative weight decay");
    if (!(options_.beta1 > 0.0 && options_.beta1 < 1.0 && options_.beta2 > 0.0 && options_.beta2 < 1.0)) {
        throw DomainError("AdamW: betas must lie in (0,1)");
    }
    for (const auto& p : params_) {
        state_.first_moment.emplace_back(p.numel(), 0.0);
        state_.second_moment.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void AdamW::step(double lr) {
    for (const auto& p : params_) {
        if (!p.has_grad()) continue;
        for (double g : p.impl()->grad) {
            if (!std::isfinite(g)) throw NumericsError("AdamW: non-finite gradient");
        }
    }
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(options_.beta1, t);
    const double bc2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        auto values = p.mutable_data();
        const auto& grad = p.impl()->grad;
        auto& m = state_.first_moment[k];
        auto& v = state_.second_moment[k];
        const bool decay = options_.weight_decay > 0.0 && (options_.decay_rank1 || p.rank() > 1);
        const double shrink = 1.0 - lr * options_.weight_decay;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            if (decay) values[i] *= shrink;
            m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
            v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            values[i] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
        }
    }
}

NamedTensors AdamW::export_state(const std::vector<std::string>& names) const {
    if (names.size() != params_.size()) throw ShapeError("AdamW::export_state: name count mismatch");
    NamedTensors out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        out.emplace_back("adam.m." + names[k], Tensor::from(params_[k].shape(), state_.first_moment[k]));
        out.emplace_back("adam.v." + names[k], Tensor::from(params_[k].shape(), state_.second_moment[k]));
    }
    return out;
}

void AdamW::import_state(const NamedTensors& tensors, const std::vector<std::string>& names, std::uint64_t step) {
    if (names.size() != params_.size()) throw ShapeError("AdamW::import_state: name count mismatch");
    auto find = [&](const std::string& key) -> const Tensor& {
        for (const auto& [n, t] : tensors) {
            if (n == key) return t;
        }
        throw FormatError("AdamW::import_state: missing " + key);
    };
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& m = find("adam.m." + names[k]);
        const auto& v = find("adam.v." + names[k]);
        if (m.shape() != params_[k].shape() || v.shape() != params_[k].shape()) {
            throw ShapeError("AdamW::import_state: moment shape mismatch for " + names[k]);
        }
        state_.first_moment[k].assign(m.data().begin(), m.data().end());
        state_.second_moment[k].assign(v.data().begin(), v.data().end());
    }
    state_.step = step;
}

double lr_at(const LrSchedule& s, std::uint64_t step) {
    if (s.warmup_steps > 0 && step < s.warmup_steps) {
        return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    }
    if (step == s.warmup_steps) return s.base_lr;
    if (step >= s.total_steps) return s.floor_lr;
    const double span = static_cast<double>(s.total_steps - s.warmup_steps);
    const double progress = static_cast<double>(step - s.warmup_steps) / span;
    return s.floor_lr + (s.base_lr - s.floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace pointbert
