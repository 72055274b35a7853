#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pointbert/tensor.hpp"

namespace pointbert {

using NamedTensor = std::pair<std::string, Tensor>;
using NamedTensors = std::vector<NamedTensor>;

struct AdamWOptions {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    /// Rank-1 parameters (biases, norm gains, special tokens) skip decay.
    bool decay_rank1 = false;
};

/// First/second moment accumulators for every managed parameter.
struct OptimState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;
};

/// Decoupled-weight-decay Adam.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWOptions options);

    /// Applies one update with learning rate `lr` using each parameter's
    /// accumulated gradient. Throws NumericsError before touching any
    /// parameter if a gradient is non-finite.
    void step(double lr);
    void step() { step(options_.lr); }
    void zero_grad();

    const OptimState& state() const noexcept { return state_; }
    OptimState& mutable_state() noexcept { return state_; }
    const AdamWOptions& options() const noexcept { return options_; }
    const std::vector<Tensor>& params() const noexcept { return params_; }

    /// Moments as named tensors for checkpointing (prefix "adam.m." / "adam.v.").
    NamedTensors export_state(const std::vector<std::string>& names) const;
    void import_state(const NamedTensors& tensors, const std::vector<std::string>& names, std::uint64_t step);

private:
    std::vector<Tensor> params_;
    AdamWOptions options_;
    OptimState state_;
};

/// Linear warm-up then cosine decay.
struct LrSchedule {
    double base_lr = 5e-4;
    std::uint64_t warmup_steps = 0;
    std::uint64_t total_steps = 1;
    double floor_lr = 0.0;
};

double lr_at(const LrSchedule& schedule, std::uint64_t step);

}  // namespace pointbert
