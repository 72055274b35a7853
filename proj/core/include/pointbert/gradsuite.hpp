#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pointbert/gradcheck.hpp"

namespace pointbert {

struct GradSuiteEntry {
    std::string family;
    std::size_t seeds = 0;
    double max_relative_error = 0.0;
    std::size_t elements_checked = 0;
};

/// Names of every op and composite covered by the finite-difference suite.
std::vector<std::string> gradient_suite_families();

/// Checks each family under `seeds` seeds derived from `root_seed`.
std::vector<GradSuiteEntry> run_gradient_suite(std::size_t seeds, std::uint64_t root_seed,
                                               const std::function<void(const GradSuiteEntry&)>& on_entry = {});

}  // namespace pointbert
