#pragma once

#include <stdexcept>
#include <string>

namespace nadjust {

/// Structural problem in a topology description (bad DAG, unknown kind, ...).
struct TopologyError : std::runtime_error {
    explicit TopologyError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid run or channel configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// API misuse (wrong layer id, probability out of range, ...).
struct UsageError : std::invalid_argument {
    explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

/// scale_to_budget could not reach the requested FLOPs budget.
struct InfeasibleBudgetError : std::runtime_error {
    InfeasibleBudgetError(const std::string& what, double closest)
        : std::runtime_error(what), closest_flops(closest) {}
    double closest_flops;
};

/// Training diverged or an evaluator failed mid-run.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nadjust
