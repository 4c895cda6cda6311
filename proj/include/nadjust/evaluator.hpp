#pragma once

#include <memory>

#include "nadjust/rng.hpp"
#include "nadjust/topology.hpp"

namespace nadjust {

enum class Split { Train, Val, Test };

struct TrainBudget {
    double epochs = 0.0;  // fractional epochs allowed; 0 keeps init weights
};

/// Opaque trained-model handle. A handle is immutable once train() returns
/// and supports concurrent read-only evaluation unless the evaluator says
/// otherwise.
class ModelHandle {
public:
    virtual ~ModelHandle() = default;
};

/// The accuracy-source contract the adjuster and the FUR probe run against.
class Evaluator {
public:
    virtual ~Evaluator() = default;

    virtual std::unique_ptr<ModelHandle> train(const NetworkTopology& topo,
                                               const ChannelConfig& config,
                                               const TrainBudget& budget, RngStream rng) = 0;

    /// Top-1 accuracy in [0, 1]; deterministic per handle and split.
    virtual double evaluate(const ModelHandle& handle, Split split) const = 0;

    /// Mean accuracy over mc_samples evaluation passes with SpatialDropout
    /// of probability p applied to `layer` (a topology layer index).
    /// p == 0 must match evaluate() exactly.
    virtual double evaluate_with_drop(const ModelHandle& handle, int layer, double p,
                                      int mc_samples, RngStream rng) const = 0;

    /// Whether per-layer probes may call evaluate_with_drop concurrently.
    virtual bool concurrent_eval_safe() const { return true; }
};

}  // namespace nadjust
