#pragma once

#include <memory>
#include <vector>

#include "nadjust/evaluator.hpp"

namespace nadjust {

/// Closed-form accuracy source for oracle testing:
///   Acc(c) = 1 - exp(-sum_l w_l * log(1 + eff_l(c)) / scale)
/// over the adjustable layers' effective widths. train() is a no-op;
/// evaluate_with_drop replaces c_l by c_l * (1 - p) and propagates junction
/// semantics over reals, so probe-vs-analytic comparisons carry no Monte
/// Carlo noise.
class SurrogateLogEvaluator : public Evaluator {
public:
    SurrogateLogEvaluator(std::vector<double> weights, double scale = 2.0);

    std::unique_ptr<ModelHandle> train(const NetworkTopology& topo, const ChannelConfig& config,
                                       const TrainBudget& budget, RngStream rng) override;
    double evaluate(const ModelHandle& handle, Split split) const override;
    double evaluate_with_drop(const ModelHandle& handle, int layer, double p, int mc_samples,
                              RngStream rng) const override;

    /// Accuracy for an arbitrary real-valued width vector (one entry per
    /// adjustable layer). Shared by the oracle enumerator.
    double accuracy_for(const NetworkTopology& topo, const std::vector<double>& widths) const;

    const std::vector<double>& weights() const { return weights_; }
    double scale() const { return scale_; }

private:
    std::vector<double> weights_;
    double scale_;
};

}  // namespace nadjust
