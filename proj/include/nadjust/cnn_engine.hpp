#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nadjust/dataset.hpp"
#include "nadjust/evaluator.hpp"
#include "nadjust/tensor.hpp"

namespace nadjust {

struct EngineOptions {
    bool use_batchnorm = true;
    double train_dropout_p = 0.05;  // SpatialDropout on every conv during training
    bool rescale = true;            // survivors scaled by 1/(1-p)
    bool gaussian_dropout = false;  // multiplicative N(1, p/(1-p)) instead of Bernoulli
    double lr_max = 0.15;
    double lr_min = 1e-3;
    double momentum = 0.9;
    int batch_size = 32;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    int probe_image_limit = 0;  // cap on validation images per probe pass; 0 = all
};

/// Trainable-model state: parameters, running statistics, momentum buffers.
struct CnnModel : ModelHandle {
    struct ConvBlock {
        Tensor4 weight;  // (c_out, c_in_eff, k, k)
        std::vector<double> bn_gamma, bn_beta, bn_rmean, bn_rvar;
        Tensor4 vel_weight;
        std::vector<double> vel_gamma, vel_beta;
    };
    struct FcBlock {
        std::vector<double> weight;  // (out, in) row-major
        std::vector<double> bias;
        std::vector<double> vel_weight, vel_bias;
        int in = 0, out = 0;
    };

    const NetworkTopology* topo = nullptr;
    ChannelConfig config;
    std::vector<int> eff;                 // effective channels per node
    std::vector<ConvBlock> conv_blocks;   // indexed by layer, empty elsewhere
    std::vector<FcBlock> fc_blocks;
    EngineOptions opts;
    RngStream train_rng{0};
};

/// Per-layer SpatialDropout request for one forward pass. Masks are drawn
/// per image from `rng` in a fixed order.
struct DropoutRequest {
    std::vector<double> p;  // per topology layer; 0 disables
    RngStream* rng = nullptr;
    bool rescale = true;
    bool gaussian = false;
};

struct Gradients {
    std::vector<Tensor4> conv_weight;                 // per layer
    std::vector<std::vector<double>> bn_gamma, bn_beta;
    std::vector<std::vector<double>> fc_weight, fc_bias;
};

std::unique_ptr<CnnModel> build_model(const NetworkTopology& topo, const ChannelConfig& config,
                                      const EngineOptions& opts, RngStream init_rng);

/// Inference pass in `training` or evaluation mode; returns class scores
/// (n, classes, 1, 1). BN uses batch statistics when training, running
/// statistics otherwise. Dropout only where `drop` asks for it.
Tensor4 forward(const CnnModel& model, const Tensor4& batch, const DropoutRequest* drop,
                bool training);

/// Training-mode forward + reverse pass; fills `grads` and returns the
/// softmax cross-entropy loss. Does not touch parameters or running stats
/// when `update_running_stats` is false.
double forward_backward(CnnModel& model, const Tensor4& batch, std::span<const int> labels,
                        Gradients& grads, const DropoutRequest* drop,
                        bool update_running_stats);

/// One SGD-with-momentum step; `lr` already scheduled by the caller.
void apply_gradients(CnnModel& model, const Gradients& grads, double lr);

/// forward_backward + apply_gradients with the model's training dropout.
double backward_and_step(CnnModel& model, const Tensor4& batch, std::span<const int> labels,
                         double lr);

/// Binary checkpoint with named parameter blocks keyed by layer id; format
/// in docs/formats.md.
void save_checkpoint(const std::string& path, const CnnModel& model);
std::unique_ptr<CnnModel> load_checkpoint(const std::string& path, const NetworkTopology& topo,
                                          const EngineOptions& opts);

/// EvaluatorContract implementation backed by the engine above and a
/// synthetic dataset held in memory.
class CnnEvaluator : public Evaluator {
public:
    CnnEvaluator(SyntheticDatasetSpec dataset_spec, int image_channels, EngineOptions opts);

    std::unique_ptr<ModelHandle> train(const NetworkTopology& topo, const ChannelConfig& config,
                                       const TrainBudget& budget, RngStream rng) override;
    double evaluate(const ModelHandle& handle, Split split) const override;
    double evaluate_with_drop(const ModelHandle& handle, int layer, double p, int mc_samples,
                              RngStream rng) const override;

    const Dataset& split_data(Split split) const;
    const EngineOptions& options() const { return opts_; }

private:
    double accuracy_on(const CnnModel& model, const Dataset& ds, const DropoutRequest* drop,
                       int image_limit) const;

    SyntheticDatasetSpec dataset_spec_;
    EngineOptions opts_;
    Dataset train_, val_, test_;
};

}  // namespace nadjust
