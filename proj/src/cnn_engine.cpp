#include "nadjust/cnn_engine.hpp"

#include <algorithm>
#include <cmath>

#include "nadjust/errors.hpp"
#include "nadjust/kernels.hpp"

namespace nadjust {

namespace {

void he_init(Tensor4& w, int fan_in, RngStream& rng) {
    double std = std::sqrt(2.0 / fan_in);
    for (double& v : w.data) v = std * rng.next_normal();
}

/// Per-image, per-channel dropout multipliers in dataset order.
std::vector<double> draw_mask(int n, int channels, double p, RngStream& rng, bool rescale,
                              bool gaussian) {
    std::vector<double> mask(static_cast<size_t>(n) * channels);
    if (gaussian) {
        double sigma = std::sqrt(p / (1.0 - p));
        for (double& m : mask) m = 1.0 + sigma * rng.next_normal();
    } else {
        double keep = rescale ? 1.0 / (1.0 - p) : 1.0;
        for (double& m : mask) m = rng.next_double() < p ? 0.0 : keep;
    }
    return mask;
}

struct Tape {
    std::vector<Tensor4> out;       // node outputs (post-activation)
    std::vector<Tensor4> conv_out;  // conv result before BN
    std::vector<Tensor4> pre_relu;  // after BN and dropout
    std::vector<std::vector<double>> mask;
    std::vector<std::vector<double>> bmean, bvar;
};

Tensor4 forward_impl(CnnModel& model, const Tensor4& batch, const DropoutRequest* drop,
                     bool training, bool update_running_stats, Tape* tape) {
    const NetworkTopology& topo = *model.topo;
    if (batch.c != topo.input_shape[0] || batch.h != topo.input_shape[1] ||
        batch.w != topo.input_shape[2])
        throw UsageError("batch shape " + batch.shape_str() + " does not match network input (" +
                         std::to_string(topo.input_shape[0]) + "," +
                         std::to_string(topo.input_shape[1]) + "," +
                         std::to_string(topo.input_shape[2]) + ")");

    const size_t L = topo.layers.size();
    Tape local;
    Tape& tp = tape ? *tape : local;
    tp.out.resize(L);
    tp.conv_out.resize(L);
    tp.pre_relu.resize(L);
    tp.mask.assign(L, {});
    tp.bmean.resize(L);
    tp.bvar.resize(L);

    auto input_of = [&](int ref) -> const Tensor4& { return ref < 0 ? batch : tp.out[ref]; };

    for (size_t i = 0; i < L; ++i) {
        const LayerSpec& l = topo.layers[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                const Tensor4& in = input_of(l.input_refs[0]);
                CnnModel::ConvBlock& blk = model.conv_blocks[i];
                if (in.c != blk.weight.c)
                    throw UsageError("layer '" + l.id + "': input has " + std::to_string(in.c) +
                                     " channels, weights expect " + std::to_string(blk.weight.c));
                Tensor4 conv(batch.n, blk.weight.n, l.out_h, l.out_w);
                conv2d_forward(in, blk.weight, conv, l.stride);

                Tensor4 bn(batch.n, conv.c, conv.h, conv.w);
                if (model.opts.use_batchnorm) {
                    if (training) {
                        batchnorm_forward_train(conv, blk.bn_gamma, blk.bn_beta, bn, tp.bmean[i],
                                                tp.bvar[i], model.opts.bn_eps);
                        if (update_running_stats) {
                            double m = model.opts.bn_momentum;
                            for (int c = 0; c < conv.c; ++c) {
                                blk.bn_rmean[c] = (1.0 - m) * blk.bn_rmean[c] + m * tp.bmean[i][c];
                                blk.bn_rvar[c] = (1.0 - m) * blk.bn_rvar[c] + m * tp.bvar[i][c];
                            }
                        }
                    } else {
                        batchnorm_forward_eval(conv, blk.bn_gamma, blk.bn_beta, blk.bn_rmean,
                                               blk.bn_rvar, bn, model.opts.bn_eps);
                    }
                } else {
                    bn = conv;
                }

                double p = drop && drop->p[i] > 0.0 ? drop->p[i] : 0.0;
                if (p > 0.0) {
                    tp.mask[i] = draw_mask(batch.n, bn.c, p, *drop->rng, drop->rescale,
                                           drop->gaussian);
                    apply_channel_mask(bn, tp.mask[i]);
                }

                Tensor4 act(bn.n, bn.c, bn.h, bn.w);
                relu_forward(bn, act);
                tp.conv_out[i] = std::move(conv);
                tp.pre_relu[i] = std::move(bn);
                tp.out[i] = std::move(act);
                break;
            }
            case LayerKind::Fc: {
                const Tensor4& in = input_of(l.input_refs[0]);
                const CnnModel::FcBlock& blk = model.fc_blocks[i];
                if (in.c * in.h * in.w != blk.in)
                    throw UsageError("layer '" + l.id + "': input size " +
                                     std::to_string(in.c * in.h * in.w) + " != fc in " +
                                     std::to_string(blk.in));
                Tensor4 y(batch.n, blk.out, 1, 1);
                fc_forward(in, blk.weight, blk.bias, y);
                tp.out[i] = std::move(y);
                break;
            }
            case LayerKind::Add: {
                const Tensor4& a = input_of(l.input_refs[0]);
                const Tensor4& b = input_of(l.input_refs[1]);
                Tensor4 y(batch.n, std::max(a.c, b.c), l.out_h, l.out_w);
                add_forward_padded(a, b, y);
                tp.out[i] = std::move(y);
                break;
            }
            case LayerKind::Concat: {
                std::vector<const Tensor4*> ins;
                int c_total = 0;
                for (int ref : l.input_refs) {
                    ins.push_back(&input_of(ref));
                    c_total += ins.back()->c;
                }
                Tensor4 y(batch.n, c_total, l.out_h, l.out_w);
                concat_forward(ins, y);
                tp.out[i] = std::move(y);
                break;
            }
            case LayerKind::Pool: {
                const Tensor4& in = input_of(l.input_refs[0]);
                Tensor4 y(batch.n, in.c, l.out_h, l.out_w);
                avgpool_forward(in, y, l.kernel_size, l.stride);
                tp.out[i] = std::move(y);
                break;
            }
        }
    }
    return tp.out.back();
}

}  // namespace

std::unique_ptr<CnnModel> build_model(const NetworkTopology& topo, const ChannelConfig& config,
                                      const EngineOptions& opts, RngStream init_rng) {
    validate_config(topo, config);
    auto model = std::make_unique<CnnModel>();
    model->topo = &topo;
    model->config = config;
    model->eff = effective_channels(topo, config);
    model->opts = opts;
    model->conv_blocks.resize(topo.layers.size());
    model->fc_blocks.resize(topo.layers.size());

    auto width_of = [&](int ref) { return ref < 0 ? topo.input_shape[0] : model->eff[ref]; };

    for (size_t i = 0; i < topo.layers.size(); ++i) {
        const LayerSpec& l = topo.layers[i];
        RngStream rng = init_rng.child("init").child(static_cast<uint64_t>(i));
        if (l.kind == LayerKind::Conv) {
            int cin = width_of(l.input_refs[0]);
            int cout = model->eff[i];
            CnnModel::ConvBlock& blk = model->conv_blocks[i];
            blk.weight = Tensor4(cout, cin, l.kernel_size, l.kernel_size);
            he_init(blk.weight, cin * l.kernel_size * l.kernel_size, rng);
            blk.bn_gamma.assign(cout, 1.0);
            blk.bn_beta.assign(cout, 0.0);
            blk.bn_rmean.assign(cout, 0.0);
            blk.bn_rvar.assign(cout, 1.0);
            blk.vel_weight = Tensor4(cout, cin, l.kernel_size, l.kernel_size);
            blk.vel_gamma.assign(cout, 0.0);
            blk.vel_beta.assign(cout, 0.0);
        } else if (l.kind == LayerKind::Fc) {
            int ref = l.input_refs[0];
            int in = width_of(ref);
            if (ref >= 0) in *= topo.layers[ref].out_h * topo.layers[ref].out_w;
            else in *= topo.input_shape[1] * topo.input_shape[2];
            CnnModel::FcBlock& blk = model->fc_blocks[i];
            blk.in = in;
            blk.out = model->eff[i];
            blk.weight.resize(static_cast<size_t>(blk.out) * in);
            double std = std::sqrt(2.0 / in);
            for (double& v : blk.weight) v = std * rng.next_normal();
            blk.bias.assign(blk.out, 0.0);
            blk.vel_weight.assign(blk.weight.size(), 0.0);
            blk.vel_bias.assign(blk.out, 0.0);
        }
    }
    return model;
}

Tensor4 forward(const CnnModel& model, const Tensor4& batch, const DropoutRequest* drop,
                bool training) {
    // Running statistics are never touched on this path, so the const_cast
    // only bypasses the batch-stat bookkeeping type.
    return forward_impl(const_cast<CnnModel&>(model), batch, drop, training, false, nullptr);
}

double forward_backward(CnnModel& model, const Tensor4& batch, std::span<const int> labels,
                        Gradients& grads, const DropoutRequest* drop,
                        bool update_running_stats) {
    const NetworkTopology& topo = *model.topo;
    const size_t L = topo.layers.size();

    Tape tape;
    Tensor4 scores = forward_impl(model, batch, drop, true, update_running_stats, &tape);

    grads.conv_weight.assign(L, Tensor4());
    grads.bn_gamma.assign(L, {});
    grads.bn_beta.assign(L, {});
    grads.fc_weight.assign(L, {});
    grads.fc_bias.assign(L, {});

    Tensor4 dscores(scores.n, scores.c, 1, 1);
    double loss = softmax_xent(scores, labels, dscores);
    if (!std::isfinite(loss)) {
        double peak = 0.0;
        for (size_t i = 0; i < L; ++i)
            for (double v : tape.out[i].data) peak = std::max(peak, std::abs(v));
        throw TrainingError("non-finite loss; max |activation| = " + std::to_string(peak));
    }

    std::vector<Tensor4> dacts(L);
    auto grad_of = [&](size_t i) -> Tensor4& {
        if (dacts[i].size() == 0) {
            const Tensor4& o = tape.out[i];
            dacts[i] = Tensor4(o.n, o.c, o.h, o.w);
        }
        return dacts[i];
    };
    // Gradients w.r.t. the batch itself are discarded.
    Tensor4 dbatch(batch.n, batch.c, batch.h, batch.w);
    auto sink_of = [&](int ref) -> Tensor4& { return ref < 0 ? dbatch : grad_of(ref); };

    auto accumulate = [](Tensor4& dst, const Tensor4& src) {
        for (size_t j = 0; j < src.data.size(); ++j) dst.data[j] += src.data[j];
    };

    grad_of(L - 1) = std::move(dscores);

    for (size_t ii = L; ii-- > 0;) {
        const LayerSpec& l = topo.layers[ii];
        if (dacts[ii].size() == 0) continue;  // dead branch
        Tensor4& g = dacts[ii];
        switch (l.kind) {
            case LayerKind::Conv: {
                const CnnModel::ConvBlock& blk = model.conv_blocks[ii];
                const Tensor4& in = l.input_refs[0] < 0 ? batch : tape.out[l.input_refs[0]];

                Tensor4 g_pre(g.n, g.c, g.h, g.w);
                relu_backward(tape.pre_relu[ii], g, g_pre);
                if (!tape.mask[ii].empty()) apply_channel_mask(g_pre, tape.mask[ii]);

                Tensor4 g_conv(g.n, g.c, g.h, g.w);
                if (model.opts.use_batchnorm) {
                    batchnorm_backward(tape.conv_out[ii], g_pre, blk.bn_gamma, tape.bmean[ii],
                                       tape.bvar[ii], g_conv, grads.bn_gamma[ii],
                                       grads.bn_beta[ii], model.opts.bn_eps);
                } else {
                    g_conv = std::move(g_pre);
                }

                grads.conv_weight[ii] =
                    Tensor4(blk.weight.n, blk.weight.c, blk.weight.h, blk.weight.w);
                conv2d_backward_weights(in, g_conv, grads.conv_weight[ii], l.stride);
                Tensor4 din(in.n, in.c, in.h, in.w);
                conv2d_backward_input(g_conv, blk.weight, din, l.stride);
                accumulate(sink_of(l.input_refs[0]), din);
                break;
            }
            case LayerKind::Fc: {
                const CnnModel::FcBlock& blk = model.fc_blocks[ii];
                const Tensor4& in = l.input_refs[0] < 0 ? batch : tape.out[l.input_refs[0]];
                Tensor4 din(in.n, in.c, in.h, in.w);
                fc_backward(in, blk.weight, g, din, grads.fc_weight[ii], grads.fc_bias[ii]);
                accumulate(sink_of(l.input_refs[0]), din);
                break;
            }
            case LayerKind::Add: {
                const Tensor4& a = l.input_refs[0] < 0 ? batch : tape.out[l.input_refs[0]];
                const Tensor4& b = l.input_refs[1] < 0 ? batch : tape.out[l.input_refs[1]];
                Tensor4 da(a.n, a.c, a.h, a.w), db(b.n, b.c, b.h, b.w);
                add_backward_padded(g, da, db);
                accumulate(sink_of(l.input_refs[0]), da);
                accumulate(sink_of(l.input_refs[1]), db);
                break;
            }
            case LayerKind::Concat: {
                std::vector<Tensor4> parts;
                std::vector<Tensor4*> part_ptrs;
                for (int ref : l.input_refs) {
                    const Tensor4& in = ref < 0 ? batch : tape.out[ref];
                    parts.emplace_back(in.n, in.c, in.h, in.w);
                }
                for (Tensor4& p : parts) part_ptrs.push_back(&p);
                concat_backward(g, part_ptrs);
                for (size_t r = 0; r < parts.size(); ++r)
                    accumulate(sink_of(l.input_refs[r]), parts[r]);
                break;
            }
            case LayerKind::Pool: {
                const Tensor4& in = l.input_refs[0] < 0 ? batch : tape.out[l.input_refs[0]];
                Tensor4 din(in.n, in.c, in.h, in.w);
                avgpool_backward(g, din, l.kernel_size, l.stride);
                accumulate(sink_of(l.input_refs[0]), din);
                break;
            }
        }
        g = Tensor4();  // free as we go
    }
    return loss;
}

void apply_gradients(CnnModel& model, const Gradients& grads, double lr) {
    const NetworkTopology& topo = *model.topo;
    for (size_t i = 0; i < topo.layers.size(); ++i) {
        if (topo.layers[i].kind == LayerKind::Conv) {
            CnnModel::ConvBlock& blk = model.conv_blocks[i];
            sgd_momentum_update(blk.weight.data, grads.conv_weight[i].data, blk.vel_weight.data,
                                lr, model.opts.momentum);
            if (model.opts.use_batchnorm && !grads.bn_gamma[i].empty()) {
                sgd_momentum_update(blk.bn_gamma, grads.bn_gamma[i], blk.vel_gamma, lr,
                                    model.opts.momentum);
                sgd_momentum_update(blk.bn_beta, grads.bn_beta[i], blk.vel_beta, lr,
                                    model.opts.momentum);
            }
        } else if (topo.layers[i].kind == LayerKind::Fc) {
            CnnModel::FcBlock& blk = model.fc_blocks[i];
            sgd_momentum_update(blk.weight, grads.fc_weight[i], blk.vel_weight, lr,
                                model.opts.momentum);
            sgd_momentum_update(blk.bias, grads.fc_bias[i], blk.vel_bias, lr, model.opts.momentum);
        }
    }
}

double backward_and_step(CnnModel& model, const Tensor4& batch, std::span<const int> labels,
                         double lr) {
    DropoutRequest drop;
    DropoutRequest* drop_ptr = nullptr;
    RngStream step_rng = model.train_rng.child("step");
    if (model.opts.train_dropout_p > 0.0) {
        drop.p.assign(model.topo->layers.size(), 0.0);
        for (size_t i = 0; i < model.topo->layers.size(); ++i)
            if (model.topo->layers[i].kind == LayerKind::Conv)
                drop.p[i] = model.opts.train_dropout_p;
        drop.rng = &step_rng;
        drop.rescale = model.opts.rescale;
        drop.gaussian = model.opts.gaussian_dropout;
        drop_ptr = &drop;
    }
    model.train_rng = model.train_rng.child("next");

    Gradients grads;
    double loss = forward_backward(model, batch, labels, grads, drop_ptr, true);
    apply_gradients(model, grads, lr);
    return loss;
}

CnnEvaluator::CnnEvaluator(SyntheticDatasetSpec dataset_spec, int image_channels,
                           EngineOptions opts)
    : dataset_spec_(dataset_spec), opts_(opts) {
    train_ = generate_dataset(dataset_spec_, image_channels, Split::Train);
    val_ = generate_dataset(dataset_spec_, image_channels, Split::Val);
    test_ = generate_dataset(dataset_spec_, image_channels, Split::Test);
}

const Dataset& CnnEvaluator::split_data(Split split) const {
    switch (split) {
        case Split::Train: return train_;
        case Split::Val: return val_;
        case Split::Test: return test_;
    }
    return val_;
}

std::unique_ptr<ModelHandle> CnnEvaluator::train(const NetworkTopology& topo,
                                                 const ChannelConfig& config,
                                                 const TrainBudget& budget, RngStream rng) {
    if (train_.images.c != topo.input_shape[0] || train_.images.h != topo.input_shape[1] ||
        train_.images.w != topo.input_shape[2])
        throw ConfigError("dataset shape " + train_.images.shape_str() +
                          " does not match topology input");

    auto model = build_model(topo, config, opts_, rng);
    model->train_rng = rng.child("dropout");

    const int n_train = train_.images.n;
    const int bs = std::min(opts_.batch_size, n_train);
    const int steps_per_epoch = (n_train + bs - 1) / bs;
    const long total_steps = std::lround(budget.epochs * steps_per_epoch);

    std::vector<int> perm(n_train);
    RngStream shuffle_rng = rng.child("shuffle");

    for (long step = 0; step < total_steps; ++step) {
        const long epoch = step / steps_per_epoch;
        const int pos = static_cast<int>(step % steps_per_epoch);
        if (pos == 0) {
            for (int i = 0; i < n_train; ++i) perm[i] = i;
            RngStream er = shuffle_rng.child(static_cast<uint64_t>(epoch));
            for (int i = n_train - 1; i > 0; --i)
                std::swap(perm[i], perm[er.next_below(static_cast<uint64_t>(i + 1))]);
        }
        const int lo = pos * bs;
        const int hi = std::min(lo + bs, n_train);
        Tensor4 batch(hi - lo, train_.images.c, train_.images.h, train_.images.w);
        std::vector<int> labels(hi - lo);
        const size_t img = static_cast<size_t>(train_.images.c) * train_.images.h * train_.images.w;
        for (int j = lo; j < hi; ++j) {
            std::copy_n(train_.images.data.begin() + perm[j] * img, img,
                        batch.data.begin() + (j - lo) * img);
            labels[j - lo] = train_.labels[perm[j]];
        }

        const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
        const double lr =
            opts_.lr_min + 0.5 * (opts_.lr_max - opts_.lr_min) * (1.0 + std::cos(progress * 3.14159265358979323846));

        try {
            backward_and_step(*model, batch, labels, lr);
        } catch (const TrainingError& e) {
            throw TrainingError("training diverged at step " + std::to_string(step) + ": " +
                                e.what());
        }
    }
    return model;
}

double CnnEvaluator::accuracy_on(const CnnModel& model, const Dataset& ds,
                                 const DropoutRequest* drop, int image_limit) const {
    const int n = image_limit > 0 ? std::min(image_limit, ds.images.n) : ds.images.n;
    const int bs = std::min(opts_.batch_size, n);
    const size_t img = static_cast<size_t>(ds.images.c) * ds.images.h * ds.images.w;
    int correct = 0;
    for (int lo = 0; lo < n; lo += bs) {
        const int hi = std::min(lo + bs, n);
        Tensor4 batch(hi - lo, ds.images.c, ds.images.h, ds.images.w);
        std::copy_n(ds.images.data.begin() + static_cast<size_t>(lo) * img,
                    static_cast<size_t>(hi - lo) * img, batch.data.begin());
        Tensor4 scores = forward(model, batch, drop, false);
        for (int j = 0; j < hi - lo; ++j) {
            const double* s = scores.data.data() + static_cast<size_t>(j) * scores.c;
            int best = 0;
            for (int k = 1; k < scores.c; ++k)
                if (s[k] > s[best]) best = k;
            if (best == ds.labels[lo + j]) ++correct;
        }
    }
    return static_cast<double>(correct) / n;
}

double CnnEvaluator::evaluate(const ModelHandle& handle, Split split) const {
    const auto& model = dynamic_cast<const CnnModel&>(handle);
    return accuracy_on(model, split_data(split), nullptr, 0);
}

double CnnEvaluator::evaluate_with_drop(const ModelHandle& handle, int layer, double p,
                                        int mc_samples, RngStream rng) const {
    const auto& model = dynamic_cast<const CnnModel&>(handle);
    if (p < 0.0 || p >= 1.0) throw UsageError("drop probability must be in [0, 1)");
    if (layer < 0 || layer >= static_cast<int>(model.topo->layers.size()) ||
        model.topo->layers[layer].kind != LayerKind::Conv)
        throw UsageError("evaluate_with_drop: layer " + std::to_string(layer) +
                         " is not a conv layer");
    if (p == 0.0) return evaluate(handle, Split::Val);

    double sum = 0.0;
    for (int m = 0; m < mc_samples; ++m) {
        RngStream mrng = rng.child(static_cast<uint64_t>(m));
        DropoutRequest drop;
        drop.p.assign(model.topo->layers.size(), 0.0);
        drop.p[layer] = p;
        drop.rng = &mrng;
        drop.rescale = opts_.rescale;
        drop.gaussian = opts_.gaussian_dropout;
        sum += accuracy_on(model, val_, &drop, 0);
    }
    return sum / mc_samples;
}

}  // namespace nadjust
