#include "nadjust/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "nadjust/errors.hpp"

namespace nadjust {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Fc: return "fc";
        case LayerKind::Add: return "add";
        case LayerKind::Concat: return "concat";
        case LayerKind::Pool: return "pool";
    }
    return "?";
}

int NetworkTopology::adjustable_index_of(int layer) const {
    for (size_t i = 0; i < adjustable_ids.size(); ++i)
        if (adjustable_ids[i] == layer) return static_cast<int>(i);
    return -1;
}

int NetworkTopology::layer_index_of(const std::string& id) const {
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].id == id) return static_cast<int>(i);
    return -1;
}

namespace {

int conv_out_size(int in, int stride) {
    // odd kernel, symmetric (k-1)/2 padding: out = ceil(in / stride)
    return (in + stride - 1) / stride;
}

int pool_out_size(int in, int kernel, int stride) {
    return (in - kernel) / stride + 1;
}

[[noreturn]] void fail(const std::string& layer_id, const std::string& msg) {
    throw TopologyError("layer '" + layer_id + "': " + msg);
}

}  // namespace

void NetworkTopology::finalize() {
    if (layers.empty()) throw TopologyError("topology has no layers");
    if (input_shape[0] < 1 || input_shape[1] < 1 || input_shape[2] < 1)
        throw TopologyError("input_shape entries must be positive");
    if (min_channels < 0) throw TopologyError("min_channels must be >= 0");

    std::set<std::string> seen_ids;
    adjustable_ids.clear();

    for (size_t i = 0; i < layers.size(); ++i) {
        LayerSpec& l = layers[i];
        if (l.id.empty()) fail("#" + std::to_string(i), "empty id");
        if (!seen_ids.insert(l.id).second) fail(l.id, "duplicate id");

        for (int ref : l.input_refs)
            if (ref < -1 || ref >= static_cast<int>(i))
                fail(l.id, "input must reference the network input or an earlier layer");

        auto in_hw = [&](int ref) -> std::pair<int, int> {
            if (ref < 0) return {input_shape[1], input_shape[2]};
            return {layers[ref].out_h, layers[ref].out_w};
        };

        switch (l.kind) {
            case LayerKind::Conv: {
                if (l.input_refs.size() != 1) fail(l.id, "conv takes exactly one input");
                if (l.kernel_size < 1 || l.kernel_size % 2 == 0)
                    fail(l.id, "conv kernel must be odd and >= 1");
                if (l.stride < 1) fail(l.id, "stride must be >= 1");
                if (l.base_channels < 1) fail(l.id, "conv needs channels >= 1");
                auto [h, w] = in_hw(l.input_refs[0]);
                l.out_h = conv_out_size(h, l.stride);
                l.out_w = conv_out_size(w, l.stride);
                break;
            }
            case LayerKind::Fc: {
                if (l.input_refs.size() != 1) fail(l.id, "fc takes exactly one input");
                if (l.base_channels < 1) fail(l.id, "fc needs channels >= 1");
                l.out_h = l.out_w = 1;
                break;
            }
            case LayerKind::Add: {
                if (l.input_refs.size() != 2) fail(l.id, "add takes exactly two inputs");
                auto [h0, w0] = in_hw(l.input_refs[0]);
                auto [h1, w1] = in_hw(l.input_refs[1]);
                if (h0 != h1 || w0 != w1) fail(l.id, "add inputs must share spatial size");
                l.out_h = h0;
                l.out_w = w0;
                break;
            }
            case LayerKind::Concat: {
                if (l.input_refs.size() < 2) fail(l.id, "concat takes at least two inputs");
                auto [h0, w0] = in_hw(l.input_refs[0]);
                for (int ref : l.input_refs) {
                    auto [h, w] = in_hw(ref);
                    if (h != h0 || w != w0) fail(l.id, "concat inputs must share spatial size");
                }
                l.out_h = h0;
                l.out_w = w0;
                break;
            }
            case LayerKind::Pool: {
                if (l.input_refs.size() != 1) fail(l.id, "pool takes exactly one input");
                auto [h, w] = in_hw(l.input_refs[0]);
                if (l.kernel_size == 0) {  // global average
                    l.out_h = l.out_w = 1;
                } else {
                    if (l.kernel_size < 1 || l.stride < 1) fail(l.id, "bad pool kernel/stride");
                    if (h < l.kernel_size || w < l.kernel_size)
                        fail(l.id, "pool kernel larger than input");
                    l.out_h = pool_out_size(h, l.kernel_size, l.stride);
                    l.out_w = pool_out_size(w, l.kernel_size, l.stride);
                }
                break;
            }
        }

        if (l.adjustable) {
            if (l.kind != LayerKind::Conv && l.kind != LayerKind::Fc)
                fail(l.id, "only conv/fc layers can be adjustable");
            adjustable_ids.push_back(static_cast<int>(i));
        } else if (l.frozen) {
            fail(l.id, "frozen only applies to adjustable layers");
        }
    }
}

ChannelConfig initial_config(const NetworkTopology& topo) {
    ChannelConfig cfg;
    for (int idx : topo.adjustable_ids) {
        cfg.channels.push_back(topo.layers[idx].base_channels);
        cfg.frozen_mask.push_back(topo.layers[idx].frozen ? 1 : 0);
    }
    return cfg;
}

void validate_config(const NetworkTopology& topo, const ChannelConfig& config) {
    if (config.channels.size() != topo.adjustable_ids.size())
        throw ConfigError("config has " + std::to_string(config.channels.size()) +
                          " entries, topology has " + std::to_string(topo.adjustable_ids.size()) +
                          " adjustable layers");
    if (config.frozen_mask.size() != config.channels.size())
        throw ConfigError("frozen_mask length does not match channels length");
    for (size_t i = 0; i < config.channels.size(); ++i)
        if (config.channels[i] < topo.min_channels)
            throw ConfigError("channel entry " + std::to_string(i) + " (" +
                              std::to_string(config.channels[i]) + ") below min_channels " +
                              std::to_string(topo.min_channels));
}

std::vector<int> effective_channels(const NetworkTopology& topo, const ChannelConfig& config) {
    validate_config(topo, config);
    std::vector<int> eff(topo.layers.size(), 0);
    auto width_of = [&](int ref) { return ref < 0 ? topo.input_shape[0] : eff[ref]; };

    for (size_t i = 0; i < topo.layers.size(); ++i) {
        const LayerSpec& l = topo.layers[i];
        switch (l.kind) {
            case LayerKind::Conv:
            case LayerKind::Fc: {
                int adj = topo.adjustable_index_of(static_cast<int>(i));
                eff[i] = adj >= 0 ? config.channels[adj] : l.base_channels;
                break;
            }
            case LayerKind::Add:
                eff[i] = std::max(width_of(l.input_refs[0]), width_of(l.input_refs[1]));
                break;
            case LayerKind::Concat: {
                int sum = 0;
                for (int ref : l.input_refs) sum += width_of(ref);
                eff[i] = sum;
                break;
            }
            case LayerKind::Pool:
                eff[i] = width_of(l.input_refs[0]);
                break;
        }
    }
    return eff;
}

FlopsBreakdown flops(const NetworkTopology& topo, const ChannelConfig& config) {
    std::vector<int> eff = effective_channels(topo, config);
    auto width_of = [&](int ref) { return ref < 0 ? topo.input_shape[0] : eff[ref]; };
    auto hw_of = [&](int ref) -> std::pair<int, int> {
        if (ref < 0) return {topo.input_shape[1], topo.input_shape[2]};
        return {topo.layers[ref].out_h, topo.layers[ref].out_w};
    };

    FlopsBreakdown out;
    out.per_layer.assign(topo.layers.size(), 0.0);

    for (size_t i = 0; i < topo.layers.size(); ++i) {
        const LayerSpec& l = topo.layers[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                double cin = width_of(l.input_refs[0]);
                double k2 = static_cast<double>(l.kernel_size) * l.kernel_size;
                out.per_layer[i] = static_cast<double>(l.out_h) * l.out_w * cin * eff[i] * k2;
                break;
            }
            case LayerKind::Fc:
                out.per_layer[i] = static_cast<double>(width_of(l.input_refs[0])) * eff[i];
                break;
            case LayerKind::Add:
                out.constant_part += static_cast<double>(l.out_h) * l.out_w * eff[i];
                break;
            case LayerKind::Concat:
                break;  // pure relabeling, no arithmetic
            case LayerKind::Pool: {
                auto [h, w] = hw_of(l.input_refs[0]);
                if (l.kernel_size == 0) {
                    out.constant_part += static_cast<double>(h) * w * eff[i];
                } else {
                    double k2 = static_cast<double>(l.kernel_size) * l.kernel_size;
                    out.constant_part += static_cast<double>(l.out_h) * l.out_w * eff[i] * k2;
                }
                break;
            }
        }
    }

    out.total = std::accumulate(out.per_layer.begin(), out.per_layer.end(), 0.0) + out.constant_part;
    return out;
}

double dflops_dc(const NetworkTopology& topo, const ChannelConfig& config, int layer) {
    int adj = topo.adjustable_index_of(layer);
    if (adj < 0)
        throw UsageError("dflops_dc: layer " + std::to_string(layer) + " is not adjustable");

    ChannelConfig up = config;
    up.channels[adj] += 1;
    double f_up = flops(topo, up).total;

    if (config.channels[adj] - 1 >= topo.min_channels) {
        ChannelConfig down = config;
        down.channels[adj] -= 1;
        return (f_up - flops(topo, down).total) / 2.0;
    }
    // at the lower bound: forward difference
    return f_up - flops(topo, config).total;
}

namespace {

ChannelConfig apply_alpha(const NetworkTopology& topo, const ChannelConfig& base, double alpha) {
    ChannelConfig out = base;
    for (size_t i = 0; i < out.channels.size(); ++i) {
        if (out.frozen_mask[i]) continue;
        int scaled = static_cast<int>(std::llround(alpha * base.channels[i]));
        out.channels[i] = std::max(topo.min_channels, scaled);
    }
    return out;
}

}  // namespace

ScaleResult scale_to_budget(const NetworkTopology& topo, const ChannelConfig& config,
                            double budget, double tolerance) {
    if (budget <= 0.0) throw UsageError("scale_to_budget: budget must be positive");
    validate_config(topo, config);

    auto gap = [&](double total) { return std::abs(total - budget) / budget; };

    ScaleResult best{config, 1.0, flops(topo, config).total};
    if (gap(best.achieved_flops) <= tolerance) return best;

    // Bisection over the global factor. flops(apply_alpha(a)) is a monotone
    // non-decreasing step function of a.
    double lo = 0.25, hi = 4.0;
    auto consider = [&](double alpha) {
        ChannelConfig cand = apply_alpha(topo, config, alpha);
        double total = flops(topo, cand).total;
        if (gap(total) < gap(best.achieved_flops)) best = {std::move(cand), alpha, total};
        return total;
    };
    double f_lo = consider(lo);
    double f_hi = consider(hi);

    if (budget > f_lo && budget < f_hi) {
        for (int it = 0; it < 40 && gap(best.achieved_flops) > tolerance; ++it) {
            double mid = 0.5 * (lo + hi);
            double f_mid = consider(mid);
            if (f_mid < budget)
                lo = mid;
            else
                hi = mid;
        }
    }

    // Greedy +/-1 repair on the layers with the largest |dflops_dc|.
    int max_moves = 20 * std::max<int>(1, static_cast<int>(config.channels.size()));
    for (int moves = 0; moves < max_moves && gap(best.achieved_flops) > tolerance; ++moves) {
        bool need_increase = best.achieved_flops < budget;

        std::vector<std::pair<double, int>> ranked;  // (|dflops|, adjustable index)
        for (size_t i = 0; i < best.config.channels.size(); ++i) {
            if (best.config.frozen_mask[i]) continue;
            if (!need_increase && best.config.channels[i] - 1 < topo.min_channels) continue;
            double d = dflops_dc(topo, best.config, topo.adjustable_ids[i]);
            ranked.emplace_back(std::abs(d), static_cast<int>(i));
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });

        bool improved = false;
        for (const auto& [unused, idx] : ranked) {
            (void)unused;
            ChannelConfig cand = best.config;
            cand.channels[idx] += need_increase ? 1 : -1;
            double total = flops(topo, cand).total;
            if (gap(total) < gap(best.achieved_flops)) {
                best.config = std::move(cand);
                best.achieved_flops = total;
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }

    if (gap(best.achieved_flops) > tolerance)
        throw InfeasibleBudgetError(
            "budget " + std::to_string(budget) + " unreachable; closest achieved " +
                std::to_string(best.achieved_flops),
            best.achieved_flops);
    return best;
}

}  // namespace nadjust
