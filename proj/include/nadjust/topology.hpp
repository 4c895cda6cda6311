#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace nadjust {

enum class LayerKind { Conv, Fc, Add, Concat, Pool };

const char* layer_kind_name(LayerKind k);

/// One node of the layer graph. Spatial sizes are derived at topology
/// construction and never depend on the channel configuration.
struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::Conv;
    int kernel_size = 0;  // conv: odd >= 1; pool: 0 means global average
    int stride = 1;
    std::vector<int> input_refs;  // indices into layers; -1 refers to the network input
    int base_channels = 0;        // conv/fc output width in the description file
    bool adjustable = false;
    bool frozen = false;

    // derived
    int out_h = 0, out_w = 0;
};

/// Per-layer output channel counts for the adjustable layers, plus the
/// mask of layers the adjuster must leave alone.
struct ChannelConfig {
    std::vector<int> channels;        // length L = adjustable layer count
    std::vector<uint8_t> frozen_mask; // length L

    size_t size() const { return channels.size(); }
    bool operator==(const ChannelConfig&) const = default;
};

struct NetworkTopology {
    std::array<int, 3> input_shape{};  // C, H, W
    std::vector<LayerSpec> layers;     // in topological order
    std::vector<int> adjustable_ids;   // layer indices, in layer order
    int min_channels = 1;

    int adjustable_count() const { return static_cast<int>(adjustable_ids.size()); }

    /// Position of a layer within the adjustable list, -1 if not adjustable.
    int adjustable_index_of(int layer) const;

    int layer_index_of(const std::string& id) const;  // -1 if unknown

    /// Runs the structural checks and derives spatial sizes. Throws
    /// TopologyError with the offending layer named.
    void finalize();
};

struct FlopsBreakdown {
    std::vector<double> per_layer;  // MACs per layer, 0 for junctions/pools
    double total = 0.0;
    double constant_part = 0.0;
};

/// The configuration described by the topology file itself.
ChannelConfig initial_config(const NetworkTopology& topo);

/// Throws ConfigError if the config does not fit the topology.
void validate_config(const NetworkTopology& topo, const ChannelConfig& config);

/// Channel count actually flowing out of every node once junction
/// semantics are applied: max of the two inputs at an add (zero padding
/// widens the narrower path), sum at a concat, pass-through elsewhere.
/// Index 0..layers.size()-1; entry i is the effective width of layer i.
std::vector<int> effective_channels(const NetworkTopology& topo, const ChannelConfig& config);

/// MAC accounting: conv f = H_out*W_out*C_in_eff*C_out*k^2, fc f =
/// C_in_eff*C_out; junction and pool elementwise work goes to
/// constant_part at the current effective width.
FlopsBreakdown flops(const NetworkTopology& topo, const ChannelConfig& config);

/// Central integer difference of flops().total around the layer's current
/// width (forward difference at the lower channel bound). `layer` is a
/// topology layer index and must be adjustable.
double dflops_dc(const NetworkTopology& topo, const ChannelConfig& config, int layer);

struct ScaleResult {
    ChannelConfig config;
    double alpha = 1.0;
    double achieved_flops = 0.0;
};

/// Finds a single global factor alpha by bisection so that the rounded
/// configuration lands within `tolerance` (relative) of `budget`, then
/// closes any rounding gap with a greedy +/-1 pass on the layers with the
/// largest |dflops_dc|. Frozen entries never move. Throws
/// InfeasibleBudgetError (carrying the closest achieved FLOPs) when the
/// budget cannot be reached.
ScaleResult scale_to_budget(const NetworkTopology& topo, const ChannelConfig& config,
                            double budget, double tolerance);

/// Topology description loader; see docs/formats.md. Errors carry the
/// line (parse errors) or field path (semantic errors).
NetworkTopology load_topology(const std::string& path);
NetworkTopology parse_topology(const std::string& text, const std::string& origin);

/// Channel-config files: {"channels": [...]}. Frozen mask comes from the
/// topology.
ChannelConfig load_channel_config(const std::string& path, const NetworkTopology& topo);
void save_channel_config(const std::string& path, const ChannelConfig& config);

}  // namespace nadjust
