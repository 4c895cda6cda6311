#include <json.hpp>

#include <fstream>
#include <map>
#include <set>

#include "nadjust/errors.hpp"
#include "nadjust/io_util.hpp"
#include "nadjust/topology.hpp"

namespace nadjust {

using nlohmann::json;

namespace {

int line_of_byte(const std::string& text, size_t byte) {
    int line = 1;
    for (size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

[[noreturn]] void field_fail(const std::string& origin, const std::string& path,
                             const std::string& msg) {
    throw TopologyError(origin + ": " + path + ": " + msg);
}

json parse_json_or_fail(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw TopologyError(origin + ":" + std::to_string(line_of_byte(text, e.byte)) +
                            ": " + e.what());
    }
}

const json& require_field(const json& obj, const std::string& key, const std::string& origin,
                          const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) field_fail(origin, path, "missing required field '" + key + "'");
    return *it;
}

int require_int(const json& obj, const std::string& key, const std::string& origin,
                const std::string& path) {
    const json& v = require_field(obj, key, origin, path);
    if (!v.is_number_integer()) field_fail(origin, path + "." + key, "expected an integer");
    return v.get<int>();
}

int optional_int(const json& obj, const std::string& key, int dflt, const std::string& origin,
                 const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) return dflt;
    if (!it->is_number_integer()) field_fail(origin, path + "." + key, "expected an integer");
    return it->get<int>();
}

bool optional_bool(const json& obj, const std::string& key, bool dflt, const std::string& origin,
                   const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) return dflt;
    if (!it->is_boolean()) field_fail(origin, path + "." + key, "expected a boolean");
    return it->get<bool>();
}

const std::map<std::string, LayerKind> kKindNames = {
    {"conv", LayerKind::Conv}, {"fc", LayerKind::Fc},         {"add", LayerKind::Add},
    {"concat", LayerKind::Concat}, {"pool", LayerKind::Pool},
};

}  // namespace

NetworkTopology parse_topology(const std::string& text, const std::string& origin) {
    json root = parse_json_or_fail(text, origin);
    if (!root.is_object()) field_fail(origin, "$", "topology file must be a JSON object");

    NetworkTopology topo;

    const json& shape = require_field(root, "input_shape", origin, "$");
    if (!shape.is_array() || shape.size() != 3)
        field_fail(origin, "input_shape", "expected [channels, height, width]");
    for (int i = 0; i < 3; ++i) {
        if (!shape[i].is_number_integer())
            field_fail(origin, "input_shape[" + std::to_string(i) + "]", "expected an integer");
        topo.input_shape[i] = shape[i].get<int>();
    }

    topo.min_channels = optional_int(root, "min_channels", 1, origin, "$");

    const json& layers = require_field(root, "layers", origin, "$");
    if (!layers.is_array() || layers.empty())
        field_fail(origin, "layers", "expected a non-empty array");

    std::map<std::string, int> id_to_index;
    static const std::set<std::string> kLayerKeys = {"id",     "kind",       "kernel", "stride",
                                                     "inputs", "channels",   "adjustable",
                                                     "frozen"};
    static const std::set<std::string> kRootKeys = {"input_shape", "min_channels", "layers"};
    for (auto it = root.begin(); it != root.end(); ++it)
        if (!kRootKeys.count(it.key())) field_fail(origin, "$", "unknown field '" + it.key() + "'");

    for (size_t i = 0; i < layers.size(); ++i) {
        std::string path = "layers[" + std::to_string(i) + "]";
        const json& jl = layers[i];
        if (!jl.is_object()) field_fail(origin, path, "expected an object");
        for (auto it = jl.begin(); it != jl.end(); ++it)
            if (!kLayerKeys.count(it.key()))
                field_fail(origin, path, "unknown field '" + it.key() + "'");

        LayerSpec l;
        const json& jid = require_field(jl, "id", origin, path);
        if (!jid.is_string()) field_fail(origin, path + ".id", "expected a string");
        l.id = jid.get<std::string>();
        if (l.id == "input") field_fail(origin, path + ".id", "'input' is reserved");

        const json& jkind = require_field(jl, "kind", origin, path);
        if (!jkind.is_string()) field_fail(origin, path + ".kind", "expected a string");
        auto kind_it = kKindNames.find(jkind.get<std::string>());
        if (kind_it == kKindNames.end())
            field_fail(origin, path + ".kind",
                       "unsupported layer kind '" + jkind.get<std::string>() + "'");
        l.kind = kind_it->second;

        l.kernel_size = optional_int(jl, "kernel", l.kind == LayerKind::Conv ? -1 : 0, origin, path);
        if (l.kind == LayerKind::Conv && l.kernel_size == -1)
            field_fail(origin, path, "missing required field 'kernel'");
        l.stride = optional_int(jl, "stride", 1, origin, path);

        const json& jin = require_field(jl, "inputs", origin, path);
        if (!jin.is_array() || jin.empty())
            field_fail(origin, path + ".inputs", "expected a non-empty array of layer ids");
        for (size_t r = 0; r < jin.size(); ++r) {
            if (!jin[r].is_string())
                field_fail(origin, path + ".inputs[" + std::to_string(r) + "]",
                           "expected a layer id string");
            std::string ref = jin[r].get<std::string>();
            if (ref == "input") {
                l.input_refs.push_back(-1);
            } else {
                auto found = id_to_index.find(ref);
                if (found == id_to_index.end())
                    field_fail(origin, path + ".inputs[" + std::to_string(r) + "]",
                               "unknown layer id '" + ref +
                                   "' (inputs must reference earlier layers)");
                l.input_refs.push_back(found->second);
            }
        }

        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Fc) {
            l.base_channels = require_int(jl, "channels", origin, path);
            l.adjustable = optional_bool(jl, "adjustable", false, origin, path);
            l.frozen = optional_bool(jl, "frozen", false, origin, path);
        } else if (jl.contains("channels") || jl.contains("adjustable") || jl.contains("frozen")) {
            field_fail(origin, path, "channels/adjustable/frozen only apply to conv/fc layers");
        }

        id_to_index[l.id] = static_cast<int>(i);
        topo.layers.push_back(std::move(l));
    }

    try {
        topo.finalize();
    } catch (const TopologyError& e) {
        throw TopologyError(origin + ": " + e.what());
    }
    return topo;
}

NetworkTopology load_topology(const std::string& path) {
    return parse_topology(read_file(path), path);
}

ChannelConfig load_channel_config(const std::string& path, const NetworkTopology& topo) {
    std::string text = read_file(path);
    json root = parse_json_or_fail(text, path);
    if (!root.is_object() || !root.contains("channels") || !root["channels"].is_array())
        throw ConfigError(path + ": expected {\"channels\": [...]}");

    ChannelConfig cfg;
    for (size_t i = 0; i < root["channels"].size(); ++i) {
        const json& v = root["channels"][i];
        if (!v.is_number_integer())
            throw ConfigError(path + ": channels[" + std::to_string(i) + "]: expected an integer");
        cfg.channels.push_back(v.get<int>());
    }
    for (int idx : topo.adjustable_ids) cfg.frozen_mask.push_back(topo.layers[idx].frozen ? 1 : 0);
    validate_config(topo, cfg);
    return cfg;
}

void save_channel_config(const std::string& path, const ChannelConfig& config) {
    json root;
    root["channels"] = config.channels;
    write_file_atomic(path, root.dump(2) + "\n");
}

}  // namespace nadjust
