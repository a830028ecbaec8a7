#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dualopt/errors.hpp"
#include "dualopt/param_state.hpp"

namespace dualopt {

// 17 significant decimal digits round-trip any finite double exactly.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace detail {

inline void append_vector(std::string& out, const std::vector<double>& v) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += format_double(v[i]);
    }
    out += ']';
}

} // namespace detail

inline constexpr int kCheckpointSchemaVersion = 1;

// Serializes params + optimizer state to a single JSON document. The writer
// is hand-rolled so group order and number formatting are byte-stable.
inline std::string checkpoint_to_string(const ModelParams& params,
                                        const std::vector<OptState>& states) {
    if (states.size() != params.groups().size()) {
        throw ShapeError("save_checkpoint: state count does not match group count");
    }
    for (const auto& g : params.groups()) {
        if (!all_finite(g.values)) {
            throw NumericError("save_checkpoint: group '" + g.name + "' has non-finite values");
        }
    }
    std::string out;
    out.reserve(params.groups().size() * 256);
    out += "{\"schema_version\":";
    out += std::to_string(kCheckpointSchemaVersion);
    out += ",\"n_layers\":";
    out += std::to_string(params.n_layers());
    out += ",\"groups\":[";
    for (std::size_t i = 0; i < params.groups().size(); ++i) {
        const auto& g = params.group(i);
        if (i) out += ',';
        out += "{\"name\":\"";
        out += g.name;
        out += "\",\"layer_index\":";
        out += std::to_string(g.layer_index);
        out += ",\"length\":";
        out += std::to_string(g.size());
        out += ",\"values\":";
        detail::append_vector(out, g.values);
        out += '}';
    }
    out += "],\"opt_state\":{";
    for (std::size_t i = 0; i < params.groups().size(); ++i) {
        const auto& g = params.group(i);
        const auto& s = states[i];
        if (s.m.size() != g.size() || s.v.size() != g.size() || s.d.size() != g.size()) {
            throw ShapeError("save_checkpoint: optimizer state for group '" + g.name +
                             "' does not match its values length");
        }
        if (i) out += ',';
        out += '"';
        out += g.name;
        out += "\":{\"t\":";
        out += std::to_string(s.t);
        out += ",\"m\":";
        detail::append_vector(out, s.m);
        out += ",\"v\":";
        detail::append_vector(out, s.v);
        out += ",\"d\":";
        detail::append_vector(out, s.d);
        out += '}';
    }
    out += "}}\n";
    return out;
}

inline void save_checkpoint(const ModelParams& params, const std::vector<OptState>& states,
                            const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("save_checkpoint: cannot open '" + path + "' for writing");
    }
    f << checkpoint_to_string(params, states);
}

namespace detail {

inline std::vector<double> parse_vector(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array()) {
        throw ParseError("checkpoint: " + where + " must be an array");
    }
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& x : j) {
        if (!x.is_number()) {
            throw ParseError("checkpoint: " + where + " contains a non-numeric entry");
        }
        out.push_back(x.get<double>());
    }
    return out;
}

} // namespace detail

inline std::pair<ModelParams, std::vector<OptState>> checkpoint_from_string(
    const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: invalid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("schema_version") || !doc.contains("groups") ||
        !doc.contains("n_layers")) {
        throw ParseError("checkpoint: missing schema_version/n_layers/groups");
    }
    if (doc["schema_version"].get<int>() != kCheckpointSchemaVersion) {
        throw ParseError("checkpoint: unsupported schema_version");
    }

    std::vector<ParamGroup> groups;
    for (const auto& jg : doc["groups"]) {
        ParamGroup g;
        if (!jg.contains("name") || !jg.contains("layer_index") || !jg.contains("length") ||
            !jg.contains("values")) {
            throw ParseError("checkpoint: group entry missing name/layer_index/length/values");
        }
        g.name = jg["name"].get<std::string>();
        g.layer_index = jg["layer_index"].get<int>();
        g.values = detail::parse_vector(jg["values"], "group '" + g.name + "' values");
        const auto declared = jg["length"].get<std::size_t>();
        if (declared != g.values.size()) {
            throw ParseError("checkpoint: group '" + g.name + "' declares length " +
                             std::to_string(declared) + " but has " +
                             std::to_string(g.values.size()) + " values");
        }
        g.grad.assign(g.values.size(), 0.0);
        groups.push_back(std::move(g));
    }
    ModelParams params(std::move(groups));
    if (doc["n_layers"].get<int>() != params.n_layers()) {
        throw ParseError("checkpoint: n_layers field disagrees with group count");
    }

    std::vector<OptState> states;
    const auto& jstate = doc.contains("opt_state") ? doc["opt_state"] : nlohmann::json::object();
    for (const auto& g : params.groups()) {
        OptState s(g.size());
        if (jstate.contains(g.name)) {
            const auto& js = jstate[g.name];
            s.t = js.value("t", 0L);
            if (js.contains("m")) s.m = detail::parse_vector(js["m"], "opt_state '" + g.name + "' m");
            if (js.contains("v")) s.v = detail::parse_vector(js["v"], "opt_state '" + g.name + "' v");
            if (js.contains("d")) s.d = detail::parse_vector(js["d"], "opt_state '" + g.name + "' d");
            if (s.m.size() != g.size() || s.v.size() != g.size() || s.d.size() != g.size()) {
                throw ParseError("checkpoint: opt_state for group '" + g.name +
                                 "' does not match the group's values length");
            }
        }
        states.push_back(std::move(s));
    }
    return {std::move(params), std::move(states)};
}

inline std::pair<ModelParams, std::vector<OptState>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("load_checkpoint: cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return checkpoint_from_string(ss.str());
}

} // namespace dualopt
