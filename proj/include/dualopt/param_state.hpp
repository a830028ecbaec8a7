#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dualopt/errors.hpp"

namespace dualopt {

// One named parameter tensor, flattened. layer_index is 1-based; index 1 is
// the shallowest tensor and index n the classification head.
struct ParamGroup {
    std::string name;
    int layer_index = 0;
    std::vector<double> values;
    std::vector<double> grad;

    ParamGroup() = default;
    ParamGroup(std::string name_, int layer_index_, std::vector<double> values_)
        : name(std::move(name_)),
          layer_index(layer_index_),
          values(std::move(values_)),
          grad(values.size(), 0.0) {}

    std::size_t size() const { return values.size(); }
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// Ordered collection of ParamGroups, shallow to deep. Construction enforces
// that layer indices are exactly {1..n} and that every gradient buffer
// matches its values buffer.
class ModelParams {
public:
    explicit ModelParams(std::vector<ParamGroup> groups) : groups_(std::move(groups)) {
        if (groups_.empty()) {
            throw ConfigError("ModelParams: at least one parameter group is required");
        }
        const int n = static_cast<int>(groups_.size());
        std::vector<bool> seen(static_cast<std::size_t>(n) + 1, false);
        for (const auto& g : groups_) {
            if (g.layer_index < 1 || g.layer_index > n) {
                throw ConfigError("ModelParams: group '" + g.name + "' has layer_index " +
                                  std::to_string(g.layer_index) + " outside 1.." +
                                  std::to_string(n));
            }
            if (seen[static_cast<std::size_t>(g.layer_index)]) {
                throw ConfigError("ModelParams: duplicate layer_index " +
                                  std::to_string(g.layer_index) + " at group '" + g.name + "'");
            }
            seen[static_cast<std::size_t>(g.layer_index)] = true;
            if (g.grad.size() != g.values.size()) {
                throw ShapeError("ModelParams: group '" + g.name +
                                 "' gradient length does not match values length");
            }
        }
        for (int i = 1; i < n; ++i) {
            if (groups_[static_cast<std::size_t>(i)].layer_index <
                groups_[static_cast<std::size_t>(i) - 1].layer_index) {
                throw ConfigError("ModelParams: groups must be ordered by ascending layer_index");
            }
        }
    }

    int n_layers() const { return static_cast<int>(groups_.size()); }
    std::vector<ParamGroup>& groups() { return groups_; }
    const std::vector<ParamGroup>& groups() const { return groups_; }
    ParamGroup& group(std::size_t i) { return groups_[i]; }
    const ParamGroup& group(std::size_t i) const { return groups_[i]; }

    void zero_grad() {
        for (auto& g : groups_) {
            std::fill(g.grad.begin(), g.grad.end(), 0.0);
        }
    }

private:
    std::vector<ParamGroup> groups_;
};

// Frozen copy of the pretrained weights, keyed by group name. Immutable
// after construction so it can be shared between concurrent fine-tune arms.
class PretrainedSnapshot {
public:
    PretrainedSnapshot() = default;

    explicit PretrainedSnapshot(const ModelParams& params) {
        for (const auto& g : params.groups()) {
            values_.emplace(g.name, g.values);
        }
    }

    bool has_group(const std::string& name) const { return values_.count(name) > 0; }

    const std::vector<double>& values(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end()) {
            throw ConfigError("PretrainedSnapshot: no group named '" + name + "'");
        }
        return it->second;
    }

    std::size_t n_groups() const { return values_.size(); }

private:
    std::map<std::string, std::vector<double>> values_;
};

inline PretrainedSnapshot snapshot(const ModelParams& params) {
    for (const auto& g : params.groups()) {
        if (!all_finite(g.values)) {
            throw NumericError("snapshot: group '" + g.name + "' has non-finite values");
        }
    }
    return PretrainedSnapshot(params);
}

// Per-group optimizer memory. m/v/d always share the owning group's shape;
// v stays zero for momentum-only rules.
struct OptState {
    std::vector<double> m;
    std::vector<double> v;
    std::vector<double> d;
    long t = 0;

    OptState() = default;
    explicit OptState(std::size_t len) : m(len, 0.0), v(len, 0.0), d(len, 0.0) {}
};

// One OptState per group, aligned with ModelParams order.
inline std::vector<OptState> make_opt_states(const ModelParams& params) {
    std::vector<OptState> states;
    states.reserve(params.groups().size());
    for (const auto& g : params.groups()) {
        states.emplace_back(g.size());
    }
    return states;
}

} // namespace dualopt
