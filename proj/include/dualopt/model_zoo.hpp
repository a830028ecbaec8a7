#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dualopt/checkpoint.hpp"
#include "dualopt/errors.hpp"
#include "dualopt/param_state.hpp"
#include "dualopt/rng.hpp"

namespace dualopt {

// Row-major feature matrix plus class labels. domain_tag distinguishes the
// two folds of a forgetting experiment.
struct Dataset {
    int n_features = 0;
    std::vector<double> features; // rows * n_features
    std::vector<int> labels;
    std::string domain_tag;

    int n_rows() const { return static_cast<int>(labels.size()); }
    const double* row(int r) const {
        return features.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(n_features);
    }

    void validate() const {
        if (n_features < 1) throw ConfigError("Dataset: n_features must be >= 1");
        if (features.size() != labels.size() * static_cast<std::size_t>(n_features)) {
            throw ShapeError("Dataset: feature matrix size does not match label count");
        }
        if (!all_finite(features)) throw NumericError("Dataset: non-finite feature value");
        for (int y : labels) {
            if (y < 0) throw ConfigError("Dataset: negative class label");
        }
    }
};

enum class ModelKind { logistic, mlp2 };

inline const char* to_string(ModelKind k) {
    return k == ModelKind::logistic ? "logistic" : "mlp2";
}

// Two desk-scale classifiers with hand-derived gradients. The mlp2 hidden
// activation is tanh: smooth everywhere, so central differences check it
// cleanly.
struct ModelSpec {
    ModelKind kind = ModelKind::mlp2;
    int features = 20;
    int classes = 5;
    int hidden = 32; // mlp2 only

    void validate() const {
        if (features < 1) throw ConfigError("ModelSpec: features must be >= 1");
        if (classes < 2) throw ConfigError("ModelSpec: classes must be >= 2");
        if (kind == ModelKind::mlp2 && hidden < 1) {
            throw ConfigError("ModelSpec: hidden must be >= 1");
        }
    }
};

// Group layout is registration order, shallow to deep; the bias of the output
// layer is the deepest group.
inline ModelParams make_zero_params(const ModelSpec& spec) {
    spec.validate();
    std::vector<ParamGroup> groups;
    const std::size_t d = static_cast<std::size_t>(spec.features);
    const std::size_t c = static_cast<std::size_t>(spec.classes);
    if (spec.kind == ModelKind::logistic) {
        groups.emplace_back("linear.weight", 1, std::vector<double>(d * c, 0.0));
        groups.emplace_back("linear.bias", 2, std::vector<double>(c, 0.0));
    } else {
        const std::size_t h = static_cast<std::size_t>(spec.hidden);
        groups.emplace_back("fc1.weight", 1, std::vector<double>(d * h, 0.0));
        groups.emplace_back("fc1.bias", 2, std::vector<double>(h, 0.0));
        groups.emplace_back("fc2.weight", 3, std::vector<double>(h * c, 0.0));
        groups.emplace_back("fc2.bias", 4, std::vector<double>(c, 0.0));
    }
    return ModelParams(std::move(groups));
}

// Weights ~ N(0, 1/fan_in), biases zero.
inline ModelParams init_params(const ModelSpec& spec, SplitMix64& rng) {
    ModelParams params = make_zero_params(spec);
    for (auto& g : params.groups()) {
        if (g.name.find("weight") == std::string::npos) continue;
        const int fan_in = (g.name == "fc2.weight") ? spec.hidden : spec.features;
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& w : g.values) {
            w = scale * rng.normal();
        }
    }
    return params;
}

namespace detail {

inline void check_model_shapes(const ModelSpec& spec, const ModelParams& params,
                               const Dataset& data) {
    spec.validate();
    data.validate();
    if (data.n_features != spec.features) {
        throw ShapeError("model/dataset feature count mismatch: model expects " +
                         std::to_string(spec.features) + ", dataset has " +
                         std::to_string(data.n_features));
    }
    const int expected_groups = spec.kind == ModelKind::logistic ? 2 : 4;
    if (params.n_layers() != expected_groups) {
        throw ShapeError("model has " + std::to_string(params.n_layers()) +
                         " groups, expected " + std::to_string(expected_groups));
    }
    for (int y : data.labels) {
        if (y >= spec.classes) throw ConfigError("Dataset: label outside 0..classes-1");
    }
}

// Numerically stable log-softmax pieces for one row: returns the log of the
// normalizer and leaves exp(z - zmax) in probs (unnormalized).
inline double row_softmax(const std::vector<double>& logits, std::vector<double>& probs) {
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    probs.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        probs[j] = std::exp(logits[j] - zmax);
        sum += probs[j];
    }
    for (auto& p : probs) p /= sum;
    return std::log(sum) + zmax;
}

} // namespace detail

// Class probabilities for one sample.
inline std::vector<double> predict_proba(const ModelSpec& spec, const ModelParams& params,
                                         const double* x) {
    const int d = spec.features;
    const int c = spec.classes;
    std::vector<double> logits(static_cast<std::size_t>(c), 0.0);
    if (spec.kind == ModelKind::logistic) {
        const auto& w = params.group(0).values;
        const auto& b = params.group(1).values;
        for (int j = 0; j < c; ++j) {
            double z = b[static_cast<std::size_t>(j)];
            for (int i = 0; i < d; ++i) {
                z += x[i] * w[static_cast<std::size_t>(i) * c + j];
            }
            logits[static_cast<std::size_t>(j)] = z;
        }
    } else {
        const int h = spec.hidden;
        const auto& w1 = params.group(0).values;
        const auto& b1 = params.group(1).values;
        const auto& w2 = params.group(2).values;
        const auto& b2 = params.group(3).values;
        std::vector<double> a1(static_cast<std::size_t>(h));
        for (int j = 0; j < h; ++j) {
            double z = b1[static_cast<std::size_t>(j)];
            for (int i = 0; i < d; ++i) {
                z += x[i] * w1[static_cast<std::size_t>(i) * h + j];
            }
            a1[static_cast<std::size_t>(j)] = std::tanh(z);
        }
        for (int j = 0; j < c; ++j) {
            double z = b2[static_cast<std::size_t>(j)];
            for (int i = 0; i < h; ++i) {
                z += a1[static_cast<std::size_t>(i)] * w2[static_cast<std::size_t>(i) * c + j];
            }
            logits[static_cast<std::size_t>(j)] = z;
        }
    }
    std::vector<double> probs;
    detail::row_softmax(logits, probs);
    return probs;
}

// Mean cross-entropy over the given rows, no gradient side effects.
inline double forward_loss(const ModelSpec& spec, const ModelParams& params, const Dataset& data,
                           const std::vector<int>& batch) {
    detail::check_model_shapes(spec, params, data);
    if (batch.empty()) throw ConfigError("forward_loss: empty batch");
    double loss = 0.0;
    std::vector<double> probs;
    for (int r : batch) {
        const auto p = predict_proba(spec, params, data.row(r));
        const double py = p[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(r)])];
        loss += -std::log(std::max(py, 1e-300));
    }
    return loss / static_cast<double>(batch.size());
}

// Mean cross-entropy plus exact analytic gradients written into the groups'
// grad buffers (overwriting previous contents).
inline double forward_backward(const ModelSpec& spec, ModelParams& params, const Dataset& data,
                               const std::vector<int>& batch) {
    detail::check_model_shapes(spec, params, data);
    if (batch.empty()) throw ConfigError("forward_backward: empty batch");
    params.zero_grad();
    const int d = spec.features;
    const int c = spec.classes;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;

    if (spec.kind == ModelKind::logistic) {
        const auto& w = params.group(0).values;
        auto& gw = params.group(0).grad;
        auto& gb = params.group(1).grad;
        const auto& b = params.group(1).values;
        std::vector<double> logits(static_cast<std::size_t>(c));
        std::vector<double> probs;
        for (int r : batch) {
            const double* x = data.row(r);
            for (int j = 0; j < c; ++j) {
                double z = b[static_cast<std::size_t>(j)];
                for (int i = 0; i < d; ++i) {
                    z += x[i] * w[static_cast<std::size_t>(i) * c + j];
                }
                logits[static_cast<std::size_t>(j)] = z;
            }
            const double log_norm = detail::row_softmax(logits, probs);
            const int y = data.labels[static_cast<std::size_t>(r)];
            loss += log_norm - logits[static_cast<std::size_t>(y)];
            probs[static_cast<std::size_t>(y)] -= 1.0; // now dL/dlogits (per sample)
            for (int j = 0; j < c; ++j) {
                const double dl = probs[static_cast<std::size_t>(j)] * inv_b;
                gb[static_cast<std::size_t>(j)] += dl;
                for (int i = 0; i < d; ++i) {
                    gw[static_cast<std::size_t>(i) * c + j] += x[i] * dl;
                }
            }
        }
        return loss * inv_b;
    }

    const int h = spec.hidden;
    const auto& w1 = params.group(0).values;
    const auto& b1 = params.group(1).values;
    const auto& w2 = params.group(2).values;
    const auto& b2 = params.group(3).values;
    auto& gw1 = params.group(0).grad;
    auto& gb1 = params.group(1).grad;
    auto& gw2 = params.group(2).grad;
    auto& gb2 = params.group(3).grad;
    std::vector<double> a1(static_cast<std::size_t>(h));
    std::vector<double> logits(static_cast<std::size_t>(c));
    std::vector<double> probs;
    std::vector<double> dz1(static_cast<std::size_t>(h));
    for (int r : batch) {
        const double* x = data.row(r);
        for (int j = 0; j < h; ++j) {
            double z = b1[static_cast<std::size_t>(j)];
            for (int i = 0; i < d; ++i) {
                z += x[i] * w1[static_cast<std::size_t>(i) * h + j];
            }
            a1[static_cast<std::size_t>(j)] = std::tanh(z);
        }
        for (int j = 0; j < c; ++j) {
            double z = b2[static_cast<std::size_t>(j)];
            for (int i = 0; i < h; ++i) {
                z += a1[static_cast<std::size_t>(i)] * w2[static_cast<std::size_t>(i) * c + j];
            }
            logits[static_cast<std::size_t>(j)] = z;
        }
        const double log_norm = detail::row_softmax(logits, probs);
        const int y = data.labels[static_cast<std::size_t>(r)];
        loss += log_norm - logits[static_cast<std::size_t>(y)];
        probs[static_cast<std::size_t>(y)] -= 1.0;

        for (int j = 0; j < c; ++j) {
            const double dl = probs[static_cast<std::size_t>(j)] * inv_b;
            gb2[static_cast<std::size_t>(j)] += dl;
            for (int i = 0; i < h; ++i) {
                gw2[static_cast<std::size_t>(i) * c + j] += a1[static_cast<std::size_t>(i)] * dl;
            }
        }
        for (int i = 0; i < h; ++i) {
            double da = 0.0;
            for (int j = 0; j < c; ++j) {
                da += probs[static_cast<std::size_t>(j)] * w2[static_cast<std::size_t>(i) * c + j];
            }
            const double a = a1[static_cast<std::size_t>(i)];
            dz1[static_cast<std::size_t>(i)] = da * (1.0 - a * a) * inv_b;
        }
        for (int j = 0; j < h; ++j) {
            const double dz = dz1[static_cast<std::size_t>(j)];
            gb1[static_cast<std::size_t>(j)] += dz;
            for (int i = 0; i < d; ++i) {
                gw1[static_cast<std::size_t>(i) * h + j] += x[i] * dz;
            }
        }
    }
    return loss * inv_b;
}

// Central difference of a scalar function; exact for quadratics up to
// roundoff.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    if (!(h > 0.0)) throw DomainError("central_diff: h must be > 0");
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Central-difference gradient of the batch loss per coordinate, returned as
// one vector per group. Independent of the analytic backward pass.
inline std::vector<std::vector<double>> finite_diff_grad(const ModelSpec& spec,
                                                         const ModelParams& params,
                                                         const Dataset& data,
                                                         const std::vector<int>& batch, double h) {
    if (!(h > 0.0)) throw DomainError("finite_diff_grad: h must be > 0");
    ModelParams work = params;
    std::vector<std::vector<double>> grads;
    grads.reserve(work.groups().size());
    for (std::size_t gi = 0; gi < work.groups().size(); ++gi) {
        auto& vals = work.group(gi).values;
        std::vector<double> g(vals.size(), 0.0);
        for (std::size_t k = 0; k < vals.size(); ++k) {
            const double orig = vals[k];
            vals[k] = orig + h;
            const double up = forward_loss(spec, work, data, batch);
            vals[k] = orig - h;
            const double down = forward_loss(spec, work, data, batch);
            vals[k] = orig;
            g[k] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Fraction of argmax-correct predictions; ties resolve to the lowest class
// index.
inline double accuracy(const ModelSpec& spec, const ModelParams& params, const Dataset& data) {
    detail::check_model_shapes(spec, params, data);
    if (data.n_rows() == 0) throw ConfigError("accuracy: empty dataset");
    int correct = 0;
    for (int r = 0; r < data.n_rows(); ++r) {
        const auto p = predict_proba(spec, params, data.row(r));
        int best = 0;
        for (int j = 1; j < spec.classes; ++j) {
            if (p[static_cast<std::size_t>(j)] > p[static_cast<std::size_t>(best)]) best = j;
        }
        if (best == data.labels[static_cast<std::size_t>(r)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.n_rows());
}

// Two C-class Gaussian-cluster datasets with shared class geometry. Domain B
// re-draws from the same clusters, then rotates consecutive feature pairs by
// rotation_angle and translates every feature by shift, so the gap between
// the domains is a dial, not an accident.
inline std::pair<Dataset, Dataset> gen_two_domain_tasks(std::uint64_t seed, int d, int c,
                                                        int samples_per_domain, double shift,
                                                        double rotation_angle,
                                                        double noise_sigma = 0.6,
                                                        double cluster_scale = 2.0) {
    if (d < 2) throw ConfigError("gen_two_domain_tasks: need d >= 2");
    if (c < 2) throw ConfigError("gen_two_domain_tasks: need C >= 2");
    if (samples_per_domain < 1) throw ConfigError("gen_two_domain_tasks: need samples >= 1");

    SplitMix64 rng(seed);
    std::vector<double> means(static_cast<std::size_t>(c) * static_cast<std::size_t>(d));
    for (auto& m : means) m = cluster_scale * rng.normal();

    const double cs = std::cos(rotation_angle);
    const double sn = std::sin(rotation_angle);

    auto draw_domain = [&](bool transform, const char* tag) {
        Dataset ds;
        ds.n_features = d;
        ds.domain_tag = tag;
        ds.features.resize(static_cast<std::size_t>(samples_per_domain) *
                           static_cast<std::size_t>(d));
        ds.labels.resize(static_cast<std::size_t>(samples_per_domain));
        std::vector<double> x(static_cast<std::size_t>(d));
        for (int s = 0; s < samples_per_domain; ++s) {
            const int label = s % c;
            ds.labels[static_cast<std::size_t>(s)] = label;
            const double* mean = means.data() + static_cast<std::size_t>(label) * d;
            for (int k = 0; k < d; ++k) {
                x[static_cast<std::size_t>(k)] = mean[k] + noise_sigma * rng.normal();
            }
            if (transform) {
                for (int k = 0; k + 1 < d; k += 2) {
                    const double a = x[static_cast<std::size_t>(k)];
                    const double b = x[static_cast<std::size_t>(k) + 1];
                    x[static_cast<std::size_t>(k)] = a * cs - b * sn;
                    x[static_cast<std::size_t>(k) + 1] = a * sn + b * cs;
                }
                for (auto& xi : x) xi += shift;
            }
            std::copy(x.begin(), x.end(),
                      ds.features.begin() + static_cast<std::size_t>(s) * d);
        }
        return ds;
    };

    Dataset a = draw_domain(false, "A");
    Dataset b = draw_domain(true, "B");
    return {std::move(a), std::move(b)};
}

// CSV export with header f0..f{d-1},label,domain.
inline void save_dataset_csv(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("save_dataset_csv: cannot open '" + path + "'");
    for (int k = 0; k < ds.n_features; ++k) {
        f << 'f' << k << ',';
    }
    f << "label,domain\n";
    for (int r = 0; r < ds.n_rows(); ++r) {
        const double* x = ds.row(r);
        for (int k = 0; k < ds.n_features; ++k) {
            f << format_double(x[k]) << ',';
        }
        f << ds.labels[static_cast<std::size_t>(r)] << ',' << ds.domain_tag << '\n';
    }
}

inline Dataset load_dataset_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("load_dataset_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw ParseError("dataset csv: empty file");
    int d = 0;
    {
        std::stringstream ss(line);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() < 3 || cols[cols.size() - 2] != "label" || cols.back() != "domain") {
            throw ParseError("dataset csv: header must end with label,domain");
        }
        d = static_cast<int>(cols.size()) - 2;
    }
    Dataset ds;
    ds.n_features = d;
    int row = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (static_cast<int>(cols.size()) != d + 2) {
            throw ParseError("dataset csv: row " + std::to_string(row) + " has " +
                             std::to_string(cols.size()) + " columns, expected " +
                             std::to_string(d + 2));
        }
        try {
            for (int k = 0; k < d; ++k) {
                ds.features.push_back(std::stod(cols[static_cast<std::size_t>(k)]));
            }
            ds.labels.push_back(std::stoi(cols[static_cast<std::size_t>(d)]));
        } catch (const std::exception&) {
            throw ParseError("dataset csv: non-numeric value in row " + std::to_string(row));
        }
        if (ds.domain_tag.empty()) ds.domain_tag = cols.back();
        ++row;
    }
    ds.validate();
    return ds;
}

} // namespace dualopt
