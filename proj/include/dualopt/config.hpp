#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualopt/errors.hpp"
#include "dualopt/model_zoo.hpp"
#include "dualopt/optimizers.hpp"
#include "dualopt/schedules.hpp"
#include "dualopt/verify.hpp"

namespace dualopt {

struct DatasetCfg {
    int samples_per_domain = 2000;
    double shift = 1.0;
    double rotation_angle = 1.0471975511965976; // pi/3 across feature pairs
    double noise_sigma = 1.0;
    double cluster_scale = 1.0;
};

struct SweepCfg {
    // The explored fine-tune grid.
    std::vector<double> iota1_grid = {0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0};
    std::vector<double> gamma_grid = {1.0, 2.0, 4.0};
    int workers = 1;
};

// Full declarative description of one run. Field names match the JSON config
// keys one-for-one.
struct ExperimentConfig {
    std::string mode = "scratch"; // scratch finetune forgetting sweep verify
    ModelSpec model;
    std::string optimizer_base = "sgd_momentum"; // json: optimizer.base
    double beta = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LrSchedule schedule;
    int epochs = 30;
    int batch_size = 64;
    std::uint64_t seed = 1;
    double lambda = 1e-4; // scratch / lagged decay rate
    double iota1 = 0.0;
    double iota2 = 0.0;
    double gamma = 1.0;
    std::string method = "dualopt"; // dualopt full linear l2sp lagged
    double l2sp_alpha = 0.01;
    DatasetCfg dataset;
    int num_seeds = 1; // forgetting
    std::string out_dir = "out";
    std::string pretrained_checkpoint;
    std::string preset; // "" or "large"
    SweepCfg sweep;
    VerifyTrials verify;

    BaseRule base_rule() const {
        if (optimizer_base == "sgd_momentum") return BaseRule::sgd_momentum;
        if (optimizer_base == "adam") return BaseRule::adam;
        throw ConfigError("config: unknown optimizer.base '" + optimizer_base + "'");
    }
};

namespace detail {

inline LrKind parse_lr_kind(const std::string& s) {
    if (s == "constant") return LrKind::constant;
    if (s == "cosine") return LrKind::cosine;
    if (s == "step") return LrKind::step;
    throw ConfigError("config: unknown schedule.kind '" + s + "'");
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "logistic") return ModelKind::logistic;
    if (s == "mlp2") return ModelKind::mlp2;
    throw ConfigError("config: unknown model.kind '" + s + "'");
}

} // namespace detail

// Parses a config document. Mode-dependent defaults fill anything the file
// leaves out: forgetting runs default to Adam with a tuned rollback range,
// everything else to the reference settings (momentum 0.9, decay 1e-4,
// lr 1e-2 for SGD / 1e-4 for Adam fine-tuning).
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::string& mode_hint = "") {
    if (!j.is_object()) throw ConfigError("config: document must be a JSON object");
    ExperimentConfig cfg;

    cfg.mode = j.value("mode", mode_hint.empty() ? std::string("scratch") : mode_hint);
    if (!mode_hint.empty() && j.contains("mode") && j["mode"].get<std::string>() != mode_hint) {
        throw ConfigError("config: mode '" + j["mode"].get<std::string>() +
                          "' does not match the requested subcommand '" + mode_hint + "'");
    }
    const bool finetune_family =
        cfg.mode == "finetune" || cfg.mode == "forgetting" || cfg.mode == "sweep";

    if (j.contains("model")) {
        const auto& m = j["model"];
        cfg.model.kind = detail::parse_model_kind(m.value("kind", std::string("mlp2")));
        cfg.model.features = m.value("features", 20);
        cfg.model.classes = m.value("classes", 5);
        cfg.model.hidden = m.value("hidden", 32);
    }
    if (cfg.mode == "forgetting") cfg.optimizer_base = "adam";
    if (j.contains("optimizer")) {
        const auto& o = j["optimizer"];
        cfg.optimizer_base = o.value("base", cfg.optimizer_base);
        cfg.beta = o.value("beta", cfg.beta);
        cfg.beta1 = o.value("beta1", cfg.beta1);
        cfg.beta2 = o.value("beta2", cfg.beta2);
        cfg.eps = o.value("eps", cfg.eps);
    }

    // learning-rate default depends on optimizer and run family
    double default_lr = 0.01;
    if (cfg.base_rule() == BaseRule::adam) default_lr = finetune_family ? 1e-4 : 1e-2;
    if (cfg.mode == "forgetting") default_lr = 2e-3;
    cfg.schedule.base_lr = default_lr;
    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        cfg.schedule.kind = detail::parse_lr_kind(s.value("kind", std::string("constant")));
        cfg.schedule.base_lr = s.value("base_lr", cfg.schedule.base_lr);
        cfg.schedule.decay_factor = s.value("decay_factor", cfg.schedule.decay_factor);
        cfg.schedule.period = s.value("period", cfg.schedule.period);
    }

    if (j.value("preset", std::string()) == "large") {
        cfg.preset = "large";
        cfg.epochs = 50;
        cfg.batch_size = 128;
    } else if (j.contains("preset") && !j["preset"].get<std::string>().empty()) {
        throw ConfigError("config: unknown preset '" + j["preset"].get<std::string>() + "'");
    }

    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.lambda = j.value("lambda", cfg.lambda);
    if (cfg.mode == "forgetting") {
        cfg.iota1 = 0.01;
        cfg.gamma = 2.0;
    }
    cfg.iota1 = j.value("iota1", cfg.iota1);
    cfg.iota2 = j.value("iota2", cfg.iota2);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.method = j.value("method", cfg.method);
    cfg.l2sp_alpha = j.value("l2sp_alpha", cfg.l2sp_alpha);

    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        cfg.dataset.samples_per_domain = d.value("samples_per_domain", cfg.dataset.samples_per_domain);
        cfg.dataset.shift = d.value("shift", cfg.dataset.shift);
        cfg.dataset.rotation_angle = d.value("rotation_angle", cfg.dataset.rotation_angle);
        cfg.dataset.noise_sigma = d.value("noise_sigma", cfg.dataset.noise_sigma);
        cfg.dataset.cluster_scale = d.value("cluster_scale", cfg.dataset.cluster_scale);
    }
    cfg.num_seeds = j.value("num_seeds", cfg.mode == "forgetting" ? 5 : 1);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.pretrained_checkpoint = j.value("pretrained_checkpoint", cfg.pretrained_checkpoint);

    if (j.contains("sweep")) {
        const auto& s = j["sweep"];
        if (s.contains("iota1_grid")) cfg.sweep.iota1_grid = s["iota1_grid"].get<std::vector<double>>();
        if (s.contains("gamma_grid")) cfg.sweep.gamma_grid = s["gamma_grid"].get<std::vector<double>>();
        cfg.sweep.workers = s.value("workers", cfg.sweep.workers);
    }
    if (j.contains("verify")) {
        const auto& v = j["verify"];
        cfg.verify.contraction = v.value("contraction", cfg.verify.contraction);
        cfg.verify.lagged_growth = v.value("lagged_growth", cfg.verify.lagged_growth);
        cfg.verify.discrepancy_steps = v.value("discrepancy_steps", cfg.verify.discrepancy_steps);
        cfg.verify.closed_form = v.value("closed_form", cfg.verify.closed_form);
        cfg.verify.rollback_steps = v.value("rollback_steps", cfg.verify.rollback_steps);
        cfg.verify.oracle_trajectories = v.value("oracle_trajectories", cfg.verify.oracle_trajectories);
        cfg.verify.oracle_steps = v.value("oracle_steps", cfg.verify.oracle_steps);
        cfg.verify.reduction_steps = v.value("reduction_steps", cfg.verify.reduction_steps);
        cfg.verify.gradient_pairs = v.value("gradient_pairs", cfg.verify.gradient_pairs);
    }
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& mode_hint = "") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("config: invalid JSON: ") + e.what());
    }
    try {
        return parse_config(j, mode_hint);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("config: wrong field type: ") + e.what());
    }
}

inline ExperimentConfig load_config_file(const std::string& path, const std::string& mode_hint = "") {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), mode_hint);
}

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.mode != "scratch" && cfg.mode != "finetune" && cfg.mode != "forgetting" &&
        cfg.mode != "sweep" && cfg.mode != "verify") {
        throw ConfigError("config: unknown mode '" + cfg.mode + "'");
    }
    if (cfg.out_dir.empty()) throw ConfigError("config: out_dir must be non-empty");
    if (cfg.mode == "verify") {
        cfg.verify.validate();
        return;
    }
    cfg.model.validate();
    (void)cfg.base_rule();
    if (!(cfg.beta >= 0.0 && cfg.beta < 1.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
        !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) || !(cfg.eps > 0.0)) {
        throw DomainError("config: momentum factors must be in [0,1) and eps > 0");
    }
    cfg.schedule.validate();
    if (cfg.epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (cfg.dataset.samples_per_domain < 1) {
        throw ConfigError("config: dataset.samples_per_domain must be >= 1");
    }
    if (cfg.num_seeds < 1) throw ConfigError("config: num_seeds must be >= 1");

    const int n = cfg.model.kind == ModelKind::logistic ? 2 : 4;
    if (cfg.mode == "scratch") {
        if (cfg.method != "dualopt" && cfg.method != "full" && cfg.method != "lagged") {
            throw ConfigError("config: scratch method must be dualopt, full or lagged");
        }
        if (cfg.method != "full") (void)make_scratch_coeffs(cfg.lambda, n);
    } else {
        if (cfg.method != "dualopt" && cfg.method != "full" && cfg.method != "linear" &&
            cfg.method != "l2sp") {
            throw ConfigError("config: fine-tune method must be dualopt, full, linear or l2sp");
        }
        if ((cfg.method == "dualopt" && cfg.mode != "sweep") || cfg.mode == "forgetting") {
            const auto coeffs =
                make_finetune_coeffs(cfg.iota1, cfg.iota2, cfg.gamma, n, cfg.schedule.base_lr);
            validate_effective_penalty(cfg.schedule, coeffs);
        }
        if (cfg.method == "l2sp" && !(cfg.l2sp_alpha >= 0.0)) {
            throw DomainError("config: l2sp_alpha must be >= 0");
        }
    }
    if (cfg.mode == "finetune" && cfg.pretrained_checkpoint.empty()) {
        throw ConfigError("config: finetune mode requires pretrained_checkpoint");
    }
    if (cfg.mode == "sweep") {
        if (cfg.sweep.iota1_grid.empty() || cfg.sweep.gamma_grid.empty()) {
            throw ConfigError("config: sweep grids must be non-empty");
        }
        if (cfg.sweep.workers < 1) throw ConfigError("config: sweep.workers must be >= 1");
        for (double i1 : cfg.sweep.iota1_grid) {
            for (double gm : cfg.sweep.gamma_grid) {
                const auto coeffs = make_finetune_coeffs(i1, cfg.iota2, gm, n, cfg.schedule.base_lr);
                validate_effective_penalty(cfg.schedule, coeffs);
            }
        }
    }
}

// Rewrites the config so that semantically identical settings collapse onto
// one representative: a zero-strength dualopt/lagged run is the plain base
// optimizer, and fields that cannot influence the run are reset to defaults.
inline ExperimentConfig canonicalize(ExperimentConfig cfg) {
    const bool finetune_family =
        cfg.mode == "finetune" || cfg.mode == "forgetting" || cfg.mode == "sweep";
    if (cfg.mode == "scratch") {
        if ((cfg.method == "dualopt" || cfg.method == "lagged") && cfg.lambda == 0.0) {
            cfg.method = "full";
        }
        if (cfg.method == "full") cfg.lambda = 0.0;
        cfg.iota1 = cfg.iota2 = 0.0;
        cfg.gamma = 1.0;
        cfg.l2sp_alpha = 0.0;
    } else if (finetune_family) {
        if (cfg.method == "dualopt" && cfg.iota1 == 0.0 && cfg.iota2 == 0.0) cfg.method = "full";
        if (cfg.method == "full" || cfg.method == "linear") {
            cfg.iota1 = cfg.iota2 = 0.0;
            cfg.gamma = 1.0;
            cfg.l2sp_alpha = 0.0;
        }
        if (cfg.method == "l2sp") {
            cfg.iota1 = cfg.iota2 = 0.0;
            cfg.gamma = 1.0;
        }
        cfg.lambda = 0.0;
    }
    if (cfg.model.kind == ModelKind::logistic) cfg.model.hidden = 0;
    if (cfg.schedule.kind != LrKind::step) {
        cfg.schedule.decay_factor = 0.0;
        cfg.schedule.period = 0;
    }
    if (cfg.base_rule() == BaseRule::sgd_momentum) {
        cfg.beta1 = cfg.beta2 = cfg.eps = 0.0;
    } else {
        cfg.beta = 0.0;
    }
    cfg.preset.clear();
    return cfg;
}

// Canonical JSON used for hashing and for the summary documents; excludes
// seed and file-system locations.
inline nlohmann::ordered_json canonical_config_json(const ExperimentConfig& raw) {
    const ExperimentConfig cfg = canonicalize(raw);
    nlohmann::ordered_json j;
    j["mode"] = cfg.mode;
    j["model"] = {{"kind", to_string(cfg.model.kind)},
                  {"features", cfg.model.features},
                  {"classes", cfg.model.classes},
                  {"hidden", cfg.model.hidden}};
    j["optimizer"] = {{"base", cfg.optimizer_base},
                      {"beta", cfg.beta},
                      {"beta1", cfg.beta1},
                      {"beta2", cfg.beta2},
                      {"eps", cfg.eps}};
    j["schedule"] = {{"kind", to_string(cfg.schedule.kind)},
                     {"base_lr", cfg.schedule.base_lr},
                     {"decay_factor", cfg.schedule.decay_factor},
                     {"period", cfg.schedule.period}};
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["lambda"] = cfg.lambda;
    j["iota1"] = cfg.iota1;
    j["iota2"] = cfg.iota2;
    j["gamma"] = cfg.gamma;
    j["method"] = cfg.method;
    j["l2sp_alpha"] = cfg.l2sp_alpha;
    j["dataset"] = {{"samples_per_domain", cfg.dataset.samples_per_domain},
                    {"shift", cfg.dataset.shift},
                    {"rotation_angle", cfg.dataset.rotation_angle},
                    {"noise_sigma", cfg.dataset.noise_sigma},
                    {"cluster_scale", cfg.dataset.cluster_scale}};
    if (cfg.mode == "forgetting") j["num_seeds"] = cfg.num_seeds;
    if (cfg.mode == "sweep") {
        j["sweep"] = {{"iota1_grid", cfg.sweep.iota1_grid}, {"gamma_grid", cfg.sweep.gamma_grid}};
    }
    return j;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::string canon = canonical_config_json(cfg).dump();
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canon)));
    return buf;
}

inline std::string make_run_id(const ExperimentConfig& cfg) {
    return cfg.mode + "-" + config_hash(cfg).substr(0, 8) + "-s" + std::to_string(cfg.seed);
}

} // namespace dualopt
