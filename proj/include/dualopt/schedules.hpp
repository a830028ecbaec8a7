#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dualopt/errors.hpp"

namespace dualopt {

enum class LrKind { constant, cosine, step };

inline const char* to_string(LrKind k) {
    switch (k) {
        case LrKind::constant: return "constant";
        case LrKind::cosine: return "cosine";
        case LrKind::step: return "step";
    }
    return "?";
}

// Learning-rate schedule over a fixed horizon of total_steps optimizer steps.
struct LrSchedule {
    LrKind kind = LrKind::constant;
    double base_lr = 0.01;
    long total_steps = 1;
    double decay_factor = 0.5; // step kind only
    long period = 1;           // step kind only

    void validate() const {
        if (!(base_lr > 0.0)) throw DomainError("LrSchedule: base_lr must be > 0");
        if (total_steps < 1) throw DomainError("LrSchedule: total_steps must be >= 1");
        if (kind == LrKind::step) {
            if (!(decay_factor > 0.0 && decay_factor < 1.0)) {
                throw DomainError("LrSchedule: decay_factor must be in (0,1)");
            }
            if (period < 1) throw DomainError("LrSchedule: period must be >= 1");
        }
    }

    // All three kinds start at base_lr and never exceed it.
    double max_lr() const { return base_lr; }
};

inline double lr_at(const LrSchedule& s, long t) {
    s.validate();
    if (t < 0 || t > s.total_steps) {
        throw DomainError("lr_at: step " + std::to_string(t) + " outside 0.." +
                          std::to_string(s.total_steps));
    }
    switch (s.kind) {
        case LrKind::constant:
            return s.base_lr;
        case LrKind::cosine: {
            const double frac = static_cast<double>(t) / static_cast<double>(s.total_steps);
            const double lr = s.base_lr * (1.0 + std::cos(3.14159265358979323846 * frac)) / 2.0;
            return std::max(lr, s.base_lr * 1e-3);
        }
        case LrKind::step:
            return s.base_lr * std::pow(s.decay_factor, static_cast<double>(t / s.period));
    }
    throw DomainError("lr_at: unknown schedule kind");
}

// lambda_i = lambda * i / n: decay grows linearly with depth, the head gets
// the full base rate.
inline double scratch_coeff(double lambda, int i, int n) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw DomainError("scratch_coeff: lambda must be in [0,1]");
    }
    if (n < 1 || i < 1 || i > n) {
        throw DomainError("scratch_coeff: layer index outside 1..n");
    }
    // ratio first: i/n is exactly 1 at the head, so lambda_n == lambda
    return lambda * (static_cast<double>(i) / static_cast<double>(n));
}

// Rollback level f(i) = iota2 + (1 - i/n)^gamma * (iota1 - iota2), scaled by
// 1/eta so the weight update can multiply by the scheduled learning rate.
inline double finetune_coeff(double iota1, double iota2, double gamma, int i, int n, double eta) {
    if (!(iota2 >= 0.0 && iota1 <= 1.0 && iota1 >= iota2)) {
        throw DomainError("finetune_coeff: need 0 <= iota2 <= iota1 <= 1");
    }
    if (!(gamma > 0.0)) throw DomainError("finetune_coeff: gamma must be > 0");
    if (!(eta > 0.0)) throw DomainError("finetune_coeff: eta must be > 0");
    if (n < 1 || i < 1 || i > n) {
        throw DomainError("finetune_coeff: layer index outside 1..n");
    }
    const double depth = 1.0 - static_cast<double>(i) / static_cast<double>(n);
    return (iota2 + std::pow(depth, gamma) * (iota1 - iota2)) / eta;
}

enum class CoeffMode { scratch, finetune };

// Per-layer coefficient table for one model, plus the hyperparameters it was
// built from.
struct LayerCoefficients {
    CoeffMode mode = CoeffMode::scratch;
    std::vector<double> per_layer; // per_layer[i-1] is lambda_i
    double lambda = 0.0;           // scratch
    double iota1 = 0.0, iota2 = 0.0, gamma = 1.0, eta = 1.0; // finetune

    double at(int layer_index) const {
        if (layer_index < 1 || layer_index > static_cast<int>(per_layer.size())) {
            throw DomainError("LayerCoefficients: layer index outside table");
        }
        return per_layer[static_cast<std::size_t>(layer_index) - 1];
    }
    int n_layers() const { return static_cast<int>(per_layer.size()); }
};

inline LayerCoefficients make_scratch_coeffs(double lambda, int n) {
    LayerCoefficients c;
    c.mode = CoeffMode::scratch;
    c.lambda = lambda;
    c.per_layer.reserve(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) {
        c.per_layer.push_back(scratch_coeff(lambda, i, n));
    }
    return c;
}

inline LayerCoefficients make_finetune_coeffs(double iota1, double iota2, double gamma, int n,
                                              double eta) {
    LayerCoefficients c;
    c.mode = CoeffMode::finetune;
    c.iota1 = iota1;
    c.iota2 = iota2;
    c.gamma = gamma;
    c.eta = eta;
    c.per_layer.reserve(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) {
        c.per_layer.push_back(finetune_coeff(iota1, iota2, gamma, i, n, eta));
    }
    return c;
}

// The weight update multiplies the rollback term by eta_t * lambda_i; the
// contraction argument needs that product in [0, 1) for every step of the
// run, so configs that can violate it are rejected up front using the
// schedule's peak learning rate.
inline void validate_effective_penalty(const LrSchedule& schedule, const LayerCoefficients& c) {
    if (c.mode != CoeffMode::finetune) return;
    const double peak = schedule.max_lr();
    for (int i = 1; i <= c.n_layers(); ++i) {
        const double eff = peak * c.at(i);
        if (!(eff >= 0.0 && eff < 1.0)) {
            throw DomainError("effective penalty eta_t*lambda_i = " + std::to_string(eff) +
                              " at layer " + std::to_string(i) +
                              " is outside [0,1); lower iota1/iota2 or the learning rate");
        }
    }
}

} // namespace dualopt
