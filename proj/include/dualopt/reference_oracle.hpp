#pragma once

// Scalar transcriptions of every update rule, written loop-free per step and
// sharing no code with the vectorized optimizers. These are the ground truth
// for the property suites; keep them boring.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dualopt/errors.hpp"
#include "dualopt/rng.hpp"

namespace dualopt::oracle {

struct ScalarState {
    double theta = 0.0;
    double theta0 = 0.0;
    double m = 0.0;
    double v = 0.0;
    double d = 0.0;
    long t = 0;
};

// theta' = (theta - eta*g) * (1 - lambda_i)
inline double oracle_scratch(double theta, double g, double eta, double lambda_i) {
    const double updated = theta - eta * g;
    return updated - lambda_i * updated;
}

inline ScalarState oracle_sgdm(ScalarState s, double g, double eta, double beta) {
    s.t += 1;
    s.m = beta * s.m + (1.0 - beta) * g;
    s.theta = s.theta - eta * s.m;
    return s;
}

inline ScalarState oracle_adam(ScalarState s, double g, double eta, double beta1, double beta2,
                               double eps) {
    s.t += 1;
    s.m = beta1 * s.m + (1.0 - beta1) * g;
    s.v = beta2 * s.v + (1.0 - beta2) * g * g;
    const double m_hat = s.m / (1.0 - std::pow(beta1, static_cast<double>(s.t)));
    const double v_hat = s.v / (1.0 - std::pow(beta2, static_cast<double>(s.t)));
    s.theta = s.theta - eta * (m_hat / (std::sqrt(v_hat) + eps));
    return s;
}

inline ScalarState oracle_lagged_sgdm(ScalarState s, double g, double eta, double beta,
                                      double lambda) {
    s.t += 1;
    s.m = beta * s.m + (1.0 - beta) * g;
    s.theta = s.theta - eta * s.m - lambda * s.theta;
    return s;
}

inline ScalarState oracle_lagged_adam(ScalarState s, double g, double eta, double beta1,
                                      double beta2, double eps, double lambda) {
    s.t += 1;
    s.m = beta1 * s.m + (1.0 - beta1) * g;
    s.v = beta2 * s.v + (1.0 - beta2) * g * g;
    const double m_hat = s.m / (1.0 - std::pow(beta1, static_cast<double>(s.t)));
    const double v_hat = s.v / (1.0 - std::pow(beta2, static_cast<double>(s.t)));
    s.theta = s.theta - eta * (m_hat / (std::sqrt(v_hat) + eps)) - lambda * s.theta;
    return s;
}

inline ScalarState oracle_scratch_sgdm(ScalarState s, double g, double eta, double beta,
                                       double lambda_i) {
    s.t += 1;
    s.m = beta * s.m + (1.0 - beta) * g;
    const double updated = s.theta - eta * s.m;
    s.theta = updated - lambda_i * updated;
    return s;
}

inline ScalarState oracle_scratch_adam(ScalarState s, double g, double eta, double beta1,
                                       double beta2, double eps, double lambda_i) {
    s.t += 1;
    s.m = beta1 * s.m + (1.0 - beta1) * g;
    s.v = beta2 * s.v + (1.0 - beta2) * g * g;
    const double m_hat = s.m / (1.0 - std::pow(beta1, static_cast<double>(s.t)));
    const double v_hat = s.v / (1.0 - std::pow(beta2, static_cast<double>(s.t)));
    const double updated = s.theta - eta * (m_hat / (std::sqrt(v_hat) + eps));
    s.theta = updated - lambda_i * updated;
    return s;
}

// The three assignments of the momentum fine-tune rule, in order: momentum,
// weight, discrepancy.
inline ScalarState oracle_finetune_sgdm(ScalarState s, double g, double eta, double beta,
                                        double lambda_i) {
    s.t += 1;
    s.m = beta * s.m + (1.0 - beta) * g;
    const double a = eta * lambda_i;
    s.theta = s.theta - a * s.d - (1.0 - a) * (eta * s.m);
    s.d = (1.0 - a) * (s.d - eta * s.m);
    return s;
}

inline ScalarState oracle_finetune_adam(ScalarState s, double g, double eta, double beta1,
                                        double beta2, double eps, double lambda_i) {
    s.t += 1;
    s.m = beta1 * s.m + (1.0 - beta1) * g;
    s.v = beta2 * s.v + (1.0 - beta2) * g * g;
    const double m_hat = s.m / (1.0 - std::pow(beta1, static_cast<double>(s.t)));
    const double v_hat = s.v / (1.0 - std::pow(beta2, static_cast<double>(s.t)));
    const double u = m_hat / (std::sqrt(v_hat) + eps);
    const double a = eta * lambda_i;
    s.theta = s.theta - a * s.d - (1.0 - a) * (eta * u);
    s.d = (1.0 - a) * (s.d - eta * u);
    return s;
}

// A (theta, eta*U, lambda) triple under which lagged decay must grow |theta|.
struct LaggedGrowthWitness {
    double theta = 0.0;
    double eta_u = 0.0;
    double lambda = 0.0;
};

inline bool satisfies_growth_condition(const LaggedGrowthWitness& w) {
    if (w.lambda <= 0.0 || w.theta == 0.0) return false;
    const double threshold = (1.0 - w.lambda / 2.0) * w.theta;
    return w.theta > 0.0 ? (w.eta_u > threshold) : (w.eta_u < threshold);
}

// Generates triples satisfying the growth condition for their sign of theta;
// every triple is re-checked against the inequality before being emitted.
inline std::vector<LaggedGrowthWitness> eq6_witness_generator(std::uint64_t seed, long count) {
    if (count < 1) throw DomainError("eq6_witness_generator: count must be >= 1");
    SplitMix64 rng(seed);
    std::vector<LaggedGrowthWitness> out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<long>(out.size()) < count) {
        LaggedGrowthWitness w;
        w.lambda = rng.uniform(1e-6, 1.0);
        const double magnitude = rng.uniform(1e-3, 5.0);
        w.theta = rng.next_double() < 0.5 ? magnitude : -magnitude;
        const double threshold = (1.0 - w.lambda / 2.0) * w.theta;
        const double margin = rng.uniform(1e-9, 3.0);
        w.eta_u = w.theta > 0.0 ? threshold + margin : threshold - margin;
        if (satisfies_growth_condition(w)) {
            out.push_back(w);
        }
    }
    return out;
}

} // namespace dualopt::oracle
