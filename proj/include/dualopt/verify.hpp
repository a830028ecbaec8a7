#pragma once

// Property suites used by `verify` runs and by the acceptance gate. Every
// suite pits the vectorized optimizers against the scalar oracle or against
// a closed-form identity; trial counts are caller-configurable.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dualopt/errors.hpp"
#include "dualopt/model_zoo.hpp"
#include "dualopt/optimizers.hpp"
#include "dualopt/reference_oracle.hpp"
#include "dualopt/rng.hpp"

namespace dualopt {

// |a - b| measured against the larger magnitude, floored at 1 so identities
// between O(1) quantities are not judged by cancellation noise.
inline bool near_rel(double a, double b, double tol) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) <= tol * scale;
}

struct SuiteResult {
    std::string name;
    long trials = 0;
    long failures = 0;
    std::string detail;

    bool passed() const { return failures == 0; }
};

struct VerifyTrials {
    long contraction = 100000;
    long lagged_growth = 10000;
    long discrepancy_steps = 1000000;
    long closed_form = 100000;
    long rollback_steps = 200;
    long oracle_trajectories = 1000;
    long oracle_steps = 50;
    long reduction_steps = 100;
    long gradient_pairs = 100;

    void validate() const {
        if (contraction < 1 || lagged_growth < 1 || discrepancy_steps < 1 || closed_form < 1 ||
            rollback_steps < 1 || oracle_trajectories < 1 || oracle_steps < 1 ||
            reduction_steps < 1 || gradient_pairs < 1) {
            throw ConfigError("verify: every trial count must be >= 1");
        }
    }
};

// Real-time decay never grows the post-update magnitude for lambda in (0,1].
inline SuiteResult suite_contraction(long trials, std::uint64_t seed) {
    SuiteResult r{"contraction", trials, 0, ""};
    SplitMix64 rng(seed);
    for (long i = 0; i < trials; ++i) {
        const double theta = rng.uniform(-10.0, 10.0);
        const double u = rng.uniform(-10.0, 10.0);
        const double eta = rng.uniform(0.0, 1.0);
        const double lambda = rng.uniform(1e-12, 1.0);
        const double updated = theta - eta * u;
        const double decayed = oracle::oracle_scratch(theta, u, eta, lambda);
        if (!(std::abs(decayed) <= std::abs(updated))) {
            ++r.failures;
            if (r.detail.empty()) {
                r.detail = "theta=" + std::to_string(theta) + " u=" + std::to_string(u) +
                           " eta=" + std::to_string(eta) + " lambda=" + std::to_string(lambda);
            }
        }
    }
    return r;
}

// On every generated witness triple, lagged decay must strictly grow the
// magnitude while real-time decay must not.
inline SuiteResult suite_lagged_growth(long trials, std::uint64_t seed) {
    SuiteResult r{"lagged_growth_witness", trials, 0, ""};
    const auto witnesses = oracle::eq6_witness_generator(seed, trials);
    for (const auto& w : witnesses) {
        const double no_decay = w.theta - w.eta_u;
        const double lagged = w.theta - w.eta_u - w.lambda * w.theta;
        const double realtime = no_decay - w.lambda * no_decay;
        const bool lagged_grows = std::abs(lagged) > std::abs(no_decay);
        const bool realtime_shrinks = std::abs(realtime) <= std::abs(no_decay);
        if (!lagged_grows || !realtime_shrinks) {
            ++r.failures;
            if (r.detail.empty()) {
                r.detail = "theta=" + std::to_string(w.theta) + " eta_u=" + std::to_string(w.eta_u) +
                           " lambda=" + std::to_string(w.lambda);
            }
        }
    }
    return r;
}

namespace detail {

inline bool check_discrepancy(const ParamGroup& g, const OptState& s,
                              const std::vector<double>& theta0, double tol) {
    for (std::size_t k = 0; k < g.values.size(); ++k) {
        const double diff = g.values[k] - theta0[k];
        const double scale = std::max({1.0, std::abs(g.values[k]), std::abs(theta0[k]),
                                       std::abs(s.d[k])});
        if (std::abs(s.d[k] - diff) > tol * scale) return false;
    }
    return true;
}

} // namespace detail

// d == theta - theta_0 after every step of both fine-tune rules, starting
// from theta = theta_0 and d = 0 as the algorithms initialize.
inline SuiteResult suite_discrepancy_identity(long total_steps, std::uint64_t seed) {
    SuiteResult r{"discrepancy_identity", total_steps, 0, ""};
    SplitMix64 rng(seed);
    const long traj_len = 50;
    long done = 0;
    bool use_adam = false;
    while (done < total_steps) {
        const std::size_t len = 2;
        std::vector<double> theta0(len);
        for (auto& x : theta0) x = rng.uniform(-3.0, 3.0);
        ParamGroup g("g", 1, theta0);
        OptState s(len);
        PretrainedSnapshot snap;
        {
            ModelParams mp({g});
            snap = snapshot(mp);
        }
        const double eta = rng.uniform(1e-3, 0.3);
        const double lam = rng.uniform(0.0, 0.9) / eta;
        const long steps = std::min(traj_len, total_steps - done);
        for (long step = 0; step < steps; ++step) {
            for (auto& gr : g.grad) gr = rng.uniform(-2.0, 2.0);
            if (use_adam) {
                step_finetune_adam(g, s, snap, eta, lam);
            } else {
                step_finetune_sgdm(g, s, snap, eta, lam);
            }
            ++done;
            if (!detail::check_discrepancy(g, s, theta0, 1e-12)) {
                ++r.failures;
                if (r.detail.empty()) {
                    r.detail = std::string(use_adam ? "adam" : "sgdm") + " step " +
                               std::to_string(done);
                }
            }
        }
        use_adam = !use_adam;
    }
    r.trials = done;
    return r;
}

// One rollback step from d = theta - theta_0 equals
// (1-a)(theta - eta*m') + a*theta_0 with a = eta*lambda_i.
inline SuiteResult suite_closed_form(long trials, std::uint64_t seed) {
    SuiteResult r{"closed_form_rollback", trials, 0, ""};
    SplitMix64 rng(seed);
    for (long i = 0; i < trials; ++i) {
        const double theta = rng.uniform(-3.0, 3.0);
        const double theta0 = rng.uniform(-3.0, 3.0);
        const double m = rng.uniform(-1.0, 1.0);
        const double grad = rng.uniform(-2.0, 2.0);
        const double beta = rng.uniform(0.0, 0.99);
        const double eta = rng.uniform(1e-3, 0.3);
        const double a = rng.uniform(0.0, 0.95);
        const double lam = a / eta;

        ParamGroup g("g", 1, {theta0});
        ModelParams mp({g});
        const PretrainedSnapshot snap = snapshot(mp);
        ParamGroup live("g", 1, {theta});
        live.grad[0] = grad;
        OptState s(1);
        s.m[0] = m;
        s.d[0] = theta - theta0;
        step_finetune_sgdm(live, s, snap, eta, lam, beta);

        const double m_next = beta * m + (1.0 - beta) * grad;
        const double closed = (1.0 - eta * lam) * (theta - eta * m_next) + (eta * lam) * theta0;
        if (!near_rel(live.values[0], closed, 1e-12)) {
            ++r.failures;
            if (r.detail.empty()) {
                r.detail = "impl=" + std::to_string(live.values[0]) +
                           " closed=" + std::to_string(closed);
            }
        }
    }
    return r;
}

// With zero gradients the distance to theta_0 decays by exactly (1-eta*lam)
// per step.
inline SuiteResult suite_rollback_convergence(long steps, std::uint64_t seed) {
    SuiteResult r{"rollback_convergence", steps, 0, ""};
    SplitMix64 rng(seed);
    for (int use_adam = 0; use_adam < 2; ++use_adam) {
        const std::size_t len = 3;
        std::vector<double> theta0(len), theta(len);
        for (std::size_t k = 0; k < len; ++k) {
            theta0[k] = rng.uniform(-2.0, 2.0);
            theta[k] = theta0[k] + rng.uniform(0.5, 1.5);
        }
        ParamGroup ref("g", 1, theta0);
        ModelParams mp({ref});
        const PretrainedSnapshot snap = snapshot(mp);
        ParamGroup live("g", 1, theta);
        OptState s(len);
        const double eta = 0.1;
        const double lam = 0.5; // effective penalty 0.05 per step
        double norm0 = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
            s.d[k] = theta[k] - theta0[k];
            norm0 += s.d[k] * s.d[k];
        }
        norm0 = std::sqrt(norm0);
        const double ratio = 1.0 - eta * lam;
        double expected = norm0;
        for (long t = 1; t <= steps; ++t) {
            std::fill(live.grad.begin(), live.grad.end(), 0.0);
            if (use_adam) {
                step_finetune_adam(live, s, snap, eta, lam);
            } else {
                step_finetune_sgdm(live, s, snap, eta, lam);
            }
            expected *= ratio;
            double norm = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const double diff = live.values[k] - theta0[k];
                norm += diff * diff;
            }
            norm = std::sqrt(norm);
            if (std::abs(norm - expected) > 1e-10 * std::max(norm, expected)) {
                ++r.failures;
                if (r.detail.empty()) {
                    r.detail = std::string(use_adam ? "adam" : "sgdm") + " t=" + std::to_string(t) +
                               " norm=" + std::to_string(norm) +
                               " expected=" + std::to_string(expected);
                }
            }
        }
    }
    return r;
}

namespace detail {

struct TrajectoryCfg {
    BaseRule base;
    DecayMode mode;
    double eta, beta, beta1, beta2, eps, lambda;
};

inline TrajectoryCfg random_trajectory_cfg(SplitMix64& rng, BaseRule base, DecayMode mode) {
    TrajectoryCfg c{};
    c.base = base;
    c.mode = mode;
    c.eta = rng.uniform(1e-3, 0.3);
    c.beta = rng.uniform(0.0, 0.99);
    c.beta1 = rng.uniform(0.0, 0.99);
    c.beta2 = rng.uniform(0.5, 0.9999);
    c.eps = 1e-8;
    switch (mode) {
        case DecayMode::baseline: c.lambda = 0.0; break;
        case DecayMode::lagged_decay: c.lambda = rng.uniform(0.0, 0.5); break;
        case DecayMode::scratch: c.lambda = rng.uniform(0.0, 1.0); break;
        case DecayMode::finetune: c.lambda = rng.uniform(0.0, 0.95) / c.eta; break;
    }
    return c;
}

} // namespace detail

// Random trajectories of every update rule against the scalar oracle,
// entrywise over theta/m/v/d.
inline SuiteResult suite_oracle_equivalence(long trajectories, long steps, std::uint64_t seed) {
    SuiteResult r{"oracle_equivalence", 0, 0, ""};
    SplitMix64 rng(seed);
    const std::pair<BaseRule, DecayMode> rules[] = {
        {BaseRule::sgd_momentum, DecayMode::baseline},
        {BaseRule::adam, DecayMode::baseline},
        {BaseRule::sgd_momentum, DecayMode::lagged_decay},
        {BaseRule::adam, DecayMode::lagged_decay},
        {BaseRule::sgd_momentum, DecayMode::scratch},
        {BaseRule::adam, DecayMode::scratch},
        {BaseRule::sgd_momentum, DecayMode::finetune},
        {BaseRule::adam, DecayMode::finetune},
    };
    for (const auto& [base, mode] : rules) {
        for (long traj = 0; traj < trajectories; ++traj) {
            const auto cfg = detail::random_trajectory_cfg(rng, base, mode);
            const std::size_t len = 1 + rng.next_below(4);
            std::vector<double> theta0(len);
            for (auto& x : theta0) x = rng.uniform(-3.0, 3.0);

            ParamGroup g("g", 1, theta0);
            OptState s(len);
            PretrainedSnapshot snap;
            {
                ModelParams mp({g});
                snap = snapshot(mp);
            }
            std::vector<oracle::ScalarState> os(len);
            for (std::size_t k = 0; k < len; ++k) {
                os[k].theta = theta0[k];
                os[k].theta0 = theta0[k];
            }

            bool traj_failed = false;
            for (long step = 0; step < steps; ++step) {
                std::vector<double> grads(len);
                for (auto& x : grads) x = rng.uniform(-2.0, 2.0);
                g.grad = grads;
                switch (mode) {
                    case DecayMode::baseline:
                        if (base == BaseRule::sgd_momentum) {
                            step_sgd_momentum(g, s, cfg.eta, cfg.beta);
                        } else {
                            step_adam(g, s, cfg.eta, cfg.beta1, cfg.beta2, cfg.eps);
                        }
                        break;
                    case DecayMode::lagged_decay: {
                        OptimizerSpec spec;
                        spec.base = base;
                        spec.beta = cfg.beta;
                        spec.beta1 = cfg.beta1;
                        spec.beta2 = cfg.beta2;
                        spec.eps = cfg.eps;
                        step_lagged_decay(g, s, cfg.eta, cfg.lambda, spec);
                        break;
                    }
                    case DecayMode::scratch: {
                        OptimizerSpec spec;
                        spec.base = base;
                        spec.beta = cfg.beta;
                        spec.beta1 = cfg.beta1;
                        spec.beta2 = cfg.beta2;
                        spec.eps = cfg.eps;
                        step_scratch(g, s, cfg.eta, cfg.lambda, spec);
                        break;
                    }
                    case DecayMode::finetune:
                        if (base == BaseRule::sgd_momentum) {
                            step_finetune_sgdm(g, s, snap, cfg.eta, cfg.lambda, cfg.beta);
                        } else {
                            step_finetune_adam(g, s, snap, cfg.eta, cfg.lambda, cfg.beta1,
                                               cfg.beta2, cfg.eps);
                        }
                        break;
                }
                for (std::size_t k = 0; k < len; ++k) {
                    auto& st = os[k];
                    switch (mode) {
                        case DecayMode::baseline:
                            st = base == BaseRule::sgd_momentum
                                     ? oracle::oracle_sgdm(st, grads[k], cfg.eta, cfg.beta)
                                     : oracle::oracle_adam(st, grads[k], cfg.eta, cfg.beta1,
                                                           cfg.beta2, cfg.eps);
                            break;
                        case DecayMode::lagged_decay:
                            st = base == BaseRule::sgd_momentum
                                     ? oracle::oracle_lagged_sgdm(st, grads[k], cfg.eta, cfg.beta,
                                                                  cfg.lambda)
                                     : oracle::oracle_lagged_adam(st, grads[k], cfg.eta, cfg.beta1,
                                                                  cfg.beta2, cfg.eps, cfg.lambda);
                            break;
                        case DecayMode::scratch:
                            st = base == BaseRule::sgd_momentum
                                     ? oracle::oracle_scratch_sgdm(st, grads[k], cfg.eta, cfg.beta,
                                                                   cfg.lambda)
                                     : oracle::oracle_scratch_adam(st, grads[k], cfg.eta, cfg.beta1,
                                                                   cfg.beta2, cfg.eps, cfg.lambda);
                            break;
                        case DecayMode::finetune:
                            st = base == BaseRule::sgd_momentum
                                     ? oracle::oracle_finetune_sgdm(st, grads[k], cfg.eta, cfg.beta,
                                                                    cfg.lambda)
                                     : oracle::oracle_finetune_adam(st, grads[k], cfg.eta,
                                                                    cfg.beta1, cfg.beta2, cfg.eps,
                                                                    cfg.lambda);
                            break;
                    }
                    const bool ok = near_rel(g.values[k], st.theta, 1e-12) &&
                                    near_rel(s.m[k], st.m, 1e-12) &&
                                    near_rel(s.v[k], st.v, 1e-12) &&
                                    near_rel(s.d[k], st.d, 1e-12);
                    if (!ok) traj_failed = true;
                }
            }
            ++r.trials;
            if (traj_failed) {
                ++r.failures;
                if (r.detail.empty()) {
                    r.detail = std::string(to_string(base)) + "/" + to_string(mode) +
                               " trajectory " + std::to_string(traj);
                }
            }
        }
    }
    return r;
}

// Zero-coefficient runs of every decayed rule must equal the base rule
// bit-for-bit, state included.
inline SuiteResult suite_baseline_reduction(long steps, std::uint64_t seed) {
    SuiteResult r{"baseline_reduction", 0, 0, ""};
    SplitMix64 rng(seed);
    for (int base_i = 0; base_i < 2; ++base_i) {
        const BaseRule base = base_i == 0 ? BaseRule::sgd_momentum : BaseRule::adam;
        const DecayMode modes[] = {DecayMode::lagged_decay, DecayMode::scratch,
                                   DecayMode::finetune};
        for (DecayMode mode : modes) {
            const std::size_t len = 4;
            std::vector<double> theta0(len);
            for (auto& x : theta0) x = rng.uniform(-2.0, 2.0);

            ParamGroup base_g("g", 1, theta0);
            ParamGroup dec_g("g", 1, theta0);
            OptState base_s(len), dec_s(len);
            PretrainedSnapshot snap;
            {
                ModelParams mp({base_g});
                snap = snapshot(mp);
            }
            OptimizerSpec spec;
            spec.base = base;

            bool failed = false;
            for (long step = 0; step < steps; ++step) {
                std::vector<double> grads(len);
                for (auto& x : grads) x = rng.uniform(-2.0, 2.0);
                base_g.grad = grads;
                dec_g.grad = grads;
                if (base == BaseRule::sgd_momentum) {
                    step_sgd_momentum(base_g, base_s, 0.05);
                } else {
                    step_adam(base_g, base_s, 0.05);
                }
                switch (mode) {
                    case DecayMode::lagged_decay: step_lagged_decay(dec_g, dec_s, 0.05, 0.0, spec); break;
                    case DecayMode::scratch: step_scratch(dec_g, dec_s, 0.05, 0.0, spec); break;
                    case DecayMode::finetune:
                        if (base == BaseRule::sgd_momentum) {
                            step_finetune_sgdm(dec_g, dec_s, snap, 0.05, 0.0);
                        } else {
                            step_finetune_adam(dec_g, dec_s, snap, 0.05, 0.0);
                        }
                        break;
                    default: break;
                }
                for (std::size_t k = 0; k < len; ++k) {
                    if (base_g.values[k] != dec_g.values[k] || base_s.m[k] != dec_s.m[k] ||
                        base_s.v[k] != dec_s.v[k]) {
                        failed = true;
                    }
                }
            }
            ++r.trials;
            if (failed) {
                ++r.failures;
                if (r.detail.empty()) {
                    r.detail = std::string(to_string(base)) + "/" + to_string(mode);
                }
            }
        }
    }
    return r;
}

// Analytic gradients against central finite differences on random
// (model, batch) pairs.
inline SuiteResult suite_gradient_check(long pairs, std::uint64_t seed) {
    SuiteResult r{"gradient_check", pairs, 0, ""};
    SplitMix64 rng(seed);
    for (long p = 0; p < pairs; ++p) {
        ModelSpec spec;
        spec.kind = rng.next_double() < 0.5 ? ModelKind::logistic : ModelKind::mlp2;
        spec.features = 2 + static_cast<int>(rng.next_below(7));
        spec.classes = 2 + static_cast<int>(rng.next_below(4));
        spec.hidden = 2 + static_cast<int>(rng.next_below(5));

        ModelParams params = init_params(spec, rng);
        // biases get random values too so their gradients are exercised away
        // from zero-weight symmetry
        for (auto& g : params.groups()) {
            for (auto& x : g.values) x += 0.3 * rng.normal();
        }

        const int rows = 1 + static_cast<int>(rng.next_below(12));
        Dataset data;
        data.n_features = spec.features;
        data.domain_tag = "A";
        for (int i = 0; i < rows; ++i) {
            for (int k = 0; k < spec.features; ++k) data.features.push_back(rng.normal());
            data.labels.push_back(static_cast<int>(rng.next_below(
                static_cast<std::uint64_t>(spec.classes))));
        }
        std::vector<int> batch(static_cast<std::size_t>(rows));
        for (int i = 0; i < rows; ++i) batch[static_cast<std::size_t>(i)] = i;

        forward_backward(spec, params, data, batch);
        const auto fd = finite_diff_grad(spec, params, data, batch, 1e-6);

        bool failed = false;
        for (std::size_t gi = 0; gi < params.groups().size(); ++gi) {
            const auto& analytic = params.group(gi).grad;
            for (std::size_t k = 0; k < analytic.size(); ++k) {
                const double a = analytic[k];
                const double b = fd[gi][k];
                if (std::abs(a - b) > 1e-5 * std::max(std::abs(a), std::abs(b)) + 1e-9) {
                    failed = true;
                }
            }
        }
        if (failed) {
            ++r.failures;
            if (r.detail.empty()) r.detail = "pair " + std::to_string(p);
        }
    }
    return r;
}

struct VerifyReport {
    std::vector<SuiteResult> suites;

    bool all_passed() const {
        for (const auto& s : suites) {
            if (!s.passed()) return false;
        }
        return true;
    }
};

inline VerifyReport run_verify_suites(const VerifyTrials& trials, std::uint64_t seed) {
    trials.validate();
    VerifyReport report;
    report.suites.push_back(suite_contraction(trials.contraction, mix_seed(seed, 1)));
    report.suites.push_back(suite_lagged_growth(trials.lagged_growth, mix_seed(seed, 2)));
    report.suites.push_back(suite_discrepancy_identity(trials.discrepancy_steps, mix_seed(seed, 3)));
    report.suites.push_back(suite_closed_form(trials.closed_form, mix_seed(seed, 4)));
    report.suites.push_back(suite_rollback_convergence(trials.rollback_steps, mix_seed(seed, 5)));
    report.suites.push_back(
        suite_oracle_equivalence(trials.oracle_trajectories, trials.oracle_steps, mix_seed(seed, 6)));
    report.suites.push_back(suite_baseline_reduction(trials.reduction_steps, mix_seed(seed, 7)));
    report.suites.push_back(suite_gradient_check(trials.gradient_pairs, mix_seed(seed, 8)));
    return report;
}

} // namespace dualopt
