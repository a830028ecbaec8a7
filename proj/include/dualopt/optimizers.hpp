#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dualopt/errors.hpp"
#include "dualopt/param_state.hpp"
#include "dualopt/schedules.hpp"

namespace dualopt {

enum class BaseRule { sgd_momentum, adam };
enum class DecayMode { baseline, lagged_decay, scratch, finetune };

inline const char* to_string(BaseRule b) {
    return b == BaseRule::sgd_momentum ? "sgd_momentum" : "adam";
}

inline const char* to_string(DecayMode m) {
    switch (m) {
        case DecayMode::baseline: return "baseline";
        case DecayMode::lagged_decay: return "lagged_decay";
        case DecayMode::scratch: return "scratch";
        case DecayMode::finetune: return "finetune";
    }
    return "?";
}

struct OptimizerSpec {
    BaseRule base = BaseRule::sgd_momentum;
    DecayMode mode = DecayMode::baseline;
    double beta = 0.9;   // sgd_momentum
    double beta1 = 0.9;  // adam
    double beta2 = 0.999;
    double eps = 1e-8;
    double lagged_lambda = 0.0; // lagged_decay mode, uniform across layers
    LayerCoefficients coeffs;   // scratch / finetune modes

    void validate() const {
        if (!(beta >= 0.0 && beta < 1.0)) throw DomainError("OptimizerSpec: beta must be in [0,1)");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw DomainError("OptimizerSpec: beta1 must be in [0,1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw DomainError("OptimizerSpec: beta2 must be in [0,1)");
        if (!(eps > 0.0)) throw DomainError("OptimizerSpec: eps must be > 0");
    }
};

namespace detail {

inline void require_finite_grad(const ParamGroup& g, const char* who) {
    for (double x : g.grad) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(who) + ": non-finite gradient in group '" + g.name +
                               "'; step aborted before mutation");
        }
    }
}

inline void require_shapes(const ParamGroup& g, const OptState& s, const char* who) {
    if (g.grad.size() != g.values.size() || s.m.size() != g.values.size() ||
        s.v.size() != g.values.size() || s.d.size() != g.values.size()) {
        throw ShapeError(std::string(who) + ": state/grad shape mismatch in group '" + g.name + "'");
    }
}

inline void require_finite_values(const ParamGroup& g, const char* who) {
    for (double x : g.values) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(who) + ": non-finite weight in group '" + g.name +
                               "' after step");
        }
    }
}

// Advances the moment state from the raw gradient and writes the unit-lr
// update direction into u. Shared by every decay mode so that a zero
// coefficient reduces to the base rule bit-for-bit.
inline void base_update(BaseRule base, const OptimizerSpec& spec, ParamGroup& g, OptState& s,
                        std::vector<double>& u) {
    const std::size_t len = g.values.size();
    u.resize(len);
    s.t += 1;
    if (base == BaseRule::sgd_momentum) {
        for (std::size_t k = 0; k < len; ++k) {
            s.m[k] = spec.beta * s.m[k] + (1.0 - spec.beta) * g.grad[k];
            u[k] = s.m[k];
        }
    } else {
        const double c1 = 1.0 - std::pow(spec.beta1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(spec.beta2, static_cast<double>(s.t));
        for (std::size_t k = 0; k < len; ++k) {
            const double grad = g.grad[k];
            s.m[k] = spec.beta1 * s.m[k] + (1.0 - spec.beta1) * grad;
            s.v[k] = spec.beta2 * s.v[k] + (1.0 - spec.beta2) * grad * grad;
            const double m_hat = s.m[k] / c1;
            const double v_hat = s.v[k] / c2;
            u[k] = m_hat / (std::sqrt(v_hat) + spec.eps);
        }
    }
}

} // namespace detail

// theta <- theta - eta_t * m after the momentum refresh.
inline void step_sgd_momentum(ParamGroup& g, OptState& s, double lr, double beta = 0.9) {
    detail::require_shapes(g, s, "step_sgd_momentum");
    detail::require_finite_grad(g, "step_sgd_momentum");
    OptimizerSpec spec;
    spec.beta = beta;
    spec.validate();
    std::vector<double> u;
    detail::base_update(BaseRule::sgd_momentum, spec, g, s, u);
    for (std::size_t k = 0; k < g.values.size(); ++k) {
        g.values[k] -= lr * u[k];
    }
    detail::require_finite_values(g, "step_sgd_momentum");
}

inline void step_adam(ParamGroup& g, OptState& s, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
    detail::require_shapes(g, s, "step_adam");
    detail::require_finite_grad(g, "step_adam");
    OptimizerSpec spec;
    spec.base = BaseRule::adam;
    spec.beta1 = beta1;
    spec.beta2 = beta2;
    spec.eps = eps;
    spec.validate();
    std::vector<double> u;
    detail::base_update(BaseRule::adam, spec, g, s, u);
    for (std::size_t k = 0; k < g.values.size(); ++k) {
        g.values[k] -= lr * u[k];
    }
    detail::require_finite_values(g, "step_adam");
}

// Conventional decay: theta <- theta - eta_t*U - lambda*theta_pre. The decay
// term uses the pre-step weights, which is what lets the combined step grow
// |theta| for some (theta, U, lambda).
inline void step_lagged_decay(ParamGroup& g, OptState& s, double lr, double lambda,
                              const OptimizerSpec& spec) {
    detail::require_shapes(g, s, "step_lagged_decay");
    detail::require_finite_grad(g, "step_lagged_decay");
    spec.validate();
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw DomainError("step_lagged_decay: lambda must be in [0,1]");
    }
    std::vector<double> u;
    detail::base_update(spec.base, spec, g, s, u);
    for (std::size_t k = 0; k < g.values.size(); ++k) {
        const double prev = g.values[k];
        g.values[k] = prev - lr * u[k] - lambda * prev;
    }
    detail::require_finite_values(g, "step_lagged_decay");
}

// Real-time decay: the shrink multiplies the already-updated weights, so one
// step is theta <- (1 - lambda_i) * (theta - eta_t * U).
inline void step_scratch(ParamGroup& g, OptState& s, double lr, double lambda_i,
                         const OptimizerSpec& spec) {
    detail::require_shapes(g, s, "step_scratch");
    if (!(lambda_i >= 0.0 && lambda_i <= 1.0)) {
        throw DomainError("step_scratch: lambda_i must be in [0,1]");
    }
    detail::require_finite_grad(g, "step_scratch");
    spec.validate();
    std::vector<double> u;
    detail::base_update(spec.base, spec, g, s, u);
    for (std::size_t k = 0; k < g.values.size(); ++k) {
        const double updated = g.values[k] - lr * u[k];
        g.values[k] = updated - lambda_i * updated;
    }
    detail::require_finite_values(g, "step_scratch");
}

namespace detail {

inline void check_finetune_pre(const ParamGroup& g, const OptState& s,
                               const PretrainedSnapshot& snap, double lr, double lambda_i,
                               const char* who) {
    require_shapes(g, s, who);
    if (!snap.has_group(g.name)) {
        throw ConfigError(std::string(who) + ": no pretrained snapshot entry for group '" +
                          g.name + "'");
    }
    if (snap.values(g.name).size() != g.values.size()) {
        throw ShapeError(std::string(who) + ": snapshot shape mismatch for group '" + g.name + "'");
    }
    const double eff = lr * lambda_i;
    if (!(eff >= 0.0 && eff < 1.0)) {
        throw DomainError(std::string(who) + ": effective penalty eta_t*lambda_i = " +
                          std::to_string(eff) + " outside [0,1)");
    }
    require_finite_grad(g, who);
}

// Weight-rollback application shared by both bases. u is the unit-lr update
// direction; d is refreshed after the weights, in that order.
inline void apply_rollback(ParamGroup& g, OptState& s, double lr, double lambda_i,
                           const std::vector<double>& u) {
    const double a = lr * lambda_i;
    for (std::size_t k = 0; k < g.values.size(); ++k) {
        const double du = lr * u[k];
        g.values[k] = g.values[k] - a * s.d[k] - (1.0 - a) * du;
        s.d[k] = (1.0 - a) * (s.d[k] - du);
    }
}

} // namespace detail

// Fine-tune rule for SGD with momentum. The pretrained weights enter only
// through the discrepancy vector (d tracks theta - theta_0); the snapshot is
// taken for shape/presence validation, never read during the update.
inline void step_finetune_sgdm(ParamGroup& g, OptState& s, const PretrainedSnapshot& snap,
                               double lr, double lambda_i, double beta = 0.9) {
    detail::check_finetune_pre(g, s, snap, lr, lambda_i, "step_finetune_sgdm");
    OptimizerSpec spec;
    spec.beta = beta;
    spec.validate();
    std::vector<double> u;
    detail::base_update(BaseRule::sgd_momentum, spec, g, s, u);
    detail::apply_rollback(g, s, lr, lambda_i, u);
    detail::require_finite_values(g, "step_finetune_sgdm");
}

inline void step_finetune_adam(ParamGroup& g, OptState& s, const PretrainedSnapshot& snap,
                               double lr, double lambda_i, double beta1 = 0.9,
                               double beta2 = 0.999, double eps = 1e-8) {
    detail::check_finetune_pre(g, s, snap, lr, lambda_i, "step_finetune_adam");
    OptimizerSpec spec;
    spec.base = BaseRule::adam;
    spec.beta1 = beta1;
    spec.beta2 = beta2;
    spec.eps = eps;
    spec.validate();
    std::vector<double> u;
    detail::base_update(BaseRule::adam, spec, g, s, u);
    detail::apply_rollback(g, s, lr, lambda_i, u);
    detail::require_finite_values(g, "step_finetune_adam");
}

// Binds an OptimizerSpec (and the snapshot, for finetune mode) into a single
// per-group step call; picks the coefficient matching the group's depth.
class Stepper {
public:
    Stepper(OptimizerSpec spec, const PretrainedSnapshot* snap) : spec_(std::move(spec)), snap_(snap) {}

    const OptimizerSpec& spec() const { return spec_; }

    void step(ParamGroup& g, OptState& s, double lr) const {
        switch (spec_.mode) {
            case DecayMode::baseline: {
                detail::require_shapes(g, s, "step");
                detail::require_finite_grad(g, "step");
                std::vector<double> u;
                detail::base_update(spec_.base, spec_, g, s, u);
                for (std::size_t k = 0; k < g.values.size(); ++k) {
                    g.values[k] -= lr * u[k];
                }
                detail::require_finite_values(g, "step");
                return;
            }
            case DecayMode::lagged_decay:
                step_lagged_decay(g, s, lr, spec_.lagged_lambda, spec_);
                return;
            case DecayMode::scratch:
                step_scratch(g, s, lr, spec_.coeffs.at(g.layer_index), spec_);
                return;
            case DecayMode::finetune: {
                const double lam = spec_.coeffs.at(g.layer_index);
                if (spec_.base == BaseRule::sgd_momentum) {
                    step_finetune_sgdm(g, s, *snap_, lr, lam, spec_.beta);
                } else {
                    step_finetune_adam(g, s, *snap_, lr, lam, spec_.beta1, spec_.beta2, spec_.eps);
                }
                return;
            }
        }
    }

private:
    OptimizerSpec spec_;
    const PretrainedSnapshot* snap_;
};

inline Stepper make_stepper(const OptimizerSpec& spec, int n_layers,
                            const PretrainedSnapshot* snap = nullptr) {
    spec.validate();
    if (spec.mode == DecayMode::finetune) {
        if (snap == nullptr) {
            throw ConfigError("make_stepper: finetune mode requires a pretrained snapshot");
        }
        if (spec.coeffs.mode != CoeffMode::finetune || spec.coeffs.n_layers() != n_layers) {
            throw ConfigError("make_stepper: finetune coefficients missing or sized wrong");
        }
    }
    if (spec.mode == DecayMode::scratch) {
        if (spec.coeffs.mode != CoeffMode::scratch || spec.coeffs.n_layers() != n_layers) {
            throw ConfigError("make_stepper: scratch coefficients missing or sized wrong");
        }
    }
    if (spec.mode == DecayMode::lagged_decay &&
        !(spec.lagged_lambda >= 0.0 && spec.lagged_lambda <= 1.0)) {
        throw DomainError("make_stepper: lagged lambda must be in [0,1]");
    }
    return Stepper(spec, snap);
}

} // namespace dualopt
