#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dualopt/optimizers.hpp"
#include "dualopt/rng.hpp"
#include "dualopt/verify.hpp"

using namespace dualopt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ParamGroup one(const std::vector<double>& values, const std::vector<double>& grad) {
    ParamGroup g("g", 1, values);
    g.grad = grad;
    return g;
}

PretrainedSnapshot snap_of(const std::vector<double>& values) {
    ModelParams mp({ParamGroup("g", 1, values)});
    return snapshot(mp);
}

} // namespace

TEST_CASE("sgd momentum worked example") {
    auto g = one({1.0}, {0.5});
    OptState s(1);
    step_sgd_momentum(g, s, 0.1, 0.9);
    REQUIRE_THAT(s.m[0], WithinRel(0.05, 1e-15));
    REQUIRE_THAT(g.values[0], WithinRel(0.995, 1e-15));
    REQUIRE(s.t == 1);

    // zero gradient and zero momentum leave the weights alone
    auto g0 = one({2.5}, {0.0});
    OptState s0(1);
    step_sgd_momentum(g0, s0, 0.1);
    REQUIRE(g0.values[0] == 2.5);

    // beta = 0 is plain SGD
    auto gp = one({1.0}, {0.25});
    OptState sp(1);
    step_sgd_momentum(gp, sp, 0.2, 0.0);
    REQUIRE_THAT(gp.values[0], WithinRel(0.95, 1e-15));
}

TEST_CASE("adam worked example at t=1") {
    auto g = one({1.0}, {0.5});
    OptState s(1);
    step_adam(g, s, 0.1);
    // bias correction makes m_hat = g and sqrt(v_hat) = |g| on the first step
    REQUIRE_THAT(g.values[0], WithinAbs(0.9, 1e-8));

    auto g0 = one({1.0}, {0.0});
    OptState s0(1);
    step_adam(g0, s0, 0.1);
    REQUIRE(g0.values[0] == 1.0);
}

TEST_CASE("lagged decay worked examples") {
    OptimizerSpec plain;
    plain.beta = 0.0; // U = g

    // the growth case: |theta'| ends up larger than the no-decay step
    auto g = one({1.0}, {9.99});
    OptState s(1);
    step_lagged_decay(g, s, 0.1, 0.5, plain);
    REQUIRE_THAT(g.values[0], WithinRel(-0.499, 1e-12));
    REQUIRE(std::abs(g.values[0]) > std::abs(1.0 - 0.999));

    auto g2 = one({1.0}, {1.0});
    OptState s2(1);
    step_lagged_decay(g2, s2, 0.1, 0.01, plain);
    REQUIRE_THAT(g2.values[0], WithinRel(0.89, 1e-12));

    // lambda = 0 is the base step
    auto g3 = one({1.0}, {1.0});
    OptState s3(1);
    step_lagged_decay(g3, s3, 0.1, 0.0, plain);
    REQUIRE(g3.values[0] == 1.0 - 0.1 * 1.0);

    REQUIRE_THROWS_AS(step_lagged_decay(g3, s3, 0.1, 1.5, plain), DomainError);
}

TEST_CASE("scratch decay worked examples") {
    OptimizerSpec plain;
    plain.beta = 0.0;

    auto g = one({2.0}, {1.0});
    OptState s(1);
    step_scratch(g, s, 0.1, 0.05, plain);
    REQUIRE_THAT(g.values[0], WithinRel(1.805, 1e-14));

    // lambda_i = 1 contracts to exactly zero
    auto g1 = one({-17.0}, {3.25});
    OptState s1(1);
    step_scratch(g1, s1, 0.7, 1.0, plain);
    REQUIRE(g1.values[0] == 0.0);

    // lambda_i = 0 is the base step
    auto g2 = one({2.0}, {1.0});
    OptState s2(1);
    step_scratch(g2, s2, 0.1, 0.0, plain);
    REQUIRE(g2.values[0] == 2.0 - 0.1);

    REQUIRE_THROWS_AS(step_scratch(g2, s2, 0.1, -0.1, plain), DomainError);
    REQUIRE_THROWS_AS(step_scratch(g2, s2, 0.1, 1.1, plain), DomainError);
}

TEST_CASE("finetune sgdm worked example and discrepancy identity") {
    const auto snap = snap_of({1.0});
    auto g = one({1.0}, {0.5});
    OptState s(1);
    step_finetune_sgdm(g, s, snap, 0.1, 0.1, 0.9);
    REQUIRE_THAT(s.m[0], WithinRel(0.05, 1e-15));
    REQUIRE_THAT(g.values[0], WithinRel(0.99505, 1e-14));
    REQUIRE_THAT(s.d[0], WithinRel(-0.00495, 1e-14));
    REQUIRE_THAT(s.d[0], WithinAbs(g.values[0] - 1.0, 1e-16));

    // effective penalty exactly 1 is rejected
    auto g2 = one({1.0}, {0.5});
    OptState s2(1);
    REQUIRE_THROWS_AS(step_finetune_sgdm(g2, s2, snap, 1.0, 1.0, 0.9), DomainError);

    // missing snapshot entry is a configuration error
    ModelParams other({ParamGroup("other", 1, {1.0})});
    const auto wrong_snap = snapshot(other);
    REQUIRE_THROWS_AS(step_finetune_sgdm(g2, s2, wrong_snap, 0.1, 0.1), ConfigError);
}

TEST_CASE("finetune adam worked example at t=1") {
    const auto snap = snap_of({1.0});
    auto g = one({1.0}, {0.5});
    OptState s(1);
    step_finetune_adam(g, s, snap, 0.1, 0.1);
    REQUIRE_THAT(g.values[0], WithinAbs(0.901, 1e-8));
    REQUIRE_THAT(s.d[0], WithinAbs(-0.099, 1e-8));
    REQUIRE_THAT(s.d[0], WithinAbs(g.values[0] - 1.0, 1e-15));

    // zero gradient from theta = theta0 is a fixed point
    auto gf = one({1.0}, {0.0});
    OptState sf(1);
    for (int i = 0; i < 25; ++i) {
        std::fill(gf.grad.begin(), gf.grad.end(), 0.0);
        step_finetune_adam(gf, sf, snap, 0.1, 0.5);
    }
    REQUIRE(gf.values[0] == 1.0);
    REQUIRE(sf.d[0] == 0.0);
}

TEST_CASE("pure rollback converges geometrically to the pretrained weights") {
    const auto r = suite_rollback_convergence(200, 31337);
    INFO(r.detail);
    REQUIRE(r.failures == 0);
}

TEST_CASE("non-finite gradients abort before mutation") {
    auto g = one({1.0, 2.0}, {0.5, std::numeric_limits<double>::quiet_NaN()});
    OptState s(1);
    s = OptState(2);
    s.m = {0.25, 0.25};
    REQUIRE_THROWS_AS(step_sgd_momentum(g, s, 0.1), NumericError);
    REQUIRE(g.values == std::vector<double>{1.0, 2.0});
    REQUIRE(s.m == std::vector<double>{0.25, 0.25});
    REQUIRE(s.t == 0);

    const auto snap = snap_of({1.0, 2.0});
    REQUIRE_THROWS_AS(step_finetune_adam(g, s, snap, 0.1, 0.1), NumericError);
    REQUIRE(s.t == 0);
}

TEST_CASE("contraction property on random vectors") {
    const auto r = suite_contraction(20000, 5);
    INFO(r.detail);
    REQUIRE(r.failures == 0);
}

TEST_CASE("lagged decay grows magnitude on witness triples, real-time never does") {
    const auto r = suite_lagged_growth(2000, 6);
    INFO(r.detail);
    REQUIRE(r.failures == 0);
}

TEST_CASE("discrepancy identity holds along random finetune trajectories") {
    const auto r = suite_discrepancy_identity(20000, 7);
    INFO(r.detail);
    REQUIRE(r.failures == 0);
}

TEST_CASE("one rollback step matches the closed form") {
    const auto r = suite_closed_form(5000, 8);
    INFO(r.detail);
    REQUIRE(r.failures == 0);
}

TEST_CASE("zero-coefficient runs reproduce the base optimizer bit-for-bit") {
    const auto r = suite_baseline_reduction(100, 9);
    INFO(r.detail);
    REQUIRE(r.failures == 0);
}

TEST_CASE("a broken discrepancy update is caught by the identity check") {
    // drop the (1 - eta*lambda) factor from the d refresh and the identity
    // must fail within a few steps
    SplitMix64 rng(11);
    double theta = 1.0;
    const double theta0 = 1.0;
    double m = 0.0, d = 0.0;
    const double eta = 0.1, lam = 0.5, beta = 0.9;
    bool violated = false;
    for (int step = 0; step < 20; ++step) {
        const double g = rng.uniform(-2.0, 2.0);
        m = beta * m + (1.0 - beta) * g;
        const double a = eta * lam;
        theta = theta - a * d - (1.0 - a) * eta * m;
        d = d - eta * m; // mutated line
        const double scale = std::max({1.0, std::abs(theta), std::abs(d)});
        if (std::abs(d - (theta - theta0)) > 1e-12 * scale) violated = true;
    }
    REQUIRE(violated);
}

TEST_CASE("shallower layers stay closer to the pretrained weights") {
    // identical sign-coherent gradient streams; the shallow layer carries the
    // larger rollback coefficient and must end at least as close to theta0
    SplitMix64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 4;
        const double iota1 = rng.uniform(0.01, 0.9);
        const double iota2 = rng.uniform(0.0, iota1 * 0.5);
        const double gamma = rng.uniform(0.5, 4.0);
        const double eta = 0.1;
        const auto coeffs = make_finetune_coeffs(iota1, iota2, gamma, n, eta);

        const std::vector<double> theta0 = {rng.uniform(-1.0, 1.0)};
        const auto snap = snap_of(theta0);
        const int i = 1, j = 3;
        ParamGroup shallow("g", 1, theta0);
        ParamGroup deep("g", 1, theta0);
        OptState ss(1), sd(1);
        for (int step = 0; step < 60; ++step) {
            const double grad = rng.uniform(0.0, 2.0);
            shallow.grad[0] = grad;
            deep.grad[0] = grad;
            step_finetune_sgdm(shallow, ss, snap, eta, coeffs.at(i));
            step_finetune_sgdm(deep, sd, snap, eta, coeffs.at(j));
            REQUIRE(std::abs(shallow.values[0] - theta0[0]) <=
                    std::abs(deep.values[0] - theta0[0]) + 1e-15);
        }
    }
}

TEST_CASE("make_stepper dispatch") {
    // baseline adam stepper behaves exactly like step_adam
    OptimizerSpec adam_spec;
    adam_spec.base = BaseRule::adam;
    const Stepper adam_stepper = make_stepper(adam_spec, 1);
    auto a = one({1.0}, {0.5});
    auto b = one({1.0}, {0.5});
    OptState sa(1), sb(1);
    adam_stepper.step(a, sa, 0.1);
    step_adam(b, sb, 0.1);
    REQUIRE(a.values[0] == b.values[0]);

    // scratch mode applies three distinct coefficients on a 3-layer model
    OptimizerSpec scratch_spec;
    scratch_spec.mode = DecayMode::scratch;
    scratch_spec.beta = 0.0;
    scratch_spec.coeffs = make_scratch_coeffs(0.3, 3);
    const Stepper scratch_stepper = make_stepper(scratch_spec, 3);
    std::vector<double> decayed;
    for (int i = 1; i <= 3; ++i) {
        ParamGroup g("g" + std::to_string(i), i, {1.0});
        g.grad = {0.0};
        OptState s(1);
        scratch_stepper.step(g, s, 0.1);
        decayed.push_back(g.values[0]);
    }
    REQUIRE(decayed[0] > decayed[1]);
    REQUIRE(decayed[1] > decayed[2]);
    REQUIRE_THAT(decayed[2], WithinRel(0.7, 1e-14)); // lambda_n = lambda

    // finetune without a snapshot is refused
    OptimizerSpec fine_spec;
    fine_spec.mode = DecayMode::finetune;
    fine_spec.coeffs = make_finetune_coeffs(0.01, 0.0, 1.0, 1, 0.1);
    REQUIRE_THROWS_AS(make_stepper(fine_spec, 1, nullptr), ConfigError);
}

TEST_CASE("oracle equivalence over random trajectories") {
    const auto r = suite_oracle_equivalence(50, 30, 13);
    INFO(r.detail);
    REQUIRE(r.failures == 0);
}
