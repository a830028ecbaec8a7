#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "dualopt/checkpoint.hpp"
#include "dualopt/param_state.hpp"
#include "dualopt/rng.hpp"

using namespace dualopt;

TEST_CASE("ModelParams construction enforces the layer-index contract") {
    ParamGroup a("a", 1, {1.0, 2.0});
    ParamGroup b("b", 2, {3.0});

    REQUIRE_NOTHROW(ModelParams({a, b}));
    REQUIRE_THROWS_AS(ModelParams({}), ConfigError);

    ParamGroup dup("c", 1, {0.5});
    REQUIRE_THROWS_AS(ModelParams({a, dup}), ConfigError);

    ParamGroup gap("c", 3, {0.5});
    REQUIRE_THROWS_AS(ModelParams({a, gap}), ConfigError);

    ParamGroup bad_grad("d", 2, {1.0, 1.0});
    bad_grad.grad.resize(1);
    REQUIRE_THROWS_AS(ModelParams({a, bad_grad}), ShapeError);
}

TEST_CASE("snapshot is a deep copy") {
    ModelParams params({ParamGroup("g", 1, {1.0, 2.0})});
    const PretrainedSnapshot snap = snapshot(params);
    REQUIRE(snap.values("g") == std::vector<double>{1.0, 2.0});

    params.group(0).values = {9.0, 9.0};
    REQUIRE(snap.values("g") == std::vector<double>{1.0, 2.0});

    params.group(0).values = {1.0, std::nan("")};
    REQUIRE_THROWS_AS(snapshot(params), NumericError);
}

TEST_CASE("checkpoint round trip is exact for random models") {
    SplitMix64 rng(42);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<ParamGroup> groups;
        const int n = 1 + static_cast<int>(rng.next_below(5));
        for (int i = 1; i <= n; ++i) {
            const std::size_t len = 1 + rng.next_below(6);
            std::vector<double> vals(len);
            for (auto& v : vals) v = rng.uniform(-1e6, 1e6) * std::exp(rng.uniform(-20.0, 5.0));
            groups.emplace_back("g" + std::to_string(i), i, std::move(vals));
        }
        ModelParams params(std::move(groups));
        auto states = make_opt_states(params);
        for (auto& s : states) {
            s.t = static_cast<long>(rng.next_below(1000));
            for (auto& x : s.m) x = rng.normal();
            for (auto& x : s.v) x = std::abs(rng.normal());
            for (auto& x : s.d) x = rng.normal();
        }

        const std::string text = checkpoint_to_string(params, states);
        auto [loaded, loaded_states] = checkpoint_from_string(text);

        REQUIRE(loaded.n_layers() == params.n_layers());
        for (int i = 0; i < params.n_layers(); ++i) {
            const auto gi = static_cast<std::size_t>(i);
            REQUIRE(loaded.group(gi).name == params.group(gi).name);
            REQUIRE(loaded.group(gi).layer_index == params.group(gi).layer_index);
            REQUIRE(loaded.group(gi).values == params.group(gi).values);
            REQUIRE(loaded_states[gi].t == states[gi].t);
            REQUIRE(loaded_states[gi].m == states[gi].m);
            REQUIRE(loaded_states[gi].v == states[gi].v);
            REQUIRE(loaded_states[gi].d == states[gi].d);
        }
    }
}

TEST_CASE("checkpoint file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "dualopt_test.ckpt.json";
    ModelParams params({ParamGroup("w", 1, {0.1, -2.5e-17}), ParamGroup("b", 2, {3.0})});
    auto states = make_opt_states(params);
    save_checkpoint(params, states, path.string());
    auto [loaded, _] = load_checkpoint(path.string());
    REQUIRE(loaded.group(0).values == params.group(0).values);
    std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoints give structured parse errors") {
    REQUIRE_THROWS_AS(checkpoint_from_string("not json"), ParseError);
    REQUIRE_THROWS_AS(checkpoint_from_string("{}"), ParseError);

    // declared length disagrees with the values array
    const std::string bad_len = R"({"schema_version":1,"n_layers":1,
        "groups":[{"name":"g","layer_index":1,"length":3,"values":[1.0,2.0]}],
        "opt_state":{}})";
    REQUIRE_THROWS_WITH(checkpoint_from_string(bad_len),
                        Catch::Matchers::ContainsSubstring("g"));

    const std::string bad_state = R"({"schema_version":1,"n_layers":1,
        "groups":[{"name":"g","layer_index":1,"length":2,"values":[1.0,2.0]}],
        "opt_state":{"g":{"t":1,"m":[0.0],"v":[0.0,0.0],"d":[0.0,0.0]}}})";
    REQUIRE_THROWS_AS(checkpoint_from_string(bad_state), ParseError);

    const std::string dup_index = R"({"schema_version":1,"n_layers":2,
        "groups":[{"name":"a","layer_index":1,"length":1,"values":[1.0]},
                  {"name":"b","layer_index":1,"length":1,"values":[2.0]}],
        "opt_state":{}})";
    REQUIRE_THROWS_AS(checkpoint_from_string(dup_index), ConfigError);
}

TEST_CASE("non-finite values refuse to serialize") {
    ModelParams params({ParamGroup("g", 1, {1.0})});
    auto states = make_opt_states(params);
    params.group(0).values[0] = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(checkpoint_to_string(params, states), NumericError);
}
