#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "dualopt/harness.hpp"

using namespace dualopt;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("dualopt_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

// small, fast run shared by most harness tests
ExperimentConfig small_cfg(const std::string& mode) {
    nlohmann::json j = {
        {"mode", mode},
        {"model", {{"kind", "logistic"}, {"features", 6}, {"classes", 3}}},
        {"schedule", {{"kind", "constant"}, {"base_lr", 0.2}}},
        {"epochs", 4},
        {"batch_size", 25},
        {"seed", 3},
        {"dataset", {{"samples_per_domain", 150}, {"shift", 0.5}, {"rotation_angle", 0.6}}},
    };
    return parse_config(j);
}

} // namespace

TEST_CASE("config defaults and mode-aware parsing") {
    const auto cfg = parse_config(nlohmann::json::object(), "scratch");
    REQUIRE(cfg.mode == "scratch");
    REQUIRE(cfg.lambda == 1e-4);
    REQUIRE(cfg.beta == 0.9);
    REQUIRE(cfg.beta1 == 0.9);
    REQUIRE(cfg.beta2 == 0.999);
    REQUIRE(cfg.schedule.base_lr == 0.01);
    REQUIRE(cfg.model.features == 20);
    REQUIRE(cfg.model.classes == 5);
    REQUIRE(cfg.model.hidden == 32);
    REQUIRE(cfg.epochs == 30);
    REQUIRE(cfg.batch_size == 64);

    // forgetting mode defaults to adam and a non-trivial rollback range
    const auto fcfg = parse_config(nlohmann::json::object(), "forgetting");
    REQUIRE(fcfg.optimizer_base == "adam");
    REQUIRE(fcfg.iota1 > 0.0);
    REQUIRE(fcfg.num_seeds == 5);

    // subcommand/mode disagreement is refused
    nlohmann::json j = {{"mode", "sweep"}};
    REQUIRE_THROWS_AS(parse_config(j, "scratch"), ConfigError);

    // named preset for the reference settings
    nlohmann::json jp = {{"preset", "large"}};
    const auto pcfg = parse_config(jp, "scratch");
    REQUIRE(pcfg.epochs == 50);
    REQUIRE(pcfg.batch_size == 128);
}

TEST_CASE("config validation errors") {
    auto cfg = small_cfg("scratch");
    cfg.method = "bogus";
    REQUIRE_THROWS_AS(validate_config(cfg), ConfigError);

    auto fin = small_cfg("finetune");
    fin.method = "dualopt";
    fin.iota1 = 0.1;
    fin.iota2 = 0.5; // iota1 < iota2
    fin.pretrained_checkpoint = "x.ckpt.json";
    REQUIRE_THROWS_AS(validate_config(fin), DomainError);

    auto sweep_cfg = small_cfg("sweep");
    sweep_cfg.sweep.iota1_grid.clear();
    REQUIRE_THROWS_AS(validate_config(sweep_cfg), ConfigError);

    auto ver = small_cfg("verify");
    ver.mode = "verify";
    ver.verify.contraction = 0;
    REQUIRE_THROWS_AS(validate_config(ver), ConfigError);

    auto rollback_too_big = small_cfg("finetune");
    rollback_too_big.pretrained_checkpoint = "x.ckpt.json";
    rollback_too_big.iota1 = 1.0;
    rollback_too_big.iota2 = 1.0; // effective penalty pinned at 1 everywhere
    REQUIRE_THROWS_AS(validate_config(rollback_too_big), DomainError);
}

TEST_CASE("canonicalization folds zero-strength runs onto the base optimizer") {
    auto a = small_cfg("scratch");
    a.method = "dualopt";
    a.lambda = 0.0;
    auto b = small_cfg("scratch");
    b.method = "full";
    REQUIRE(config_hash(a) == config_hash(b));
    REQUIRE(make_run_id(a) == make_run_id(b));

    auto c = small_cfg("finetune");
    c.method = "dualopt";
    c.iota1 = c.iota2 = 0.0;
    c.gamma = 4.0;
    auto d = small_cfg("finetune");
    d.method = "full";
    REQUIRE(config_hash(c) == config_hash(d));

    // a real difference still separates the hashes
    auto e = small_cfg("scratch");
    e.lambda = 1e-3;
    REQUIRE(config_hash(e) != config_hash(b));
}

TEST_CASE("summary config round-trips to an equivalent experiment") {
    auto cfg = small_cfg("scratch");
    cfg.out_dir = fresh_dir("roundtrip").string();
    const auto result = run_scratch(cfg);
    const auto reparsed = parse_config(nlohmann::json::parse(result.summary["config"].dump()));
    REQUIRE(config_hash(reparsed) == config_hash(cfg));
    REQUIRE(reparsed.epochs == cfg.epochs);
    REQUIRE(reparsed.batch_size == cfg.batch_size);
    REQUIRE(reparsed.model.features == cfg.model.features);
    std::filesystem::remove_all(cfg.out_dir);
}

TEST_CASE("scratch runs are deterministic byte-for-byte") {
    auto cfg = small_cfg("scratch");
    cfg.schedule.kind = LrKind::cosine; // exercise a scheduled lr end to end
    const auto dir1 = fresh_dir("det1");
    const auto dir2 = fresh_dir("det2");
    cfg.out_dir = dir1.string();
    run_scratch(cfg);
    cfg.out_dir = dir2.string();
    run_scratch(cfg);
    REQUIRE(slurp(dir1 / "metrics.csv") == slurp(dir2 / "metrics.csv"));
    REQUIRE(slurp(dir1 / "summary.json") == slurp(dir2 / "summary.json"));
    REQUIRE(slurp(dir1 / "final.ckpt.json") == slurp(dir2 / "final.ckpt.json"));

    const std::string csv = slurp(dir1 / "metrics.csv");
    REQUIRE(csv.rfind(kMetricsCsvHeader, 0) == 0);
    std::filesystem::remove_all(dir1);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("lambda=0 scratch run equals the baseline run byte-for-byte") {
    auto zero = small_cfg("scratch");
    zero.method = "dualopt";
    zero.lambda = 0.0;
    const auto dir1 = fresh_dir("red1");
    zero.out_dir = dir1.string();
    run_scratch(zero);

    auto base = small_cfg("scratch");
    base.method = "full";
    const auto dir2 = fresh_dir("red2");
    base.out_dir = dir2.string();
    run_scratch(base);

    REQUIRE(slurp(dir1 / "metrics.csv") == slurp(dir2 / "metrics.csv"));
    REQUIRE(slurp(dir1 / "final.ckpt.json") == slurp(dir2 / "final.ckpt.json"));
    std::filesystem::remove_all(dir1);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("finetune pipeline: reductions, freezing and rollback baselines") {
    // pretrain once
    auto pre = small_cfg("scratch");
    const auto pre_dir = fresh_dir("pre");
    pre.out_dir = pre_dir.string();
    run_scratch(pre);
    const std::string ckpt = (pre_dir / "final.ckpt.json").string();

    auto fin = small_cfg("finetune");
    fin.pretrained_checkpoint = ckpt;

    SECTION("iota1=iota2=0 dualopt equals full fine-tuning byte-for-byte") {
        auto a = fin;
        a.method = "dualopt";
        a.iota1 = a.iota2 = 0.0;
        const auto dir_a = fresh_dir("fin_a");
        a.out_dir = dir_a.string();
        const auto res_a = run_finetune(a, ckpt);

        auto b = fin;
        b.method = "full";
        const auto dir_b = fresh_dir("fin_b");
        b.out_dir = dir_b.string();
        const auto res_b = run_finetune(b, ckpt);

        REQUIRE(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
        REQUIRE(slurp(dir_a / "summary.json") == slurp(dir_b / "summary.json"));
        // the weights agree bitwise; only the bookkeeping d vector differs,
        // since the zero-strength rollback rule still tracks theta - theta0
        for (std::size_t gi = 0; gi < res_a.params.groups().size(); ++gi) {
            REQUIRE(res_a.params.group(gi).values == res_b.params.group(gi).values);
        }
        std::filesystem::remove_all(dir_a);
        std::filesystem::remove_all(dir_b);
    }

    SECTION("linear probing freezes everything below the head") {
        auto lin = fin;
        lin.method = "linear";
        const auto dir = fresh_dir("fin_lin");
        lin.out_dir = dir.string();
        const auto result = run_finetune(lin, ckpt);

        auto [theta0, _] = load_checkpoint(ckpt);
        const int n = result.params.n_layers();
        bool head_moved = false;
        for (int i = 0; i < n; ++i) {
            const auto gi = static_cast<std::size_t>(i);
            if (result.params.group(gi).layer_index < n) {
                REQUIRE(result.params.group(gi).values == theta0.group(gi).values);
            } else if (result.params.group(gi).values != theta0.group(gi).values) {
                head_moved = true;
            }
        }
        REQUIRE(head_moved);
        std::filesystem::remove_all(dir);
    }

    SECTION("strong l2sp stays closer to theta0 than full fine-tuning") {
        auto l2 = fin;
        l2.method = "l2sp";
        l2.l2sp_alpha = 5.0;
        const auto dir_l2 = fresh_dir("fin_l2");
        l2.out_dir = dir_l2.string();
        const auto res_l2 = run_finetune(l2, ckpt);

        auto full = fin;
        full.method = "full";
        const auto dir_full = fresh_dir("fin_full");
        full.out_dir = dir_full.string();
        const auto res_full = run_finetune(full, ckpt);

        auto [theta0, _] = load_checkpoint(ckpt);
        auto dist = [&](const ModelParams& p) {
            double sum = 0.0;
            for (std::size_t gi = 0; gi < p.groups().size(); ++gi) {
                for (std::size_t k = 0; k < p.group(gi).values.size(); ++k) {
                    const double diff = p.group(gi).values[k] - theta0.group(gi).values[k];
                    sum += diff * diff;
                }
            }
            return std::sqrt(sum);
        };
        REQUIRE(dist(res_l2.params) < dist(res_full.params));
        std::filesystem::remove_all(dir_l2);
        std::filesystem::remove_all(dir_full);
    }

    SECTION("checkpoint with the wrong shape is rejected") {
        auto wrong = fin;
        wrong.model.features = 9;
        const auto dir = fresh_dir("fin_wrong");
        wrong.out_dir = dir.string();
        REQUIRE_THROWS_AS(run_finetune(wrong, ckpt), ShapeError);

        // group-count mismatch: logistic checkpoint against an mlp2 config
        auto wrong_kind = fin;
        wrong_kind.model.kind = ModelKind::mlp2;
        wrong_kind.model.hidden = 4;
        wrong_kind.out_dir = dir.string();
        REQUIRE_THROWS_AS(run_finetune(wrong_kind, ckpt), ShapeError);
    }

    SECTION("near-maximal rollback pins the weights to theta0") {
        auto pin = fin;
        pin.method = "dualopt";
        pin.iota1 = pin.iota2 = 0.99; // effective penalty 0.99 every step
        pin.gamma = 1.0;
        const auto dir = fresh_dir("fin_pin");
        pin.out_dir = dir.string();
        const auto res = run_finetune(pin, ckpt);

        auto [theta0, _] = load_checkpoint(ckpt);
        for (std::size_t gi = 0; gi < res.params.groups().size(); ++gi) {
            for (std::size_t k = 0; k < res.params.group(gi).values.size(); ++k) {
                REQUIRE(std::abs(res.params.group(gi).values[k] -
                                 theta0.group(gi).values[k]) < 0.05);
            }
        }
        // upstream accuracy is untouched up to evaluation noise
        REQUIRE(std::abs(res.summary["forgetting"].get<double>()) < 0.02);
        std::filesystem::remove_all(dir);
    }

    std::filesystem::remove_all(pre_dir);
}

TEST_CASE("sweep emits the full grid and is parallelism-independent") {
    auto cfg = small_cfg("sweep");
    cfg.epochs = 2;
    cfg.sweep.iota1_grid = {0.001, 0.1};
    cfg.sweep.gamma_grid = {1.0, 2.0};
    cfg.sweep.workers = 1;
    const auto dir1 = fresh_dir("sweep1");
    cfg.out_dir = dir1.string();
    const auto cells = run_sweep(cfg);
    REQUIRE(cells.size() == 4);
    REQUIRE(cells[0].iota1 == 0.001);
    REQUIRE(cells[0].gamma == 1.0);
    REQUIRE(cells[3].iota1 == 0.1);
    REQUIRE(cells[3].gamma == 2.0);

    cfg.sweep.workers = 4;
    const auto dir2 = fresh_dir("sweep2");
    cfg.out_dir = dir2.string();
    run_sweep(cfg);
    REQUIRE(slurp(dir1 / "sweep.csv") == slurp(dir2 / "sweep.csv"));
    std::filesystem::remove_all(dir1);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("forgetting control: zero domain gap means no forgetting to speak of") {
    auto cfg = small_cfg("forgetting");
    cfg.mode = "forgetting";
    cfg.optimizer_base = "adam";
    cfg.schedule.base_lr = 0.01;
    cfg.epochs = 12; // enough to saturate the convex model in both phases
    cfg.num_seeds = 2;
    cfg.iota1 = 0.2;
    cfg.gamma = 2.0;
    cfg.dataset.shift = 0.0;
    cfg.dataset.rotation_angle = 0.0;
    const auto dir = fresh_dir("forget_ctrl");
    cfg.out_dir = dir.string();
    const auto report = run_forgetting(cfg);

    for (const auto& method : {"full", "l2sp", "dualopt"}) {
        INFO(method << " forgetting " << report.mean_forgetting.at(method));
        REQUIRE(std::abs(report.mean_forgetting.at(method)) < 0.05);
    }
    REQUIRE(std::filesystem::exists(dir / "forgetting_report.json"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("verify mode writes a machine-readable verdict") {
    ExperimentConfig cfg;
    cfg.mode = "verify";
    cfg.seed = 17;
    cfg.verify = VerifyTrials{1000, 200, 2000, 500, 100, 10, 10, 20, 3};
    const auto dir = fresh_dir("verify");
    cfg.out_dir = dir.string();
    const auto report = run_verify(cfg);
    REQUIRE(report.all_passed());

    const auto doc = nlohmann::json::parse(slurp(dir / "verify.json"));
    REQUIRE(doc["all_passed"].get<bool>());
    REQUIRE(doc["suites"].size() == report.suites.size());
    std::filesystem::remove_all(dir);
}
