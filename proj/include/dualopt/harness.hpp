#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dualopt/checkpoint.hpp"
#include "dualopt/config.hpp"
#include "dualopt/errors.hpp"
#include "dualopt/model_zoo.hpp"
#include "dualopt/optimizers.hpp"
#include "dualopt/verify.hpp"

namespace dualopt {

// One metrics row. wall_ms is pinned to zero in emitted files: outputs are
// byte-deterministic by contract, so elapsed time is reported on stderr
// instead of inside the CSV.
struct MetricsRecord {
    std::string run_id;
    int epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    long wall_ms = 0;
    std::string config_hash;
    std::uint64_t seed = 0;
};

inline constexpr const char* kMetricsCsvHeader =
    "run_id,epoch,split,loss,accuracy,wall_ms,config_hash,seed";

inline std::string metrics_to_csv(const std::vector<MetricsRecord>& rows) {
    std::string out = kMetricsCsvHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += r.run_id;
        out += ',' + std::to_string(r.epoch);
        out += ',' + r.split;
        out += ',' + format_double(r.loss);
        out += ',' + format_double(r.accuracy);
        out += ',' + std::to_string(r.wall_ms);
        out += ',' + r.config_hash;
        out += ',' + std::to_string(r.seed);
        out += '\n';
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open '" + path + "' for writing");
    f << content;
}

inline void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

struct EvalRecord {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline EvalRecord evaluate(const ModelSpec& spec, const ModelParams& params, const Dataset& data) {
    std::vector<int> all(static_cast<std::size_t>(data.n_rows()));
    std::iota(all.begin(), all.end(), 0);
    return {forward_loss(spec, params, data, all), accuracy(spec, params, data)};
}

namespace detail {

struct TrainPlan {
    const ExperimentConfig* cfg = nullptr;
    std::string run_id;
    std::string hash;
    std::uint64_t shuffle_seed = 0;
    const Dataset* train_set = nullptr;
    const Dataset* probe_set = nullptr;
    std::string probe_split;
    const PretrainedSnapshot* snap = nullptr;
    bool finetune_family = false;
};

struct TrainOutput {
    ModelParams params;
    std::vector<OptState> states;
    std::vector<MetricsRecord> metrics;
};

inline TrainOutput train_model(const TrainPlan& plan, ModelParams params) {
    const ExperimentConfig& cfg = *plan.cfg;
    const Dataset& train = *plan.train_set;
    const int n_rows = train.n_rows();
    const int steps_per_epoch = (n_rows + cfg.batch_size - 1) / cfg.batch_size;

    LrSchedule sched = cfg.schedule;
    sched.total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;

    const int n_layers = params.n_layers();
    OptimizerSpec spec;
    spec.base = cfg.base_rule();
    spec.beta = cfg.beta;
    spec.beta1 = cfg.beta1;
    spec.beta2 = cfg.beta2;
    spec.eps = cfg.eps;
    bool l2sp = false;
    bool linear = false;
    if (!plan.finetune_family) {
        if (cfg.method == "dualopt") {
            spec.mode = DecayMode::scratch;
            spec.coeffs = make_scratch_coeffs(cfg.lambda, n_layers);
        } else if (cfg.method == "lagged") {
            spec.mode = DecayMode::lagged_decay;
            spec.lagged_lambda = cfg.lambda;
        } else {
            spec.mode = DecayMode::baseline;
        }
    } else {
        if (cfg.method == "dualopt") {
            spec.mode = DecayMode::finetune;
            spec.coeffs =
                make_finetune_coeffs(cfg.iota1, cfg.iota2, cfg.gamma, n_layers, sched.base_lr);
            validate_effective_penalty(sched, spec.coeffs);
        } else {
            spec.mode = DecayMode::baseline;
            l2sp = cfg.method == "l2sp";
            linear = cfg.method == "linear";
        }
    }
    if ((l2sp || spec.mode == DecayMode::finetune) && plan.snap == nullptr) {
        throw ConfigError("train: method '" + cfg.method + "' requires a pretrained snapshot");
    }
    const Stepper stepper = make_stepper(spec, n_layers, plan.snap);

    auto states = make_opt_states(params);
    SplitMix64 rng(plan.shuffle_seed);
    std::vector<int> order(static_cast<std::size_t>(n_rows));
    std::iota(order.begin(), order.end(), 0);
    std::vector<MetricsRecord> metrics;

    long global_step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (int i = n_rows - 1; i > 0; --i) {
            const auto j = rng.next_below(static_cast<std::uint64_t>(i) + 1);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < n_rows; start += cfg.batch_size) {
            const int end = std::min(start + cfg.batch_size, n_rows);
            const std::vector<int> batch(order.begin() + start, order.begin() + end);
            ++global_step;
            const double lr = lr_at(sched, global_step);
            loss_sum += forward_backward(cfg.model, params, train, batch);
            ++batches;
            if (l2sp) {
                for (auto& g : params.groups()) {
                    const auto& theta0 = plan.snap->values(g.name);
                    for (std::size_t k = 0; k < g.values.size(); ++k) {
                        g.grad[k] += 2.0 * cfg.l2sp_alpha * (g.values[k] - theta0[k]);
                    }
                }
            }
            for (std::size_t gi = 0; gi < params.groups().size(); ++gi) {
                auto& g = params.group(gi);
                if (linear && g.layer_index != n_layers) continue;
                stepper.step(g, states[gi], lr);
            }
        }
        MetricsRecord train_rec;
        train_rec.run_id = plan.run_id;
        train_rec.epoch = epoch;
        train_rec.split = "train";
        train_rec.loss = loss_sum / static_cast<double>(batches);
        train_rec.accuracy = accuracy(cfg.model, params, train);
        train_rec.config_hash = plan.hash;
        train_rec.seed = cfg.seed;
        metrics.push_back(train_rec);
        if (plan.probe_set != nullptr) {
            const EvalRecord ev = evaluate(cfg.model, params, *plan.probe_set);
            MetricsRecord probe_rec = train_rec;
            probe_rec.split = plan.probe_split;
            probe_rec.loss = ev.loss;
            probe_rec.accuracy = ev.accuracy;
            metrics.push_back(probe_rec);
        }
    }
    return TrainOutput{std::move(params), std::move(states), std::move(metrics)};
}

// Seed salts for the independent random streams of one run.
inline constexpr std::uint64_t kDataSalt = 101;
inline constexpr std::uint64_t kInitSalt = 102;
inline constexpr std::uint64_t kShuffleSalt = 103;

inline std::pair<Dataset, Dataset> make_domains(const ExperimentConfig& cfg, std::uint64_t seed) {
    return gen_two_domain_tasks(mix_seed(seed, kDataSalt), cfg.model.features, cfg.model.classes,
                                cfg.dataset.samples_per_domain, cfg.dataset.shift,
                                cfg.dataset.rotation_angle, cfg.dataset.noise_sigma,
                                cfg.dataset.cluster_scale);
}

inline void check_checkpoint_shape(const ExperimentConfig& cfg, const ModelParams& loaded) {
    const ModelParams expected = make_zero_params(cfg.model);
    if (loaded.n_layers() != expected.n_layers()) {
        throw ShapeError("checkpoint has " + std::to_string(loaded.n_layers()) +
                         " groups but the configured model needs " +
                         std::to_string(expected.n_layers()));
    }
    for (int i = 0; i < expected.n_layers(); ++i) {
        const auto& a = loaded.group(static_cast<std::size_t>(i));
        const auto& b = expected.group(static_cast<std::size_t>(i));
        if (a.name != b.name || a.size() != b.size()) {
            throw ShapeError("checkpoint group '" + a.name + "' (len " +
                             std::to_string(a.size()) + ") does not match model group '" + b.name +
                             "' (len " + std::to_string(b.size()) + ")");
        }
    }
}

} // namespace detail

struct RunResult {
    std::string run_id;
    std::string hash;
    std::vector<MetricsRecord> metrics;
    ModelParams params;
    std::vector<OptState> states;
    nlohmann::ordered_json summary;
};

namespace detail {

inline nlohmann::ordered_json final_section(const std::vector<MetricsRecord>& metrics) {
    nlohmann::ordered_json fin;
    const int last_epoch = metrics.empty() ? 0 : metrics.back().epoch;
    for (const auto& r : metrics) {
        if (r.epoch != last_epoch) continue;
        fin[r.split] = {{"loss", r.loss}, {"accuracy", r.accuracy}};
    }
    return fin;
}

inline void write_run_files(const ExperimentConfig& cfg, const RunResult& result) {
    ensure_out_dir(cfg.out_dir);
    const auto dir = std::filesystem::path(cfg.out_dir);
    write_text_file((dir / "metrics.csv").string(), metrics_to_csv(result.metrics));
    write_text_file((dir / "summary.json").string(), result.summary.dump(2) + "\n");
    save_checkpoint(result.params, result.states, (dir / "final.ckpt.json").string());
}

} // namespace detail

// Trains from a seeded random initialization on domain A, probing domain B
// after every epoch.
inline RunResult run_scratch(const ExperimentConfig& cfg) {
    if (cfg.mode != "scratch") throw ConfigError("run_scratch: config mode is not 'scratch'");
    validate_config(cfg);
    const std::string hash = config_hash(cfg);
    const std::string run_id = make_run_id(cfg);

    const auto [domain_a, domain_b] = detail::make_domains(cfg, cfg.seed);
    SplitMix64 init_rng(mix_seed(cfg.seed, detail::kInitSalt));
    ModelParams params = init_params(cfg.model, init_rng);

    detail::TrainPlan plan;
    plan.cfg = &cfg;
    plan.run_id = run_id;
    plan.hash = hash;
    plan.shuffle_seed = mix_seed(cfg.seed, detail::kShuffleSalt);
    plan.train_set = &domain_a;
    plan.probe_set = &domain_b;
    plan.probe_split = "eval_B";
    auto out = detail::train_model(plan, std::move(params));

    RunResult result{run_id, hash, std::move(out.metrics), std::move(out.params),
                     std::move(out.states), {}};
    result.summary["run_id"] = run_id;
    result.summary["config"] = canonical_config_json(cfg);
    result.summary["seed"] = cfg.seed;
    result.summary["final"] = detail::final_section(result.metrics);
    detail::write_run_files(cfg, result);
    return result;
}

// Loads the checkpoint as both the initial weights and the rollback target,
// trains on domain B, and probes domain A (the upstream split) per epoch.
inline RunResult run_finetune(const ExperimentConfig& cfg, const std::string& ckpt_path) {
    if (cfg.mode != "finetune") throw ConfigError("run_finetune: config mode is not 'finetune'");
    ExperimentConfig local = cfg;
    local.pretrained_checkpoint = ckpt_path;
    validate_config(local);
    if (!std::filesystem::exists(ckpt_path)) {
        throw ConfigError("run_finetune: checkpoint '" + ckpt_path + "' does not exist");
    }
    const std::string hash = config_hash(local);
    const std::string run_id = make_run_id(local);

    auto [pretrained, _states] = load_checkpoint(ckpt_path);
    detail::check_checkpoint_shape(local, pretrained);
    const PretrainedSnapshot snap = snapshot(pretrained);

    const auto [domain_a, domain_b] = detail::make_domains(local, local.seed);
    const double acc_a_before = accuracy(local.model, pretrained, domain_a);

    detail::TrainPlan plan;
    plan.cfg = &local;
    plan.run_id = run_id;
    plan.hash = hash;
    plan.shuffle_seed = mix_seed(local.seed, detail::kShuffleSalt);
    plan.train_set = &domain_b;
    plan.probe_set = &domain_a;
    plan.probe_split = "eval_A";
    plan.snap = &snap;
    plan.finetune_family = true;
    auto out = detail::train_model(plan, std::move(pretrained));

    double acc_a_after = 0.0;
    for (const auto& r : out.metrics) {
        if (r.split == "eval_A") acc_a_after = r.accuracy;
    }

    RunResult result{run_id, hash, std::move(out.metrics), std::move(out.params),
                     std::move(out.states), {}};
    result.summary["run_id"] = run_id;
    result.summary["config"] = canonical_config_json(local);
    result.summary["seed"] = local.seed;
    result.summary["final"] = detail::final_section(result.metrics);
    result.summary["forgetting"] = acc_a_before - acc_a_after;
    detail::write_run_files(local, result);
    return result;
}

struct ForgettingArm {
    std::uint64_t seed = 0;
    double acc_a_before = 0.0;
    double acc_b_before = 0.0;
    double acc_a_after = 0.0;
    double acc_b_after = 0.0;
    double forgetting = 0.0;
};

struct ForgettingReport {
    std::string run_id;
    std::string hash;
    std::map<std::string, std::vector<ForgettingArm>> per_method;
    std::map<std::string, double> mean_forgetting;
    std::map<std::string, double> mean_acc_b;
    nlohmann::ordered_json summary;
};

// The two-fold protocol at desk scale: pretrain on A validating on B, then
// fine-tune on B once per method and measure what happened to A.
inline ForgettingReport run_forgetting(const ExperimentConfig& cfg) {
    if (cfg.mode != "forgetting") {
        throw ConfigError("run_forgetting: config mode is not 'forgetting'");
    }
    validate_config(cfg);
    const std::string hash = config_hash(cfg);
    const std::string run_id = make_run_id(cfg);
    const std::vector<std::string> methods = {"full", "l2sp", "dualopt"};

    ForgettingReport report;
    report.run_id = run_id;
    report.hash = hash;

    for (int si = 0; si < cfg.num_seeds; ++si) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(si);
        const auto [domain_a, domain_b] = detail::make_domains(cfg, seed);

        // pretrain phase: plain base optimizer on A, validation on B
        ExperimentConfig pre_cfg = cfg;
        pre_cfg.mode = "scratch";
        pre_cfg.method = "full";
        pre_cfg.seed = seed;
        SplitMix64 init_rng(mix_seed(seed, detail::kInitSalt));
        ModelParams initial = init_params(cfg.model, init_rng);
        detail::TrainPlan pre_plan;
        pre_plan.cfg = &pre_cfg;
        pre_plan.run_id = run_id;
        pre_plan.hash = hash;
        pre_plan.shuffle_seed = mix_seed(seed, detail::kShuffleSalt);
        pre_plan.train_set = &domain_a;
        auto pre = detail::train_model(pre_plan, std::move(initial));

        const double acc_a_before = accuracy(cfg.model, pre.params, domain_a);
        const double acc_b_before = accuracy(cfg.model, pre.params, domain_b);
        const PretrainedSnapshot snap = snapshot(pre.params);

        for (const auto& method : methods) {
            ExperimentConfig arm_cfg = cfg;
            arm_cfg.mode = "finetune";
            arm_cfg.method = method;
            arm_cfg.seed = seed;
            detail::TrainPlan plan;
            plan.cfg = &arm_cfg;
            plan.run_id = run_id;
            plan.hash = hash;
            plan.shuffle_seed = mix_seed(seed, detail::kShuffleSalt + 1);
            plan.train_set = &domain_b;
            plan.snap = &snap;
            plan.finetune_family = true;
            ModelParams arm_params = pre.params;
            auto out = detail::train_model(plan, std::move(arm_params));

            ForgettingArm arm;
            arm.seed = seed;
            arm.acc_a_before = acc_a_before;
            arm.acc_b_before = acc_b_before;
            arm.acc_a_after = accuracy(cfg.model, out.params, domain_a);
            arm.acc_b_after = accuracy(cfg.model, out.params, domain_b);
            arm.forgetting = acc_a_before - arm.acc_a_after;
            report.per_method[method].push_back(arm);
        }
    }

    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["config"] = canonical_config_json(cfg);
    j["base_seed"] = cfg.seed;
    nlohmann::ordered_json jm;
    for (const auto& method : methods) {
        const auto& arms = report.per_method[method];
        double sum_forget = 0.0, sum_acc_b = 0.0;
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (const auto& a : arms) {
            sum_forget += a.forgetting;
            sum_acc_b += a.acc_b_after;
            rows.push_back({{"seed", a.seed},
                            {"acc_A_before", a.acc_a_before},
                            {"acc_B_before", a.acc_b_before},
                            {"acc_A_after", a.acc_a_after},
                            {"acc_B_after", a.acc_b_after},
                            {"forgetting", a.forgetting}});
        }
        const double n = static_cast<double>(arms.size());
        report.mean_forgetting[method] = sum_forget / n;
        report.mean_acc_b[method] = sum_acc_b / n;
        jm[method] = {{"per_seed", rows},
                      {"mean_forgetting", report.mean_forgetting[method]},
                      {"mean_acc_B_after", report.mean_acc_b[method]}};
    }
    j["methods"] = jm;
    report.summary = j;

    ensure_out_dir(cfg.out_dir);
    write_text_file((std::filesystem::path(cfg.out_dir) / "forgetting_report.json").string(),
                    j.dump(2) + "\n");
    return report;
}

struct SweepCell {
    double iota1 = 0.0;
    double gamma = 0.0;
    std::uint64_t seed = 0;
    EvalRecord eval_b;
    EvalRecord eval_a;
    std::string hash;
};

inline std::string sweep_to_csv(const std::vector<SweepCell>& cells) {
    std::string out =
        "iota1,gamma,seed,eval_B_loss,eval_B_accuracy,eval_A_loss,eval_A_accuracy,config_hash\n";
    for (const auto& c : cells) {
        out += format_double(c.iota1);
        out += ',' + format_double(c.gamma);
        out += ',' + std::to_string(c.seed);
        out += ',' + format_double(c.eval_b.loss);
        out += ',' + format_double(c.eval_b.accuracy);
        out += ',' + format_double(c.eval_a.loss);
        out += ',' + format_double(c.eval_a.accuracy);
        out += ',' + c.hash;
        out += '\n';
    }
    return out;
}

// Full-factorial fine-tune sweep over (iota1, gamma) against one shared
// pretrained starting point. Cells run on `workers` threads; rows land in
// grid order no matter who finishes first.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg) {
    if (cfg.mode != "sweep") throw ConfigError("run_sweep: config mode is not 'sweep'");
    validate_config(cfg);

    const auto [domain_a, domain_b] = detail::make_domains(cfg, cfg.seed);

    // starting point: an explicit checkpoint if given, otherwise a seeded
    // pretrain pass on domain A
    std::optional<ModelParams> theta0;
    if (!cfg.pretrained_checkpoint.empty()) {
        auto [loaded, _s] = load_checkpoint(cfg.pretrained_checkpoint);
        detail::check_checkpoint_shape(cfg, loaded);
        theta0.emplace(std::move(loaded));
    } else {
        ExperimentConfig pre_cfg = cfg;
        pre_cfg.mode = "scratch";
        pre_cfg.method = "full";
        SplitMix64 init_rng(mix_seed(cfg.seed, detail::kInitSalt));
        ModelParams initial = init_params(cfg.model, init_rng);
        detail::TrainPlan pre_plan;
        pre_plan.cfg = &pre_cfg;
        pre_plan.shuffle_seed = mix_seed(cfg.seed, detail::kShuffleSalt);
        pre_plan.train_set = &domain_a;
        auto pre = detail::train_model(pre_plan, std::move(initial));
        theta0.emplace(std::move(pre.params));
    }
    const PretrainedSnapshot snap = snapshot(*theta0);

    struct CellSpec {
        double iota1, gamma;
        std::uint64_t seed;
    };
    std::vector<CellSpec> specs;
    for (double i1 : cfg.sweep.iota1_grid) {
        for (double gm : cfg.sweep.gamma_grid) {
            specs.push_back({i1, gm, mix_seed(cfg.seed, 500 + specs.size())});
        }
    }

    std::vector<SweepCell> cells(specs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= specs.size()) return;
            const auto& sp = specs[idx];
            ExperimentConfig cell_cfg = cfg;
            cell_cfg.mode = "finetune";
            cell_cfg.method = "dualopt";
            cell_cfg.iota1 = sp.iota1;
            cell_cfg.gamma = sp.gamma;
            cell_cfg.seed = sp.seed;
            detail::TrainPlan plan;
            plan.cfg = &cell_cfg;
            plan.shuffle_seed = mix_seed(sp.seed, detail::kShuffleSalt);
            plan.train_set = &domain_b;
            plan.snap = &snap;
            plan.finetune_family = true;
            ModelParams cell_params = *theta0;
            auto out = detail::train_model(plan, std::move(cell_params));

            SweepCell cell;
            cell.iota1 = sp.iota1;
            cell.gamma = sp.gamma;
            cell.seed = sp.seed;
            cell.eval_b = evaluate(cfg.model, out.params, domain_b);
            cell.eval_a = evaluate(cfg.model, out.params, domain_a);
            cell.hash = config_hash(cell_cfg);
            cells[idx] = std::move(cell);
        }
    };
    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.sweep.workers), specs.size());
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    ensure_out_dir(cfg.out_dir);
    write_text_file((std::filesystem::path(cfg.out_dir) / "sweep.csv").string(),
                    sweep_to_csv(cells));
    return cells;
}

// Runs every property suite and writes a machine-readable verdict.
inline VerifyReport run_verify(const ExperimentConfig& cfg) {
    if (cfg.mode != "verify") throw ConfigError("run_verify: config mode is not 'verify'");
    validate_config(cfg);
    const VerifyReport report = run_verify_suites(cfg.verify, cfg.seed);

    nlohmann::ordered_json j;
    j["run_id"] = make_run_id(cfg);
    j["seed"] = cfg.seed;
    nlohmann::ordered_json suites = nlohmann::ordered_json::array();
    for (const auto& s : report.suites) {
        nlohmann::ordered_json js = {{"name", s.name},
                                     {"trials", s.trials},
                                     {"failures", s.failures},
                                     {"passed", s.passed()}};
        if (!s.detail.empty()) js["first_failure"] = s.detail;
        suites.push_back(js);
    }
    j["suites"] = suites;
    j["all_passed"] = report.all_passed();
    ensure_out_dir(cfg.out_dir);
    write_text_file((std::filesystem::path(cfg.out_dir) / "verify.json").string(),
                    j.dump(2) + "\n");
    return report;
}

} // namespace dualopt
