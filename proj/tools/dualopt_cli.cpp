// Command-line front end: scratch / finetune / forgetting / sweep / verify
// subcommands over a JSON experiment config with flag overrides.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dualopt/harness.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<double> iota1, iota2, gamma, lambda, lr;
    std::optional<int> epochs;
    std::optional<std::string> method;
    std::optional<std::string> ckpt;
    std::optional<int> workers;
};

void add_common_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--config", ov.config_path, "JSON experiment config file");
    cmd->add_option("--seed", ov.seed, "random seed");
    cmd->add_option("--out", ov.out_dir, "output directory");
    cmd->add_option("--iota1", ov.iota1, "maximum rollback level");
    cmd->add_option("--iota2", ov.iota2, "minimum rollback level");
    cmd->add_option("--gamma", ov.gamma, "rollback power");
    cmd->add_option("--lambda", ov.lambda, "base weight decay rate");
    cmd->add_option("--lr", ov.lr, "base learning rate");
    cmd->add_option("--epochs", ov.epochs, "training epochs");
    cmd->add_option("--method", ov.method, "dualopt | full | linear | l2sp | lagged");
}

dualopt::ExperimentConfig build_config(const Overrides& ov, const std::string& mode) {
    dualopt::ExperimentConfig cfg =
        ov.config_path.empty() ? dualopt::parse_config(nlohmann::json::object(), mode)
                               : dualopt::load_config_file(ov.config_path, mode);
    cfg.mode = mode;
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.out_dir) cfg.out_dir = *ov.out_dir;
    if (ov.iota1) cfg.iota1 = *ov.iota1;
    if (ov.iota2) cfg.iota2 = *ov.iota2;
    if (ov.gamma) cfg.gamma = *ov.gamma;
    if (ov.lambda) cfg.lambda = *ov.lambda;
    if (ov.lr) cfg.schedule.base_lr = *ov.lr;
    if (ov.epochs) cfg.epochs = *ov.epochs;
    if (ov.method) cfg.method = *ov.method;
    if (ov.ckpt) cfg.pretrained_checkpoint = *ov.ckpt;
    if (ov.workers) cfg.sweep.workers = *ov.workers;
    return cfg;
}

void print_final(const dualopt::RunResult& result) {
    std::cout << result.run_id << " done; final:";
    for (const auto& [split, vals] : result.summary["final"].items()) {
        std::cout << ' ' << split << " acc=" << vals["accuracy"].get<double>()
                  << " loss=" << vals["loss"].get<double>();
    }
    std::cout << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"layer-wise weight decay / weight rollback optimizer harness"};
    app.require_subcommand(1);

    Overrides ov;
    CLI::App* scratch = app.add_subcommand("scratch", "train from scratch on domain A");
    CLI::App* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint on domain B");
    CLI::App* forgetting =
        app.add_subcommand("forgetting", "two-fold knowledge forgetting benchmark");
    CLI::App* sweep = app.add_subcommand("sweep", "grid sweep over (iota1, gamma)");
    CLI::App* verify = app.add_subcommand("verify", "run the property suites");
    for (CLI::App* cmd : {scratch, finetune, forgetting, sweep, verify}) {
        add_common_flags(cmd, ov);
    }
    finetune->add_option("--ckpt", ov.ckpt, "pretrained checkpoint path");
    sweep->add_option("--ckpt", ov.ckpt, "pretrained checkpoint path");
    sweep->add_option("--workers", ov.workers, "parallel sweep workers");

    CLI11_PARSE(app, argc, argv);

    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (scratch->parsed()) {
            print_final(dualopt::run_scratch(build_config(ov, "scratch")));
        } else if (finetune->parsed()) {
            const auto cfg = build_config(ov, "finetune");
            print_final(dualopt::run_finetune(cfg, cfg.pretrained_checkpoint));
        } else if (forgetting->parsed()) {
            const auto report = dualopt::run_forgetting(build_config(ov, "forgetting"));
            std::cout << report.run_id << " done\n";
            for (const auto& [method, forget] : report.mean_forgetting) {
                std::cout << "  " << method << ": mean forgetting " << forget << ", mean acc_B "
                          << report.mean_acc_b.at(method) << '\n';
            }
        } else if (sweep->parsed()) {
            const auto cells = dualopt::run_sweep(build_config(ov, "sweep"));
            std::cout << "sweep done; " << cells.size() << " cells\n";
        } else if (verify->parsed()) {
            const auto report = dualopt::run_verify(build_config(ov, "verify"));
            for (const auto& s : report.suites) {
                std::printf("%-24s trials=%-8ld failures=%-6ld %s\n", s.name.c_str(), s.trials,
                            s.failures, s.passed() ? "PASS" : "FAIL");
            }
            if (!report.all_passed()) {
                std::cerr << "verify: at least one suite failed\n";
                return 3;
            }
        }
    } catch (const dualopt::ConfigError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return 2;
    }
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    std::cerr << "elapsed " << ms << " ms\n";
    return 0;
}
