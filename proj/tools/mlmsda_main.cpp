// Command-line harness: generate | train | eval | ablate.
// Run with --help for the flag reference.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mlmsda/cli.hpp"

namespace {

mlmsda::RunConfig load_config_or_die(const std::string& path) { return mlmsda::load_run_config(path); }

std::size_t worker_cap() {
    // MLMSDA_WORKERS caps ablation parallelism; default is sequential.
    if (const char* env = std::getenv("MLMSDA_WORKERS")) {
        const long v = std::atol(env);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ML-MSDA: mutual-learning multi-source domain adaptation harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed = 0;
    bool seed_given = false;

    auto* generate = app.add_subcommand("generate", "write the dataset described by the config");
    generate->add_option("--config", config_path, "run config (json)")->required();

    auto* train = app.add_subcommand("train", "train a model and stream per-epoch metrics");
    train->add_option("--config", config_path, "run config (json)")->required();
    train->add_option("--seed", seed, "override config seed")->each([&](const std::string&) {
        seed_given = true;
    });
    train->add_option("--out", out_override, "override config out_dir");

    std::string ckpt_path, ds_path, mode = "ensemble", report_out;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    eval->add_option("--dataset", ds_path, "dataset file")->required();
    eval->add_option("--mode", mode, "ensemble|guidance_only|branch_average");
    eval->add_option("--out", report_out, "report file (also printed to stdout)");
    eval->add_option("--seed", seed, "probe seed");

    std::vector<std::uint64_t> seeds;
    auto* ablate = app.add_subcommand("ablate", "run the full model and its five variants");
    ablate->add_option("--config", config_path, "run config (json)")->required();
    ablate->add_option("--seeds", seeds, "seeds, e.g. --seeds 0 1 2")->expected(-1);
    ablate->add_option("--out", out_override, "override config out_dir");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) {
            return mlmsda::cli::cmd_generate(load_config_or_die(config_path));
        }
        if (train->parsed()) {
            mlmsda::RunConfig cfg = load_config_or_die(config_path);
            if (seed_given) cfg.seed = seed;
            if (!out_override.empty()) cfg.out_dir = out_override;
            return mlmsda::cli::cmd_train(cfg);
        }
        if (eval->parsed()) {
            return mlmsda::cli::cmd_eval(ckpt_path, ds_path, mode, report_out, seed);
        }
        if (ablate->parsed()) {
            mlmsda::RunConfig cfg = load_config_or_die(config_path);
            if (!out_override.empty()) cfg.out_dir = out_override;
            if (seeds.empty()) seeds = {0};
            return mlmsda::cli::cmd_ablate(cfg, seeds, worker_cap());
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
