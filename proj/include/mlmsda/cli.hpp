#ifndef MLMSDA_CLI_HPP
#define MLMSDA_CLI_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mlmsda/ablation.hpp"
#include "mlmsda/config.hpp"
#include "mlmsda/data.hpp"
#include "mlmsda/evaluation.hpp"
#include "mlmsda/model.hpp"
#include "mlmsda/training.hpp"

namespace mlmsda::cli {

namespace fs = std::filesystem;

inline void ensure_parent_dir(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// generate: build the synthetic dataset described by the config's generator
// spec, write it to dataset.path, and drop a manifest next to it.
inline int cmd_generate(const RunConfig& cfg, std::ostream& out = std::cout) {
    if (!cfg.dataset.has_generator) {
        throw std::invalid_argument("generate: config has no dataset.generator section");
    }
    if (cfg.dataset.path.empty()) {
        throw std::invalid_argument("generate: config has no dataset.path to write to");
    }
    const MultiDomainDataset ds = generate_ring_domains(cfg.dataset.base_seed, cfg.dataset.domains);
    ensure_parent_dir(cfg.dataset.path);
    save_dataset(ds, cfg.dataset.path, config_hash(cfg));

    nlohmann::json manifest{{"config_hash", config_hash_hex(cfg)},
                            {"path", cfg.dataset.path},
                            {"generator", cfgjson::to_json(cfg.dataset)["generator"]},
                            {"num_sources", ds.num_sources()},
                            {"num_classes", ds.num_classes},
                            {"input_dim", ds.input_dim},
                            {"total_source_train", ds.total_source_train()},
                            {"target_train", ds.target_train.count},
                            {"target_test", ds.target_test.count}};
    std::ofstream ms(cfg.dataset.path + ".manifest.json");
    if (!ms) throw std::runtime_error("generate: cannot write manifest for " + cfg.dataset.path);
    ms << manifest.dump(2) << "\n";
    out << "wrote " << cfg.dataset.path << " (" << ds.num_sources() << " sources + target, K="
        << ds.num_classes << ")\n";
    return 0;
}

inline nlohmann::json metrics_record(const EpochMetrics& m, const std::string& hash) {
    return nlohmann::json{{"epoch", m.epoch},
                          {"l_c", m.l_c},
                          {"l_e", m.l_e},
                          {"l_adv", m.l_adv},
                          {"l_m", m.l_m},
                          {"total", m.total},
                          {"source_acc", m.source_acc},
                          {"target_acc",
                           {{"ensemble", m.acc_ensemble},
                            {"guidance_only", m.acc_guidance},
                            {"branch_average", m.acc_branch_avg}}},
                          {"disc_acc", m.disc_acc},
                          {"wall_seconds", m.wall_seconds},
                          {"config_hash", hash}};
}

// train: run the full loop, streaming one metrics record per epoch to
// <out_dir>/metrics.jsonl, with the resolved config and a final checkpoint
// beside it.
inline int cmd_train(const RunConfig& cfg, std::ostream& out = std::cout) {
    cfg.validate();
    if (cfg.dataset.path.empty() || !fs::exists(cfg.dataset.path)) {
        throw std::runtime_error("train: dataset file not found: '" + cfg.dataset.path +
                                 "' (run the generate command first)");
    }
    const MultiDomainDataset ds = load_dataset(cfg.dataset.path);
    fs::create_directories(cfg.out_dir);
    const std::string hash = config_hash_hex(cfg);

    {
        std::ofstream cs(cfg.out_dir + "/resolved_config.json");
        if (!cs) throw std::runtime_error("train: cannot write resolved config in " + cfg.out_dir);
        cs << serialize_run_config(cfg) << "\n";
    }

    std::ofstream metrics(cfg.out_dir + "/metrics.jsonl");
    if (!metrics) throw std::runtime_error("train: cannot open metrics stream in " + cfg.out_dir);

    const TrainResult result = train(ds, cfg, [&](const EpochMetrics& m, const MlMsdaModel& model) {
        metrics << metrics_record(m, hash).dump() << "\n";
        metrics.flush();
        out << "epoch " << m.epoch << "  total=" << m.total << "  target(" << to_string(cfg.flags.inference_mode)
            << ")=" << target_acc_under(m, cfg.flags.inference_mode) << "\n";
        if (cfg.optimizer.checkpoint_every > 0 && (m.epoch + 1) % cfg.optimizer.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "/model_epoch_%04zu.ckpt", m.epoch);
            save_checkpoint(model, cfg.out_dir + name, config_hash(cfg));
        }
    });

    save_checkpoint(result.model, cfg.out_dir + "/model_final.ckpt", config_hash(cfg));
    out << "run complete: " << cfg.out_dir << " (" << result.metrics.size() << " epochs)\n";
    return 0;
}

// eval: score a checkpoint on a dataset; the report goes to stdout and to a
// file with identical bytes.
inline int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                    const std::string& mode_str, const std::string& out_file, std::uint64_t seed,
                    std::ostream& out = std::cout) {
    const InferenceMode mode = inference_mode_from_string(mode_str);
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const MultiDomainDataset ds = load_dataset(dataset_path);
    const ArchConfig& arch = ck.model.config();
    if (arch.num_classes != ds.num_classes) {
        throw std::invalid_argument("eval: checkpoint expects K=" + std::to_string(arch.num_classes) +
                                    " but dataset has K=" + std::to_string(ds.num_classes));
    }
    if (arch.input_dim != ds.input_dim) {
        throw std::invalid_argument("eval: checkpoint input_dim " + std::to_string(arch.input_dim) +
                                    " does not match dataset input_dim " + std::to_string(ds.input_dim));
    }
    if (arch.num_sources != ds.num_sources()) {
        throw std::invalid_argument("eval: checkpoint expects " + std::to_string(arch.num_sources) +
                                    " source domains but dataset has " + std::to_string(ds.num_sources()));
    }
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(ck.config_hash));
    const EvalReport report = evaluate(ck.model, ds, mode, seed, hash_hex);
    const std::string text = to_json(report).dump(2) + "\n";
    out << text;
    if (!out_file.empty()) {
        ensure_parent_dir(out_file);
        std::ofstream os(out_file);
        if (!os) throw std::runtime_error("eval: cannot write report to " + out_file);
        os << text;
    }
    return 0;
}

// ablate: train the full model and the loss-ablation variants for every
// seed, then write the aggregated table. Completed runs are cached in
// <out_dir>/ablation_cache and skipped when re-invoked.
inline int cmd_ablate(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                      std::size_t workers, std::ostream& out = std::cout) {
    cfg.validate();
    if (cfg.dataset.path.empty() || !fs::exists(cfg.dataset.path)) {
        throw std::runtime_error("ablate: dataset file not found: '" + cfg.dataset.path + "'");
    }
    const MultiDomainDataset ds = load_dataset(cfg.dataset.path);
    fs::create_directories(cfg.out_dir);
    const AblationTable table =
        run_ablations(ds, cfg, seeds, cfg.out_dir + "/ablation_cache", workers);
    const std::string text = format_ablation_table(table);
    {
        std::ofstream os(cfg.out_dir + "/ablation_table.tsv");
        if (!os) throw std::runtime_error("ablate: cannot write table in " + cfg.out_dir);
        os << text;
    }
    out << text;
    if (!table.ok()) {
        out << "ablate: one or more variants failed\n";
        return 1;
    }
    return 0;
}

} // namespace mlmsda::cli

#endif // MLMSDA_CLI_HPP
