#ifndef MLMSDA_ABLATION_HPP
#define MLMSDA_ABLATION_HPP

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mlmsda/config.hpp"
#include "mlmsda/evaluation.hpp"
#include "mlmsda/training.hpp"

namespace mlmsda {

// ===========================================================================
// Ablation suite: the full model plus its five variants. The two inference
// variants reuse the full model's training and differ only in how target
// predictions are combined.
// ===========================================================================

inline const std::vector<std::string>& ablation_variant_names() {
    static const std::vector<std::string> names = {
        "ML-w/o condition-adv", "ML-w/o L_E",           "ML-w/o L_M",
        "ML-guidance-inf",      "ML-branch-average-inf", "ML-MSDA (full)",
    };
    return names;
}

struct AblationRow {
    std::string variant;
    std::vector<double> per_seed_acc;
    double mean = 0.0;
    double stddev = 0.0; // population std: zero for a single seed
    std::string error;   // non-empty if any run for this row failed
};

struct AblationTable {
    std::vector<std::uint64_t> seeds;
    std::vector<AblationRow> rows;
    std::string config_hash;

    bool ok() const {
        for (const auto& r : rows) {
            if (!r.error.empty()) return false;
        }
        return true;
    }
};

namespace detail {

// Accuracies of one trained run under all three inference modes.
struct VariantResult {
    double acc_ensemble = 0.0;
    double acc_guidance = 0.0;
    double acc_branch_avg = 0.0;
    bool failed = false;
    std::string error;
};

inline RunConfig variant_config(const RunConfig& base, const std::string& key, std::uint64_t seed) {
    RunConfig c = base;
    c.flags = AblationFlags{};
    if (key == "no_condition_adv") c.flags.no_condition_adv = true;
    if (key == "no_entropy") c.flags.no_entropy = true;
    if (key == "no_mutual") c.flags.no_mutual = true;
    c.seed = seed;
    return c;
}

inline std::string cache_file(const std::string& dir, const std::string& key, std::uint64_t seed) {
    return dir + "/" + key + "_seed" + std::to_string(seed) + ".json";
}

inline bool load_cached(const std::string& path, const std::string& expect_hash, VariantResult& out) {
    std::ifstream is(path);
    if (!is) return false;
    try {
        nlohmann::json j = nlohmann::json::parse(is);
        if (j.value("config_hash", std::string()) != expect_hash) return false;
        out.acc_ensemble = j.at("acc_ensemble").get<double>();
        out.acc_guidance = j.at("acc_guidance_only").get<double>();
        out.acc_branch_avg = j.at("acc_branch_average").get<double>();
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

inline void store_cached(const std::string& path, const std::string& hash, std::uint64_t seed,
                         const std::string& key, const VariantResult& r) {
    nlohmann::json j{{"variant", key},
                     {"seed", seed},
                     {"config_hash", hash},
                     {"acc_ensemble", r.acc_ensemble},
                     {"acc_guidance_only", r.acc_guidance},
                     {"acc_branch_average", r.acc_branch_avg}};
    std::ofstream os(path);
    os << j.dump(2) << "\n";
}

} // namespace detail

// Trains the full model and the three loss ablations for every seed (the two
// inference-mode rows reuse the full runs) and aggregates target-test
// accuracy as mean +/- std. If cache_dir is non-empty, per-run results are
// persisted there and completed runs are skipped on re-invocation, keyed by
// the base config hash.
inline AblationTable run_ablations(const MultiDomainDataset& ds, const RunConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   const std::string& cache_dir = "", std::size_t workers = 1) {
    if (seeds.empty()) throw std::invalid_argument("run_ablations: need at least one seed");
    const std::string hash = config_hash_hex(base);
    if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);

    const std::vector<std::string> trained_keys = {"full", "no_condition_adv", "no_entropy", "no_mutual"};
    struct Job {
        std::string key;
        std::uint64_t seed;
        std::size_t slot;
    };
    std::vector<Job> jobs;
    for (std::size_t k = 0; k < trained_keys.size(); ++k) {
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            jobs.push_back({trained_keys[k], seeds[s], k * seeds.size() + s});
        }
    }
    std::vector<detail::VariantResult> results(jobs.size());

    auto run_job = [&](const Job& job) {
        detail::VariantResult r;
        const std::string cache_path =
            cache_dir.empty() ? std::string() : detail::cache_file(cache_dir, job.key, job.seed);
        if (!cache_path.empty() && detail::load_cached(cache_path, hash, r)) {
            results[job.slot] = r;
            return;
        }
        try {
            const RunConfig cfg = detail::variant_config(base, job.key, job.seed);
            TrainResult tr = train(ds, cfg);
            const EvalReport er =
                evaluate(tr.model, ds, InferenceMode::kEnsemble, cfg.seed, hash, /*run_probe=*/false);
            r.acc_ensemble = er.acc_ensemble;
            r.acc_guidance = er.acc_guidance_only;
            r.acc_branch_avg = er.acc_branch_average;
            if (!cache_path.empty()) detail::store_cached(cache_path, hash, job.seed, job.key, r);
        } catch (const std::exception& e) {
            r.failed = true;
            r.error = e.what();
        }
        results[job.slot] = r;
    };

    if (workers <= 1) {
        for (const Job& job : jobs) run_job(job);
    } else {
        std::mutex mu;
        std::size_t next = 0;
        auto worker = [&]() {
            for (;;) {
                std::size_t mine;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= jobs.size()) return;
                    mine = next++;
                }
                run_job(jobs[mine]);
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(workers, jobs.size()); ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    auto result_of = [&](const std::string& key, std::size_t seed_idx) -> const detail::VariantResult& {
        for (std::size_t k = 0; k < trained_keys.size(); ++k) {
            if (trained_keys[k] == key) return results[k * seeds.size() + seed_idx];
        }
        throw std::logic_error("run_ablations: unknown variant key " + key);
    };

    AblationTable table;
    table.seeds = seeds;
    table.config_hash = hash;
    struct RowSpec {
        const char* label;
        const char* key;
        double detail::VariantResult::* acc;
    };
    const RowSpec row_specs[] = {
        {"ML-w/o condition-adv", "no_condition_adv", &detail::VariantResult::acc_ensemble},
        {"ML-w/o L_E", "no_entropy", &detail::VariantResult::acc_ensemble},
        {"ML-w/o L_M", "no_mutual", &detail::VariantResult::acc_ensemble},
        {"ML-guidance-inf", "full", &detail::VariantResult::acc_guidance},
        {"ML-branch-average-inf", "full", &detail::VariantResult::acc_branch_avg},
        {"ML-MSDA (full)", "full", &detail::VariantResult::acc_ensemble},
    };
    for (const RowSpec& spec : row_specs) {
        AblationRow row;
        row.variant = spec.label;
        double sum = 0.0;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const detail::VariantResult& r = result_of(spec.key, s);
            if (r.failed) {
                row.error = r.error;
                continue;
            }
            row.per_seed_acc.push_back(r.*(spec.acc));
            sum += r.*(spec.acc);
        }
        if (!row.per_seed_acc.empty()) {
            row.mean = sum / static_cast<double>(row.per_seed_acc.size());
            double var = 0.0;
            for (double a : row.per_seed_acc) var += (a - row.mean) * (a - row.mean);
            row.stddev = std::sqrt(var / static_cast<double>(row.per_seed_acc.size()));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

// Tab-separated table, one row per variant.
inline std::string format_ablation_table(const AblationTable& t) {
    std::ostringstream os;
    os << "# config_hash=" << t.config_hash << "\n";
    os << "variant\tmean_acc\tstd_acc\tseeds";
    for (std::uint64_t s : t.seeds) os << "\tseed" << s;
    os << "\n";
    char buf[32];
    for (const auto& row : t.rows) {
        os << row.variant << "\t";
        if (!row.error.empty()) {
            os << "FAILED\tFAILED\t" << row.per_seed_acc.size() << "\t" << row.error << "\n";
            continue;
        }
        std::snprintf(buf, sizeof(buf), "%.6f", row.mean);
        os << buf << "\t";
        std::snprintf(buf, sizeof(buf), "%.6f", row.stddev);
        os << buf << "\t" << row.per_seed_acc.size();
        for (double a : row.per_seed_acc) {
            std::snprintf(buf, sizeof(buf), "%.6f", a);
            os << "\t" << buf;
        }
        os << "\n";
    }
    return os.str();
}

} // namespace mlmsda

#endif // MLMSDA_ABLATION_HPP
