#ifndef MLMSDA_CONFIG_HPP
#define MLMSDA_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "mlmsda/data.hpp"
#include "mlmsda/losses.hpp"
#include "mlmsda/model.hpp"

namespace mlmsda {

enum class InferenceMode { kEnsemble, kGuidanceOnly, kBranchAverage };

inline std::string to_string(InferenceMode m) {
    switch (m) {
        case InferenceMode::kEnsemble: return "ensemble";
        case InferenceMode::kGuidanceOnly: return "guidance_only";
        case InferenceMode::kBranchAverage: return "branch_average";
    }
    throw std::invalid_argument("unknown inference mode");
}

inline InferenceMode inference_mode_from_string(const std::string& s) {
    if (s == "ensemble") return InferenceMode::kEnsemble;
    if (s == "guidance_only") return InferenceMode::kGuidanceOnly;
    if (s == "branch_average") return InferenceMode::kBranchAverage;
    throw std::invalid_argument("inference mode must be one of ensemble|guidance_only|branch_average, got '" +
                                s + "'");
}

// One switch per ablation variant; all off is the full model.
struct AblationFlags {
    bool no_condition_adv = false; // discriminators see plain features
    bool no_entropy = false;       // beta forced to 0
    bool no_mutual = false;        // alpha forced to 0
    bool freeze_guidance_in_mutual = false; // diagnostic only
    InferenceMode inference_mode = InferenceMode::kEnsemble;

    bool operator==(const AblationFlags&) const = default;
};

struct OptimizerConfig {
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    bool adv_warmup = false; // linear reversal-scale ramp over the first epoch
    bool equal_domain_sampling = false;
    std::size_t checkpoint_every = 0; // epochs between checkpoints; 0 = final only

    bool operator==(const OptimizerConfig&) const = default;
};

struct DatasetConfig {
    std::string path; // where the dataset file lives (or will be written)
    bool has_generator = false;
    std::uint64_t base_seed = 0;
    std::vector<DomainSpec> domains; // sources first, target last

    bool operator==(const DatasetConfig&) const = default;
};

struct RunConfig {
    ArchConfig arch;
    HyperParams hp;
    AblationFlags flags;
    OptimizerConfig optimizer;
    DatasetConfig dataset;
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";

    bool operator==(const RunConfig&) const = default;

    // The no-condition ablation changes the discriminator input width, so it
    // is resolved into the architecture before the model is built.
    ArchConfig resolved_arch() const {
        ArchConfig a = arch;
        a.conditional_adversary = !flags.no_condition_adv;
        return a;
    }

    HyperParams effective_hp() const {
        HyperParams h = hp;
        if (flags.no_mutual) h.alpha = 0.0;
        if (flags.no_entropy) h.beta = 0.0;
        return h;
    }

    void validate() const {
        arch.validate();
        hp.validate();
        if (optimizer.batch_size == 0) throw std::invalid_argument("RunConfig: batch_size must be >= 1");
        if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) {
            throw std::invalid_argument("RunConfig: momentum must be in [0, 1)");
        }
        if (dataset.path.empty() && !dataset.has_generator) {
            throw std::invalid_argument("RunConfig: dataset needs a path or a generator spec");
        }
    }
};

// ---------------------------------------------------------------------------
// json round trip. parse(serialize(cfg)) == cfg; missing keys take defaults.
// ---------------------------------------------------------------------------

namespace cfgjson {

using nlohmann::json;

inline json dump_sizes(const std::vector<std::size_t>& v) { return json(v); }

inline std::vector<std::size_t> load_sizes(const json& j) {
    return j.get<std::vector<std::size_t>>();
}

inline json to_json(const ArchConfig& a) {
    return json{{"input_dim", a.input_dim},
                {"trunk_layers", a.trunk_layers},
                {"private_layers", a.private_layers},
                {"feature_dim", a.feature_dim},
                {"num_classes", a.num_classes},
                {"num_sources", a.num_sources},
                {"share_trunk", a.share_trunk},
                {"discriminator_layers", a.discriminator_layers},
                {"conditional_adversary", a.conditional_adversary},
                {"detach_predictions", a.detach_predictions}};
}

inline ArchConfig arch_from_json(const json& j) {
    ArchConfig d;
    d.input_dim = j.value("input_dim", d.input_dim);
    d.trunk_layers = j.contains("trunk_layers") ? load_sizes(j["trunk_layers"]) : d.trunk_layers;
    d.private_layers = j.contains("private_layers") ? load_sizes(j["private_layers"]) : d.private_layers;
    d.feature_dim = j.value("feature_dim", d.feature_dim);
    d.num_classes = j.value("num_classes", d.num_classes);
    d.num_sources = j.value("num_sources", d.num_sources);
    d.share_trunk = j.value("share_trunk", d.share_trunk);
    d.discriminator_layers =
        j.contains("discriminator_layers") ? load_sizes(j["discriminator_layers"]) : d.discriminator_layers;
    d.conditional_adversary = j.value("conditional_adversary", d.conditional_adversary);
    d.detach_predictions = j.value("detach_predictions", d.detach_predictions);
    return d;
}

inline json to_json(const HyperParams& h) {
    return json{{"alpha", h.alpha}, {"beta", h.beta}, {"lambda", h.lambda}};
}

inline HyperParams hp_from_json(const json& j) {
    HyperParams d;
    d.alpha = j.value("alpha", d.alpha);
    d.beta = j.value("beta", d.beta);
    d.lambda = j.value("lambda", d.lambda);
    return d;
}

inline json to_json(const AblationFlags& f) {
    return json{{"no_condition_adv", f.no_condition_adv},
                {"no_entropy", f.no_entropy},
                {"no_mutual", f.no_mutual},
                {"freeze_guidance_in_mutual", f.freeze_guidance_in_mutual},
                {"inference_mode", to_string(f.inference_mode)}};
}

inline AblationFlags flags_from_json(const json& j) {
    AblationFlags d;
    d.no_condition_adv = j.value("no_condition_adv", d.no_condition_adv);
    d.no_entropy = j.value("no_entropy", d.no_entropy);
    d.no_mutual = j.value("no_mutual", d.no_mutual);
    d.freeze_guidance_in_mutual = j.value("freeze_guidance_in_mutual", d.freeze_guidance_in_mutual);
    d.inference_mode =
        inference_mode_from_string(j.value("inference_mode", to_string(d.inference_mode)));
    return d;
}

inline json to_json(const OptimizerConfig& o) {
    return json{{"momentum", o.momentum},
                {"batch_size", o.batch_size},
                {"epochs", o.epochs},
                {"adv_warmup", o.adv_warmup},
                {"equal_domain_sampling", o.equal_domain_sampling},
                {"checkpoint_every", o.checkpoint_every}};
}

inline OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig d;
    d.momentum = j.value("momentum", d.momentum);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.epochs = j.value("epochs", d.epochs);
    d.adv_warmup = j.value("adv_warmup", d.adv_warmup);
    d.equal_domain_sampling = j.value("equal_domain_sampling", d.equal_domain_sampling);
    d.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    return d;
}

inline json to_json(const DomainSpec& s) {
    return json{{"rotation_deg", s.rotation_deg},
                {"translation", {s.translation[0], s.translation[1]}},
                {"noise_sigma", s.noise_sigma},
                {"class_count", s.class_count},
                {"train_count", s.train_count},
                {"test_count", s.test_count},
                {"seed", s.seed}};
}

inline DomainSpec domain_from_json(const json& j) {
    DomainSpec d;
    d.rotation_deg = j.value("rotation_deg", d.rotation_deg);
    if (j.contains("translation")) {
        d.translation = {j["translation"][0].get<double>(), j["translation"][1].get<double>()};
    }
    d.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    d.class_count = j.value("class_count", d.class_count);
    d.train_count = j.value("train_count", d.train_count);
    d.test_count = j.value("test_count", d.test_count);
    d.seed = j.value("seed", d.seed);
    return d;
}

inline json to_json(const DatasetConfig& ds) {
    json j{{"path", ds.path}};
    if (ds.has_generator) {
        json domains = json::array();
        for (const auto& d : ds.domains) domains.push_back(to_json(d));
        j["generator"] = json{{"family", "ring"}, {"base_seed", ds.base_seed}, {"domains", domains}};
    }
    return j;
}

inline DatasetConfig dataset_from_json(const json& j) {
    DatasetConfig d;
    d.path = j.value("path", std::string());
    if (j.contains("generator")) {
        const json& g = j["generator"];
        const std::string family = g.value("family", std::string("ring"));
        if (family != "ring") {
            throw std::invalid_argument("dataset generator family must be 'ring', got '" + family + "'");
        }
        d.has_generator = true;
        d.base_seed = g.value("base_seed", std::uint64_t{0});
        if (g.contains("domains")) {
            for (const auto& dj : g["domains"]) d.domains.push_back(domain_from_json(dj));
        }
    }
    return d;
}

} // namespace cfgjson

inline nlohmann::json to_json(const RunConfig& c) {
    return nlohmann::json{{"arch", cfgjson::to_json(c.arch)},
                          {"hyper", cfgjson::to_json(c.hp)},
                          {"flags", cfgjson::to_json(c.flags)},
                          {"optimizer", cfgjson::to_json(c.optimizer)},
                          {"dataset", cfgjson::to_json(c.dataset)},
                          {"seed", c.seed},
                          {"out_dir", c.out_dir}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("arch")) c.arch = cfgjson::arch_from_json(j["arch"]);
    if (j.contains("hyper")) c.hp = cfgjson::hp_from_json(j["hyper"]);
    if (j.contains("flags")) c.flags = cfgjson::flags_from_json(j["flags"]);
    if (j.contains("optimizer")) c.optimizer = cfgjson::optimizer_from_json(j["optimizer"]);
    if (j.contains("dataset")) c.dataset = cfgjson::dataset_from_json(j["dataset"]);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    return c;
}

// Canonical form: nlohmann objects serialize with sorted keys, so equal
// configs always produce identical bytes.
inline std::string serialize_run_config(const RunConfig& c) { return to_json(c).dump(2); }

inline RunConfig parse_run_config(const std::string& text) {
    // json-with-comments accepted (the shipped defaults file uses comments)
    return run_config_from_json(nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true));
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Hash of the fully resolved config; embedded in every output artifact so
// artifacts from the same run can be identified.
inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(to_json(c).dump()); }

inline std::string config_hash_hex(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(c)));
    return std::string(buf);
}

} // namespace mlmsda

#endif // MLMSDA_CONFIG_HPP
