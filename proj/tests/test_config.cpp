#include <catch2/catch_amalgamated.hpp>

#include "mlmsda/config.hpp"

using namespace mlmsda;

namespace {

RunConfig sample_config() {
    RunConfig cfg;
    cfg.arch.input_dim = 2;
    cfg.arch.trunk_layers = {32, 16};
    cfg.arch.private_layers = {24};
    cfg.arch.feature_dim = 12;
    cfg.arch.num_classes = 3;
    cfg.arch.num_sources = 4;
    cfg.arch.share_trunk = false;
    cfg.arch.discriminator_layers = {40};
    cfg.hp = HyperParams{5.0, 0.5, 5.0};
    cfg.flags.no_entropy = true;
    cfg.flags.inference_mode = InferenceMode::kGuidanceOnly;
    cfg.optimizer.momentum = 0.85;
    cfg.optimizer.batch_size = 48;
    cfg.optimizer.epochs = 17;
    cfg.optimizer.adv_warmup = true;
    cfg.dataset.path = "data/foo.ds";
    cfg.dataset.has_generator = true;
    cfg.dataset.base_seed = 99;
    DomainSpec d;
    d.rotation_deg = 12.5;
    d.translation = {0.5, -0.25};
    d.train_count = 111;
    d.test_count = 22;
    d.seed = 8;
    cfg.dataset.domains = {d, d, d};
    cfg.seed = 1234;
    cfg.out_dir = "runs/sample";
    return cfg;
}

} // namespace

TEST_CASE("config round trip") {
    const RunConfig cfg = sample_config();
    SECTION("parse(serialize(cfg)) == cfg") {
        const RunConfig back = parse_run_config(serialize_run_config(cfg));
        CHECK(back == cfg);
        CHECK(serialize_run_config(back) == serialize_run_config(cfg));
    }
    SECTION("missing keys fall back to defaults") {
        const RunConfig sparse = parse_run_config(R"({"seed": 7})");
        CHECK(sparse.seed == 7);
        CHECK(sparse.hp == HyperParams{});
        CHECK(sparse.arch.num_sources == ArchConfig{}.num_sources);
        CHECK(sparse.flags.inference_mode == InferenceMode::kEnsemble);
    }
    SECTION("comments in config files are accepted") {
        const RunConfig c = parse_run_config("{\n  // trade-off weights\n  \"hyper\": {\"alpha\": 2.0}\n}");
        CHECK(c.hp.alpha == 2.0);
    }
    SECTION("unknown inference mode rejected") {
        CHECK_THROWS_AS(parse_run_config(R"({"flags": {"inference_mode": "mean-of-experts"}})"),
                        std::invalid_argument);
    }
}

TEST_CASE("inference mode names") {
    CHECK(to_string(InferenceMode::kEnsemble) == "ensemble");
    CHECK(to_string(InferenceMode::kGuidanceOnly) == "guidance_only");
    CHECK(to_string(InferenceMode::kBranchAverage) == "branch_average");
    CHECK(inference_mode_from_string("ensemble") == InferenceMode::kEnsemble);
    CHECK(inference_mode_from_string("guidance_only") == InferenceMode::kGuidanceOnly);
    CHECK(inference_mode_from_string("branch_average") == InferenceMode::kBranchAverage);
    CHECK_THROWS_AS(inference_mode_from_string("Ensemble"), std::invalid_argument);
}

TEST_CASE("config hash") {
    const RunConfig cfg = sample_config();
    SECTION("stable and sensitive") {
        CHECK(config_hash(cfg) == config_hash(cfg));
        RunConfig other = cfg;
        other.seed += 1;
        CHECK(config_hash(other) != config_hash(cfg));
        other = cfg;
        other.hp.alpha = 4.9;
        CHECK(config_hash(other) != config_hash(cfg));
    }
    SECTION("hex form is 16 lowercase hex digits") {
        const std::string hex = config_hash_hex(cfg);
        CHECK(hex.size() == 16);
        for (char c : hex) CHECK(((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')));
    }
    SECTION("round-tripped config hashes identically") {
        const RunConfig back = parse_run_config(serialize_run_config(cfg));
        CHECK(config_hash(back) == config_hash(cfg));
    }
}

TEST_CASE("flag resolution") {
    RunConfig cfg = sample_config();
    SECTION("no_condition_adv resolves into the architecture") {
        cfg.flags.no_condition_adv = false;
        CHECK(cfg.resolved_arch().conditional_adversary);
        cfg.flags.no_condition_adv = true;
        CHECK(!cfg.resolved_arch().conditional_adversary);
        CHECK(cfg.resolved_arch().discriminator_input_dim() == cfg.arch.feature_dim);
    }
    SECTION("no_mutual and no_entropy zero the effective weights") {
        cfg.flags.no_mutual = true;
        cfg.flags.no_entropy = true;
        const HyperParams hp = cfg.effective_hp();
        CHECK(hp.alpha == 0.0);
        CHECK(hp.beta == 0.0);
        CHECK(hp.lambda == cfg.hp.lambda);
    }
    SECTION("validation rejects nonsense") {
        RunConfig bad = sample_config();
        bad.optimizer.batch_size = 0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = sample_config();
        bad.optimizer.momentum = 1.0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = sample_config();
        bad.dataset.path.clear();
        bad.dataset.has_generator = false;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = sample_config();
        bad.hp.lambda = -0.1;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}
