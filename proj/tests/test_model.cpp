#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "mlmsda/losses.hpp"
#include "mlmsda/model.hpp"

using namespace mlmsda;
using testutil::random_tensor;

namespace {

ArchConfig tiny_arch() {
    ArchConfig cfg;
    cfg.input_dim = 3;
    cfg.trunk_layers = {4};
    cfg.private_layers = {4};
    cfg.feature_dim = 2;
    cfg.num_classes = 2;
    cfg.num_sources = 2;
    cfg.share_trunk = true;
    cfg.discriminator_layers = {3};
    return cfg;
}

void zero_params(MlMsdaModel& m) {
    for (Tensor* p : m.parameters()) std::fill(p->data.begin(), p->data.end(), 0.0);
}

StepBatch tiny_batch(const ArchConfig& cfg, Rng& rng, std::size_t b_src = 4, std::size_t b_tgt = 5) {
    StepBatch batch;
    auto make = [&](std::size_t n) {
        Batch out;
        out.x = random_tensor({n, cfg.input_dim}, rng);
        out.y_onehot = Tensor({n, cfg.num_classes});
        out.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = rng.below(cfg.num_classes);
            out.y[i] = static_cast<std::uint32_t>(c);
            out.y_onehot.at(i, c) = 1.0;
        }
        return out;
    };
    for (std::size_t j = 0; j < cfg.num_sources; ++j) batch.branch.push_back(make(b_src));
    batch.combined = make(b_src + 2);
    batch.target_x = random_tensor({b_tgt, cfg.input_dim}, rng);
    return batch;
}

} // namespace

TEST_CASE("init_model determinism and sharing semantics") {
    const ArchConfig cfg = tiny_arch();
    SECTION("same (cfg, seed) twice gives bitwise-identical parameters") {
        MlMsdaModel a = MlMsdaModel::init(cfg, 17);
        MlMsdaModel b = MlMsdaModel::init(cfg, 17);
        auto pa = a.parameters(), pb = b.parameters();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->data == pb[i]->data);
        MlMsdaModel c = MlMsdaModel::init(cfg, 18);
        CHECK(c.parameters()[0]->data != pa[0]->data);
    }
    SECTION("share_trunk=true aliases trunk storage across subnetworks") {
        MlMsdaModel m = MlMsdaModel::init(cfg, 1);
        REQUIRE(m.subnet_count() == 3);
        CHECK(m.subnet(0).trunk[0].w.get() == m.subnet(2).trunk[0].w.get());
        m.subnet(0).trunk[0].w->data[0] = 123.0; // mutation visible everywhere
        CHECK(m.subnet(1).trunk[0].w->data[0] == 123.0);
    }
    SECTION("share_trunk=false gives disjoint trunks") {
        ArchConfig c2 = cfg;
        c2.share_trunk = false;
        MlMsdaModel m = MlMsdaModel::init(c2, 1);
        CHECK(m.subnet(0).trunk[0].w.get() != m.subnet(1).trunk[0].w.get());
        m.subnet(0).trunk[0].w->data[0] = 123.0;
        CHECK(m.subnet(1).trunk[0].w->data[0] != 123.0);
        // parameter count: one extra trunk stage per subnetwork
        CHECK(m.parameters().size() ==
              MlMsdaModel::init(cfg, 1).parameters().size() + 2 * cfg.trunk_layers.size() * 2);
    }
    SECTION("invalid dimensions rejected") {
        ArchConfig bad = cfg;
        bad.num_classes = 1;
        CHECK_THROWS_AS(MlMsdaModel::init(bad, 0), std::invalid_argument);
        bad = cfg;
        bad.num_sources = 0;
        CHECK_THROWS_AS(MlMsdaModel::init(bad, 0), std::invalid_argument);
    }
}

TEST_CASE("extract") {
    const ArchConfig cfg = tiny_arch();
    MlMsdaModel m = MlMsdaModel::init(cfg, 3);
    Rng rng(9);
    SECTION("zero weights give zero features") {
        zero_params(m);
        Tape t;
        const Tensor f = t.value(extract(t, m, 0, t.constant(random_tensor({4, 3}, rng))));
        for (double v : f.data) CHECK(v == 0.0);
    }
    SECTION("batch dimension is preserved") {
        Tape t;
        const Tensor f = t.value(extract(t, m, 1, t.constant(random_tensor({7, 3}, rng))));
        CHECK(f.shape == std::vector<std::size_t>{7, cfg.feature_dim});
    }
    SECTION("index out of range") {
        Tape t;
        Val x = t.constant(random_tensor({1, 3}, rng));
        CHECK_THROWS_AS(extract(t, m, 3, x), std::invalid_argument);
    }
}

TEST_CASE("classify") {
    const ArchConfig cfg = tiny_arch();
    MlMsdaModel m = MlMsdaModel::init(cfg, 4);
    Rng rng(10);
    SECTION("zero classifier weights give uniform rows") {
        std::fill(m.subnet(0).classifier.w->data.begin(), m.subnet(0).classifier.w->data.end(), 0.0);
        std::fill(m.subnet(0).classifier.b->data.begin(), m.subnet(0).classifier.b->data.end(), 0.0);
        Tape t;
        Val f = extract(t, m, 0, t.constant(random_tensor({5, 3}, rng)));
        const Tensor p = t.value(classify(t, m, 0, f));
        for (double v : p.data) CHECK(v == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("rows sum to one") {
        Tape t;
        Val f = extract(t, m, 2, t.constant(random_tensor({6, 3}, rng)));
        const Tensor p = t.value(classify(t, m, 2, f));
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < p.cols(); ++k) s += p.at(i, k);
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }
    SECTION("argmax and probabilities invariant to a constant logit shift") {
        Tensor x = random_tensor({4, 3}, rng);
        Tape t1;
        const Tensor p1 = t1.value(classify(t1, m, 0, extract(t1, m, 0, t1.constant(x))));
        for (double& v : m.subnet(0).classifier.b->data) v += 7.5;
        Tape t2;
        const Tensor p2 = t2.value(classify(t2, m, 0, extract(t2, m, 0, t2.constant(x))));
        for (std::size_t i = 0; i < p1.rows(); ++i) {
            std::size_t best1 = 0, best2 = 0;
            for (std::size_t k = 1; k < p1.cols(); ++k) {
                if (p1.at(i, k) > p1.at(i, best1)) best1 = k;
                if (p2.at(i, k) > p2.at(i, best2)) best2 = k;
            }
            CHECK(best1 == best2);
        }
        for (std::size_t i = 0; i < p1.numel(); ++i) {
            CHECK(p1.data[i] == Catch::Approx(p2.data[i]).margin(1e-12));
        }
    }
}

TEST_CASE("condition") {
    SECTION("hand outer product d=2 K=2") {
        Tape t;
        Val f = t.constant(Tensor::matrix(1, 2, {1, 2}));
        Val p = t.constant(Tensor::matrix(1, 2, {1, 0}));
        CHECK(t.value(condition(f, p, true)).data == std::vector<double>{1, 0, 2, 0});
    }
    SECTION("uniform predictions give f/K blocks") {
        Tape t;
        Val f = t.constant(Tensor::matrix(1, 2, {3, 9}));
        Val p = t.constant(Tensor::matrix(1, 3, {1.0 / 3, 1.0 / 3, 1.0 / 3}));
        const Tensor& c = t.value(condition(f, p, true));
        for (std::size_t a = 0; a < 2; ++a) {
            for (std::size_t k = 0; k < 3; ++k) {
                CHECK(c.data[a * 3 + k] == Catch::Approx((a == 0 ? 3.0 : 9.0) / 3.0));
            }
        }
    }
    SECTION("detach_preds blocks the gradient into the logits") {
        Rng rng(21);
        Tensor logits = random_tensor({3, 4}, rng);
        logits.requires_grad = true;
        Tensor f = random_tensor({3, 2}, rng);
        Tensor cot = random_tensor({3, 8}, rng); // asymmetric weighting across blocks
        for (bool detach : {true, false}) {
            logits.grad.clear();
            Tape t;
            Val p = softmax_rows(t.leaf(logits));
            t.backward(sum(mul(condition(t.constant(f), p, detach), t.constant(cot))));
            double norm = 0.0;
            for (double g : logits.grad) norm += std::abs(g);
            if (detach) {
                CHECK(norm == 0.0);
            } else {
                CHECK(norm > 1e-6);
            }
        }
    }
}

TEST_CASE("discriminate") {
    const ArchConfig cfg = tiny_arch();
    MlMsdaModel m = MlMsdaModel::init(cfg, 6);
    Rng rng(31);
    const std::size_t dk = cfg.feature_dim * cfg.num_classes;
    SECTION("zero weights give 0.5") {
        zero_params(m);
        Tape t;
        const Tensor d = t.value(discriminate(t, m, 0, t.constant(random_tensor({4, dk}, rng)), 1.0));
        CHECK(d.shape == std::vector<std::size_t>{4, 1});
        for (double v : d.data) CHECK(v == 0.5);
    }
    SECTION("outputs strictly inside (0,1)") {
        Tape t;
        const Tensor d =
            t.value(discriminate(t, m, 1, t.constant(random_tensor({64, dk}, rng, -50, 50)), 1.0));
        for (double v : d.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    SECTION("adv_scale=0 removes the adversarial gradient upstream") {
        Tensor conditioned = random_tensor({4, dk}, rng);
        conditioned.requires_grad = true;
        Tape t;
        t.backward(sum(discriminate(t, m, 0, t.leaf(conditioned), 0.0)));
        for (double g : conditioned.grad) CHECK(g == 0.0);
        // while the discriminator's own parameters still receive gradient
        double dnorm = 0.0;
        for (const Affine& a : m.subnet(0).discriminator) {
            for (double g : a.w->grad) dnorm += std::abs(g);
        }
        CHECK(dnorm > 0.0);
    }
}

TEST_CASE("forward_all") {
    const ArchConfig cfg = tiny_arch();
    Rng rng(41);
    SECTION("N=2 yields 3 subnetwork outputs with the right shapes") {
        MlMsdaModel m = MlMsdaModel::init(cfg, 7);
        StepBatch batch = tiny_batch(cfg, rng);
        Tape t;
        const ForwardAllOutputs fw = forward_all(t, m, batch);
        REQUIRE(fw.subnet.size() == 3);
        CHECK(t.value(fw.subnet[0].src_probs).shape == std::vector<std::size_t>{4, 2});
        CHECK(t.value(fw.subnet[2].src_probs).shape == std::vector<std::size_t>{6, 2}); // combined
        for (const auto& s : fw.subnet) {
            CHECK(t.value(s.tgt_probs).shape == std::vector<std::size_t>{5, 2});
            CHECK(t.value(s.src_disc).cols() == 1);
            CHECK(t.value(s.tgt_disc).rows() == 5);
        }
    }
    SECTION("every subnetwork sees the same target batch") {
        MlMsdaModel m = MlMsdaModel::init(cfg, 7);
        // make all private stages + heads identical so equal target outputs
        // certify equal target inputs
        for (std::size_t j = 1; j < m.subnet_count(); ++j) {
            for (std::size_t l = 0; l < m.subnet(0).priv.size(); ++l) {
                m.subnet(j).priv[l].w->data = m.subnet(0).priv[l].w->data;
                m.subnet(j).priv[l].b->data = m.subnet(0).priv[l].b->data;
            }
            m.subnet(j).classifier.w->data = m.subnet(0).classifier.w->data;
            m.subnet(j).classifier.b->data = m.subnet(0).classifier.b->data;
        }
        StepBatch batch = tiny_batch(cfg, rng);
        Tape t;
        const ForwardAllOutputs fw = forward_all(t, m, batch);
        CHECK(t.value(fw.subnet[0].tgt_probs).data == t.value(fw.subnet[1].tgt_probs).data);
        CHECK(t.value(fw.subnet[0].tgt_probs).data == t.value(fw.subnet[2].tgt_probs).data);
    }
    SECTION("missing branch batch rejected") {
        MlMsdaModel m = MlMsdaModel::init(cfg, 7);
        StepBatch batch = tiny_batch(cfg, rng);
        batch.branch.pop_back();
        Tape t;
        CHECK_THROWS_AS(forward_all(t, m, batch), std::invalid_argument);
    }
    SECTION("no-condition variant feeds width-d features to the discriminator") {
        ArchConfig plain = cfg;
        plain.conditional_adversary = false;
        MlMsdaModel m = MlMsdaModel::init(plain, 7);
        CHECK(m.subnet(0).discriminator[0].w->shape[0] == cfg.feature_dim);
        MlMsdaModel cond = MlMsdaModel::init(cfg, 7);
        CHECK(cond.subnet(0).discriminator[0].w->shape[0] == cfg.feature_dim * cfg.num_classes);
        StepBatch batch = tiny_batch(cfg, rng);
        Tape t;
        const ForwardAllOutputs fw = forward_all(t, m, batch); // runs without shape errors
        CHECK(fw.subnet.size() == 3);
    }
    SECTION("prediction rows are valid distributions under random weights") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            MlMsdaModel m = MlMsdaModel::init(cfg, 100 + seed);
            StepBatch batch = tiny_batch(cfg, rng);
            Tape t;
            const ForwardAllOutputs fw = forward_all(t, m, batch);
            for (const auto& s : fw.subnet) {
                for (const Val* pv : {&s.src_probs, &s.tgt_probs}) {
                    const Tensor& p = t.value(*pv);
                    for (std::size_t i = 0; i < p.rows(); ++i) {
                        double sum = 0.0;
                        for (std::size_t k = 0; k < p.cols(); ++k) {
                            CHECK(p.at(i, k) >= 0.0);
                            sum += p.at(i, k);
                        }
                        CHECK(std::abs(sum - 1.0) < 1e-9);
                    }
                }
            }
        }
    }
}

TEST_CASE("shared trunk accumulates the sum of per-subnetwork gradients") {
    const ArchConfig cfg = tiny_arch();
    Rng rng(55);
    const Tensor x = random_tensor({4, 3}, rng);
    MlMsdaModel shared = MlMsdaModel::init(cfg, 9);

    auto trunk_loss = [&](MlMsdaModel& m, std::size_t j) {
        Tape t;
        t.backward(sum(extract(t, m, j, t.constant(x))));
    };

    // all subnetworks at once: trunk gradient accumulates across the three
    for (std::size_t j = 0; j < shared.subnet_count(); ++j) trunk_loss(shared, j);
    const std::vector<double> combined = shared.subnet(0).trunk[0].w->grad;

    // separately: fresh model, one subnetwork at a time, grads summed by hand
    MlMsdaModel fresh = MlMsdaModel::init(cfg, 9);
    std::vector<double> expected(combined.size(), 0.0);
    for (std::size_t j = 0; j < fresh.subnet_count(); ++j) {
        fresh.zero_grads();
        trunk_loss(fresh, j);
        const auto& g = fresh.subnet(0).trunk[0].w->grad;
        for (std::size_t i = 0; i < g.size(); ++i) expected[i] += g[i];
    }
    REQUIRE(combined.size() == expected.size());
    for (std::size_t i = 0; i < combined.size(); ++i) {
        CHECK(combined[i] == Catch::Approx(expected[i]).margin(1e-12));
    }
}

TEST_CASE("checkpoint round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mlmsda_ckpt_test";
    fs::create_directories(dir);
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();

    ArchConfig cfg = tiny_arch();
    cfg.share_trunk = false;
    MlMsdaModel m = MlMsdaModel::init(cfg, 77);
    save_checkpoint(m, p1, 0xabcdef12345678ull);

    SECTION("load restores config, hash and parameters") {
        Checkpoint ck = load_checkpoint(p1);
        CHECK(ck.config_hash == 0xabcdef12345678ull);
        CHECK(ck.model.config() == cfg);
        auto pa = m.parameters(), pb = ck.model.parameters();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->data == pb[i]->data);
    }
    SECTION("load then re-save is byte-identical") {
        Checkpoint ck = load_checkpoint(p1);
        save_checkpoint(ck.model, p2, ck.config_hash);
        std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
        CHECK(!s1.empty());
    }
    SECTION("bad magic rejected") {
        std::ofstream bad(p2, std::ios::binary);
        bad << "NOTACKPTxxxxxxxxxxxxxxxx";
        bad.close();
        CHECK_THROWS_AS(load_checkpoint(p2), std::runtime_error);
    }
    SECTION("truncated file rejected") {
        std::ifstream f1(p1, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::ofstream out(p2, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(p2), std::runtime_error);
    }
}
