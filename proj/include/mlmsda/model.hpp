#ifndef MLMSDA_MODEL_HPP
#define MLMSDA_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlmsda/autodiff.hpp"
#include "mlmsda/binio.hpp"
#include "mlmsda/data.hpp"
#include "mlmsda/rng.hpp"
#include "mlmsda/tensor.hpp"

namespace mlmsda {

// ===========================================================================
// N+1 subnetworks: one adaptation branch per source domain plus a guidance
// network fed by the combined source pool. Every subnetwork has the same
// structure: feature extractor (shared trunk stage + private stage),
// category classifier, and domain discriminator behind the conditioning map.
// ===========================================================================

struct ArchConfig {
    std::size_t input_dim = 2;
    std::vector<std::size_t> trunk_layers{32};   // shared stage when share_trunk
    std::vector<std::size_t> private_layers{32}; // per-subnetwork stage
    std::size_t feature_dim = 16;
    std::size_t num_classes = 3;
    std::size_t num_sources = 4;
    bool share_trunk = true;
    std::vector<std::size_t> discriminator_layers{32};
    // false: the discriminator sees plain features (width d) instead of the
    // feature/prediction outer product (width d*K).
    bool conditional_adversary = true;
    // stop-gradient on classifier predictions inside the conditioning map, so
    // the classifier cannot degrade its predictions to fool the discriminator
    bool detach_predictions = true;

    std::size_t subnet_count() const { return num_sources + 1; }
    std::size_t guidance_index() const { return num_sources; }
    std::size_t discriminator_input_dim() const {
        return conditional_adversary ? feature_dim * num_classes : feature_dim;
    }

    void validate() const {
        if (num_sources < 1) throw std::invalid_argument("ArchConfig: num_sources must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("ArchConfig: num_classes must be >= 2");
        if (feature_dim < 1) throw std::invalid_argument("ArchConfig: feature_dim must be >= 1");
        if (input_dim < 1) throw std::invalid_argument("ArchConfig: input_dim must be >= 1");
        for (std::size_t w : trunk_layers) {
            if (w == 0) throw std::invalid_argument("ArchConfig: zero-width trunk layer");
        }
        for (std::size_t w : private_layers) {
            if (w == 0) throw std::invalid_argument("ArchConfig: zero-width private layer");
        }
        for (std::size_t w : discriminator_layers) {
            if (w == 0) throw std::invalid_argument("ArchConfig: zero-width discriminator layer");
        }
    }

    bool operator==(const ArchConfig&) const = default;
};

// Parameters are held by shared_ptr so the trunk stage can be aliased across
// subnetworks when share_trunk is on: a gradient or update through one
// subnetwork is visible to all of them.
struct Affine {
    std::shared_ptr<Tensor> w; // [in x out]
    std::shared_ptr<Tensor> b; // {out}
};

struct Subnetwork {
    std::vector<Affine> trunk;
    std::vector<Affine> priv;
    Affine classifier;                 // feature_dim -> K
    std::vector<Affine> discriminator; // disc input -> ... -> 1, sigmoid output
};

class MlMsdaModel {
  public:
    MlMsdaModel() = default;

    static MlMsdaModel init(const ArchConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        MlMsdaModel m;
        m.cfg_ = cfg;
        Rng rng(mix_seed(seed, 0x11d0ull));
        const std::size_t trunk_out = cfg.trunk_layers.empty() ? cfg.input_dim : cfg.trunk_layers.back();
        if (cfg.share_trunk) {
            m.shared_trunk_ = make_stage(cfg.input_dim, cfg.trunk_layers, rng);
        }
        for (std::size_t j = 0; j < cfg.subnet_count(); ++j) {
            Subnetwork s;
            s.trunk = cfg.share_trunk ? m.shared_trunk_ : make_stage(cfg.input_dim, cfg.trunk_layers, rng);
            std::vector<std::size_t> priv_dims = cfg.private_layers;
            priv_dims.push_back(cfg.feature_dim);
            s.priv = make_stage(trunk_out, priv_dims, rng);
            s.classifier = make_affine(cfg.feature_dim, cfg.num_classes, rng);
            std::vector<std::size_t> disc_dims = cfg.discriminator_layers;
            disc_dims.push_back(1);
            s.discriminator = make_stage(cfg.discriminator_input_dim(), disc_dims, rng);
            m.subnets_.push_back(std::move(s));
        }
        return m;
    }

    const ArchConfig& config() const { return cfg_; }
    std::size_t subnet_count() const { return subnets_.size(); }
    std::size_t guidance_index() const { return cfg_.guidance_index(); }

    const Subnetwork& subnet(std::size_t j) const {
        check_index(j);
        return subnets_[j];
    }
    Subnetwork& subnet(std::size_t j) {
        check_index(j);
        return subnets_[j];
    }

    // Unique parameter tensors in declaration order (the shared trunk appears
    // once). This order defines checkpoint layout and optimizer state.
    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        auto push_stage = [&out](const std::vector<Affine>& stage) {
            for (const Affine& a : stage) {
                out.push_back(a.w.get());
                out.push_back(a.b.get());
            }
        };
        if (cfg_.share_trunk) push_stage(shared_trunk_);
        for (Subnetwork& s : subnets_) {
            if (!cfg_.share_trunk) push_stage(s.trunk);
            push_stage(s.priv);
            out.push_back(s.classifier.w.get());
            out.push_back(s.classifier.b.get());
            push_stage(s.discriminator);
        }
        return out;
    }

    std::vector<const Tensor*> parameters() const {
        auto mut = const_cast<MlMsdaModel*>(this)->parameters();
        return {mut.begin(), mut.end()};
    }

    void zero_grads() {
        for (Tensor* p : parameters()) p->zero_grad();
    }

  private:
    static Affine make_affine(std::size_t in, std::size_t out, Rng& rng) {
        // uniform [-a, a] with a = sqrt(6 / (fan_in + fan_out)); biases zero
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        Affine aff;
        aff.w = std::make_shared<Tensor>(std::vector<std::size_t>{in, out});
        aff.b = std::make_shared<Tensor>(std::vector<std::size_t>{out});
        for (double& v : aff.w->data) v = rng.uniform(-a, a);
        aff.w->requires_grad = true;
        aff.b->requires_grad = true;
        return aff;
    }

    static std::vector<Affine> make_stage(std::size_t in, const std::vector<std::size_t>& widths, Rng& rng) {
        std::vector<Affine> stage;
        std::size_t cur = in;
        for (std::size_t w : widths) {
            stage.push_back(make_affine(cur, w, rng));
            cur = w;
        }
        return stage;
    }

    void check_index(std::size_t j) const {
        if (j >= subnets_.size()) {
            throw std::invalid_argument("MlMsdaModel: subnetwork index " + std::to_string(j) +
                                        " out of range (have " + std::to_string(subnets_.size()) + ")");
        }
    }

    ArchConfig cfg_;
    std::vector<Affine> shared_trunk_;
    std::vector<Subnetwork> subnets_;
};

// ---------------------------------------------------------------------------
// graph builders
// ---------------------------------------------------------------------------

inline Val affine_apply(Tape& tape, const Affine& a, const Val& x) {
    return add_rowvec(matmul(x, tape.leaf(*a.w)), tape.leaf(*a.b));
}

// Features of subnetwork j: trunk stage then private stage, ReLU after every
// affine.
inline Val extract(Tape& tape, const MlMsdaModel& model, std::size_t j, const Val& x) {
    const Subnetwork& s = model.subnet(j);
    Val h = x;
    for (const Affine& a : s.trunk) h = relu(affine_apply(tape, a, h));
    for (const Affine& a : s.priv) h = relu(affine_apply(tape, a, h));
    return h;
}

// Class probabilities: softmax of the affine classifier head.
inline Val classify(Tape& tape, const MlMsdaModel& model, std::size_t j, const Val& features) {
    return softmax_rows(affine_apply(tape, model.subnet(j).classifier, features));
}

// Multilinear conditioning map: per-sample outer product of features and
// predictions, flattened feature-major.
inline Val condition(const Val& features, const Val& preds, bool detach_preds) {
    return outer_flatten(features, detach_preds ? stop_gradient(preds) : preds);
}

// Discriminator head. The input passes through a gradient reversal layer so
// one backward pass trains the discriminator against the extractor;
// adv_scale multiplies the reversed upstream gradient. Outputs are sigmoid
// probabilities clamped inside (0, 1).
inline Val discriminate(Tape& tape, const MlMsdaModel& model, std::size_t j, const Val& conditioned,
                        double adv_scale) {
    const Subnetwork& s = model.subnet(j);
    Val h = gradient_reversal(conditioned, adv_scale);
    for (std::size_t i = 0; i + 1 < s.discriminator.size(); ++i) {
        h = relu(affine_apply(tape, s.discriminator[i], h));
    }
    h = sigmoid(affine_apply(tape, s.discriminator.back(), h));
    return clamp(h, kProbEps, 1.0 - kProbEps);
}

struct SubnetOutputs {
    Val src_features, tgt_features;
    Val src_probs, tgt_probs;
    Val src_disc, tgt_disc; // [b x 1]
};

struct ForwardAllOutputs {
    std::vector<SubnetOutputs> subnet; // N branches then the guidance network
};

// One full forward pass: branch j consumes source domain j's batch, the
// guidance network consumes the combined-source batch, and every subnetwork
// sees the same target batch.
inline ForwardAllOutputs forward_all(Tape& tape, const MlMsdaModel& model, const StepBatch& batch,
                                     double adv_scale = 1.0) {
    const ArchConfig& cfg = model.config();
    if (batch.branch.size() != cfg.num_sources) {
        throw std::invalid_argument("forward_all: expected " + std::to_string(cfg.num_sources) +
                                    " branch batches, got " + std::to_string(batch.branch.size()));
    }
    if (batch.combined.x.numel() == 0 || batch.target_x.numel() == 0) {
        throw std::invalid_argument("forward_all: missing combined-source or target batch");
    }
    ForwardAllOutputs out;
    const Val target_x = tape.constant(batch.target_x);
    for (std::size_t j = 0; j < cfg.subnet_count(); ++j) {
        const Batch& src = j < cfg.num_sources ? batch.branch[j] : batch.combined;
        SubnetOutputs o;
        const Val src_x = tape.constant(src.x);
        o.src_features = extract(tape, model, j, src_x);
        o.tgt_features = extract(tape, model, j, target_x);
        o.src_probs = classify(tape, model, j, o.src_features);
        o.tgt_probs = classify(tape, model, j, o.tgt_features);
        Val cond_src = cfg.conditional_adversary
                           ? condition(o.src_features, o.src_probs, cfg.detach_predictions)
                           : o.src_features;
        Val cond_tgt = cfg.conditional_adversary
                           ? condition(o.tgt_features, o.tgt_probs, cfg.detach_predictions)
                           : o.tgt_features;
        o.src_disc = discriminate(tape, model, j, cond_src, adv_scale);
        o.tgt_disc = discriminate(tape, model, j, cond_tgt, adv_scale);
        out.subnet.push_back(o);
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint io: "MLMSDACP" | u32 version | u64 config hash | arch | params
// in declaration order. Load followed by save reproduces the file byte for
// byte.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'M', 'L', 'M', 'S', 'D', 'A', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_dims(std::ostream& os, const std::vector<std::size_t>& dims) {
    binio::put_u32(os, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) binio::put_u64(os, d);
}

inline std::vector<std::size_t> get_dims(std::istream& is, const char* what) {
    const std::uint32_t n = binio::get_u32(is, what);
    std::vector<std::size_t> dims(n);
    for (auto& d : dims) d = binio::get_u64(is, what);
    return dims;
}

} // namespace detail

inline void save_checkpoint(const MlMsdaModel& model, const std::string& path,
                            std::uint64_t config_hash = 0) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    const ArchConfig& cfg = model.config();
    binio::put_bytes(os, kCheckpointMagic, 8);
    binio::put_u32(os, kCheckpointVersion);
    binio::put_u64(os, config_hash);
    binio::put_u64(os, cfg.input_dim);
    detail::put_dims(os, cfg.trunk_layers);
    detail::put_dims(os, cfg.private_layers);
    binio::put_u64(os, cfg.feature_dim);
    binio::put_u64(os, cfg.num_classes);
    binio::put_u64(os, cfg.num_sources);
    binio::put_u32(os, cfg.share_trunk ? 1 : 0);
    detail::put_dims(os, cfg.discriminator_layers);
    binio::put_u32(os, cfg.conditional_adversary ? 1 : 0);
    binio::put_u32(os, cfg.detach_predictions ? 1 : 0);
    const auto params = model.parameters();
    binio::put_u64(os, params.size());
    for (const Tensor* p : params) {
        detail::put_dims(os, p->shape);
        binio::put_f64_block(os, p->data);
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct Checkpoint {
    MlMsdaModel model;
    std::uint64_t config_hash = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    binio::get_bytes(is, magic, 8, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw std::runtime_error("load_checkpoint: malformed file (bad magic): " + path);
    }
    const std::uint32_t version = binio::get_u32(is, "version");
    if (version != kCheckpointVersion) {
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.config_hash = binio::get_u64(is, "config hash");
    ArchConfig cfg;
    cfg.input_dim = binio::get_u64(is, "input_dim");
    cfg.trunk_layers = detail::get_dims(is, "trunk_layers");
    cfg.private_layers = detail::get_dims(is, "private_layers");
    cfg.feature_dim = binio::get_u64(is, "feature_dim");
    cfg.num_classes = binio::get_u64(is, "num_classes");
    cfg.num_sources = binio::get_u64(is, "num_sources");
    cfg.share_trunk = binio::get_u32(is, "share_trunk") != 0;
    cfg.discriminator_layers = detail::get_dims(is, "discriminator_layers");
    cfg.conditional_adversary = binio::get_u32(is, "conditional_adversary") != 0;
    cfg.detach_predictions = binio::get_u32(is, "detach_predictions") != 0;
    ck.model = MlMsdaModel::init(cfg, 0);
    auto params = ck.model.parameters();
    const std::uint64_t count = binio::get_u64(is, "param count");
    if (count != params.size()) {
        throw std::runtime_error("load_checkpoint: parameter count mismatch");
    }
    for (Tensor* p : params) {
        const auto dims = detail::get_dims(is, "param dims");
        if (dims != p->shape) throw std::runtime_error("load_checkpoint: parameter shape mismatch");
        binio::get_f64_block(is, p->data, p->numel(), "param data");
    }
    return ck;
}

} // namespace mlmsda

#endif // MLMSDA_MODEL_HPP
