#ifndef MLMSDA_TRAINING_HPP
#define MLMSDA_TRAINING_HPP

#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlmsda/config.hpp"
#include "mlmsda/data.hpp"
#include "mlmsda/evaluation.hpp"
#include "mlmsda/losses.hpp"
#include "mlmsda/model.hpp"

namespace mlmsda {

// Step schedule: 0.01 for epochs 0-9, 0.001 for 10-19, 0.0001 afterwards.
inline double lr_at(std::size_t epoch) {
    if (epoch < 10) return 0.01;
    if (epoch < 20) return 0.001;
    return 0.0001;
}

// SGD with momentum: v <- m*v + g; theta <- theta - lr*v.
struct OptimState {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t epoch = 0;
    std::size_t step = 0;
    std::vector<std::vector<double>> velocity; // parallel to model.parameters()

    void bind(MlMsdaModel& model) {
        const auto params = model.parameters();
        velocity.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i]->numel(), 0.0);
    }
};

// One optimization step: forward all subnetworks, assemble the objective,
// one backward pass (the reversal layers realize the min-max update), then
// the SGD update. Gradients are zeroed before returning.
//
// reversal_scale is the upstream multiplier of the discriminator-input
// reversal layer: 1 except during an optional first-epoch warm-up ramp.
inline LossBundle train_step(MlMsdaModel& model, const StepBatch& batch, const HyperParams& hp,
                             const AblationFlags& flags, OptimState& opt, double reversal_scale = 1.0) {
    const ArchConfig& cfg = model.config();
    if (flags.no_condition_adv == cfg.conditional_adversary) {
        throw std::invalid_argument("train_step: flags.no_condition_adv disagrees with the model's "
                                    "discriminator layout; build the model from resolved_arch()");
    }
    HyperParams hp_eff = hp;
    if (flags.no_mutual) hp_eff.alpha = 0.0;
    if (flags.no_entropy) hp_eff.beta = 0.0;

    Tape tape;
    const ForwardAllOutputs fw = forward_all(tape, model, batch, reversal_scale);
    const std::size_t n_sub = cfg.subnet_count();

    std::vector<Val> ce(n_sub), ent(n_sub), adv(n_sub);
    for (std::size_t j = 0; j < n_sub; ++j) {
        const Batch& src = j < cfg.num_sources ? batch.branch[j] : batch.combined;
        ce[j] = cross_entropy(fw.subnet[j].src_probs, tape.constant(src.y_onehot));
        ent[j] = entropy_loss(fw.subnet[j].tgt_probs);
        adv[j] = adversarial_loss_j(fw.subnet[j].src_disc, fw.subnet[j].tgt_disc);
    }
    const Val l_c = mean_scalars(ce);
    const Val l_e = mean_scalars(ent);
    const Val l_adv = adversarial_total(adv, n_sub);
    std::vector<Val> branch_preds(fw.subnet.size() - 1);
    for (std::size_t j = 0; j + 1 < fw.subnet.size(); ++j) branch_preds[j] = fw.subnet[j].tgt_probs;
    const Val l_m = mutual_loss(branch_preds, fw.subnet.back().tgt_probs, flags.freeze_guidance_in_mutual);

    Objective obj = total_objective(l_c, l_e, l_adv, l_m, hp_eff);
    for (std::size_t j = 0; j < n_sub; ++j) {
        obj.bundle.per_subnet_l_c.push_back(tape.value(ce[j]).scalar_value());
        obj.bundle.per_subnet_l_e.push_back(tape.value(ent[j]).scalar_value());
        obj.bundle.per_subnet_l_adv.push_back(tape.value(adv[j]).scalar_value());
    }
    if (!obj.bundle.finite()) {
        throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(opt.step) +
                                 " (l_c=" + std::to_string(obj.bundle.l_c) +
                                 " l_e=" + std::to_string(obj.bundle.l_e) +
                                 " l_adv=" + std::to_string(obj.bundle.l_adv) +
                                 " l_m=" + std::to_string(obj.bundle.l_m) + ")");
    }

    tape.backward(obj.train_scalar);

    auto params = model.parameters();
    if (opt.velocity.size() != params.size()) opt.bind(model);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        p.ensure_grad();
        auto& v = opt.velocity[i];
        for (std::size_t k = 0; k < p.numel(); ++k) {
            v[k] = opt.momentum * v[k] + p.grad[k];
            p.data[k] -= opt.learning_rate * v[k];
        }
        if (!p.all_finite()) {
            throw std::runtime_error("train_step: non-finite parameter after update at step " +
                                     std::to_string(opt.step));
        }
        p.zero_grad();
    }
    ++opt.step;
    return obj.bundle;
}

struct EpochMetrics {
    std::size_t epoch = 0;
    // loss components averaged over the epoch's steps
    double l_c = 0.0, l_e = 0.0, l_adv = 0.0, l_m = 0.0, total = 0.0;
    std::vector<double> source_acc; // per subnetwork, on the source test splits
    double acc_ensemble = 0.0, acc_guidance = 0.0, acc_branch_avg = 0.0;
    std::vector<double> disc_acc; // balanced held-out probe batch, per subnetwork
    double wall_seconds = 0.0;    // excluded from determinism comparisons
};

struct TrainResult {
    MlMsdaModel model;
    std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&, const MlMsdaModel&)>;

inline double target_acc_under(const EpochMetrics& m, InferenceMode mode) {
    switch (mode) {
        case InferenceMode::kEnsemble: return m.acc_ensemble;
        case InferenceMode::kGuidanceOnly: return m.acc_guidance;
        case InferenceMode::kBranchAverage: return m.acc_branch_avg;
    }
    throw std::invalid_argument("unknown inference mode");
}

// Full training loop. Deterministic given (cfg, dataset): the model init,
// batch order, and probe batches all derive from cfg.seed.
inline TrainResult train(const MultiDomainDataset& ds, const RunConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    ds.validate();
    const ArchConfig arch = cfg.resolved_arch();
    if (arch.num_sources != ds.num_sources() || arch.num_classes != ds.num_classes ||
        arch.input_dim != ds.input_dim) {
        throw std::invalid_argument("train: config arch does not match the dataset (sources/classes/dim)");
    }

    TrainResult result;
    result.model = MlMsdaModel::init(arch, mix_seed(cfg.seed, 0x0d31ull));
    if (cfg.optimizer.epochs == 0) return result;

    EpochSampler sampler(ds, cfg.optimizer.batch_size, mix_seed(cfg.seed, 0x5a17ull),
                         cfg.optimizer.equal_domain_sampling);
    const std::uint64_t probe_seed = mix_seed(cfg.seed, 0x9e0bull);

    OptimState opt;
    opt.momentum = cfg.optimizer.momentum;
    opt.bind(result.model);

    const std::size_t steps = sampler.steps_per_epoch();
    for (std::size_t epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        opt.epoch = epoch;
        opt.learning_rate = lr_at(epoch);
        EpochMetrics m;
        m.epoch = epoch;
        for (std::size_t s = 0; s < steps; ++s) {
            double reversal_scale = 1.0;
            if (cfg.optimizer.adv_warmup && epoch == 0) {
                reversal_scale = static_cast<double>(s + 1) / static_cast<double>(steps);
            }
            const StepBatch batch = sampler.next();
            const LossBundle b = train_step(result.model, batch, cfg.hp, cfg.flags, opt, reversal_scale);
            m.l_c += b.l_c;
            m.l_e += b.l_e;
            m.l_adv += b.l_adv;
            m.l_m += b.l_m;
            m.total += b.total;
        }
        const double inv = 1.0 / static_cast<double>(steps);
        m.l_c *= inv;
        m.l_e *= inv;
        m.l_adv *= inv;
        m.l_m *= inv;
        m.total *= inv;

        const EvalReport er = evaluate(result.model, ds, cfg.flags.inference_mode,
                                       mix_seed(probe_seed, epoch), "", /*run_probe=*/false);
        m.source_acc = er.per_subnet_source_acc;
        m.acc_ensemble = er.acc_ensemble;
        m.acc_guidance = er.acc_guidance_only;
        m.acc_branch_avg = er.acc_branch_average;
        m.disc_acc = discriminator_batch_accuracy(result.model, ds, cfg.optimizer.batch_size,
                                                  mix_seed(probe_seed, epoch));
        m.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.metrics.push_back(m);
        if (on_epoch) on_epoch(m, result.model);
    }
    return result;
}

} // namespace mlmsda

#endif // MLMSDA_TRAINING_HPP
