#ifndef MLMSDA_LOSSES_HPP
#define MLMSDA_LOSSES_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlmsda/autodiff.hpp"
#include "mlmsda/tensor.hpp"

namespace mlmsda {

// Trade-off weights of the combined objective
//   total = l_c + alpha * l_m + beta * l_e + lambda * l_adv
// alpha weights the mutual-learning term, beta the target entropy term,
// lambda the adversarial alignment term. Defaults: (lambda, alpha, beta) =
// (5, 5, 0.5).
struct HyperParams {
    double alpha = 5.0;
    double beta = 0.5;
    double lambda = 5.0;

    void validate() const {
        if (alpha < 0.0 || beta < 0.0 || lambda < 0.0) {
            throw std::invalid_argument("HyperParams: weights must be >= 0");
        }
    }

    bool operator==(const HyperParams&) const = default;
};

struct LossBundle {
    double l_c = 0.0;
    double l_e = 0.0;
    double l_adv = 0.0;
    double l_m = 0.0;
    double total = 0.0;
    // per-subnetwork breakdowns (N branches then guidance), for diagnostics
    std::vector<double> per_subnet_l_c;
    std::vector<double> per_subnet_l_e;
    std::vector<double> per_subnet_l_adv;

    bool finite() const {
        return std::isfinite(l_c) && std::isfinite(l_e) && std::isfinite(l_adv) && std::isfinite(l_m) &&
               std::isfinite(total);
    }
};

namespace detail {

inline void check_prob_matrix(const Tensor& t, const char* what) {
    if (!t.is_matrix()) {
        throw std::invalid_argument(std::string(what) + ": expected [b x K] probabilities, got " +
                                    Tensor::shape_str(t.shape));
    }
}

inline void check_onehot(const Tensor& y) {
    check_prob_matrix(y, "cross_entropy labels");
    for (std::size_t i = 0; i < y.rows(); ++i) {
        std::size_t ones = 0;
        for (std::size_t k = 0; k < y.cols(); ++k) {
            const double v = y.at(i, k);
            if (v == 1.0) {
                ++ones;
            } else if (v != 0.0) {
                throw std::invalid_argument("cross_entropy: label row " + std::to_string(i) +
                                            " is not one-hot");
            }
        }
        if (ones != 1) {
            throw std::invalid_argument("cross_entropy: label row " + std::to_string(i) +
                                        " is not one-hot");
        }
    }
}

} // namespace detail

// Supervised term: -mean_i y_i . log p_i  (logs clamped).
inline Val cross_entropy(const Val& probs, const Val& labels_onehot) {
    detail::check_prob_matrix(probs.tape->value(probs), "cross_entropy");
    detail::check_onehot(labels_onehot.tape->value(labels_onehot));
    return neg(mean(sum(mul(labels_onehot, log_prob(probs)), 1)));
}

// Unsupervised target term: mean Shannon entropy of the prediction rows.
inline Val entropy_loss(const Val& probs) {
    detail::check_prob_matrix(probs.tape->value(probs), "entropy_loss");
    return neg(mean(sum(mul(probs, log_prob(probs)), 1)));
}

// Per-subnetwork alignment value: mean log D(source) + mean log(1 - D(target)).
// Source carries domain label 1, target label 0. The discriminator ascends
// this value and the extractor descends it; both signs are arranged by the
// reversal layers, not here.
inline Val adversarial_loss_j(const Val& d_src, const Val& d_tgt) {
    const Val one_minus_tgt = add_scalar(neg(d_tgt), 1.0);
    return add(mean(log_prob(d_src)), mean(log_prob(one_minus_tgt)));
}

// Arithmetic mean of scalar terms; the 1/(N+1) averages over subnetworks.
inline Val mean_scalars(const std::vector<Val>& terms) {
    if (terms.empty()) throw std::invalid_argument("mean_scalars: empty term list");
    Val acc = terms[0];
    for (std::size_t j = 1; j < terms.size(); ++j) acc = add(acc, terms[j]);
    return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

// Mean over the N+1 subnetworks.
inline Val adversarial_total(const std::vector<Val>& per_subnet, std::size_t expected_count) {
    if (per_subnet.size() != expected_count || per_subnet.empty()) {
        throw std::invalid_argument("adversarial_total: expected " + std::to_string(expected_count) +
                                    " subnetwork losses, got " + std::to_string(per_subnet.size()));
    }
    return mean_scalars(per_subnet);
}

// KL(p || q) = p . (log p - log q), averaged over rows; logs clamped, the
// multiplier stays the raw p so 0 * log 0 contributes nothing.
inline Val kl_divergence(const Val& p, const Val& q) {
    const Tensor& pv = p.tape->value(p);
    const Tensor& qv = q.tape->value(q);
    detail::check_prob_matrix(pv, "kl_divergence");
    detail::check_prob_matrix(qv, "kl_divergence");
    if (!pv.same_shape(qv)) {
        throw std::invalid_argument("kl_divergence: shape mismatch " + Tensor::shape_str(pv.shape) +
                                    " vs " + Tensor::shape_str(qv.shape));
    }
    return mean(sum(mul(p, sub(log_prob(p), log_prob(q))), 1));
}

// Symmetrized prediction-consistency term between each branch and the
// guidance network on the shared target batch:
//   (1 / 2N) sum_j [ KL(p_j || g) + KL(g || p_j) ]
// with the per-row 1/n_t average folded into kl_divergence. Branch pairs are
// never compared with each other, only with the guidance network. Gradients
// flow into both sides unless freeze_guidance is set.
inline Val mutual_loss(const std::vector<Val>& branch_preds, const Val& guidance_pred,
                       bool freeze_guidance = false) {
    if (branch_preds.empty()) {
        throw std::invalid_argument("mutual_loss: need at least one branch prediction");
    }
    detail::check_prob_matrix(guidance_pred.tape->value(guidance_pred), "mutual_loss");
    const std::vector<std::size_t> gshape = guidance_pred.tape->value(guidance_pred).shape;
    for (const Val& bp : branch_preds) {
        if (bp.tape->value(bp).shape != gshape) {
            throw std::invalid_argument("mutual_loss: branch/guidance batch mismatch");
        }
    }
    const Val g = freeze_guidance ? stop_gradient(guidance_pred) : guidance_pred;
    Val acc = add(kl_divergence(branch_preds[0], g), kl_divergence(g, branch_preds[0]));
    for (std::size_t j = 1; j < branch_preds.size(); ++j) {
        acc = add(acc, add(kl_divergence(branch_preds[j], g), kl_divergence(g, branch_preds[j])));
    }
    return scale(acc, 1.0 / (2.0 * static_cast<double>(branch_preds.size())));
}

struct Objective {
    Val train_scalar; // backward() target; value equals bundle.total
    LossBundle bundle;
};

// Combined objective. The value is l_c + alpha*l_m + beta*l_e + lambda*l_adv.
// The adversarial term enters the backward graph through a value-preserving
// reversal: descending the returned scalar moves the discriminators up the
// alignment value and (via the reversal layer at each discriminator input)
// moves extractors and classifiers down it, so one SGD step realizes the
// min-max update with lambda scaling both sides.
inline Objective total_objective(const Val& l_c, const Val& l_e, const Val& l_adv, const Val& l_m,
                                 const HyperParams& hp) {
    hp.validate();
    for (const Val* v : {&l_c, &l_e, &l_adv, &l_m}) {
        const Tensor& t = v->tape->value(*v);
        if (!t.is_scalar()) throw std::invalid_argument("total_objective: loss terms must be scalars");
        if (!t.all_finite()) throw std::invalid_argument("total_objective: non-finite loss component");
    }
    Val total = add(add(add(l_c, scale(l_m, hp.alpha)), scale(l_e, hp.beta)),
                    scale(gradient_reversal(l_adv, 1.0), hp.lambda));
    Objective obj;
    obj.train_scalar = total;
    obj.bundle.l_c = l_c.tape->value(l_c).scalar_value();
    obj.bundle.l_e = l_e.tape->value(l_e).scalar_value();
    obj.bundle.l_adv = l_adv.tape->value(l_adv).scalar_value();
    obj.bundle.l_m = l_m.tape->value(l_m).scalar_value();
    obj.bundle.total = total.tape->value(total).scalar_value();
    return obj;
}

} // namespace mlmsda

#endif // MLMSDA_LOSSES_HPP
