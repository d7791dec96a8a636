// Shared test utilities: the central finite-difference oracle used to check
// every analytic gradient, plus small random-tensor generators.
#ifndef MLMSDA_TESTS_HELPERS_HPP
#define MLMSDA_TESTS_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mlmsda/data.hpp"
#include "mlmsda/model.hpp"
#include "mlmsda/rng.hpp"
#include "mlmsda/tensor.hpp"

namespace testutil {

inline mlmsda::Tensor random_tensor(std::vector<std::size_t> shape, mlmsda::Rng& rng, double lo = -2.0,
                                    double hi = 2.0) {
    mlmsda::Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

inline mlmsda::Tensor random_prob_rows(std::size_t b, std::size_t k, mlmsda::Rng& rng) {
    mlmsda::Tensor t({b, k});
    for (std::size_t i = 0; i < b; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double v = -std::log(1.0 - rng.uniform()); // exponential
            t.at(i, j) = v;
            sum += v;
        }
        for (std::size_t j = 0; j < k; ++j) t.at(i, j) /= sum;
    }
    return t;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences of a scalar-valued function with respect to one
// parameter entry. `loss` must rebuild its graph from the tensor's current
// contents on every call.
inline double numeric_grad(mlmsda::Tensor& param, std::size_t idx, double eps,
                           const std::function<double()>& loss) {
    const double orig = param.data[idx];
    param.data[idx] = orig + eps;
    const double fp = loss();
    param.data[idx] = orig - eps;
    const double fm = loss();
    param.data[idx] = orig;
    return (fp - fm) / (2.0 * eps);
}

// Max relative error between an analytic gradient vector and the
// finite-difference oracle over every entry of `param`.
inline double max_grad_rel_err(mlmsda::Tensor& param, const std::vector<double>& analytic, double eps,
                               const std::function<double()>& loss) {
    double worst = 0.0;
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double num = numeric_grad(param, i, eps, loss);
        worst = std::max(worst, rel_err(analytic[i], num));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// ReLU margin repair. Central differences are only a valid oracle where the
// objective is differentiable; a +-eps probe that pushes a preactivation
// across zero produces garbage. This nudges hidden biases until every ReLU
// input on the given batch sits at least `margin` away from zero, so every
// probed point stays on one smooth piece.
// ---------------------------------------------------------------------------

namespace detail {

inline mlmsda::Tensor plain_affine(const mlmsda::Tensor& x, const mlmsda::Affine& a) {
    const std::size_t n = x.rows(), in = x.cols(), out = a.w->shape[1];
    mlmsda::Tensor z({n, out});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < in; ++p) {
            const double v = x.at(i, p);
            for (std::size_t j = 0; j < out; ++j) z.at(i, j) += v * a.w->at(p, j);
        }
        for (std::size_t j = 0; j < out; ++j) z.at(i, j) += a.b->at(j);
    }
    return z;
}

inline void repair_unit_margins(std::vector<mlmsda::Tensor>& zs, mlmsda::Affine& layer, double margin) {
    const std::size_t out = layer.b->numel();
    for (std::size_t u = 0; u < out; ++u) {
        auto min_abs = [&](double shift) {
            double m = 1e300;
            for (const auto& z : zs) {
                for (std::size_t i = 0; i < z.rows(); ++i) m = std::min(m, std::abs(z.at(i, u) + shift));
            }
            return m;
        };
        double shift = 0.0;
        if (min_abs(0.0) < margin) {
            for (int k = 1; k < 200 && shift == 0.0; ++k) {
                for (double cand : {2.0 * margin * k, -2.0 * margin * k}) {
                    if (min_abs(cand) >= margin) {
                        shift = cand;
                        break;
                    }
                }
            }
        }
        if (shift != 0.0) {
            layer.b->at(u) += shift;
            for (auto& z : zs) {
                for (std::size_t i = 0; i < z.rows(); ++i) z.at(i, u) += shift;
            }
        }
    }
}

// runs the stage on all matrices, repairing each ReLU layer's margins; the
// matrices are replaced by the stage outputs
inline void repair_stage(std::vector<mlmsda::Affine>& stage, std::vector<mlmsda::Tensor>& xs,
                         double margin, bool relu_last = true) {
    for (std::size_t l = 0; l < stage.size(); ++l) {
        std::vector<mlmsda::Tensor> zs;
        zs.reserve(xs.size());
        for (const auto& x : xs) zs.push_back(plain_affine(x, stage[l]));
        if (l + 1 < stage.size() || relu_last) {
            repair_unit_margins(zs, stage[l], margin);
            for (auto& z : zs) {
                for (double& v : z.data) v = v > 0.0 ? v : 0.0;
            }
        }
        xs = std::move(zs);
    }
}

inline mlmsda::Tensor plain_softmax(mlmsda::Tensor z) {
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double mx = z.at(i, 0);
        for (std::size_t k = 1; k < z.cols(); ++k) mx = std::max(mx, z.at(i, k));
        double denom = 0.0;
        for (std::size_t k = 0; k < z.cols(); ++k) {
            z.at(i, k) = std::exp(z.at(i, k) - mx);
            denom += z.at(i, k);
        }
        for (std::size_t k = 0; k < z.cols(); ++k) z.at(i, k) /= denom;
    }
    return z;
}

inline mlmsda::Tensor plain_outer_flatten(const mlmsda::Tensor& f, const mlmsda::Tensor& p) {
    const std::size_t b = f.rows(), d = f.cols(), k = p.cols();
    mlmsda::Tensor out({b, d * k});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t c = 0; c < k; ++c) out.at(i, a * k + c) = f.at(i, a) * p.at(i, c);
        }
    }
    return out;
}

} // namespace detail

inline void clear_relu_margins(mlmsda::MlMsdaModel& model, const mlmsda::StepBatch& batch,
                               double margin) {
    const mlmsda::ArchConfig& cfg = model.config();
    std::vector<mlmsda::Tensor> all_inputs;
    for (const auto& b : batch.branch) all_inputs.push_back(b.x);
    all_inputs.push_back(batch.combined.x);
    all_inputs.push_back(batch.target_x);

    std::vector<std::vector<mlmsda::Tensor>> trunk_out(model.subnet_count());
    if (cfg.share_trunk) {
        std::vector<mlmsda::Tensor> xs = all_inputs;
        detail::repair_stage(model.subnet(0).trunk, xs, margin);
        // xs[j] is branch j's source, xs[N] the combined batch, xs[N+1] the target
        for (std::size_t j = 0; j < model.subnet_count(); ++j) {
            trunk_out[j] = {xs[j], xs.back()};
        }
    } else {
        for (std::size_t j = 0; j < model.subnet_count(); ++j) {
            std::vector<mlmsda::Tensor> xs = {all_inputs[j], batch.target_x};
            detail::repair_stage(model.subnet(j).trunk, xs, margin);
            trunk_out[j] = xs;
        }
    }
    for (std::size_t j = 0; j < model.subnet_count(); ++j) {
        std::vector<mlmsda::Tensor> feats = trunk_out[j];
        detail::repair_stage(model.subnet(j).priv, feats, margin);
        std::vector<mlmsda::Tensor> cond;
        for (const auto& f : feats) {
            const mlmsda::Tensor probs =
                detail::plain_softmax(detail::plain_affine(f, model.subnet(j).classifier));
            cond.push_back(cfg.conditional_adversary ? detail::plain_outer_flatten(f, probs) : f);
        }
        auto& disc = model.subnet(j).discriminator;
        for (std::size_t l = 0; l + 1 < disc.size(); ++l) {
            std::vector<mlmsda::Tensor> zs;
            for (const auto& x : cond) zs.push_back(detail::plain_affine(x, disc[l]));
            detail::repair_unit_margins(zs, disc[l], margin);
            for (auto& z : zs) {
                for (double& v : z.data) v = v > 0.0 ? v : 0.0;
            }
            cond = std::move(zs);
        }
    }
}

} // namespace testutil

#endif // MLMSDA_TESTS_HELPERS_HPP
