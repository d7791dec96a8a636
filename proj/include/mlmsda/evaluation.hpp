#ifndef MLMSDA_EVALUATION_HPP
#define MLMSDA_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mlmsda/config.hpp"
#include "mlmsda/data.hpp"
#include "mlmsda/model.hpp"

namespace mlmsda {

// ---------------------------------------------------------------------------
// plain inference helpers (no gradients kept; forward runs on a scratch tape)
// ---------------------------------------------------------------------------

inline Tensor subnet_features(const MlMsdaModel& model, std::size_t j, const Tensor& x) {
    Tape tape;
    return tape.value(extract(tape, model, j, tape.constant(x)));
}

inline Tensor subnet_probs(const MlMsdaModel& model, std::size_t j, const Tensor& x) {
    Tape tape;
    const Val f = extract(tape, model, j, tape.constant(x));
    return tape.value(classify(tape, model, j, f));
}

// argmax with ties broken toward the lowest class index
inline std::size_t argmax_row(const Tensor& probs, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.cols(); ++k) {
        if (probs.at(row, k) > probs.at(row, best)) best = k;
    }
    return best;
}

inline double accuracy(const Tensor& probs, const std::vector<std::uint32_t>& labels) {
    if (probs.rows() != labels.size() || labels.empty()) {
        throw std::invalid_argument("accuracy: prediction/label count mismatch or empty test set");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (argmax_row(probs, i) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// guidance-centered ensemble: p = 1/2 (guidance + mean of branches)
// ---------------------------------------------------------------------------

inline Tensor branch_average(const std::vector<Tensor>& branch_probs) {
    if (branch_probs.empty()) throw std::invalid_argument("branch_average: no branch predictions");
    Tensor avg = branch_probs[0];
    for (std::size_t j = 1; j < branch_probs.size(); ++j) {
        if (!branch_probs[j].same_shape(avg)) {
            throw std::invalid_argument("branch_average: prediction shape mismatch");
        }
        for (std::size_t i = 0; i < avg.numel(); ++i) avg.data[i] += branch_probs[j].data[i];
    }
    const double inv = 1.0 / static_cast<double>(branch_probs.size());
    for (double& v : avg.data) v *= inv;
    return avg;
}

inline Tensor ensemble_predict(const std::vector<Tensor>& branch_probs, const Tensor& guidance_probs) {
    Tensor avg = branch_average(branch_probs);
    if (!avg.same_shape(guidance_probs)) {
        throw std::invalid_argument("ensemble_predict: guidance/branch shape mismatch");
    }
    Tensor out = guidance_probs;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = 0.5 * (out.data[i] + avg.data[i]);
    return out;
}

// ---------------------------------------------------------------------------
// alignment probe: a fresh logistic regression separating source-j features
// (label 1) from target features (label 0), trained on a 70/30 split of the
// train-set features. Held-out accuracy near 0.5 means the extractor has made
// the two domains indistinguishable.
// ---------------------------------------------------------------------------

namespace detail {

struct ProbeData {
    std::vector<double> x; // n x d standardized
    std::vector<int> y;
    std::size_t n = 0, d = 0;
};

inline double probe_logistic_accuracy(ProbeData data, std::uint64_t seed) {
    const std::size_t n = data.n, d = data.d;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, 0x9b0be5ull));
    rng.shuffle(idx);
    const std::size_t n_train = (n * 7) / 10;
    const std::size_t n_test = n - n_train;
    if (n_train == 0 || n_test == 0) throw std::invalid_argument("probe: insufficient samples");

    // standardize on the training split
    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (std::size_t t = 0; t < n_train; ++t) {
        const double* row = data.x.data() + idx[t] * d;
        for (std::size_t c = 0; c < d; ++c) mu[c] += row[c];
    }
    for (double& v : mu) v /= static_cast<double>(n_train);
    for (std::size_t t = 0; t < n_train; ++t) {
        const double* row = data.x.data() + idx[t] * d;
        for (std::size_t c = 0; c < d; ++c) sd[c] += (row[c] - mu[c]) * (row[c] - mu[c]);
    }
    for (double& v : sd) v = std::sqrt(v / static_cast<double>(n_train)) + 1e-12;

    std::vector<double> w(d, 0.0);
    double b = 0.0;
    std::vector<double> gw(d);
    const double lr = 0.5;
    for (int iter = 0; iter < 2000; ++iter) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (std::size_t t = 0; t < n_train; ++t) {
            const double* row = data.x.data() + idx[t] * d;
            double z = b;
            for (std::size_t c = 0; c < d; ++c) z += w[c] * (row[c] - mu[c]) / sd[c];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double err = p - static_cast<double>(data.y[idx[t]]);
            for (std::size_t c = 0; c < d; ++c) gw[c] += err * (row[c] - mu[c]) / sd[c];
            gb += err;
        }
        double gmax = std::abs(gb) / static_cast<double>(n_train);
        for (std::size_t c = 0; c < d; ++c) {
            gw[c] /= static_cast<double>(n_train);
            gmax = std::max(gmax, std::abs(gw[c]));
        }
        gb /= static_cast<double>(n_train);
        if (gmax < 1e-6) break;
        for (std::size_t c = 0; c < d; ++c) w[c] -= lr * gw[c];
        b -= lr * gb;
    }

    std::size_t hits = 0;
    for (std::size_t t = n_train; t < n; ++t) {
        const double* row = data.x.data() + idx[t] * d;
        double z = b;
        for (std::size_t c = 0; c < d; ++c) z += w[c] * (row[c] - mu[c]) / sd[c];
        const int pred = z >= 0.0 ? 1 : 0;
        if (pred == data.y[idx[t]]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n_test);
}

inline void append_features(ProbeData& pd, const Tensor& feats, int label) {
    const std::size_t n = feats.rows(), d = feats.cols();
    pd.d = d;
    pd.x.insert(pd.x.end(), feats.data.begin(), feats.data.end());
    pd.y.insert(pd.y.end(), n, label);
    pd.n += n;
}

} // namespace detail

// Per-subnetwork source-vs-target probe accuracies (branches 0..N-1 use their
// own source domain; index N is the guidance network on the combined pool).
inline std::vector<double> probe_discriminator(const MlMsdaModel& model, const MultiDomainDataset& ds,
                                               std::uint64_t seed) {
    ds.validate();
    const std::size_t n_sub = model.subnet_count();
    std::vector<double> acc(n_sub);
    for (std::size_t j = 0; j < n_sub; ++j) {
        detail::ProbeData pd;
        if (j < ds.num_sources()) {
            Tensor x({ds.source_train[j].count, ds.input_dim}, ds.source_train[j].x);
            detail::append_features(pd, subnet_features(model, j, x), 1);
        } else {
            for (std::size_t s = 0; s < ds.num_sources(); ++s) {
                Tensor x({ds.source_train[s].count, ds.input_dim}, ds.source_train[s].x);
                detail::append_features(pd, subnet_features(model, j, x), 1);
            }
        }
        Tensor tx({ds.target_train.count, ds.input_dim}, ds.target_train.x);
        detail::append_features(pd, subnet_features(model, j, tx), 0);
        acc[j] = detail::probe_logistic_accuracy(std::move(pd), mix_seed(seed, j));
    }
    return acc;
}

// The model's own discriminators scored on a balanced held-out batch drawn
// from the test splits (source label 1, target label 0). 0.5 means the
// discriminator cannot tell the domains apart.
inline std::vector<double> discriminator_batch_accuracy(const MlMsdaModel& model,
                                                        const MultiDomainDataset& ds,
                                                        std::size_t per_side, std::uint64_t seed) {
    const std::size_t n_sub = model.subnet_count();
    const ArchConfig& cfg = model.config();
    std::vector<double> acc(n_sub);
    for (std::size_t j = 0; j < n_sub; ++j) {
        Rng rng(mix_seed(seed, j, 0xd15cull));
        std::vector<double> xs;
        std::size_t n_src = 0;
        if (j < ds.num_sources()) {
            const LabeledBlock& block = ds.source_test[j];
            const std::size_t take = std::min(per_side, block.count);
            for (std::size_t s = 0; s < take; ++s) {
                const double* row = block.row(rng.below(block.count));
                xs.insert(xs.end(), row, row + ds.input_dim);
            }
            n_src = take;
        } else {
            std::size_t total = 0;
            for (const auto& block : ds.source_test) total += block.count;
            const std::size_t take = std::min(per_side, total);
            for (std::size_t s = 0; s < take; ++s) {
                std::size_t g = rng.below(total);
                for (const auto& block : ds.source_test) {
                    if (g < block.count) {
                        const double* row = block.row(g);
                        xs.insert(xs.end(), row, row + ds.input_dim);
                        break;
                    }
                    g -= block.count;
                }
            }
            n_src = take;
        }
        const std::size_t n_tgt = std::min(per_side, ds.target_test.count);
        for (std::size_t s = 0; s < n_tgt; ++s) {
            const double* row = ds.target_test.row(rng.below(ds.target_test.count));
            xs.insert(xs.end(), row, row + ds.input_dim);
        }
        Tensor x({n_src + n_tgt, ds.input_dim}, std::move(xs));

        Tape tape;
        const Val f = extract(tape, model, j, tape.constant(x));
        const Val p = classify(tape, model, j, f);
        const Val cond = cfg.conditional_adversary ? condition(f, p, cfg.detach_predictions) : f;
        const Tensor d = tape.value(discriminate(tape, model, j, cond, 0.0));
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n_src; ++i) hits += d.at(i, 0) >= 0.5 ? 1 : 0;
        for (std::size_t i = n_src; i < n_src + n_tgt; ++i) hits += d.at(i, 0) < 0.5 ? 1 : 0;
        acc[j] = static_cast<double>(hits) / static_cast<double>(n_src + n_tgt);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// evaluation report
// ---------------------------------------------------------------------------

struct EvalReport {
    std::string mode;
    double target_accuracy = 0.0; // under `mode`
    double acc_ensemble = 0.0;
    double acc_guidance_only = 0.0;
    double acc_branch_average = 0.0;
    std::vector<double> per_subnet_target_acc;
    std::vector<double> per_subnet_source_acc;
    std::vector<double> probe_acc;
    std::uint64_t seed = 0;
    std::string config_hash;
};

inline nlohmann::json to_json(const EvalReport& r) {
    return nlohmann::json{{"mode", r.mode},
                          {"target_accuracy", r.target_accuracy},
                          {"acc_ensemble", r.acc_ensemble},
                          {"acc_guidance_only", r.acc_guidance_only},
                          {"acc_branch_average", r.acc_branch_average},
                          {"per_subnet_target_acc", r.per_subnet_target_acc},
                          {"per_subnet_source_acc", r.per_subnet_source_acc},
                          {"probe_acc", r.probe_acc},
                          {"seed", r.seed},
                          {"config_hash", r.config_hash}};
}

inline double accuracy_under_mode(const EvalReport& r, InferenceMode mode) {
    switch (mode) {
        case InferenceMode::kEnsemble: return r.acc_ensemble;
        case InferenceMode::kGuidanceOnly: return r.acc_guidance_only;
        case InferenceMode::kBranchAverage: return r.acc_branch_average;
    }
    throw std::invalid_argument("unknown inference mode");
}

// Full evaluation pass on the test splits. run_probe controls the logistic
// alignment probe (it is the slow part).
inline EvalReport evaluate(const MlMsdaModel& model, const MultiDomainDataset& ds, InferenceMode mode,
                           std::uint64_t seed = 0, const std::string& config_hash_str = "",
                           bool run_probe = true) {
    ds.validate();
    if (ds.target_test.count == 0) throw std::invalid_argument("evaluate: empty target test set");
    const std::size_t n_branches = model.config().num_sources;

    Tensor tgt_x({ds.target_test.count, ds.input_dim}, ds.target_test.x);
    std::vector<Tensor> branch_probs;
    branch_probs.reserve(n_branches);
    for (std::size_t j = 0; j < n_branches; ++j) branch_probs.push_back(subnet_probs(model, j, tgt_x));
    const Tensor guidance_probs = subnet_probs(model, model.guidance_index(), tgt_x);

    EvalReport r;
    r.mode = to_string(mode);
    r.seed = seed;
    r.config_hash = config_hash_str;
    r.acc_ensemble = accuracy(ensemble_predict(branch_probs, guidance_probs), ds.target_test.y);
    r.acc_guidance_only = accuracy(guidance_probs, ds.target_test.y);
    r.acc_branch_average = accuracy(branch_average(branch_probs), ds.target_test.y);
    r.target_accuracy = accuracy_under_mode(r, mode);

    for (std::size_t j = 0; j < n_branches; ++j) {
        r.per_subnet_target_acc.push_back(accuracy(branch_probs[j], ds.target_test.y));
    }
    r.per_subnet_target_acc.push_back(r.acc_guidance_only);

    for (std::size_t j = 0; j < n_branches; ++j) {
        const LabeledBlock& st = ds.source_test[j];
        Tensor x({st.count, ds.input_dim}, st.x);
        r.per_subnet_source_acc.push_back(accuracy(subnet_probs(model, j, x), st.y));
    }
    {
        // guidance network scored on the pooled source test sets
        std::vector<double> xs;
        std::vector<std::uint32_t> ys;
        for (const auto& st : ds.source_test) {
            xs.insert(xs.end(), st.x.begin(), st.x.end());
            ys.insert(ys.end(), st.y.begin(), st.y.end());
        }
        Tensor x({ys.size(), ds.input_dim}, std::move(xs));
        r.per_subnet_source_acc.push_back(accuracy(subnet_probs(model, model.guidance_index(), x), ys));
    }

    if (run_probe) r.probe_acc = probe_discriminator(model, ds, seed);
    return r;
}

// ---------------------------------------------------------------------------
// feature dump: one row per (subnetwork, sample). Each branch dumps its own
// source domain plus the target; the guidance network dumps every source
// domain plus the target. Columns: subnet, domain (N = target), split,
// label (-1 when unknown), f0..f{d-1}.
// ---------------------------------------------------------------------------

inline void dump_features(const MlMsdaModel& model, const MultiDomainDataset& ds,
                          const std::string& path, const std::string& config_hash_str = "") {
    ds.validate();
    std::ofstream os(path);
    if (!os) throw std::runtime_error("dump_features: cannot open " + path);
    const std::size_t d = model.config().feature_dim;
    os << "# config_hash=" << config_hash_str << "\n";
    os << "subnet,domain,split,label";
    for (std::size_t c = 0; c < d; ++c) os << ",f" << c;
    os << "\n";
    char buf[32];
    auto write_rows = [&](std::size_t subnet, std::size_t domain, const char* split, const Tensor& x,
                          const std::vector<std::uint32_t>* labels) {
        const Tensor feats = subnet_features(model, subnet, x);
        for (std::size_t i = 0; i < feats.rows(); ++i) {
            os << subnet << ',' << domain << ',' << split << ','
               << (labels ? static_cast<long>((*labels)[i]) : -1L);
            for (std::size_t c = 0; c < d; ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", feats.at(i, c));
                os << ',' << buf;
            }
            os << '\n';
        }
    };
    const std::size_t n_sources = ds.num_sources();
    for (std::size_t j = 0; j < model.subnet_count(); ++j) {
        if (j < n_sources) {
            Tensor xtr({ds.source_train[j].count, ds.input_dim}, ds.source_train[j].x);
            Tensor xte({ds.source_test[j].count, ds.input_dim}, ds.source_test[j].x);
            write_rows(j, j, "train", xtr, &ds.source_train[j].y);
            write_rows(j, j, "test", xte, &ds.source_test[j].y);
        } else {
            for (std::size_t s = 0; s < n_sources; ++s) {
                Tensor xtr({ds.source_train[s].count, ds.input_dim}, ds.source_train[s].x);
                Tensor xte({ds.source_test[s].count, ds.input_dim}, ds.source_test[s].x);
                write_rows(j, s, "train", xtr, &ds.source_train[s].y);
                write_rows(j, s, "test", xte, &ds.source_test[s].y);
            }
        }
        Tensor ttr({ds.target_train.count, ds.input_dim}, ds.target_train.x);
        Tensor tte({ds.target_test.count, ds.input_dim}, ds.target_test.x);
        write_rows(j, n_sources, "train", ttr, nullptr);
        write_rows(j, n_sources, "test", tte, &ds.target_test.y);
    }
    if (!os) throw std::runtime_error("dump_features: write failed for " + path);
}

} // namespace mlmsda

#endif // MLMSDA_EVALUATION_HPP
