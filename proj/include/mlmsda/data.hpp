#ifndef MLMSDA_DATA_HPP
#define MLMSDA_DATA_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlmsda/binio.hpp"
#include "mlmsda/rng.hpp"
#include "mlmsda/tensor.hpp"

namespace mlmsda {

// ===========================================================================
// Synthetic ring benchmark: class k sits at angle 2*pi*k/K on the unit
// circle; a domain rotates the whole layout, translates it, and adds
// isotropic Gaussian noise. Rotation between domains is the controllable
// shift knob.
// ===========================================================================

struct DomainSpec {
    double rotation_deg = 0.0;
    std::array<double, 2> translation{0.0, 0.0};
    double noise_sigma = 0.25;
    std::size_t class_count = 3;
    // Per-domain totals; spread across classes as evenly as possible with the
    // remainder going to the lowest class indices.
    std::size_t train_count = 500;
    std::size_t test_count = 200;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(noise_sigma > 0.0)) throw std::invalid_argument("DomainSpec: noise_sigma must be > 0");
        if (class_count < 2) throw std::invalid_argument("DomainSpec: class_count must be >= 2");
        if (train_count == 0 || test_count == 0) {
            throw std::invalid_argument("DomainSpec: train/test counts must be >= 1");
        }
    }

    bool operator==(const DomainSpec&) const = default;
};

struct LabeledBlock {
    std::size_t count = 0;
    std::size_t dim = 0;
    std::vector<double> x;        // count * dim, row-major
    std::vector<std::uint32_t> y; // count

    const double* row(std::size_t i) const { return x.data() + i * dim; }
};

// Target-domain training data: the label channel does not exist on this type,
// so training code cannot read it even by accident.
struct UnlabeledBlock {
    std::size_t count = 0;
    std::size_t dim = 0;
    std::vector<double> x;

    const double* row(std::size_t i) const { return x.data() + i * dim; }
};

struct MultiDomainDataset {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::vector<LabeledBlock> source_train;
    std::vector<LabeledBlock> source_test;
    UnlabeledBlock target_train;
    LabeledBlock target_test;

    std::size_t num_sources() const { return source_train.size(); }

    std::size_t total_source_train() const {
        std::size_t n = 0;
        for (const auto& b : source_train) n += b.count;
        return n;
    }

    void validate() const {
        if (num_classes < 2) throw std::invalid_argument("dataset: num_classes must be >= 2");
        if (input_dim == 0) throw std::invalid_argument("dataset: input_dim must be >= 1");
        if (source_train.empty() || source_train.size() != source_test.size()) {
            throw std::invalid_argument("dataset: needs >= 1 source domain with train and test splits");
        }
        auto check_labeled = [&](const LabeledBlock& b, const char* what) {
            if (b.dim != input_dim || b.x.size() != b.count * b.dim || b.y.size() != b.count) {
                throw std::invalid_argument(std::string("dataset: inconsistent block ") + what);
            }
            for (std::uint32_t label : b.y) {
                if (label >= num_classes) {
                    throw std::invalid_argument(std::string("dataset: label out of range in ") + what +
                                                " (class count mismatch across domains)");
                }
            }
        };
        for (std::size_t j = 0; j < source_train.size(); ++j) {
            check_labeled(source_train[j], "source_train");
            check_labeled(source_test[j], "source_test");
        }
        if (target_train.dim != input_dim || target_train.x.size() != target_train.count * input_dim) {
            throw std::invalid_argument("dataset: inconsistent target_train block");
        }
        check_labeled(target_test, "target_test");
    }
};

namespace detail {

inline std::size_t class_quota(std::size_t total, std::size_t num_classes, std::size_t c) {
    return total / num_classes + (c < total % num_classes ? 1 : 0);
}

inline void fill_ring_block(const DomainSpec& spec, std::size_t total, Rng& rng, std::vector<double>& xs,
                            std::vector<std::uint32_t>& ys) {
    const double theta = spec.rotation_deg * M_PI / 180.0;
    xs.reserve(xs.size() + total * 2);
    ys.reserve(ys.size() + total);
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        const double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(spec.class_count) + theta;
        const double cx = std::cos(angle) + spec.translation[0];
        const double cy = std::sin(angle) + spec.translation[1];
        const std::size_t n = class_quota(total, spec.class_count, c);
        for (std::size_t s = 0; s < n; ++s) {
            xs.push_back(cx + spec.noise_sigma * rng.gaussian());
            xs.push_back(cy + spec.noise_sigma * rng.gaussian());
            ys.push_back(static_cast<std::uint32_t>(c));
        }
    }
}

} // namespace detail

// specs = N source domains followed by one target domain (last entry).
inline MultiDomainDataset generate_ring_domains(std::uint64_t base_seed,
                                                const std::vector<DomainSpec>& specs) {
    if (specs.size() < 2) {
        throw std::invalid_argument("generate_ring_domains: need >= 1 source spec plus the target spec");
    }
    for (const auto& s : specs) {
        s.validate();
        if (s.class_count != specs[0].class_count) {
            throw std::invalid_argument("generate_ring_domains: class_count differs across domains");
        }
    }
    MultiDomainDataset ds;
    ds.input_dim = 2;
    ds.num_classes = specs[0].class_count;
    const std::size_t n_sources = specs.size() - 1;
    for (std::size_t j = 0; j < n_sources; ++j) {
        const DomainSpec& spec = specs[j];
        Rng rng(mix_seed(base_seed, j, spec.seed));
        LabeledBlock train{0, 2, {}, {}}, test{0, 2, {}, {}};
        detail::fill_ring_block(spec, spec.train_count, rng, train.x, train.y);
        detail::fill_ring_block(spec, spec.test_count, rng, test.x, test.y);
        train.count = spec.train_count;
        test.count = spec.test_count;
        ds.source_train.push_back(std::move(train));
        ds.source_test.push_back(std::move(test));
    }
    const DomainSpec& tspec = specs.back();
    Rng rng(mix_seed(base_seed, n_sources, tspec.seed));
    std::vector<double> xs;
    std::vector<std::uint32_t> ys;
    detail::fill_ring_block(tspec, tspec.train_count, rng, xs, ys);
    ds.target_train = UnlabeledBlock{tspec.train_count, 2, std::move(xs)}; // labels dropped here
    LabeledBlock ttest{0, 2, {}, {}};
    detail::fill_ring_block(tspec, tspec.test_count, rng, ttest.x, ttest.y);
    ttest.count = tspec.test_count;
    ds.target_test = std::move(ttest);
    ds.validate();
    return ds;
}

// ===========================================================================
// On-disk format, little-endian (layout documented in docs/formats.md):
//   magic "MLMSDADS" | u32 version | u64 producer hash | u32 K | u32 dim |
//   u32 N | per source: u64 train_count, u64 test_count | u64 tgt_train |
//   u64 tgt_test | data blocks (f64 features, u32 labels) in header order;
//   target train has no label block.
// ===========================================================================

inline constexpr char kDatasetMagic[8] = {'M', 'L', 'M', 'S', 'D', 'A', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const MultiDomainDataset& ds, const std::string& path,
                         std::uint64_t producer_hash = 0) {
    ds.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    binio::put_bytes(os, kDatasetMagic, 8);
    binio::put_u32(os, kDatasetVersion);
    binio::put_u64(os, producer_hash);
    binio::put_u32(os, static_cast<std::uint32_t>(ds.num_classes));
    binio::put_u32(os, static_cast<std::uint32_t>(ds.input_dim));
    binio::put_u32(os, static_cast<std::uint32_t>(ds.num_sources()));
    for (std::size_t j = 0; j < ds.num_sources(); ++j) {
        binio::put_u64(os, ds.source_train[j].count);
        binio::put_u64(os, ds.source_test[j].count);
    }
    binio::put_u64(os, ds.target_train.count);
    binio::put_u64(os, ds.target_test.count);
    auto put_labeled = [&](const LabeledBlock& b) {
        binio::put_f64_block(os, b.x);
        for (std::uint32_t label : b.y) binio::put_u32(os, label);
    };
    for (std::size_t j = 0; j < ds.num_sources(); ++j) {
        put_labeled(ds.source_train[j]);
        put_labeled(ds.source_test[j]);
    }
    binio::put_f64_block(os, ds.target_train.x);
    put_labeled(ds.target_test);
    if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

inline MultiDomainDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
    char magic[8];
    binio::get_bytes(is, magic, 8, "magic");
    if (std::memcmp(magic, kDatasetMagic, 8) != 0) {
        throw std::runtime_error("load_dataset: malformed file (bad magic): " + path);
    }
    const std::uint32_t version = binio::get_u32(is, "version");
    if (version != kDatasetVersion) {
        throw std::runtime_error("load_dataset: unsupported version " + std::to_string(version));
    }
    (void)binio::get_u64(is, "producer hash");
    MultiDomainDataset ds;
    ds.num_classes = binio::get_u32(is, "class count");
    ds.input_dim = binio::get_u32(is, "input dim");
    const std::uint32_t n_sources = binio::get_u32(is, "source count");
    std::vector<std::pair<std::uint64_t, std::uint64_t>> counts(n_sources);
    for (auto& c : counts) {
        c.first = binio::get_u64(is, "train count");
        c.second = binio::get_u64(is, "test count");
    }
    const std::uint64_t tgt_train_count = binio::get_u64(is, "target train count");
    const std::uint64_t tgt_test_count = binio::get_u64(is, "target test count");
    auto get_labeled = [&](std::uint64_t count, const char* what) {
        LabeledBlock b;
        b.count = count;
        b.dim = ds.input_dim;
        binio::get_f64_block(is, b.x, count * ds.input_dim, what);
        b.y.resize(count);
        for (auto& label : b.y) label = binio::get_u32(is, what);
        return b;
    };
    for (std::uint32_t j = 0; j < n_sources; ++j) {
        ds.source_train.push_back(get_labeled(counts[j].first, "source train block"));
        ds.source_test.push_back(get_labeled(counts[j].second, "source test block"));
    }
    ds.target_train.count = tgt_train_count;
    ds.target_train.dim = ds.input_dim;
    binio::get_f64_block(is, ds.target_train.x, tgt_train_count * ds.input_dim, "target train block");
    ds.target_test = get_labeled(tgt_test_count, "target test block");
    try {
        ds.validate();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("load_dataset: ") + e.what());
    }
    return ds;
}

// ===========================================================================
// Batching. One step feeds every subnetwork: branch j gets a batch from
// source domain j, the guidance network gets a batch from the combined
// source pool, and all of them share the same target batch.
// ===========================================================================

struct Batch {
    Tensor x;        // [b x input_dim]
    Tensor y_onehot; // [b x K]
    std::vector<std::uint32_t> y;
};

struct StepBatch {
    std::vector<Batch> branch; // N entries
    Batch combined;            // guidance input; its size defines the epoch
    Tensor target_x;           // shared by all N+1 subnetworks
};

// Combined-source batches are drawn without replacement from the
// concatenated pool; exhausting that pool is the epoch boundary, so
// steps_per_epoch = ceil(total_source_train / batch_size) and the last
// combined batch of an epoch may be short. Branch and target streams cycle
// through their own reshuffled permutations and always yield full batches.
class EpochSampler {
  public:
    EpochSampler(const MultiDomainDataset& ds, std::size_t batch_size, std::uint64_t seed,
                 bool equal_per_domain = false)
        : ds_(&ds), batch_size_(batch_size), equal_per_domain_(equal_per_domain),
          rng_(mix_seed(seed, 0x5a3c1ull)) {
        ds.validate();
        if (batch_size_ == 0) throw std::invalid_argument("EpochSampler: batch_size must be >= 1");
        for (const auto& b : ds.source_train) {
            if (b.count == 0) throw std::invalid_argument("EpochSampler: empty source domain");
            if (batch_size_ > b.count) {
                throw std::invalid_argument("EpochSampler: batch_size exceeds a source domain's train size");
            }
        }
        if (ds.target_train.count == 0) throw std::invalid_argument("EpochSampler: empty target domain");
        if (batch_size_ > ds.target_train.count) {
            throw std::invalid_argument("EpochSampler: batch_size exceeds the target train size");
        }
        total_source_ = ds.total_source_train();
        branch_cycles_.resize(ds.num_sources());
        for (std::size_t j = 0; j < ds.num_sources(); ++j) {
            branch_cycles_[j] = Cycle(ds.source_train[j].count);
        }
        target_cycle_ = Cycle(ds.target_train.count);
        pool_.resize(total_source_);
        std::size_t g = 0;
        for (std::size_t j = 0; j < ds.num_sources(); ++j) {
            for (std::size_t i = 0; i < ds.source_train[j].count; ++i) pool_[g++] = {j, i};
        }
        pool_pos_ = pool_.size(); // force reshuffle on first step
    }

    std::size_t steps_per_epoch() const {
        return (total_source_ + batch_size_ - 1) / batch_size_;
    }

    StepBatch next() {
        if (pool_pos_ >= pool_.size()) {
            rng_.shuffle(pool_);
            pool_pos_ = 0;
        }
        const std::size_t combined_n = std::min(batch_size_, pool_.size() - pool_pos_);

        StepBatch out;
        out.branch.reserve(ds_->num_sources());
        for (std::size_t j = 0; j < ds_->num_sources(); ++j) {
            out.branch.push_back(make_branch_batch(j));
        }
        out.combined = equal_per_domain_ ? make_equal_combined(combined_n) : make_pool_combined(combined_n);
        pool_pos_ += combined_n;
        out.target_x = make_target_batch();
        return out;
    }

  private:
    struct Cycle {
        std::vector<std::size_t> order;
        std::size_t pos = 0;

        Cycle() = default;
        explicit Cycle(std::size_t n) : order(n), pos(n) {
            std::iota(order.begin(), order.end(), 0);
        }
        std::size_t draw(Rng& rng) {
            if (pos >= order.size()) {
                rng.shuffle(order);
                pos = 0;
            }
            return order[pos++];
        }
    };

    Batch gather_labeled(const std::vector<std::pair<std::size_t, std::size_t>>& picks) const {
        const std::size_t b = picks.size();
        const std::size_t dim = ds_->input_dim;
        const std::size_t k = ds_->num_classes;
        Batch out;
        out.x = Tensor({b, dim});
        out.y_onehot = Tensor({b, k});
        out.y.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const LabeledBlock& block = ds_->source_train[picks[i].first];
            const double* row = block.row(picks[i].second);
            for (std::size_t d = 0; d < dim; ++d) out.x.data[i * dim + d] = row[d];
            const std::uint32_t label = block.y[picks[i].second];
            out.y[i] = label;
            out.y_onehot.data[i * k + label] = 1.0;
        }
        return out;
    }

    Batch make_branch_batch(std::size_t j) {
        std::vector<std::pair<std::size_t, std::size_t>> picks(batch_size_);
        for (auto& p : picks) p = {j, branch_cycles_[j].draw(rng_)};
        return gather_labeled(picks);
    }

    Batch make_pool_combined(std::size_t n) {
        std::vector<std::pair<std::size_t, std::size_t>> picks(pool_.begin() + pool_pos_,
                                                               pool_.begin() + pool_pos_ + n);
        return gather_labeled(picks);
    }

    // Equal-per-domain alternative to proportional pool sampling; keeps the
    // same epoch accounting.
    Batch make_equal_combined(std::size_t n) {
        const std::size_t nsrc = ds_->num_sources();
        std::vector<std::pair<std::size_t, std::size_t>> picks;
        picks.reserve(n);
        for (std::size_t j = 0; j < nsrc; ++j) {
            const std::size_t quota = n / nsrc + (j < n % nsrc ? 1 : 0);
            for (std::size_t s = 0; s < quota; ++s) picks.push_back({j, equal_cycle(j).draw(rng_)});
        }
        return gather_labeled(picks);
    }

    Cycle& equal_cycle(std::size_t j) {
        if (equal_cycles_.empty()) {
            equal_cycles_.resize(ds_->num_sources());
            for (std::size_t i = 0; i < ds_->num_sources(); ++i) {
                equal_cycles_[i] = Cycle(ds_->source_train[i].count);
            }
        }
        return equal_cycles_[j];
    }

    Tensor make_target_batch() {
        const std::size_t dim = ds_->input_dim;
        Tensor x({batch_size_, dim});
        for (std::size_t i = 0; i < batch_size_; ++i) {
            const double* row = ds_->target_train.row(target_cycle_.draw(rng_));
            for (std::size_t d = 0; d < dim; ++d) x.data[i * dim + d] = row[d];
        }
        return x;
    }

    const MultiDomainDataset* ds_;
    std::size_t batch_size_;
    bool equal_per_domain_;
    Rng rng_;
    std::size_t total_source_ = 0;
    std::vector<std::pair<std::size_t, std::size_t>> pool_; // (domain, index)
    std::size_t pool_pos_ = 0;
    std::vector<Cycle> branch_cycles_;
    std::vector<Cycle> equal_cycles_;
    Cycle target_cycle_;
};

} // namespace mlmsda

#endif // MLMSDA_DATA_HPP
