#ifndef MLMSDA_RNG_HPP
#define MLMSDA_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mlmsda {

// splitmix64; used to derive independent stream seeds from one run seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix_seed(a ^ mix_seed(b)); }

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// distribution mappings below are our own so streams are identical across
// standard-library implementations (std::*_distribution is not portable).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t reject = (0 - n) % n; // 2^64 mod n
        std::uint64_t x = next_u64();
        while (x < reject) x = next_u64();
        return x % n;
    }

    // Box-Muller; draws two uniforms per call
    double gaussian() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

    // Fisher-Yates; std::shuffle's permutation order is unspecified
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

} // namespace mlmsda

#endif // MLMSDA_RNG_HPP
