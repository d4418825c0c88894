#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ubdiff/tensor.hpp"

namespace ubdiff {

// FNV-1a, used to derive per-stage and per-sample seeds from the global seed.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Stage seed = fnv1a64("<stage>:<global_seed>"); documented in the README so
// stages can be re-run independently.
inline std::uint64_t derive_seed(const std::string& stage, std::uint64_t global_seed) {
    return fnv1a64(stage + ":" + std::to_string(global_seed));
}

inline std::uint64_t derive_seed(const std::string& stage, std::uint64_t global_seed,
                                 std::uint64_t index) {
    return fnv1a64(stage + ":" + std::to_string(global_seed) + ":" + std::to_string(index));
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    float uniform(float lo = 0.0f, float hi = 1.0f) {
        std::uniform_real_distribution<float> d(lo, hi);
        return d(gen_);
    }

    // Box-Muller; self-contained so a draw consumes a fixed number of engine
    // words regardless of library internals.
    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        std::uniform_real_distribution<double> d(0.0, 1.0);
        do {
            u1 = d(gen_);
        } while (u1 <= 1e-300);
        u2 = d(gen_);
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = float(r * std::sin(a));
        have_spare_ = true;
        return float(r * std::cos(a));
    }

    // Uniform integer in [0, n).
    int index(int n) {
        std::uniform_int_distribution<int> d(0, n - 1);
        return d(gen_);
    }

    int integer(int lo, int hi) {  // inclusive bounds
        std::uniform_int_distribution<int> d(lo, hi);
        return d(gen_);
    }

    void fill_normal(Tensor& t, float scale = 1.0f) {
        for (auto& x : t.v) x = normal() * scale;
    }

    template <typename It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, gen_);
    }

    std::mt19937_64& engine() { return gen_; }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace ubdiff
