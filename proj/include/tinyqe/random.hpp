#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace tinyqe {

// Deterministic random source. std::mt19937 output is fully specified by the
// standard, but the std distributions are not, so the distributions here are
// implemented by hand to make seeded runs reproduce bit-for-bit on any
// toolchain.
class RandomSource {
   public:
    explicit RandomSource(std::uint32_t seed) : engine_(seed) {}

    // uniform in [0, 1) with 24 bits of resolution
    float uniform() { return static_cast<float>(engine_() >> 8) * (1.0f / 16777216.0f); }

    // uniform integer in [0, n)
    std::uint32_t below(std::uint32_t n) { return engine_() % n; }

    // standard normal via Box-Muller, one spare cached
    float normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        float u1 = uniform();
        float u2 = uniform();
        while (u1 <= 1e-12f) u1 = uniform();
        const float radius = std::sqrt(-2.0f * std::log(u1));
        const float angle = 6.2831853071795864769f * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    float normal(float mean, float stddev) { return mean + stddev * normal(); }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = below(static_cast<std::uint32_t>(i));
            std::swap(items[i - 1], items[j]);
        }
    }

   private:
    std::mt19937 engine_;
    float spare_ = 0.0f;
    bool has_spare_ = false;
};

}  // namespace tinyqe
