#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ortk {

/* Seeded generator with an explicit Box-Muller normal so the draw sequence is
 * pinned by this code, not by whichever std::normal_distribution the standard
 * library ships.  Reproducibility of sampled studies depends on it. */
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() {  // [0, 1)
        return std::ldexp(static_cast<double>(engine_() >> 11), -53);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace ortk
