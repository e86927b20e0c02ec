#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace embprior {

// Splits a master seed into independent stream seeds (splitmix64 mix).
uint64_t split_seed(uint64_t master, uint64_t stream);

// Seeded generator handle. All randomness in the library flows through one of
// these; there is no global random state. normal() is stateless (no cached
// spare value), so serializing the engine alone captures the exact position
// in the stream -- required for bit-exact checkpoint resume.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Box-Muller, cosine branch only; two uniforms per draw, no carried state.
    double normal();

    // uniform integer in [lo, hi], rejection sampled (unbiased)
    int64_t uniform_int(int64_t lo, int64_t hi);

    bool bernoulli(double p) { return uniform01() < p; }

    std::string serialize() const;
    void deserialize(const std::string& state);

  private:
    std::mt19937_64 engine_;
};

}  // namespace embprior
