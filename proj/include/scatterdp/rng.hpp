// Deterministic random streams.
//
// Every consumer of randomness (batch sampler, per-step noise, normalization
// noise, subset selection) owns a dedicated substream derived from
// (seed, domain, index). Substreams make draw order independent of evaluation
// order elsewhere in the program: the noise for step 17 is the same whether or
// not step 16's gradient reduction ran in parallel.
//
// All draws are built from the bit-specified std::mt19937_64 output; the
// standard library distributions are deliberately avoided because their
// algorithms are implementation-defined and would break cross-platform
// reproducibility of batch sequences.
#pragma once

#include <cstdint>
#include <random>

namespace scatterdp {

enum class StreamDomain : std::uint64_t {
  kSampler = 1,    // batch selection (per step for Poisson, per epoch for shuffle)
  kStepNoise = 2,  // gradient noise, one substream per step index
  kNormNoise = 3,  // private normalization noise
  kSubset = 4,     // dataset subsampling
  kGeneric = 5,    // tests and synthetic data
};

class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamDomain domain, std::uint64_t index);

  // Raw 64-bit word from the underlying generator.
  std::uint64_t raw();

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();

  // Standard normal via Box-Muller (two uniforms per call, no state carried
  // between calls so draw counts stay predictable).
  double normal();

  // Unbiased uniform integer in [0, n), n >= 1, by rejection.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 gen_;
};

// SplitMix64 finalizer; used to turn (seed, domain, index) into well-spread
// generator seeds and for cheap content hashing elsewhere.
std::uint64_t mix64(std::uint64_t x);

}  // namespace scatterdp
