#include "scatterdp/rng.hpp"

#include <cmath>

namespace scatterdp {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, StreamDomain domain,
                     std::uint64_t index)
    : gen_(mix64(mix64(mix64(seed) ^ static_cast<std::uint64_t>(domain)) ^
                 index)) {}

std::uint64_t RngStream::raw() { return gen_(); }

double RngStream::uniform() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  // Box-Muller; u1 is kept away from zero so the log is finite.
  const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(6.283185307179586476925286766559 * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  // Rejection below the largest multiple of n.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n) - 1;
  std::uint64_t v;
  do {
    v = gen_();
  } while (v > limit);
  return v % n;
}

}  // namespace scatterdp
