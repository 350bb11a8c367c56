// Shared helpers for the unit test suites.
#pragma once

#include "scatterdp/rng.hpp"
#include "scatterdp/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

namespace testutil {

inline double rel_err(double got, double want) {
  const double scale = std::max(std::abs(want), 1e-300);
  return std::abs(got - want) / scale;
}

// Deterministic synthetic feature matrix with entries in [lo, hi).
inline scatterdp::FeatureMatrix random_features(int n, int dim, std::uint64_t seed,
                                                float lo = 0.0f, float hi = 1.0f) {
  scatterdp::RngStream rng(seed, scatterdp::StreamDomain::kGeneric, 17);
  scatterdp::FeatureMatrix m(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) {
      m(i, j) = lo + (hi - lo) * static_cast<float>(rng.uniform());
    }
  }
  return m;
}

inline std::vector<std::uint8_t> random_labels(int n, int classes,
                                               std::uint64_t seed) {
  scatterdp::RngStream rng(seed, scatterdp::StreamDomain::kGeneric, 23);
  std::vector<std::uint8_t> y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = static_cast<std::uint8_t>(rng.below(classes));
  }
  return y;
}

// Deterministic random image channel in [0,1].
inline Eigen::ArrayXXd random_image(int h, int w, std::uint64_t seed) {
  scatterdp::RngStream rng(seed, scatterdp::StreamDomain::kGeneric, 31);
  Eigen::ArrayXXd img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img(y, x) = rng.uniform();
    }
  }
  return img;
}

}  // namespace testutil
