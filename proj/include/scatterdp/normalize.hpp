// Feature normalization: non-private group normalization and differentially
// private per-channel standardization.
//
// Private data normalization estimates per-channel means of the features and
// of their squares with clipped, noised averages (two Gaussian invocations),
// then standardizes every channel. Test-set features must be transformed with
// the statistics fitted on the training set.
#pragma once

#include "scatterdp/rng.hpp"
#include "scatterdp/types.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>

namespace scatterdp {

// Per-channel standardization statistics produced by priv_data_norm.
struct NormStats {
  Eigen::ArrayXd mean;  // noisy clipped channel means, length K
  Eigen::ArrayXd var;   // max(noisy E[x^2] - mean^2, tau), length K
  double c1 = 0.0;      // clip bound for the mean pass
  double c2 = 0.0;      // clip bound for the mean-square pass
  double sigma = 0.0;   // noise multiplier (0 = exact standardization)
  double tau = 0.0;     // variance floor
};

inline constexpr double kVarianceFloor = 1e-5;  // tau in priv_data_norm
inline constexpr double kGroupFloor = 1e-8;     // group variance floor

// Normalize each sample in place: channels are split into `groups` contiguous
// groups of equal size; each group's values (across its channels and all
// spatial positions) are shifted/scaled to mean 0, variance 1. Zero-variance
// groups map to zero via the variance floor. Requires groups in [1, K] and
// groups | K.
void group_norm(Eigen::Ref<FeatureMatrix> features, const FeatureShape& shape,
                int groups);

// Differentially private mean of per-sample channel means: each sample's
// spatial channel-mean vector (length K) is clipped to L2 norm `clip`, the
// clipped vectors are averaged, and isotropic Gaussian noise with
// per-coordinate stddev sigma*clip/N is added. The noise draw comes from
// `rng` at a single serialization point, after the deterministic reduction.
// Requires clip > 0, sigma >= 0, at least one sample.
Eigen::ArrayXd priv_channel_mean(const Eigen::Ref<const FeatureMatrix>& features,
                                 const FeatureShape& shape, double clip,
                                 double sigma, RngStream& rng);

// Fit private standardization statistics: one priv_channel_mean pass over the
// features (clip c1) and one over their squares (clip c2), variance floored at
// kVarianceFloor. Total privacy charge: (alpha, alpha/sigma^2)-RDP.
NormStats fit_data_norm(const Eigen::Ref<const FeatureMatrix>& features,
                        const FeatureShape& shape, double c1, double c2,
                        double sigma, RngStream& rng);

// Standardize every channel in place with previously fitted statistics.
void apply_data_norm(Eigen::Ref<FeatureMatrix> features, const FeatureShape& shape,
                     const NormStats& stats);

// Convenience: fit on `features` and standardize them, returning the stats.
NormStats priv_data_norm(Eigen::Ref<FeatureMatrix> features,
                         const FeatureShape& shape, double c1, double c2,
                         double sigma, RngStream& rng);

// Lazy per-sample affine view of a normalization, used by the trainer to read
// 32-bit cached features through the normalization in 64-bit without
// materializing a transformed copy.
class FeatureNormalizer {
 public:
  // Identity.
  FeatureNormalizer();
  // Channel-wise standardization with fitted stats.
  FeatureNormalizer(NormStats stats, const FeatureShape& shape);
  // Per-sample group normalization; per-sample statistics are precomputed
  // from `features` (the same array later passed row-aligned to apply_row).
  FeatureNormalizer(const Eigen::Ref<const FeatureMatrix>& features,
                    const FeatureShape& shape, int groups);

  // out[j] = (in[j] - shift(sample, j)) * scale(sample, j) for j < len.
  // `len` must equal the construction shape's dim() for non-identity kinds.
  void apply_row(int sample, const float* in, double* out, int len) const;

  // Same transform with 32-bit arithmetic and output; the training and
  // evaluation gather path. Statistics are still the 64-bit fitted values.
  void apply_row_f(int sample, const float* in, float* out, int len) const;

  const std::optional<NormStats>& stats() const { return stats_; }

 private:
  enum class Kind { kIdentity, kChannel, kGroup };
  Kind kind_;
  FeatureShape shape_;
  std::optional<NormStats> stats_;
  Eigen::ArrayXd channel_shift_, channel_scale_;  // kChannel, length K
  Eigen::ArrayXXd group_shift_, group_scale_;     // kGroup, N x G
  int group_channels_ = 0;                        // channels per group
};

}  // namespace scatterdp
