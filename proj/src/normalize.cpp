#include "scatterdp/normalize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace scatterdp {

namespace {

void check_groups(const FeatureShape& shape, int groups) {
  if (groups < 1) throw std::invalid_argument("group_norm: groups < 1");
  if (groups > shape.channels) {
    throw std::invalid_argument("group_norm: more groups than channels");
  }
  if (shape.channels % groups != 0) {
    throw std::invalid_argument("group_norm: groups must divide channels");
  }
}

}  // namespace

void group_norm(Eigen::Ref<FeatureMatrix> features, const FeatureShape& shape,
                int groups) {
  check_groups(shape, groups);
  const int span = (shape.channels / groups) * shape.spatial();
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (int g = 0; g < groups; ++g) {
      Eigen::Map<Eigen::ArrayXf> block(features.row(i).data() +
                                           static_cast<std::ptrdiff_t>(g) * span,
                                       span);
      const Eigen::ArrayXd vals = block.cast<double>();
      const double mean = vals.mean();
      const double var = (vals - mean).square().mean();
      const double scale = 1.0 / std::sqrt(var + kGroupFloor);
      block = ((vals - mean) * scale).cast<float>();
    }
  }
}

namespace {

// Shared reduction for priv_channel_mean and the squared pass of
// fit_data_norm; squaring happens in 64-bit before accumulation.
Eigen::ArrayXd channel_moment(const Eigen::Ref<const FeatureMatrix>& features,
                              const FeatureShape& shape, double clip,
                              double sigma, RngStream& rng, bool squared) {
  if (!(clip > 0.0)) throw std::invalid_argument("priv_channel_mean: clip <= 0");
  if (!(sigma >= 0.0)) throw std::invalid_argument("priv_channel_mean: sigma < 0");
  if (features.rows() < 1) {
    throw std::invalid_argument("priv_channel_mean: empty feature set");
  }
  const int K = shape.channels;
  const int spatial = shape.spatial();
  const double n = static_cast<double>(features.rows());

  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(K);
  Eigen::ArrayXd channel(K);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const float* row = features.row(i).data();
    for (int c = 0; c < K; ++c) {
      double acc = 0.0;
      const float* p = row + static_cast<std::ptrdiff_t>(c) * spatial;
      for (int s = 0; s < spatial; ++s) {
        const double v = static_cast<double>(p[s]);
        acc += squared ? v * v : v;
      }
      channel(c) = acc / spatial;
    }
    const double norm = std::sqrt(channel.square().sum());
    sum += norm > clip ? (channel * (clip / norm)).eval() : channel;
  }

  Eigen::ArrayXd mean = sum / n;
  if (sigma > 0.0) {
    const double scale = sigma * clip / n;
    for (int c = 0; c < K; ++c) mean(c) += scale * rng.normal();
  }
  return mean;
}

}  // namespace

Eigen::ArrayXd priv_channel_mean(const Eigen::Ref<const FeatureMatrix>& features,
                                 const FeatureShape& shape, double clip,
                                 double sigma, RngStream& rng) {
  return channel_moment(features, shape, clip, sigma, rng, /*squared=*/false);
}

NormStats fit_data_norm(const Eigen::Ref<const FeatureMatrix>& features,
                        const FeatureShape& shape, double c1, double c2,
                        double sigma, RngStream& rng) {
  NormStats stats;
  stats.c1 = c1;
  stats.c2 = c2;
  stats.sigma = sigma;
  stats.tau = kVarianceFloor;
  stats.mean = channel_moment(features, shape, c1, sigma, rng, /*squared=*/false);
  const Eigen::ArrayXd mean_sq =
      channel_moment(features, shape, c2, sigma, rng, /*squared=*/true);
  stats.var = (mean_sq - stats.mean.square()).max(kVarianceFloor);
  return stats;
}

void apply_data_norm(Eigen::Ref<FeatureMatrix> features,
                     const FeatureShape& shape, const NormStats& stats) {
  const int K = shape.channels;
  const int spatial = shape.spatial();
  if (stats.mean.size() != K) {
    throw std::invalid_argument("apply_data_norm: stats do not match shape");
  }
  const Eigen::ArrayXd scale = stats.var.sqrt().inverse();
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    float* row = features.row(i).data();
    for (int c = 0; c < K; ++c) {
      float* p = row + static_cast<std::ptrdiff_t>(c) * spatial;
      for (int s = 0; s < spatial; ++s) {
        p[s] = static_cast<float>((static_cast<double>(p[s]) - stats.mean(c)) *
                                  scale(c));
      }
    }
  }
}

NormStats priv_data_norm(Eigen::Ref<FeatureMatrix> features,
                         const FeatureShape& shape, double c1, double c2,
                         double sigma, RngStream& rng) {
  const NormStats stats = fit_data_norm(features, shape, c1, c2, sigma, rng);
  apply_data_norm(features, shape, stats);
  return stats;
}

FeatureNormalizer::FeatureNormalizer() : kind_(Kind::kIdentity) {}

FeatureNormalizer::FeatureNormalizer(NormStats stats, const FeatureShape& shape)
    : kind_(Kind::kChannel), shape_(shape), stats_(std::move(stats)) {
  channel_shift_ = stats_->mean;
  channel_scale_ = stats_->var.sqrt().inverse();
}

FeatureNormalizer::FeatureNormalizer(
    const Eigen::Ref<const FeatureMatrix>& features, const FeatureShape& shape,
    int groups)
    : kind_(Kind::kGroup), shape_(shape) {
  check_groups(shape, groups);
  group_channels_ = shape.channels / groups;
  const int span = group_channels_ * shape.spatial();
  group_shift_.resize(features.rows(), groups);
  group_scale_.resize(features.rows(), groups);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const float* row = features.row(i).data();
    for (int g = 0; g < groups; ++g) {
      const float* p = row + static_cast<std::ptrdiff_t>(g) * span;
      double sum = 0.0, sum_sq = 0.0;
      for (int s = 0; s < span; ++s) {
        const double v = static_cast<double>(p[s]);
        sum += v;
        sum_sq += v * v;
      }
      const double mean = sum / span;
      const double var = sum_sq / span - mean * mean;
      group_shift_(i, g) = mean;
      group_scale_(i, g) = 1.0 / std::sqrt(std::max(var, 0.0) + kGroupFloor);
    }
  }
}

void FeatureNormalizer::apply_row(int sample, const float* in, double* out,
                                  int len) const {
  switch (kind_) {
    case Kind::kIdentity: {
      for (int j = 0; j < len; ++j) out[j] = static_cast<double>(in[j]);
      return;
    }
    case Kind::kChannel: {
      const int spatial = shape_.spatial();
      for (int c = 0; c < shape_.channels; ++c) {
        const double shift = channel_shift_(c);
        const double scale = channel_scale_(c);
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(c) * spatial;
        for (int s = 0; s < spatial; ++s) {
          out[base + s] = (static_cast<double>(in[base + s]) - shift) * scale;
        }
      }
      return;
    }
    case Kind::kGroup: {
      const int span = group_channels_ * shape_.spatial();
      for (int g = 0; g < shape_.channels / group_channels_; ++g) {
        const double shift = group_shift_(sample, g);
        const double scale = group_scale_(sample, g);
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(g) * span;
        for (int s = 0; s < span; ++s) {
          out[base + s] = (static_cast<double>(in[base + s]) - shift) * scale;
        }
      }
      return;
    }
  }
}

void FeatureNormalizer::apply_row_f(int sample, const float* in, float* out,
                                    int len) const {
  switch (kind_) {
    case Kind::kIdentity: {
      std::copy(in, in + len, out);
      return;
    }
    case Kind::kChannel: {
      const int spatial = shape_.spatial();
      for (int c = 0; c < shape_.channels; ++c) {
        const float shift = static_cast<float>(channel_shift_(c));
        const float scale = static_cast<float>(channel_scale_(c));
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(c) * spatial;
        for (int s = 0; s < spatial; ++s) {
          out[base + s] = (in[base + s] - shift) * scale;
        }
      }
      return;
    }
    case Kind::kGroup: {
      const int span = group_channels_ * shape_.spatial();
      for (int g = 0; g < shape_.channels / group_channels_; ++g) {
        const float shift = static_cast<float>(group_shift_(sample, g));
        const float scale = static_cast<float>(group_scale_(sample, g));
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(g) * span;
        for (int s = 0; s < span; ++s) {
          out[base + s] = (in[base + s] - shift) * scale;
        }
      }
      return;
    }
  }
}

}  // namespace scatterdp
