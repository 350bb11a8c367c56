#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "scatterdp/normalize.hpp"
#include "scatterdp/rng.hpp"

#include "testutil.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace scatterdp;

namespace {

// Mean/variance of one sample's group slice.
std::pair<double, double> group_moments(const FeatureMatrix& m, int sample,
                                        const FeatureShape& shape, int groups,
                                        int g) {
  const int cols = shape.dim() / groups;
  double mean = 0.0, var = 0.0;
  for (int j = 0; j < cols; ++j) mean += m(sample, g * cols + j);
  mean /= cols;
  for (int j = 0; j < cols; ++j) {
    const double d = m(sample, g * cols + j) - mean;
    var += d * d;
  }
  return {mean, var / cols};
}

}  // namespace

TEST_CASE("group_norm standardizes each group per sample") {
  const FeatureShape shape{9, 4, 4};
  FeatureMatrix m = testutil::random_features(6, shape.dim(), 3, -2.0f, 5.0f);
  for (int groups : {1, 3, 9}) {
    FeatureMatrix n = m;
    group_norm(n, shape, groups);
    for (int i = 0; i < n.rows(); ++i) {
      for (int g = 0; g < groups; ++g) {
        const auto [mean, var] = group_moments(n, i, shape, groups, g);
        CHECK(std::abs(mean) <= 1e-6);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("group_norm handles constant groups via the floor") {
  const FeatureShape shape{4, 2, 2};
  FeatureMatrix m = FeatureMatrix::Constant(3, shape.dim(), 2.5f);
  group_norm(m, shape, 2);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) CHECK(m(i, j) == 0.0f);
  }
}

TEST_CASE("group_norm is idempotent and shift/scale invariant") {
  const FeatureShape shape{6, 3, 3};
  const FeatureMatrix m = testutil::random_features(4, shape.dim(), 11);

  FeatureMatrix once = m;
  group_norm(once, shape, 3);
  FeatureMatrix twice = once;
  group_norm(twice, shape, 3);
  for (int i = 0; i < once.rows(); ++i) {
    for (int j = 0; j < once.cols(); ++j) {
      CHECK(twice(i, j) == doctest::Approx(once(i, j)).epsilon(1e-5));
    }
  }

  // Positive affine rescaling of the input does not change the output.
  FeatureMatrix scaled = (m.array() * 3.25f + 1.5f).matrix();
  group_norm(scaled, shape, 3);
  for (int i = 0; i < once.rows(); ++i) {
    for (int j = 0; j < once.cols(); ++j) {
      CHECK(scaled(i, j) == doctest::Approx(once(i, j)).epsilon(1e-4));
    }
  }
}

TEST_CASE("group_norm validates the group count") {
  const FeatureShape shape{9, 2, 2};
  FeatureMatrix m = testutil::random_features(2, shape.dim(), 1);
  CHECK_THROWS_AS(group_norm(m, shape, 0), std::invalid_argument);
  CHECK_THROWS_AS(group_norm(m, shape, 4), std::invalid_argument);   // 4 does not divide 9
  CHECK_THROWS_AS(group_norm(m, shape, 10), std::invalid_argument);  // > K
}

TEST_CASE("priv_channel_mean with sigma 0 and loose clip is the exact mean") {
  const FeatureShape shape{5, 3, 3};
  const FeatureMatrix m = testutil::random_features(40, shape.dim(), 9);
  RngStream rng(0, StreamDomain::kNormNoise, 0);
  const Eigen::ArrayXd got = priv_channel_mean(m, shape, 1e6, 0.0, rng);

  for (int c = 0; c < shape.channels; ++c) {
    double want = 0.0;
    for (int i = 0; i < m.rows(); ++i) {
      double sm = 0.0;
      for (int s = 0; s < shape.spatial(); ++s) sm += m(i, c * shape.spatial() + s);
      want += sm / shape.spatial();
    }
    want /= m.rows();
    CHECK(got(c) == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("priv_channel_mean clipping bounds the estimate") {
  const FeatureShape shape{4, 2, 2};
  // Large positive features so every per-sample mean vector exceeds the clip.
  const FeatureMatrix m = testutil::random_features(25, shape.dim(), 13, 5.0f, 9.0f);
  RngStream rng(1, StreamDomain::kNormNoise, 0);
  const double clip = 0.5;
  const Eigen::ArrayXd got = priv_channel_mean(m, shape, clip, 0.0, rng);
  CHECK(std::sqrt(got.square().sum()) <= clip + 1e-9);
}

TEST_CASE("priv_channel_mean noise matches its advertised scale") {
  // Monte-Carlo: per-coordinate stddev of the noisy output around the exact
  // clipped mean is sigma * clip / N.
  const FeatureShape shape{8, 1, 1};
  const int n = 1000;
  const double clip = 0.2, sigma = 8.0;
  const FeatureMatrix m = testutil::random_features(n, shape.dim(), 21, 0.0f, 0.05f);

  RngStream exact_rng(0, StreamDomain::kNormNoise, 0);
  const Eigen::ArrayXd exact = priv_channel_mean(m, shape, clip, 0.0, exact_rng);

  const int trials = 200;
  double sq = 0.0;
  for (int t = 0; t < trials; ++t) {
    RngStream rng(1000 + t, StreamDomain::kNormNoise, 0);
    const Eigen::ArrayXd noisy = priv_channel_mean(m, shape, clip, sigma, rng);
    sq += (noisy - exact).square().sum();
  }
  const double got_std = std::sqrt(sq / (trials * shape.channels));
  const double want_std = sigma * clip / n;  // 1.6e-3
  CHECK(got_std == doctest::Approx(want_std).epsilon(0.15));
}

TEST_CASE("priv_channel_mean draws are seed deterministic") {
  const FeatureShape shape{3, 2, 2};
  const FeatureMatrix m = testutil::random_features(10, shape.dim(), 2);
  RngStream a(7, StreamDomain::kNormNoise, 0);
  RngStream b(7, StreamDomain::kNormNoise, 0);
  const Eigen::ArrayXd x = priv_channel_mean(m, shape, 1.0, 4.0, a);
  const Eigen::ArrayXd y = priv_channel_mean(m, shape, 1.0, 4.0, b);
  CHECK((x == y).all());
}

TEST_CASE("data norm with sigma 0 standardizes exactly") {
  const FeatureShape shape{4, 3, 3};
  FeatureMatrix m = testutil::random_features(60, shape.dim(), 31, 1.0f, 3.0f);
  RngStream rng(0, StreamDomain::kNormNoise, 0);
  // Loose clips: nothing binds, so stats are the exact moments.
  const NormStats stats = priv_data_norm(m, shape, 1e6, 1e6, 0.0, rng);
  CHECK(stats.sigma == 0.0);
  CHECK(stats.tau == kVarianceFloor);

  for (int c = 0; c < shape.channels; ++c) {
    double mean = 0.0, sq = 0.0;
    const std::int64_t count = static_cast<std::int64_t>(m.rows()) * shape.spatial();
    for (int i = 0; i < m.rows(); ++i) {
      for (int s = 0; s < shape.spatial(); ++s) {
        mean += m(i, c * shape.spatial() + s);
        sq += static_cast<double>(m(i, c * shape.spatial() + s)) *
              m(i, c * shape.spatial() + s);
      }
    }
    mean /= count;
    sq /= count;
    CHECK(std::abs(mean) <= 2e-5);                       // standardized mean
    CHECK(sq == doctest::Approx(1.0).epsilon(1e-3));     // standardized variance
  }
}

TEST_CASE("variance floor keeps constant channels finite and zero") {
  const FeatureShape shape{2, 2, 2};
  FeatureMatrix m(5, shape.dim());
  for (int i = 0; i < 5; ++i) {
    for (int s = 0; s < shape.spatial(); ++s) {
      m(i, s) = 4.0f;                        // constant channel 0
      m(i, shape.spatial() + s) = static_cast<float>(i);  // varying channel 1
    }
  }
  RngStream rng(0, StreamDomain::kNormNoise, 0);
  const NormStats stats = priv_data_norm(m, shape, 1e6, 1e6, 0.0, rng);
  CHECK(stats.var(0) == doctest::Approx(kVarianceFloor).epsilon(1e-9));
  for (int i = 0; i < 5; ++i) {
    for (int s = 0; s < shape.spatial(); ++s) CHECK(m(i, s) == 0.0f);
  }
}

TEST_CASE("normalizer view matches materialized transforms") {
  const FeatureShape shape{6, 2, 2};
  const FeatureMatrix raw = testutil::random_features(12, shape.dim(), 77, -1.0f, 4.0f);

  // Data norm: fit on "train", apply to held-out rows through both paths.
  FeatureMatrix train = raw.topRows(8);
  FeatureMatrix test = raw.bottomRows(4);
  RngStream rng(3, StreamDomain::kNormNoise, 0);
  const NormStats stats = fit_data_norm(train, shape, 0.8, 1.2, 2.0, rng);

  FeatureMatrix materialized = test;
  apply_data_norm(materialized, shape, stats);
  const FeatureNormalizer lazy(stats, shape);
  std::vector<double> row(shape.dim());
  for (int i = 0; i < test.rows(); ++i) {
    lazy.apply_row(i, test.row(i).data(), row.data(), shape.dim());
    for (int j = 0; j < shape.dim(); ++j) {
      CHECK(row[j] == doctest::Approx(materialized(i, j)).epsilon(1e-6));
    }
  }

  // Group norm: lazy per-sample stats match the in-place transform.
  FeatureMatrix grouped = raw;
  group_norm(grouped, shape, 3);
  const FeatureNormalizer lazy_group(raw, shape, 3);
  for (int i = 0; i < raw.rows(); ++i) {
    lazy_group.apply_row(i, raw.row(i).data(), row.data(), shape.dim());
    for (int j = 0; j < shape.dim(); ++j) {
      CHECK(row[j] == doctest::Approx(grouped(i, j)).epsilon(1e-5));
    }
  }

  // Identity.
  const FeatureNormalizer ident;
  ident.apply_row(0, raw.row(0).data(), row.data(), shape.dim());
  for (int j = 0; j < shape.dim(); ++j) {
    CHECK(row[j] == doctest::Approx(static_cast<double>(raw(0, j))));
  }
}
