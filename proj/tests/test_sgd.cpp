#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "scatterdp/sgd.hpp"

#include "scatterdp/privacy.hpp"

#include "oracles.hpp"
#include "testutil.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

using namespace scatterdp;

namespace {

// Cross-entropy loss of the flattened (d+1) x k parameter vector; used by the
// finite-difference oracle.
double loss_at(const Eigen::VectorXd& params, int d, int k,
               const Eigen::VectorXd& x, int label) {
  Eigen::VectorXd logits(k);
  for (int c = 0; c < k; ++c) {
    double z = params(d * k + c);  // bias block sits after the weights
    for (int j = 0; j < d; ++j) z += params(j * k + c) * x(j);
    logits(c) = z;
  }
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits(label);
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& grad) {
  Eigen::VectorXd v(grad.size());
  int idx = 0;
  for (int r = 0; r < grad.rows(); ++r) {
    for (int c = 0; c < grad.cols(); ++c) v(idx++) = grad(r, c);
  }
  return v;
}

struct SmallData {
  FeatureMatrix x;
  std::vector<std::uint8_t> y;
  FeatureNormalizer ident;

  DatasetView view() const {
    return DatasetView{FeatureMap32(x.data(), x.rows(), x.cols()), &y, &ident};
  }
};

SmallData make_data(int n, int d, std::uint64_t seed, int classes = 10) {
  SmallData data;
  data.x = testutil::random_features(n, d, seed, -1.0f, 1.0f);
  data.y = testutil::random_labels(n, classes, seed + 1);
  return data;
}

// Linearly separable clusters: class c concentrated on coordinate c.
SmallData make_separable(int n, int d, int classes, std::uint64_t seed) {
  SmallData data;
  data.x = testutil::random_features(n, d, seed, 0.0f, 0.1f);
  data.y = testutil::random_labels(n, classes, seed + 1);
  for (int i = 0; i < n; ++i) data.x(i, data.y[i]) += 2.0f;
  return data;
}

}  // namespace

TEST_CASE("per-sample gradient matches finite differences") {
  const int d = 6, k = 4;
  LinearModel model = LinearModel::zeros(d, k);
  RngStream rng(5, StreamDomain::kGeneric, 0);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < k; ++c) model.W(r, c) = rng.normal() * 0.3;
  }
  for (int c = 0; c < k; ++c) model.b(c) = rng.normal() * 0.1;

  Eigen::VectorXd x(d);
  for (int j = 0; j < d; ++j) x(j) = rng.normal();
  const int label = 2;

  const Eigen::MatrixXd grad = per_sample_grad(model, x, label);
  CHECK(grad.rows() == d + 1);
  CHECK(grad.cols() == k);

  Eigen::VectorXd params(static_cast<int>((d + 1) * k));
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < k; ++c) params(r * k + c) = model.W(r, c);
  }
  for (int c = 0; c < k; ++c) params(d * k + c) = model.b(c);

  const Eigen::VectorXd fd = oracles::finite_diff(
      [&](const Eigen::VectorXd& p) { return loss_at(p, d, k, x, label); },
      params, 1e-5);
  const Eigen::VectorXd gv = flatten(grad);
  CHECK((gv - fd).norm() / std::max(gv.norm(), 1e-12) <= 1e-5);
}

TEST_CASE("zero model gradient is the uniform-residual outer product") {
  const int d = 5, k = 10;
  const LinearModel model = LinearModel::zeros(d, k);
  Eigen::VectorXd x(d);
  x << 0.5, -1.0, 2.0, 0.0, 1.5;
  const Eigen::MatrixXd grad = per_sample_grad(model, x, 3);
  for (int c = 0; c < k; ++c) {
    const double r = (c == 3 ? 0.1 - 1.0 : 0.1);
    for (int j = 0; j < d; ++j) {
      CHECK(grad(j, c) == doctest::Approx(x(j) * r).epsilon(1e-12));
    }
    CHECK(grad(d, c) == doctest::Approx(r).epsilon(1e-12));
  }
}

TEST_CASE("gradient norm factorization") {
  // |g|^2 = (|x|^2 + 1) |p - e_y|^2: the basis of the fused batch reduction.
  const int d = 7, k = 6;
  LinearModel model = LinearModel::zeros(d, k);
  RngStream rng(9, StreamDomain::kGeneric, 1);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < k; ++c) model.W(r, c) = rng.normal();
  }
  Eigen::VectorXd x(d);
  for (int j = 0; j < d; ++j) x(j) = rng.normal();

  const Eigen::MatrixXd grad = per_sample_grad(model, x, 1);
  const Eigen::VectorXd residual = grad.row(d).transpose();  // p - e_y
  const double direct = grad.squaredNorm();
  const double factored = (x.squaredNorm() + 1.0) * residual.squaredNorm();
  CHECK(direct == doctest::Approx(factored).epsilon(1e-12));
}

TEST_CASE("clip_grad") {
  Eigen::MatrixXd g(3, 2);
  g << 3.0, 0.0, 0.0, 4.0, 0.0, 0.0;  // norm 5

  Eigen::MatrixXd clipped = g;
  const double pre = clip_grad(clipped, 1.0);
  CHECK(pre == doctest::Approx(5.0));
  CHECK(clipped.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(clipped(0, 0) == doctest::Approx(0.6).epsilon(1e-12));

  // Norm below the bound: bit-identical passthrough.
  Eigen::MatrixXd small = 0.1 * g;
  Eigen::MatrixXd small_copy = small;
  clip_grad(small, 1.0);
  CHECK(small == small_copy);

  // Idempotence (within rounding of the rescale).
  Eigen::MatrixXd again = clipped;
  clip_grad(again, 1.0);
  CHECK((again - clipped).norm() <= 1e-12);

  // Zero gradient passes through.
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 2);
  clip_grad(zero, 1.0);
  CHECK(zero.norm() == 0.0);
}

TEST_CASE("poisson sampling") {
  RngStream rng(3, StreamDomain::kSampler, 0);
  const auto all = poisson_batch(100, 1.0, rng);
  CHECK(all.size() == 100);
  RngStream rng2(3, StreamDomain::kSampler, 1);
  CHECK(poisson_batch(100, 0.0, rng2).empty());

  // Deterministic given (seed, step).
  const auto seq1 = poisson_batches(1000, 0.1, 5, 42);
  const auto seq2 = poisson_batches(1000, 0.1, 5, 42);
  CHECK(seq1 == seq2);
  CHECK(seq1.size() == 5);
  CHECK(seq1[0] != seq1[1]);  // overwhelmingly likely

  // Mean realized batch size: 10^4 draws at q = 512/50000 agree with N*q
  // within 3 standard errors.
  const std::int64_t n = 50000;
  const double q = 512.0 / 50000.0;
  const int draws = 10000;
  double mean = 0.0;
  for (int t = 0; t < draws; ++t) {
    RngStream r(7, StreamDomain::kSampler, t);
    mean += static_cast<double>(poisson_batch(n, q, r).size());
  }
  mean /= draws;
  const double se = std::sqrt(n * q * (1.0 - q) / draws);
  CHECK(std::abs(mean - 512.0) <= 3.0 * se);
}

TEST_CASE("shuffle partition") {
  RngStream rng(11, StreamDomain::kSampler, 0);
  const auto batches = shuffle_batches(10, 3, rng);
  CHECK(batches.size() == 4);
  CHECK(batches[0].size() == 3);
  CHECK(batches[1].size() == 3);
  CHECK(batches[2].size() == 3);
  CHECK(batches[3].size() == 1);

  std::vector<int> seen(10, 0);
  for (const auto& b : batches) {
    for (auto i : b) seen[static_cast<int>(i)]++;
  }
  for (int c : seen) CHECK(c == 1);

  // Same seed, same partition; different epoch substream, different one.
  RngStream rng_a(11, StreamDomain::kSampler, 0);
  CHECK(shuffle_batches(10, 3, rng_a) == batches);
  RngStream rng_b(11, StreamDomain::kSampler, 1);
  CHECK(shuffle_batches(200, 64, rng_b) !=
        [&] { RngStream r(11, StreamDomain::kSampler, 2); return shuffle_batches(200, 64, r); }());
}

TEST_CASE("sigma 0 step is exactly clipped momentum sgd and draws no noise") {
  const int d = 24, k = 10;
  SmallData data = make_data(512, d, 100);
  DpSgdConfig cfg;
  cfg.batch_size = 128;
  cfg.eta_base = 2.0;
  cfg.clip = 0.1;
  cfg.sigma = 0.0;
  cfg.classes = k;

  std::vector<std::int64_t> batch(128);
  std::iota(batch.begin(), batch.end(), 37);

  LinearModel m1 = LinearModel::zeros(d, k);
  LinearModel m2 = LinearModel::zeros(d, k);
  Eigen::MatrixXd v1 = Eigen::MatrixXd::Zero(d + 1, k);
  Eigen::MatrixXd v2 = Eigen::MatrixXd::Zero(d + 1, k);

  RngStream noise(1, StreamDomain::kStepNoise, 0);
  dp_sgd_step(m1, v1, data.view(), batch, cfg, &noise, 0);
  clipped_momentum_sgd_step(m2, v2, data.view(), batch, cfg, 0);

  CHECK(m1.W == m2.W);
  CHECK(m1.b == m2.b);
  CHECK(v1 == v2);

  // The noise stream was never consumed.
  RngStream fresh(1, StreamDomain::kStepNoise, 0);
  CHECK(noise.raw() == fresh.raw());
}

TEST_CASE("fused reduction matches the naive per-sample oracle") {
  const int d = 13, k = 7;
  SmallData data = make_data(300, d, 200, k);
  DpSgdConfig cfg;
  cfg.batch_size = 64;
  cfg.eta_base = 1.0;
  cfg.clip = 0.05;
  cfg.sigma = 0.0;
  cfg.momentum = 0.9;
  cfg.classes = k;

  // Warm the model so probabilities are not uniform.
  LinearModel model = LinearModel::zeros(d, k);
  RngStream wrng(5, StreamDomain::kGeneric, 3);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < k; ++c) model.W(r, c) = wrng.normal() * 0.5;
  }

  std::vector<std::int64_t> batch(64);
  std::iota(batch.begin(), batch.end(), 11);

  // Naive reference: materialize, clip, sum, average by fixed B, momentum.
  Eigen::MatrixXd naive_sum = Eigen::MatrixXd::Zero(d + 1, k);
  for (auto i : batch) {
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j) x(j) = data.x(static_cast<int>(i), j);
    Eigen::MatrixXd g = per_sample_grad(model, x, data.y[static_cast<int>(i)]);
    clip_grad(g, cfg.clip);
    naive_sum += g;
  }
  const Eigen::MatrixXd naive_update = naive_sum / cfg.batch_size;

  LinearModel stepped = model;
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(d + 1, k);
  clipped_momentum_sgd_step(stepped, velocity, data.view(), batch, cfg, 0);

  // velocity == naive_update (first step, momentum state was zero).
  CHECK((velocity - naive_update).norm() / naive_update.norm() <= 1e-6);
  const Eigen::MatrixXd dw = model.W - stepped.W;
  CHECK((dw / cfg.learning_rate() - naive_update.topRows(d)).norm() <=
        1e-6 * naive_update.norm());
}

TEST_CASE("empty poisson batch still applies noise") {
  const int d = 4, k = 3;
  SmallData data = make_data(16, d, 300, k);
  DpSgdConfig cfg;
  cfg.batch_size = 8;
  cfg.eta_base = 1.0;
  cfg.clip = 1.0;
  cfg.sigma = 2.0;
  cfg.classes = k;

  LinearModel model = LinearModel::zeros(d, k);
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(d + 1, k);
  RngStream noise(4, StreamDomain::kStepNoise, 0);
  dp_sgd_step(model, velocity, data.view(), {}, cfg, &noise, 0);
  CHECK(model.W.norm() > 0.0);  // pure-noise update

  // And with sigma = 0 an empty batch is a no-op.
  DpSgdConfig quiet = cfg;
  quiet.sigma = 0.0;
  LinearModel zero_model = LinearModel::zeros(d, k);
  Eigen::MatrixXd zero_velocity = Eigen::MatrixXd::Zero(d + 1, k);
  dp_sgd_step(zero_model, zero_velocity, data.view(), {}, quiet, nullptr, 0);
  CHECK(zero_model.W.norm() == 0.0);
}

TEST_CASE("evaluate ties break to the lowest class and zero model baseline") {
  const int d = 3, k = 4;
  SmallData data = make_data(50, d, 400, k);
  const LinearModel zero = LinearModel::zeros(d, k);
  // All logits equal: every prediction is class 0.
  double class0 = 0.0;
  for (auto y : data.y) class0 += (y == 0);
  CHECK(evaluate(zero, data.view()) == doctest::Approx(class0 / 50.0).epsilon(1e-12));
}

TEST_CASE("training is seed deterministic") {
  const int d = 16, k = 10;
  SmallData train_set = make_data(400, d, 500, k);
  SmallData test = make_data(100, d, 600, k);
  DpSgdConfig cfg;
  cfg.batch_size = 64;
  cfg.eta_base = 4.0;
  cfg.epochs = 3;
  cfg.clip = 0.1;
  cfg.sigma = 1.3;
  cfg.seed = 9;
  cfg.classes = k;

  for (Sampler s : {Sampler::kPoisson, Sampler::kShuffle}) {
    cfg.sampler = s;
    const TrainingRecord a = train(train_set.view(), test.view(), cfg, 1e-5);
    const TrainingRecord b = train(train_set.view(), test.view(), cfg, 1e-5);
    REQUIRE(a.epochs.size() == 3);
    CHECK(a.steps == 3 * (400 / 64));
    for (std::size_t e = 0; e < a.epochs.size(); ++e) {
      CHECK(a.epochs[e].accuracy == b.epochs[e].accuracy);
      CHECK(a.epochs[e].epsilon == b.epochs[e].epsilon);
    }
    CHECK(a.model.W == b.model.W);

    // A different seed changes the trajectory.
    DpSgdConfig other = cfg;
    other.seed = 10;
    const TrainingRecord c = train(train_set.view(), test.view(), other, 1e-5);
    CHECK(a.model.W != c.model.W);
  }
}

TEST_CASE("epsilon accounting during training") {
  const int d = 8, k = 10;
  SmallData train_set = make_data(256, d, 700, k);
  SmallData test = make_data(64, d, 800, k);
  DpSgdConfig cfg;
  cfg.batch_size = 64;
  cfg.eta_base = 1.0;
  cfg.epochs = 4;
  cfg.clip = 0.1;
  cfg.sigma = 2.0;
  cfg.classes = k;

  const double delta = 1e-5;
  const TrainingRecord rec = train(train_set.view(), test.view(), cfg, delta);
  REQUIRE(rec.epochs.size() == 4);
  double prev = 0.0;
  for (const auto& e : rec.epochs) {
    CHECK(e.epsilon > prev);
    prev = e.epsilon;
  }
  // Final epsilon equals the composed curve over all executed steps.
  const double q = 64.0 / 256.0;
  const double want =
      to_dp(compose_steps(subsampled_gaussian_rdp(q, cfg.sigma), rec.steps), delta)
          .epsilon;
  CHECK(rec.epochs.back().epsilon == doctest::Approx(want).epsilon(1e-12));

  // Norm pre-charge is included when present.
  const TrainingRecord rec2 = train(train_set.view(), test.view(), cfg, delta, 8.0);
  CHECK(rec2.epochs.back().epsilon > rec.epochs.back().epsilon);

  // Non-private runs report infinity.
  DpSgdConfig nonpriv = cfg;
  nonpriv.sigma = 0.0;
  const TrainingRecord rec3 = train(train_set.view(), test.view(), nonpriv, delta);
  for (const auto& e : rec3.epochs) CHECK(std::isinf(e.epsilon));
}

TEST_CASE("noise-dominated training sits at chance accuracy") {
  // Labels independent of features: any fixed model scores 1/10 per sample,
  // so accuracy is Binomial(2000, 0.1)/2000 and the band below is ~4.5 sigma.
  // (Class-concentrated data would not do here: all samples of a class share
  // one argmax, leaving only 10 effective draws and a lumpy distribution.)
  const int d = 32, k = 10;
  SmallData train_set = make_data(4000, d, 900, k);
  SmallData test = make_data(2000, d, 901, k);
  DpSgdConfig cfg;
  cfg.batch_size = 256;
  cfg.eta_base = 1.0;
  cfg.epochs = 1;
  cfg.clip = 0.1;
  cfg.sigma = 1e3;
  cfg.classes = k;
  const TrainingRecord rec = train(train_set.view(), test.view(), cfg, 1e-5);
  CHECK(rec.best_accuracy() >= 0.10 - 0.03);
  CHECK(rec.best_accuracy() <= 0.10 + 0.03);
}

TEST_CASE("separable data trains to high accuracy without noise") {
  const int d = 16, k = 10;
  SmallData train_set = make_separable(2000, d, k, 910);
  SmallData test = make_separable(500, d, k, 911);
  DpSgdConfig cfg;
  cfg.batch_size = 128;
  cfg.eta_base = 8.0;
  cfg.epochs = 10;
  cfg.clip = 0.1;
  cfg.sigma = 0.0;
  cfg.classes = k;
  const TrainingRecord rec = train(train_set.view(), test.view(), cfg, 1e-5);
  CHECK(rec.best_accuracy() >= 0.9);
}

TEST_CASE("divergence raises with the offending step") {
  const int d = 8, k = 4;
  SmallData train_set = make_data(64, d, 920, k);
  SmallData test = make_data(16, d, 921, k);
  DpSgdConfig cfg;
  cfg.batch_size = 8;
  cfg.eta_base = 512.0;  // learning rate 8
  cfg.epochs = 5;
  cfg.clip = 1.0;
  cfg.sigma = 1e307;  // noise overflows the parameters within a few steps
  cfg.classes = k;
  CHECK_THROWS_AS(train(train_set.view(), test.view(), cfg, 1e-5), DivergenceError);
}

TEST_CASE("learning rate scales linearly in the batch size") {
  DpSgdConfig cfg;
  cfg.eta_base = 0.5;
  cfg.batch_size = 4096;
  CHECK(cfg.learning_rate() == doctest::Approx(4.0).epsilon(1e-15));
  cfg.batch_size = 512;
  CHECK(cfg.learning_rate() == doctest::Approx(0.5).epsilon(1e-15));
}
