// Differentially private SGD for linear softmax classifiers.
//
// Each step sums per-sample gradients clipped to L2 norm C, adds isotropic
// Gaussian noise N(0, sigma^2 C^2 I) to the sum, divides by the FIXED expected
// batch size B (not the realized size), and applies a momentum update:
//   v <- m*v + g~,   theta <- theta - eta*v,   eta = eta_base * B / 512.
// With sigma = 0 the noise branch is skipped entirely (no RNG draws), making
// the step plain clipped momentum SGD.
//
// Per-sample gradients of the cross-entropy loss factor as
//   grad_W = x (p - e_y)^T,  grad_b = p - e_y,
// so their norms satisfy |g|^2 = (|x|^2 + 1)|p - e_y|^2 and the clipped sum
// reduces to small matrix products per fixed-size sample block; block partials
// are accumulated in 64-bit in block-index order, which keeps runs bit-stable
// across thread counts.
#pragma once

#include "scatterdp/normalize.hpp"
#include "scatterdp/privacy.hpp"
#include "scatterdp/rng.hpp"
#include "scatterdp/types.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace scatterdp {

struct LinearModel {
  Eigen::MatrixXd W;  // d x k
  Eigen::VectorXd b;  // k

  static LinearModel zeros(int dim, int classes);
  int dim() const { return static_cast<int>(W.rows()); }
  int classes() const { return static_cast<int>(W.cols()); }
};

enum class Sampler { kPoisson, kShuffle };

struct DpSgdConfig {
  int batch_size = 0;      // B, also the fixed averaging divisor
  double eta_base = 0.0;   // learning rate at reference batch size 512
  int epochs = 0;          // T; the run executes T * floor(N/B) steps
  double clip = 0.0;       // per-sample gradient clip C
  double momentum = 0.9;
  double sigma = 0.0;      // gradient noise multiplier (0 = non-private)
  Sampler sampler = Sampler::kPoisson;
  std::uint64_t seed = 0;
  int classes = 10;

  double learning_rate() const { return eta_base * batch_size / 512.0; }
};

struct EpochStat {
  int epoch = 0;        // 1-based
  double accuracy = 0;  // test accuracy after this epoch
  double epsilon = 0;   // spent budget at delta (inf for sigma = 0)
};

struct TrainingRecord {
  std::vector<EpochStat> epochs;
  LinearModel model;      // final parameters
  DpSgdConfig config;     // echo of the run configuration
  double delta = 0.0;
  std::int64_t steps = 0; // total steps executed

  double best_accuracy() const;
  double final_accuracy() const;
};

// Labeled features for training/evaluation. `x` views 32-bit cached features;
// `normalizer` lifts rows to normalized 64-bit values on access.
struct DatasetView {
  FeatureMap32 x;  // n x d
  const std::vector<std::uint8_t>* labels = nullptr;
  const FeatureNormalizer* normalizer = nullptr;

  std::int64_t size() const { return x.rows(); }
  int dim() const { return static_cast<int>(x.cols()); }
};

// Per-sample gradient of -log softmax(W^T x + b)_y, laid out as a
// (d+1) x k matrix whose last row is the bias gradient. 64-bit throughout.
Eigen::MatrixXd per_sample_grad(const LinearModel& model,
                                const Eigen::VectorXd& x, int label);

// Clip to L2 norm `clip` in place: g *= min(1, clip/|g|). Returns the
// pre-clip norm. Idempotent; zero gradients pass through unchanged.
double clip_grad(Eigen::Ref<Eigen::MatrixXd> grad, double clip);

// One Poisson batch: each index enters independently with probability q.
// Indices are returned in increasing order.
std::vector<std::int64_t> poisson_batch(std::int64_t n, double q, RngStream& rng);

// Batches for `steps` Poisson steps, one sampler substream per step index.
std::vector<std::vector<std::int64_t>> poisson_batches(std::int64_t n, double q,
                                                       std::int64_t steps,
                                                       std::uint64_t seed);

// One epoch's shuffle partition: a uniform permutation split into consecutive
// batches of size `batch`, the last possibly short. Every index appears
// exactly once.
std::vector<std::vector<std::int64_t>> shuffle_batches(std::int64_t n, int batch,
                                                       RngStream& rng);

// One DP-SGD step over the given sample indices. `noise` must be the step's
// dedicated substream; it is consumed only when cfg.sigma > 0. Throws
// DivergenceError if the update produces non-finite parameters.
void dp_sgd_step(LinearModel& model, Eigen::MatrixXd& velocity,
                 const DatasetView& data,
                 const std::vector<std::int64_t>& batch, const DpSgdConfig& cfg,
                 RngStream* noise, std::int64_t step_index);

// Noise-free clipped momentum SGD step: identical code path with the noise
// branch removed.
void clipped_momentum_sgd_step(LinearModel& model, Eigen::MatrixXd& velocity,
                               const DatasetView& data,
                               const std::vector<std::int64_t>& batch,
                               const DpSgdConfig& cfg, std::int64_t step_index);

// Fraction of samples whose argmax logit matches the label (ties break to the
// lowest class index).
double evaluate(const LinearModel& model, const DatasetView& data);

// Full training loop: T * floor(N/B) steps from an all-zero model, evaluating
// on `test` after every epoch. Privacy spent per epoch is reported from the
// q = B/N subsampled Gaussian curve composed over executed steps, plus the
// optional normalization pre-charge; sigma = 0 reports infinity.
TrainingRecord train(const DatasetView& train_data, const DatasetView& test_data,
                     const DpSgdConfig& cfg, double delta,
                     std::optional<double> norm_sigma = std::nullopt);

}  // namespace scatterdp
