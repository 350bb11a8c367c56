#include "scatterdp/sgd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace scatterdp {

namespace {

constexpr int kGemmBlock = 256;  // fixed reduction block; keeps sums bit-stable

// Reusable step/eval buffers so the hot loop does not allocate.
struct Workspace {
  Eigen::MatrixXf xb;       // d x block, one sample per column
  Eigen::MatrixXf wf;       // d x k (32-bit copy of the parameters)
  Eigen::VectorXf bf;       // k
  Eigen::MatrixXf logits;   // block x k
  Eigen::MatrixXd resid;    // block x k, scaled residuals p - e_y
  Eigen::MatrixXf resid_f;  // block x k
  Eigen::MatrixXd sum;      // (d+1) x k gradient-sum accumulator

  void resize(int d, int k) {
    xb.resize(d, kGemmBlock);
    wf.resize(d, k);
    bf.resize(k);
    logits.resize(kGemmBlock, k);
    resid.resize(kGemmBlock, k);
    resid_f.resize(kGemmBlock, k);
    sum.resize(d + 1, k);
  }

  void load_model(const LinearModel& model) {
    wf = model.W.cast<float>();
    bf = model.b.cast<float>();
  }
};

// Softmax residuals (p - e_y) of one block from 32-bit logits, in 64-bit.
// Returns the residuals unscaled; per-sample squared norms land in `r2`.
void block_residuals(const Eigen::MatrixXf& logits, int m, int k,
                     const std::vector<std::uint8_t>& labels,
                     const std::vector<std::int64_t>& batch, std::size_t first,
                     Eigen::MatrixXd& resid, Eigen::ArrayXd& r2) {
  for (int i = 0; i < m; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      peak = std::max(peak, static_cast<double>(logits(i, c)));
    }
    double z = 0.0;
    for (int c = 0; c < k; ++c) {
      const double e = std::exp(static_cast<double>(logits(i, c)) - peak);
      resid(i, c) = e;
      z += e;
    }
    const int y = labels[static_cast<std::size_t>(batch[first + i])];
    double norm2 = 0.0;
    for (int c = 0; c < k; ++c) {
      resid(i, c) = resid(i, c) / z - (c == y ? 1.0 : 0.0);
      norm2 += resid(i, c) * resid(i, c);
    }
    r2(i) = norm2;
  }
}

// Sum of clipped per-sample gradients over `batch` into ws.sum. The W block
// uses a 32-bit GEMM per fixed-size block with 64-bit accumulation across
// blocks in index order; the bias row accumulates in 64-bit directly.
void clipped_grad_sum(const DatasetView& data, const std::vector<std::int64_t>& batch,
                      const LinearModel& model, double clip, Workspace& ws) {
  const int d = model.dim();
  const int k = model.classes();
  ws.sum.setZero();
  Eigen::ArrayXd xn2(kGemmBlock);
  Eigen::ArrayXd r2(kGemmBlock);

  for (std::size_t start = 0; start < batch.size(); start += kGemmBlock) {
    const int m = static_cast<int>(
        std::min<std::size_t>(kGemmBlock, batch.size() - start));
    for (int i = 0; i < m; ++i) {
      const auto row = static_cast<Eigen::Index>(batch[start + i]);
      data.normalizer->apply_row_f(static_cast<int>(row),
                                   data.x.data() + row * data.x.cols(),
                                   ws.xb.col(i).data(), d);
      xn2(i) = ws.xb.col(i).cast<double>().squaredNorm();
    }

    ws.logits.topRows(m).noalias() =
        ws.xb.leftCols(m).transpose() * ws.wf;
    ws.logits.topRows(m).rowwise() += ws.bf.transpose();

    block_residuals(ws.logits, m, k, *data.labels, batch, start, ws.resid, r2);

    // |g_i|^2 = (|x_i|^2 + 1) |p_i - e_{y_i}|^2; fold min(1, C/|g_i|) into the
    // residuals so one GEMM yields the clipped W-gradient sum.
    for (int i = 0; i < m; ++i) {
      const double norm = std::sqrt((xn2(i) + 1.0) * r2(i));
      if (norm > clip) ws.resid.row(i) *= clip / norm;
    }
    ws.resid_f.topRows(m) = ws.resid.topRows(m).cast<float>();

    ws.sum.topRows(d).noalias() +=
        (ws.xb.leftCols(m) * ws.resid_f.topRows(m)).cast<double>();
    ws.sum.row(d) += ws.resid.topRows(m).colwise().sum();
  }
}

void apply_update(LinearModel& model, Eigen::MatrixXd& velocity,
                  const DpSgdConfig& cfg, Workspace& ws, RngStream* noise,
                  std::int64_t step_index) {
  const int d = model.dim();
  if (cfg.sigma > 0.0 && noise != nullptr) {
    const double scale = cfg.sigma * cfg.clip;
    for (Eigen::Index j = 0; j < ws.sum.cols(); ++j) {
      for (Eigen::Index i = 0; i < ws.sum.rows(); ++i) {
        ws.sum(i, j) += scale * noise->normal();
      }
    }
  }
  velocity = cfg.momentum * velocity + ws.sum / cfg.batch_size;
  const double eta = cfg.learning_rate();
  model.W -= eta * velocity.topRows(d);
  model.b -= eta * velocity.row(d).transpose();
  if (!model.W.allFinite() || !model.b.allFinite()) {
    throw DivergenceError("training diverged: non-finite parameters",
                          step_index);
  }
}

void step_impl(LinearModel& model, Eigen::MatrixXd& velocity,
               const DatasetView& data, const std::vector<std::int64_t>& batch,
               const DpSgdConfig& cfg, RngStream* noise,
               std::int64_t step_index, Workspace& ws) {
  ws.load_model(model);
  clipped_grad_sum(data, batch, model, cfg.clip, ws);
  apply_update(model, velocity, cfg, ws, noise, step_index);
}

}  // namespace

LinearModel LinearModel::zeros(int dim, int classes) {
  LinearModel m;
  m.W = Eigen::MatrixXd::Zero(dim, classes);
  m.b = Eigen::VectorXd::Zero(classes);
  return m;
}

double TrainingRecord::best_accuracy() const {
  double best = 0.0;
  for (const auto& e : epochs) best = std::max(best, e.accuracy);
  return best;
}

double TrainingRecord::final_accuracy() const {
  return epochs.empty() ? 0.0 : epochs.back().accuracy;
}

Eigen::MatrixXd per_sample_grad(const LinearModel& model,
                                const Eigen::VectorXd& x, int label) {
  const int d = model.dim();
  const int k = model.classes();
  Eigen::VectorXd logits = model.W.transpose() * x + model.b;
  const double peak = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - peak).exp();
  p /= p.sum();
  p(label) -= 1.0;

  Eigen::MatrixXd grad(d + 1, k);
  grad.topRows(d).noalias() = x * p.transpose();
  grad.row(d) = p.transpose();
  return grad;
}

double clip_grad(Eigen::Ref<Eigen::MatrixXd> grad, double clip) {
  if (!(clip > 0.0)) throw std::invalid_argument("clip_grad: clip <= 0");
  const double norm = grad.norm();
  if (norm > clip) grad *= clip / norm;
  return norm;
}

std::vector<std::int64_t> poisson_batch(std::int64_t n, double q,
                                        RngStream& rng) {
  std::vector<std::int64_t> batch;
  if (q <= 0.0) return batch;
  batch.reserve(static_cast<std::size_t>(std::min<double>(
      static_cast<double>(n), 1.25 * q * static_cast<double>(n) + 16.0)));
  for (std::int64_t i = 0; i < n; ++i) {
    if (rng.uniform() < q) batch.push_back(i);
  }
  return batch;
}

std::vector<std::vector<std::int64_t>> poisson_batches(std::int64_t n, double q,
                                                       std::int64_t steps,
                                                       std::uint64_t seed) {
  std::vector<std::vector<std::int64_t>> batches;
  batches.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t t = 0; t < steps; ++t) {
    RngStream rng(seed, StreamDomain::kSampler, static_cast<std::uint64_t>(t));
    batches.push_back(poisson_batch(n, q, rng));
  }
  return batches;
}

std::vector<std::vector<std::int64_t>> shuffle_batches(std::int64_t n, int batch,
                                                       RngStream& rng) {
  if (batch < 1) throw std::invalid_argument("shuffle_batches: batch < 1");
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(
        rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<std::int64_t>> batches;
  for (std::int64_t start = 0; start < n; start += batch) {
    const auto end = std::min<std::int64_t>(start + batch, n);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

void dp_sgd_step(LinearModel& model, Eigen::MatrixXd& velocity,
                 const DatasetView& data,
                 const std::vector<std::int64_t>& batch, const DpSgdConfig& cfg,
                 RngStream* noise, std::int64_t step_index) {
  if (cfg.sigma > 0.0 && noise == nullptr) {
    throw std::invalid_argument("dp_sgd_step: sigma > 0 requires a noise stream");
  }
  Workspace ws;
  ws.resize(model.dim(), model.classes());
  step_impl(model, velocity, data, batch, cfg, noise, step_index, ws);
}

void clipped_momentum_sgd_step(LinearModel& model, Eigen::MatrixXd& velocity,
                               const DatasetView& data,
                               const std::vector<std::int64_t>& batch,
                               const DpSgdConfig& cfg, std::int64_t step_index) {
  Workspace ws;
  ws.resize(model.dim(), model.classes());
  step_impl(model, velocity, data, batch, cfg, nullptr, step_index, ws);
}

double evaluate(const LinearModel& model, const DatasetView& data) {
  const int d = model.dim();
  const int k = model.classes();
  const std::int64_t n = data.size();
  if (n == 0) throw std::invalid_argument("evaluate: empty dataset");

  Eigen::MatrixXf wf = model.W.cast<float>();
  Eigen::VectorXf bf = model.b.cast<float>();
  Eigen::MatrixXf xb(d, kGemmBlock);
  Eigen::MatrixXf logits(kGemmBlock, k);

  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < n; start += kGemmBlock) {
    const int m = static_cast<int>(std::min<std::int64_t>(kGemmBlock, n - start));
    for (int i = 0; i < m; ++i) {
      const Eigen::Index row = start + i;
      data.normalizer->apply_row_f(static_cast<int>(row),
                                   data.x.data() + row * data.x.cols(),
                                   xb.col(i).data(), d);
    }
    logits.topRows(m).noalias() = xb.leftCols(m).transpose() * wf;
    logits.topRows(m).rowwise() += bf.transpose();
    for (int i = 0; i < m; ++i) {
      int arg = 0;
      float best = logits(i, 0);
      for (int c = 1; c < k; ++c) {
        if (logits(i, c) > best) {  // ties keep the lowest class
          best = logits(i, c);
          arg = c;
        }
      }
      if (arg == (*data.labels)[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

TrainingRecord train(const DatasetView& train_data, const DatasetView& test_data,
                     const DpSgdConfig& cfg, double delta,
                     std::optional<double> norm_sigma) {
  const std::int64_t n = train_data.size();
  if (cfg.batch_size < 1 || cfg.batch_size > n) {
    throw std::invalid_argument("train: batch size outside [1, N]");
  }
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs < 1");

  const int d = train_data.dim();
  const int k = cfg.classes;
  const std::int64_t steps_per_epoch = n / cfg.batch_size;
  const double q = static_cast<double>(cfg.batch_size) / static_cast<double>(n);

  TrainingRecord record;
  record.config = cfg;
  record.delta = delta;
  record.model = LinearModel::zeros(d, k);

  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(d + 1, k);
  Workspace ws;
  ws.resize(d, k);

  // One-step RDP curve; per-epoch reports compose it over executed steps.
  std::optional<RdpCurve> step_curve;
  std::optional<RdpCurve> precharge;
  if (cfg.sigma > 0.0) {
    step_curve = subsampled_gaussian_rdp(q, cfg.sigma);
    if (norm_sigma.has_value()) {
      precharge = data_norm_charge(*norm_sigma);
    }
  }

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::vector<std::int64_t>> batches;
    if (cfg.sampler == Sampler::kShuffle) {
      RngStream rng(cfg.seed, StreamDomain::kSampler,
                    static_cast<std::uint64_t>(epoch));
      batches = shuffle_batches(n, cfg.batch_size, rng);
    }
    for (std::int64_t s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<std::int64_t> poisson;
      if (cfg.sampler == Sampler::kPoisson) {
        RngStream rng(cfg.seed, StreamDomain::kSampler,
                      static_cast<std::uint64_t>(step));
        poisson = poisson_batch(n, q, rng);
      }
      const std::vector<std::int64_t>& batch =
          cfg.sampler == Sampler::kPoisson ? poisson
                                           : batches[static_cast<std::size_t>(s)];
      if (cfg.sigma > 0.0) {
        RngStream noise(cfg.seed, StreamDomain::kStepNoise,
                        static_cast<std::uint64_t>(step));
        step_impl(record.model, velocity, train_data, batch, cfg, &noise, step,
                  ws);
      } else {
        step_impl(record.model, velocity, train_data, batch, cfg, nullptr, step,
                  ws);
      }
    }

    EpochStat stat;
    stat.epoch = epoch + 1;
    stat.accuracy = evaluate(record.model, test_data);
    if (step_curve.has_value() && delta > 0.0 && delta < 1.0) {
      RdpCurve spent = compose_steps(*step_curve, step);
      if (precharge.has_value()) spent += *precharge;
      stat.epsilon = to_dp(spent, delta).epsilon;
    } else {
      stat.epsilon = std::numeric_limits<double>::infinity();
    }
    record.epochs.push_back(stat);
  }
  record.steps = step;
  return record;
}

}  // namespace scatterdp
