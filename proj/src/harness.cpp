#include "scatterdp/harness.hpp"

#include "scatterdp/privacy.hpp"
#include "scatterdp/rng.hpp"
#include "scatterdp/scatter.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace scatterdp {

namespace fs = std::filesystem;

namespace {

constexpr int kJ = 2;
constexpr int kL = 8;

fs::path idx_pair_root(const std::string& dataset,
                       const fs::path& data_root) {
  return data_root / dataset;
}

}  // namespace

RawImages load_raw_dataset(const std::string& dataset, const std::string& split,
                           const fs::path& data_root) {
  if (split != "train" && split != "test") {
    throw DataError("unknown split '" + split + "'");
  }
  if (dataset == "mnist" || dataset == "fashion") {
    const fs::path dir = idx_pair_root(dataset, data_root);
    const std::string stem = split == "train" ? "train" : "t10k";
    return load_idx(dir / (stem + "-images-idx3-ubyte"),
                    dir / (stem + "-labels-idx1-ubyte"));
  }
  if (dataset == "cifar10") {
    const fs::path dir = data_root / "cifar10";
    std::vector<fs::path> files;
    if (split == "train") {
      for (int i = 1; i <= 5; ++i) {
        files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
      }
    } else {
      files.push_back(dir / "test_batch.bin");
    }
    return load_cifar10(files);
  }
  throw DataError("unknown dataset '" + dataset + "'");
}

FeatureSet load_or_extract(const std::string& dataset, const std::string& split,
                           const fs::path& data_root, const fs::path& cache_dir) {
  if (cache_dir.empty()) {
    const RawImages raw = load_raw_dataset(dataset, split, data_root);
    const FilterBank bank = build_filter_bank(kJ, kL, raw.height, raw.width);
    const Provenance prov{dataset, split,     kJ,        kL,
                          raw.channels, raw.height, raw.width, "none"};
    return extract_features(raw, bank, prov);
  }

  const fs::path path =
      cache_dir / (dataset + "-" + split + "-J" + std::to_string(kJ) + "-L" +
                   std::to_string(kL) + ".features");
  if (!fs::exists(path)) {
    const RawImages raw = load_raw_dataset(dataset, split, data_root);
    const FilterBank bank = build_filter_bank(kJ, kL, raw.height, raw.width);
    const Provenance prov{dataset, split,     kJ,        kL,
                          raw.channels, raw.height, raw.width, "none"};
    extract_to_cache(raw, bank, prov, path);
  }
  FeatureSet set = load_features(path);
  if (set.provenance.dataset != dataset || set.provenance.split != split ||
      set.provenance.J != kJ || set.provenance.L != kL) {
    throw DataError("feature cache " + path.string() + " holds " +
                    set.provenance.describe());
  }
  return set;
}

RunResult run_single(const FeatureSet& train_set, const FeatureSet& test_set,
                     const DpSgdConfig& sgd, const NormConfig& norm,
                     double epsilon, double delta, std::optional<double> sigma) {
  const std::int64_t n = train_set.count;

  // Resolve the normalization into per-set lazy views. Data-norm statistics
  // are fitted privately on the training set and reused for the test set.
  FeatureNormalizer train_norm;
  FeatureNormalizer test_norm;
  std::optional<double> norm_sigma;
  if (norm.kind == NormKind::kGroup) {
    train_norm =
        FeatureNormalizer(train_set.matrix(), train_set.shape, norm.groups);
    test_norm =
        FeatureNormalizer(test_set.matrix(), test_set.shape, norm.groups);
  } else if (norm.kind == NormKind::kData) {
    RngStream rng(sgd.seed, StreamDomain::kNormNoise, 0);
    const NormStats stats =
        fit_data_norm(train_set.matrix(), train_set.shape, norm.c1, norm.c2,
                      norm.sigma_norm, rng);
    train_norm = FeatureNormalizer(stats, train_set.shape);
    test_norm = FeatureNormalizer(stats, test_set.shape);
    if (norm.sigma_norm > 0.0) norm_sigma = norm.sigma_norm;
  }

  DpSgdConfig resolved = sgd;
  if (sigma.has_value()) {
    resolved.sigma = *sigma;
  } else {
    const double q =
        static_cast<double>(sgd.batch_size) / static_cast<double>(n);
    const std::int64_t steps =
        static_cast<std::int64_t>(sgd.epochs) * (n / sgd.batch_size);
    std::optional<RdpCurve> precharge;
    if (norm_sigma.has_value()) precharge = data_norm_charge(*norm_sigma);
    resolved.sigma = solve_sigma(q, steps, epsilon, delta, precharge);
  }

  const DatasetView train_view{train_set.matrix(), &train_set.labels,
                               &train_norm};
  const DatasetView test_view{test_set.matrix(), &test_set.labels, &test_norm};

  RunResult result;
  result.sigma = resolved.sigma;
  result.norm_sigma = norm_sigma;
  result.record = train(train_view, test_view, resolved, delta, norm_sigma);
  return result;
}

std::string csv_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double loglog_slope(const std::vector<double>& q,
                    const std::vector<double>& sigma) {
  if (q.size() != sigma.size() || q.size() < 2) {
    throw std::invalid_argument("loglog_slope: need matching arrays, size >= 2");
  }
  const auto n = static_cast<double>(q.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    mx += std::log(q[i]);
    my += std::log(sigma[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double dx = std::log(q[i]) - mx;
    sxy += dx * (std::log(sigma[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace {

std::ofstream open_csv(const ExperimentConfig& cfg,
                       const std::string& header,
                       const std::string& extra = "") {
  if (cfg.out.has_parent_path()) fs::create_directories(cfg.out.parent_path());
  std::ofstream out(cfg.out, std::ios::trunc);
  if (!out) throw DataError("cannot write " + cfg.out.string());
  char hash[24];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(cfg.config_hash()));
  out << "# kind=" << cfg.kind << " dataset=" << cfg.dataset
      << " config=" << hash << " delta=" << csv_number(cfg.delta);
  if (cfg.sigma.has_value()) {
    out << " sigma=" << csv_number(*cfg.sigma);
  } else {
    out << " epsilon=" << csv_number(cfg.epsilon);
  }
  if (!extra.empty()) out << ' ' << extra;
  out << '\n' << header << '\n';
  return out;
}

struct LoadedSets {
  FeatureSet train_set;
  FeatureSet test_set;
};

LoadedSets load_sets(const ExperimentConfig& cfg) {
  return {load_or_extract(cfg.dataset, "train", cfg.data_dir, cfg.cache_dir),
          load_or_extract(cfg.dataset, "test", cfg.data_dir, cfg.cache_dir)};
}

// Uniform feature-row subset without replacement, increasing row order. The
// subset is drawn from the cached features so repeated sizes reuse one
// extraction pass.
FeatureSet subset_features(const FeatureSet& set, int n, std::uint64_t seed) {
  if (n < 1 || n > set.count) throw DataError("subset size outside [1, count]");
  if (n == set.count) return set;
  FeatureSet out;
  out.count = n;
  out.shape = set.shape;
  out.provenance = set.provenance;
  out.owned.resize(static_cast<std::size_t>(n) * set.shape.dim());
  out.labels.reserve(static_cast<std::size_t>(n));
  RngStream rng(seed, StreamDomain::kSubset, 0);
  int needed = n;
  const std::size_t dim = static_cast<std::size_t>(set.shape.dim());
  for (int i = 0; i < set.count && needed > 0; ++i) {
    const double p =
        static_cast<double>(needed) / static_cast<double>(set.count - i);
    if (rng.uniform() < p) {
      std::copy(set.row(i), set.row(i) + dim,
                out.owned.data() + static_cast<std::size_t>(n - needed) * dim);
      out.labels.push_back(set.labels[static_cast<std::size_t>(i)]);
      --needed;
    }
  }
  return out;
}

}  // namespace

void run_train(const ExperimentConfig& cfg) {
  const LoadedSets sets = load_sets(cfg);
  std::ofstream out = open_csv(cfg, "seed,epoch,accuracy,epsilon,sigma");
  for (const std::uint64_t seed : cfg.seeds) {
    DpSgdConfig sgd = cfg.sgd;
    sgd.seed = seed;
    const RunResult res = run_single(sets.train_set, sets.test_set, sgd,
                                     cfg.norm, cfg.epsilon, cfg.delta, cfg.sigma);
    for (const EpochStat& st : res.record.epochs) {
      out << seed << ',' << st.epoch << ',' << csv_number(st.accuracy) << ','
          << csv_number(st.epsilon) << ',' << csv_number(res.sigma) << '\n';
    }
  }
}

void run_sweep(const ExperimentConfig& cfg) {
  const LoadedSets sets = load_sets(cfg);
  const std::vector<int> epochs_axis =
      cfg.epoch_grid.empty() ? std::vector<int>{cfg.sgd.epochs} : cfg.epoch_grid;
  const std::vector<int> groups_axis =
      (cfg.norm.kind == NormKind::kGroup && !cfg.group_grid.empty())
          ? cfg.group_grid
          : std::vector<int>{cfg.norm.groups};
  const std::vector<double> signorm_axis =
      (cfg.norm.kind == NormKind::kData && !cfg.sigma_norm_grid.empty())
          ? cfg.sigma_norm_grid
          : std::vector<double>{cfg.norm.sigma_norm};

  std::ofstream out = open_csv(
      cfg, "batch_size,eta_base,epochs,groups,sigma_norm,seed,accuracy,epsilon,sigma");
  for (const int b : cfg.batch_sizes) {
    for (const double eta : cfg.eta_bases) {
      for (const int epochs : epochs_axis) {
        for (const int groups : groups_axis) {
          for (const double sn : signorm_axis) {
            for (const std::uint64_t seed : cfg.seeds) {
              DpSgdConfig sgd = cfg.sgd;
              sgd.batch_size = b;
              sgd.eta_base = eta;
              sgd.epochs = epochs;
              sgd.seed = seed;
              NormConfig norm = cfg.norm;
              norm.groups = groups;
              norm.sigma_norm = sn;
              const RunResult res =
                  run_single(sets.train_set, sets.test_set, sgd, norm,
                             cfg.epsilon, cfg.delta, cfg.sigma);
              out << b << ',' << csv_number(eta) << ',' << epochs << ','
                  << groups << ',' << csv_number(sn) << ',' << seed << ','
                  << csv_number(res.record.final_accuracy()) << ','
                  << csv_number(res.record.epochs.back().epsilon) << ','
                  << csv_number(res.sigma) << '\n';
            }
          }
        }
      }
    }
  }
}

void run_convergence(const ExperimentConfig& cfg) {
  const LoadedSets sets = load_sets(cfg);
  std::ofstream out =
      open_csv(cfg, "eta_base,seed,epoch,accuracy,epsilon,sigma");
  for (const double eta : {cfg.eta_low, cfg.eta_high}) {
    for (const std::uint64_t seed : cfg.seeds) {
      DpSgdConfig sgd = cfg.sgd;
      sgd.eta_base = eta;
      sgd.seed = seed;
      const RunResult res =
          run_single(sets.train_set, sets.test_set, sgd, cfg.norm, cfg.epsilon,
                     cfg.delta, cfg.sigma);
      for (const EpochStat& st : res.record.epochs) {
        out << csv_number(eta) << ',' << seed << ',' << st.epoch << ','
            << csv_number(st.accuracy) << ',' << csv_number(st.epsilon) << ','
            << csv_number(res.sigma) << '\n';
      }
    }
  }
}

void run_batch_scaling(const ExperimentConfig& cfg) {
  const LoadedSets sets = load_sets(cfg);
  const std::int64_t n = sets.train_set.count;

  // Solve the accountant once per batch size; the log-log slope of sigma
  // against the sampling rate goes into the metadata line.
  std::vector<double> qs, sigmas;
  for (const int b : cfg.batch_sizes) {
    const double q = static_cast<double>(b) / static_cast<double>(n);
    const std::int64_t steps =
        static_cast<std::int64_t>(cfg.sgd.epochs) * (n / b);
    sigmas.push_back(solve_sigma(q, steps, cfg.epsilon, cfg.delta));
    qs.push_back(q);
  }
  std::string extra;
  if (qs.size() >= 2) extra = "slope=" + csv_number(loglog_slope(qs, sigmas));

  std::ofstream out =
      open_csv(cfg, "batch_size,q,sigma,seed,accuracy,epsilon", extra);
  for (std::size_t i = 0; i < cfg.batch_sizes.size(); ++i) {
    const int b = cfg.batch_sizes[i];
    for (const std::uint64_t seed : cfg.seeds) {
      DpSgdConfig sgd = cfg.sgd;
      sgd.batch_size = b;
      sgd.seed = seed;
      const RunResult res = run_single(sets.train_set, sets.test_set, sgd,
                                       cfg.norm, cfg.epsilon, cfg.delta,
                                       sigmas[i]);
      out << b << ',' << csv_number(qs[i]) << ',' << csv_number(sigmas[i])
          << ',' << seed << ','
          << csv_number(res.record.final_accuracy()) << ','
          << csv_number(res.record.epochs.back().epsilon) << '\n';
    }
  }
}

void run_sampling_compare(const ExperimentConfig& cfg) {
  const LoadedSets sets = load_sets(cfg);
  std::ofstream out = open_csv(cfg, "sampler,seed,accuracy,epsilon,sigma");
  for (const Sampler sampler : {Sampler::kPoisson, Sampler::kShuffle}) {
    for (const std::uint64_t seed : cfg.seeds) {
      DpSgdConfig sgd = cfg.sgd;
      sgd.sampler = sampler;
      sgd.seed = seed;
      const RunResult res =
          run_single(sets.train_set, sets.test_set, sgd, cfg.norm, cfg.epsilon,
                     cfg.delta, cfg.sigma);
      out << (sampler == Sampler::kPoisson ? "poisson" : "shuffle") << ','
          << seed << ',' << csv_number(res.record.final_accuracy()) << ','
          << csv_number(res.record.epochs.back().epsilon) << ','
          << csv_number(res.sigma) << '\n';
    }
  }
}

void run_datasize(const ExperimentConfig& cfg) {
  const LoadedSets sets = load_sets(cfg);
  std::ofstream out = open_csv(cfg, "n,seed,accuracy,epsilon,sigma");
  for (const int n : cfg.subset_sizes) {
    for (const std::uint64_t seed : cfg.seeds) {
      const FeatureSet sub = subset_features(sets.train_set, n, seed);
      DpSgdConfig sgd = cfg.sgd;
      sgd.seed = seed;
      const RunResult res = run_single(sub, sets.test_set, sgd, cfg.norm,
                                       cfg.epsilon, cfg.delta, cfg.sigma);
      out << n << ',' << seed << ','
          << csv_number(res.record.final_accuracy()) << ','
          << csv_number(res.record.epochs.back().epsilon) << ','
          << csv_number(res.sigma) << '\n';
    }
  }
}

}  // namespace scatterdp
