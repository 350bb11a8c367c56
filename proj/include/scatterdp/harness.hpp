// Experiment harness: loads (or extracts) cached features, runs training
// configurations, and writes self-describing CSVs.
//
// CSV layout: a `# key=value ...` metadata line (config hash, delta, kind),
// a column-header line, then one row per record with numbers at 6 significant
// digits. Infinite privacy budgets print as `inf`.
#pragma once

#include "scatterdp/config.hpp"
#include "scatterdp/data.hpp"
#include "scatterdp/sgd.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace scatterdp {

// Canonical raw-dataset file layout under a data root.
RawImages load_raw_dataset(const std::string& dataset, const std::string& split,
                           const std::filesystem::path& data_root);

// Load the cached FeatureSet for (dataset, split), extracting and writing the
// cache first if it does not exist yet. Scatter parameters are the fixed
// J = 2, L = 8 of this pipeline.
FeatureSet load_or_extract(const std::string& dataset, const std::string& split,
                           const std::filesystem::path& data_root,
                           const std::filesystem::path& cache_dir);

// One fully-resolved training cell: features + normalization + SGD config.
struct RunResult {
  TrainingRecord record;
  double sigma = 0.0;                 // noise multiplier actually used
  std::optional<double> norm_sigma;   // data-norm pre-charge, if any
};

// Train one configuration on the given feature sets. Solves sigma from
// (epsilon, delta) unless an explicit sigma is supplied; applies the
// normalization described by `norm` (data-norm stats fitted on train, reused
// for test). The norm noise stream is derived from the run seed.
RunResult run_single(const FeatureSet& train_set, const FeatureSet& test_set,
                     const DpSgdConfig& sgd, const NormConfig& norm,
                     double epsilon, double delta, std::optional<double> sigma);

// Harness entry points, one per CLI experiment. Each writes cfg.out.
void run_train(const ExperimentConfig& cfg);
void run_sweep(const ExperimentConfig& cfg);
void run_convergence(const ExperimentConfig& cfg);
void run_batch_scaling(const ExperimentConfig& cfg);
void run_sampling_compare(const ExperimentConfig& cfg);
void run_datasize(const ExperimentConfig& cfg);

// Format a double with 6 significant digits ("inf" for infinities).
std::string csv_number(double v);

// Least-squares slope of log(sigma) against log(q); used by the
// batch-scaling experiment and the accountant acceptance check.
double loglog_slope(const std::vector<double>& q,
                    const std::vector<double>& sigma);

}  // namespace scatterdp
