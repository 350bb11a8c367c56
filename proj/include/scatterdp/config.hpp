// Flat key = value experiment configuration.
//
// Files hold one `key = value` pair per line; `#` starts a comment; list
// values are comma-separated. CLI overrides are applied after the file parse.
// Unknown keys are rejected so typos fail loudly.
#pragma once

#include "scatterdp/sgd.hpp"
#include "scatterdp/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scatterdp {

class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse_text(const std::string& text);

  // `key=value`; later values win. Throws UsageError on malformed input.
  void set_override(const std::string& assignment);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  // Throws UsageError if any present key is not in `allowed`.
  void require_known_keys(const std::vector<std::string>& allowed) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

// Normalization selection for one training run.
enum class NormKind { kNone, kGroup, kData };

struct NormConfig {
  NormKind kind = NormKind::kNone;
  int groups = 0;          // group norm
  double c1 = 0.0;         // data norm clip bounds
  double c2 = 0.0;
  double sigma_norm = 0.0; // data norm noise multiplier
};

// Fully resolved experiment description shared by all harness entry points.
struct ExperimentConfig {
  std::string kind;     // train | sweep | convergence | batch-scaling | sampling | datasize
  std::string dataset;  // mnist | fashion | cifar10
  std::filesystem::path data_dir;   // dataset root (SCATTERDP_DATA fallback)
  std::filesystem::path cache_dir;  // feature caches (SCATTERDP_CACHE fallback)
  std::filesystem::path out;        // CSV destination

  double epsilon = 0.0;             // target budget (0 = use explicit sigma)
  double delta = 0.0;
  std::optional<double> sigma;      // explicit noise multiplier
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  DpSgdConfig sgd;                  // scalar run parameters
  NormConfig norm;

  // Grid axes (sweep / batch-scaling / datasize).
  std::vector<int> batch_sizes;
  std::vector<double> eta_bases;
  std::vector<int> epoch_grid;
  std::vector<int> group_grid;
  std::vector<double> sigma_norm_grid;
  std::vector<int> subset_sizes;

  // Convergence experiment learning rates.
  double eta_low = 0.0;
  double eta_high = 0.0;

  std::uint64_t config_hash() const;
};

// Parse + validate a config for the given CLI subcommand kind.
ExperimentConfig make_experiment_config(const KeyValueConfig& kv,
                                        const std::string& kind);

}  // namespace scatterdp
