#include "scatterdp/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace scatterdp {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

long long parse_int(const std::string& key, const std::string& token) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(token, &pos);
    if (pos != token.size()) throw UsageError("");
    return v;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': '" + token +
                     "' is not an integer");
  }
}

double parse_double(const std::string& key, const std::string& token) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(token, &pos);
    if (pos != token.size()) throw UsageError("");
    return v;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': '" + token +
                     "' is not a number");
  }
}

std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t hash = 14695981039346656037ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    hash ^= p[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_text(text.str());
}

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) +
                       ": expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw UsageError("config line " + std::to_string(lineno) + ": empty key");
    }
    kv.entries_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void KeyValueConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw UsageError("override '" + assignment + "': expected key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) {
    throw UsageError("override '" + assignment + "': empty key");
  }
  entries_[key] = trim(assignment.substr(eq + 1));
}

bool KeyValueConfig::has(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw UsageError("missing required config key '" + key + "'");
  }
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key) const {
  return parse_double(key, get_string(key));
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

int KeyValueConfig::get_int(const std::string& key) const {
  const long long v = parse_int(key, get_string(key));
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw UsageError("config key '" + key + "': value out of range");
  }
  return static_cast<int>(v);
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key) const {
  const auto tokens = split_list(get_string(key));
  if (tokens.empty()) throw UsageError("config key '" + key + "': empty list");
  std::vector<double> out;
  for (const auto& t : tokens) out.push_back(parse_double(key, t));
  return out;
}

std::vector<int> KeyValueConfig::get_ints(const std::string& key) const {
  const auto tokens = split_list(get_string(key));
  if (tokens.empty()) throw UsageError("config key '" + key + "': empty list");
  std::vector<int> out;
  for (const auto& t : tokens) {
    const long long v = parse_int(key, t);
    if (v < std::numeric_limits<int>::min() ||
        v > std::numeric_limits<int>::max()) {
      throw UsageError("config key '" + key + "': value out of range");
    }
    out.push_back(static_cast<int>(v));
  }
  return out;
}

void KeyValueConfig::require_known_keys(
    const std::vector<std::string>& allowed) const {
  for (const auto& [key, value] : entries_) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw UsageError("unknown config key '" + key + "'");
    }
  }
}

namespace {

const std::vector<std::string>& schema_keys() {
  static const std::vector<std::string> keys = {
      "dataset",    "data_dir",   "cache_dir",      "out",
      "epsilon",    "delta",      "sigma",          "seeds",
      "batch_size", "eta_base",   "epochs",         "clip",
      "momentum",   "sampler",    "norm",           "groups",
      "c1",         "c2",         "sigma_norm",     "batch_sizes",
      "eta_bases",  "epoch_grid", "group_grid",     "sigma_norm_grid",
      "subset_sizes", "eta_low",  "eta_high"};
  return keys;
}

std::filesystem::path dir_or_env(const KeyValueConfig& kv,
                                 const std::string& key, const char* env) {
  if (kv.has(key)) return std::filesystem::path(kv.get_string(key));
  const char* v = std::getenv(env);
  return v != nullptr ? std::filesystem::path(v) : std::filesystem::path();
}

void require_positive(double v, const std::string& what) {
  if (!(v > 0.0)) throw UsageError(what + " must be positive");
}

}  // namespace

ExperimentConfig make_experiment_config(const KeyValueConfig& kv,
                                        const std::string& kind) {
  kv.require_known_keys(schema_keys());

  static const std::vector<std::string> kinds = {
      "train", "sweep", "convergence", "batch-scaling", "sampling", "datasize"};
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
    throw UsageError("unknown experiment kind '" + kind + "'");
  }

  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.dataset = kv.get_string("dataset");
  if (cfg.dataset != "mnist" && cfg.dataset != "fashion" &&
      cfg.dataset != "cifar10") {
    throw UsageError("dataset must be mnist, fashion, or cifar10, got '" +
                     cfg.dataset + "'");
  }
  cfg.data_dir = dir_or_env(kv, "data_dir", "SCATTERDP_DATA");
  cfg.cache_dir = dir_or_env(kv, "cache_dir", "SCATTERDP_CACHE");
  cfg.out = std::filesystem::path(kv.get_string("out"));

  // Privacy target: exactly one of epsilon (with delta) or an explicit sigma.
  const bool have_eps = kv.has("epsilon");
  const bool have_sigma = kv.has("sigma");
  if (have_eps == have_sigma) {
    throw UsageError("give exactly one of epsilon (with delta) or sigma");
  }
  if (kv.has("delta")) {
    cfg.delta = kv.get_double("delta");
    if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) {
      throw UsageError("delta must lie in (0, 1)");
    }
  }
  if (have_eps) {
    cfg.epsilon = kv.get_double("epsilon");
    require_positive(cfg.epsilon, "epsilon");
    if (!kv.has("delta")) throw UsageError("epsilon requires delta");
  } else {
    const double sigma = kv.get_double("sigma");
    if (sigma < 0.0) throw UsageError("sigma must be >= 0");
    cfg.sigma = sigma;
    cfg.sgd.sigma = sigma;
  }

  if (kv.has("seeds")) {
    cfg.seeds.clear();
    for (int s : kv.get_ints("seeds")) {
      if (s < 0) throw UsageError("seeds must be >= 0");
      cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }

  // Scalar run parameters. Sweeps take batch size and learning rate from the
  // grid axes instead.
  cfg.sgd.epochs = kv.get_int("epochs");
  if (cfg.sgd.epochs < 1) throw UsageError("epochs must be >= 1");
  cfg.sgd.clip = kv.get_double("clip");
  require_positive(cfg.sgd.clip, "clip");
  cfg.sgd.momentum = kv.get_double("momentum", 0.9);
  if (!(cfg.sgd.momentum >= 0.0 && cfg.sgd.momentum < 1.0)) {
    throw UsageError("momentum must lie in [0, 1)");
  }
  if (kind != "sweep") {
    cfg.sgd.batch_size = kv.get_int("batch_size");
    if (cfg.sgd.batch_size < 1) throw UsageError("batch_size must be >= 1");
    cfg.sgd.eta_base = kv.get_double("eta_base");
    require_positive(cfg.sgd.eta_base, "eta_base");
  }

  const std::string sampler = kv.get_string("sampler", "poisson");
  if (sampler == "poisson") {
    cfg.sgd.sampler = Sampler::kPoisson;
  } else if (sampler == "shuffle") {
    cfg.sgd.sampler = Sampler::kShuffle;
  } else {
    throw UsageError("sampler must be poisson or shuffle, got '" + sampler +
                     "'");
  }

  const std::string norm = kv.get_string("norm", "none");
  if (norm == "none") {
    cfg.norm.kind = NormKind::kNone;
  } else if (norm == "group") {
    cfg.norm.kind = NormKind::kGroup;
    cfg.norm.groups = kv.get_int("groups");
    if (cfg.norm.groups < 1) throw UsageError("groups must be >= 1");
  } else if (norm == "data") {
    cfg.norm.kind = NormKind::kData;
    cfg.norm.c1 = kv.get_double("c1");
    require_positive(cfg.norm.c1, "c1");
    cfg.norm.c2 = kv.get_double("c2");
    require_positive(cfg.norm.c2, "c2");
    cfg.norm.sigma_norm = kv.get_double("sigma_norm", 0.0);
    if (cfg.norm.sigma_norm < 0.0) {
      throw UsageError("sigma_norm must be >= 0");
    }
    if (have_eps && cfg.norm.sigma_norm == 0.0) {
      throw UsageError(
          "a fixed epsilon budget with data normalization needs sigma_norm > 0");
    }
  } else {
    throw UsageError("norm must be none, group, or data, got '" + norm + "'");
  }

  // Grid axes.
  if (kv.has("batch_sizes")) {
    cfg.batch_sizes = kv.get_ints("batch_sizes");
    for (int b : cfg.batch_sizes) {
      if (b < 1) throw UsageError("batch_sizes entries must be >= 1");
    }
  }
  if (kv.has("eta_bases")) {
    cfg.eta_bases = kv.get_doubles("eta_bases");
    for (double e : cfg.eta_bases) require_positive(e, "eta_bases entry");
  }
  if (kv.has("epoch_grid")) {
    cfg.epoch_grid = kv.get_ints("epoch_grid");
    for (int e : cfg.epoch_grid) {
      if (e < 1) throw UsageError("epoch_grid entries must be >= 1");
    }
  }
  if (kv.has("group_grid")) {
    cfg.group_grid = kv.get_ints("group_grid");
    for (int g : cfg.group_grid) {
      if (g < 1) throw UsageError("group_grid entries must be >= 1");
    }
  }
  if (kv.has("sigma_norm_grid")) {
    cfg.sigma_norm_grid = kv.get_doubles("sigma_norm_grid");
    for (double s : cfg.sigma_norm_grid) {
      require_positive(s, "sigma_norm_grid entry");
    }
  }
  if (kv.has("subset_sizes")) {
    cfg.subset_sizes = kv.get_ints("subset_sizes");
    for (int n : cfg.subset_sizes) {
      if (n < 1) throw UsageError("subset_sizes entries must be >= 1");
    }
  }

  // Kind-specific requirements.
  if (kind == "sweep") {
    if (cfg.batch_sizes.empty()) throw UsageError("sweep requires batch_sizes");
    if (cfg.eta_bases.empty()) throw UsageError("sweep requires eta_bases");
  }
  if (kind == "batch-scaling" && cfg.batch_sizes.empty()) {
    throw UsageError("batch-scaling requires batch_sizes");
  }
  if (kind == "datasize" && cfg.subset_sizes.empty()) {
    throw UsageError("datasize requires subset_sizes");
  }
  if (kind == "convergence") {
    if (!kv.has("eta_low") || !kv.has("eta_high")) {
      throw UsageError("convergence requires eta_low and eta_high");
    }
    cfg.eta_low = kv.get_double("eta_low");
    cfg.eta_high = kv.get_double("eta_high");
    require_positive(cfg.eta_low, "eta_low");
    require_positive(cfg.eta_high, "eta_high");
    if (cfg.eta_low >= cfg.eta_high) {
      throw UsageError("eta_low must be below eta_high");
    }
  }

  return cfg;
}

std::uint64_t ExperimentConfig::config_hash() const {
  std::ostringstream ss;
  ss << kind << '|' << dataset << '|' << std::hexfloat;
  ss << epsilon << ' ' << delta << ' ';
  ss << (sigma.has_value() ? *sigma : -1.0) << ' ';
  for (auto s : seeds) ss << s << ',';
  ss << '|' << sgd.batch_size << ' ' << sgd.eta_base << ' ' << sgd.epochs << ' '
     << sgd.clip << ' ' << sgd.momentum << ' '
     << (sgd.sampler == Sampler::kPoisson ? "poisson" : "shuffle");
  ss << '|' << static_cast<int>(norm.kind) << ' ' << norm.groups << ' '
     << norm.c1 << ' ' << norm.c2 << ' ' << norm.sigma_norm;
  ss << '|';
  for (int b : batch_sizes) ss << b << ',';
  for (double e : eta_bases) ss << e << ',';
  for (int e : epoch_grid) ss << e << ',';
  for (int g : group_grid) ss << g << ',';
  for (double s : sigma_norm_grid) ss << s << ',';
  for (int n : subset_sizes) ss << n << ',';
  ss << '|' << eta_low << ' ' << eta_high;
  const std::string text = ss.str();
  return fnv1a(text.data(), text.size());
}

}  // namespace scatterdp
