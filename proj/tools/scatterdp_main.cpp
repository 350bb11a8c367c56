// scatterdp: differentially private linear classifiers on wavelet scattering
// features.
//
// Subcommands:
//   extract        extract scattering features into the cache
//   account        query the RDP accountant (epsilon from sigma, or solve sigma)
//   train          train one configuration, one CSV row per (seed, epoch)
//   sweep          grid search over batch sizes / learning rates / norm axes
//   convergence    low vs high learning rate epoch curves
//   batch-scaling  per-batch-size solved noise and accuracies
//   sampling       Poisson vs shuffle comparison
//   datasize       accuracy as a function of training set size
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence.
#include "CLI11.hpp"

#include "scatterdp/config.hpp"
#include "scatterdp/data.hpp"
#include "scatterdp/harness.hpp"
#include "scatterdp/privacy.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace scatterdp;

std::filesystem::path dir_with_env(const std::string& flag, const char* env) {
  if (!flag.empty()) return flag;
  const char* v = std::getenv(env);
  return v != nullptr ? std::filesystem::path(v) : std::filesystem::path();
}

struct ExtractArgs {
  std::string dataset;
  std::string split = "both";
  std::string data_dir;
  std::string cache_dir;
};

void run_extract(const ExtractArgs& args) {
  const auto data_dir = dir_with_env(args.data_dir, "SCATTERDP_DATA");
  const auto cache_dir = dir_with_env(args.cache_dir, "SCATTERDP_CACHE");
  if (cache_dir.empty()) {
    throw UsageError("extract needs --cache-dir or SCATTERDP_CACHE");
  }
  std::vector<std::string> splits;
  if (args.split == "both") {
    splits = {"train", "test"};
  } else if (args.split == "train" || args.split == "test") {
    splits = {args.split};
  } else {
    throw UsageError("--split must be train, test, or both");
  }
  for (const auto& split : splits) {
    const FeatureSet set =
        load_or_extract(args.dataset, split, data_dir, cache_dir);
    std::cout << set.provenance.describe() << ": " << set.count
              << " samples, feature dim " << set.shape.dim() << "\n";
  }
}

struct AccountArgs {
  double q = 0.0;
  std::int64_t steps = 0;
  double delta = 0.0;
  double sigma = -1.0;       // < 0: not given
  double epsilon = -1.0;     // < 0: not given
  double norm_sigma = 0.0;   // 0: no normalization pre-charge
};

void run_account(const AccountArgs& args) {
  const bool have_sigma = args.sigma >= 0.0;
  const bool have_eps = args.epsilon >= 0.0;
  if (have_sigma == have_eps) {
    throw UsageError("account needs exactly one of --sigma or --epsilon");
  }
  std::optional<RdpCurve> precharge;
  if (args.norm_sigma > 0.0) precharge = data_norm_charge(args.norm_sigma);

  double sigma = args.sigma;
  if (have_eps) {
    sigma = solve_sigma(args.q, args.steps, args.epsilon, args.delta, precharge);
  }
  RdpCurve total = compose_steps(subsampled_gaussian_rdp(args.q, sigma),
                                 args.steps);
  if (precharge.has_value()) total += *precharge;
  const DpPoint point = to_dp(total, args.delta);
  std::printf("sigma=%.10g epsilon=%.10g alpha=%g q=%g steps=%lld delta=%g",
              sigma, point.epsilon, point.alpha, args.q,
              static_cast<long long>(args.steps), args.delta);
  if (args.norm_sigma > 0.0) std::printf(" norm_sigma=%g", args.norm_sigma);
  std::printf("\n");
}

struct ExperimentArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void run_experiment(const std::string& kind, const ExperimentArgs& args) {
  KeyValueConfig kv = KeyValueConfig::parse_file(args.config_path);
  for (const auto& assignment : args.overrides) kv.set_override(assignment);
  const ExperimentConfig cfg = make_experiment_config(kv, kind);
  if (kind == "train") {
    run_train(cfg);
  } else if (kind == "sweep") {
    run_sweep(cfg);
  } else if (kind == "convergence") {
    run_convergence(cfg);
  } else if (kind == "batch-scaling") {
    run_batch_scaling(cfg);
  } else if (kind == "sampling") {
    run_sampling_compare(cfg);
  } else {
    run_datasize(cfg);
  }
  std::cout << "wrote " << cfg.out.string() << "\n";
}

void add_experiment_command(CLI::App& app, const std::string& kind,
                            const std::string& help, ExperimentArgs& args) {
  auto* cmd = app.add_subcommand(kind == "sampling" ? "sampling" : kind, help);
  cmd->add_option("--config", args.config_path, "key = value config file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides,
                  "override a config entry (key=value, repeatable)");
  cmd->callback([kind, &args] { run_experiment(kind, args); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Differentially private linear classifiers on wavelet scattering "
      "features"};
  app.require_subcommand(1);

  ExtractArgs extract_args;
  auto* extract_cmd = app.add_subcommand(
      "extract", "Extract scattering features into the cache");
  extract_cmd
      ->add_option("--dataset", extract_args.dataset,
                   "mnist | fashion | cifar10")
      ->required();
  extract_cmd->add_option("--split", extract_args.split,
                          "train | test | both (default both)");
  extract_cmd->add_option("--data-dir", extract_args.data_dir,
                          "dataset root (default $SCATTERDP_DATA)");
  extract_cmd->add_option("--cache-dir", extract_args.cache_dir,
                          "cache directory (default $SCATTERDP_CACHE)");
  extract_cmd->callback([&] { run_extract(extract_args); });

  AccountArgs account_args;
  auto* account_cmd =
      app.add_subcommand("account", "Query the RDP accountant");
  account_cmd->add_option("--q", account_args.q, "Poisson sampling rate")
      ->required();
  account_cmd->add_option("--steps", account_args.steps, "composed steps")
      ->required();
  account_cmd->add_option("--delta", account_args.delta, "DP delta")
      ->required();
  account_cmd->add_option("--sigma", account_args.sigma,
                          "noise multiplier: report the spent epsilon");
  account_cmd->add_option("--epsilon", account_args.epsilon,
                          "target epsilon: solve for the noise multiplier");
  account_cmd->add_option("--norm-sigma", account_args.norm_sigma,
                          "data normalization pre-charge noise multiplier");
  account_cmd->callback([&] { run_account(account_args); });

  ExperimentArgs train_args, sweep_args, conv_args, batch_args, sampling_args,
      datasize_args;
  add_experiment_command(app, "train", "Train one configuration", train_args);
  add_experiment_command(app, "sweep", "Grid search over config axes",
                         sweep_args);
  add_experiment_command(app, "convergence",
                         "Low vs high learning rate epoch curves", conv_args);
  add_experiment_command(app, "batch-scaling",
                         "Per-batch-size solved noise and accuracies",
                         batch_args);
  add_experiment_command(app, "sampling", "Poisson vs shuffle comparison",
                         sampling_args);
  add_experiment_command(app, "datasize",
                         "Accuracy as a function of training set size",
                         datasize_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
