// Renyi differential privacy accountant for the (subsampled) Gaussian
// mechanism.
//
// Conventions: `sigma` is the noise multiplier (noise stddev divided by the
// L2 sensitivity of the summed quantity), `q` the Poisson sampling rate, and
// an RDP curve maps Renyi orders alpha > 1 to guarantees eps(alpha).
// Conversion to (epsilon, delta)-DP minimizes eps(alpha) + log(1/delta)/(alpha-1)
// over the order grid.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

namespace scatterdp {

// RDP guarantee sampled on a grid of orders.
struct RdpCurve {
  Eigen::ArrayXd alphas;  // strictly increasing, all > 1
  Eigen::ArrayXd eps;     // eps(alpha) >= 0, same length

  // Adaptive sequential composition: guarantees add order-wise.
  RdpCurve& operator+=(const RdpCurve& other);
  RdpCurve operator+(const RdpCurve& other) const;
};

// Default order grid: integers 2..256 plus a few fractional orders below 4
// where the optimum lands for large-eps / small-sigma regimes.
const Eigen::ArrayXd& default_alpha_grid();

// Gaussian mechanism: eps(alpha) = alpha / (2 sigma^2). Requires alpha > 1,
// sigma > 0.
double gaussian_rdp(double sigma, double alpha);

// Poisson-subsampled Gaussian mechanism at sampling rate q. Integer orders use
// the closed-form binomial expansion of E_{x~Q}[(P/Q)^alpha] in log space;
// fractional orders integrate the same expectation by adaptive quadrature.
// Requires q in [0,1], sigma > 0, alpha > 1.
double subsampled_gaussian_rdp(double q, double sigma, double alpha);
RdpCurve subsampled_gaussian_rdp(double q, double sigma,
                                 const Eigen::ArrayXd& alphas = default_alpha_grid());

// Composition of `steps` identical invocations: eps scaled entrywise.
RdpCurve compose_steps(const RdpCurve& step, std::int64_t steps);

// A (epsilon, delta)-DP point together with the Renyi order realizing it.
struct DpPoint {
  double epsilon = 0.0;
  double alpha = 0.0;
};

// Convert an RDP curve to (epsilon, delta)-DP. Requires delta in (0,1).
DpPoint to_dp(const RdpCurve& curve, double delta);

// RDP pre-charge of private data normalization with noise multiplier
// sigma_norm: two Gaussian invocations, alpha / sigma_norm^2 in total.
RdpCurve data_norm_charge(double sigma_norm,
                          const Eigen::ArrayXd& alphas = default_alpha_grid());

// Total spent budget: SGD curve plus the optional normalization pre-charge.
DpPoint ledger_total(std::optional<double> norm_sigma, const RdpCurve& sgd_curve,
                     double delta);

// Spent-budget bookkeeping for one training run.
struct PrivacyLedger {
  std::optional<RdpCurve> norm;  // one-time pre-charge, if any
  RdpCurve sgd;                  // composed SGD steps so far

  DpPoint total(double delta) const;
};

// Smallest noise multiplier sigma such that `steps` compositions of the
// q-subsampled Gaussian (plus the optional pre-charge curve) satisfy
// (eps_target, delta)-DP. Bisection over [1e-2, 1e4] to 1e-4 relative width,
// rounded up so the returned sigma never under-reports privacy. Throws
// std::runtime_error if the bracket cannot satisfy the target.
double solve_sigma(double q, std::int64_t steps, double eps_target, double delta,
                   const std::optional<RdpCurve>& precharge = std::nullopt);

}  // namespace scatterdp
