#include "scatterdp/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace scatterdp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_expm1(double x) { return x > 36.0 ? x : std::log(std::expm1(x)); }

// log(1 + e^x) at full precision on both sides of zero.
double log1p_exp(double x) {
  return x > 36.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// log of the privacy-loss ratio of the subsampled Gaussian:
// log(P/Q)(x) = log(1 + q (e^z - 1)) with z = (2x-1)/(2 sigma^2).
double log_ratio(double q, double z) {
  if (q >= 1.0) return z;
  if (z > 35.0) return std::log(q) + z + std::log1p((1.0 - q) * std::exp(-z) / q);
  return std::log1p(q * std::expm1(z));
}

// Integer order: E[(P/Q)^a] - 1 = sum_{k=2}^{a} C(a,k) q^k (1-q)^{a-k}
// (e^{k(k-1)/(2 s^2)} - 1). Every term is positive, so a log-sum-exp of the
// terms keeps full relative precision even when the total is ~1e-12.
double integer_order(double q, double sigma, std::int64_t a) {
  const double lq = std::log(q);
  const double l1mq = std::log1p(-q);
  const double inv2s2 = 0.5 / (sigma * sigma);
  const double lga = std::lgamma(static_cast<double>(a) + 1.0);

  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(a - 1));
  double peak = -kInf;
  for (std::int64_t k = 2; k <= a; ++k) {
    const double t = lga - std::lgamma(static_cast<double>(k) + 1.0) -
                     std::lgamma(static_cast<double>(a - k) + 1.0) +
                     static_cast<double>(k) * lq +
                     static_cast<double>(a - k) * l1mq +
                     log_expm1(static_cast<double>(k) * static_cast<double>(k - 1) *
                               inv2s2);
    terms.push_back(t);
    peak = std::max(peak, t);
  }
  if (peak == kInf) return kInf;
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - peak);
  const double log_excess = peak + std::log(sum);  // log(A - 1)
  return log1p_exp(log_excess) / (static_cast<double>(a) - 1.0);
}

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration on P_n.
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

GaussRule make_gauss_rule(int n) {
  GaussRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double step = p1 / dp;
      x -= step;
      if (std::abs(step) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[static_cast<std::size_t>(i)] = -x;
    rule.weights[static_cast<std::size_t>(i)] = w;
    rule.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
    rule.weights[static_cast<std::size_t>(n - 1 - i)] = w;
  }
  return rule;
}

const GaussRule& gauss32() {
  static const GaussRule rule = make_gauss_rule(32);
  return rule;
}

// Fractional order: panelled Gauss-Legendre quadrature of the same
// expectation under Q = N(0, s^2), in the excess form E[(P/Q)^a - 1] for
// moderate exponents and in log space with a max shift for huge ones.
double fractional_order(double q, double sigma, double alpha) {
  const double s2 = sigma * sigma;
  const double lo = -14.0 * sigma - 1.0;
  const double hi = alpha + 14.0 * sigma + 1.0;  // shifted branch peaks near alpha
  const int panels = std::min(
      4096, std::max(64, static_cast<int>((hi - lo) / (0.5 * sigma)) + 1));
  const GaussRule& rule = gauss32();
  const double norm = sigma * std::sqrt(2.0 * M_PI);

  const double shifted_peak =
      alpha * (alpha - 1.0) / (2.0 * s2) + alpha * std::log(std::max(q, 1e-300));

  if (shifted_peak <= 200.0) {
    auto f = [&](double x) {
      const double lphi = -x * x / (2.0 * s2);
      const double e = alpha * log_ratio(q, (2.0 * x - 1.0) / (2.0 * s2));
      if (std::abs(e) < 0.5) return std::exp(lphi) * std::expm1(e);
      return std::exp(lphi + e) - std::exp(lphi);
    };
    double excess = 0.0;
    const double h = (hi - lo) / panels;
    for (int p = 0; p < panels; ++p) {
      const double a = lo + p * h;
      const double c = a + 0.5 * h;
      double acc = 0.0;
      for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        acc += rule.weights[i] * f(c + 0.5 * h * rule.nodes[i]);
      }
      excess += acc * 0.5 * h;
    }
    return std::log1p(excess / norm) / (alpha - 1.0);
  }

  // Huge exponents: evaluate log f on all quadrature nodes first, then sum
  // exp(log f - shift).
  auto log_f = [&](double x) {
    return -x * x / (2.0 * s2) +
           alpha * log_ratio(q, (2.0 * x - 1.0) / (2.0 * s2));
  };
  std::vector<double> logs;
  std::vector<double> ws;
  logs.reserve(static_cast<std::size_t>(panels) * rule.nodes.size());
  ws.reserve(logs.capacity());
  const double h = (hi - lo) / panels;
  double shift = -kInf;
  for (int p = 0; p < panels; ++p) {
    const double c = lo + p * h + 0.5 * h;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      logs.push_back(log_f(c + 0.5 * h * rule.nodes[i]));
      ws.push_back(rule.weights[i] * 0.5 * h);
      shift = std::max(shift, logs.back());
    }
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    sum += ws[i] * std::exp(logs[i] - shift);
  }
  return (shift + std::log(sum / norm)) / (alpha - 1.0);
}

void check_curves_match(const RdpCurve& a, const RdpCurve& b) {
  if (a.alphas.size() != b.alphas.size() ||
      !(a.alphas == b.alphas).all()) {
    throw std::invalid_argument("RdpCurve: order grids differ");
  }
}

}  // namespace

RdpCurve& RdpCurve::operator+=(const RdpCurve& other) {
  check_curves_match(*this, other);
  eps += other.eps;
  return *this;
}

RdpCurve RdpCurve::operator+(const RdpCurve& other) const {
  RdpCurve out = *this;
  out += other;
  return out;
}

const Eigen::ArrayXd& default_alpha_grid() {
  static const Eigen::ArrayXd grid = [] {
    std::vector<double> orders = {1.25, 1.5, 1.75, 2.5, 3.5};
    for (int a = 2; a <= 256; ++a) orders.push_back(a);
    std::sort(orders.begin(), orders.end());
    Eigen::ArrayXd g(static_cast<Eigen::Index>(orders.size()));
    for (std::size_t i = 0; i < orders.size(); ++i) {
      g(static_cast<Eigen::Index>(i)) = orders[i];
    }
    return g;
  }();
  return grid;
}

double gaussian_rdp(double sigma, double alpha) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_rdp: sigma <= 0");
  if (!(alpha > 1.0)) throw std::invalid_argument("gaussian_rdp: alpha <= 1");
  return alpha / (2.0 * sigma * sigma);
}

double subsampled_gaussian_rdp(double q, double sigma, double alpha) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw std::invalid_argument("subsampled_gaussian_rdp: q outside [0,1]");
  }
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("subsampled_gaussian_rdp: sigma <= 0");
  }
  if (!(alpha > 1.0)) {
    throw std::invalid_argument("subsampled_gaussian_rdp: alpha <= 1");
  }
  if (q == 0.0) return 0.0;
  if (q == 1.0) return gaussian_rdp(sigma, alpha);
  if (alpha == std::floor(alpha) && alpha <= 1e6) {
    return integer_order(q, sigma, static_cast<std::int64_t>(alpha));
  }
  return fractional_order(q, sigma, alpha);
}

RdpCurve subsampled_gaussian_rdp(double q, double sigma,
                                 const Eigen::ArrayXd& alphas) {
  RdpCurve curve;
  curve.alphas = alphas;
  curve.eps.resize(alphas.size());
  for (Eigen::Index i = 0; i < alphas.size(); ++i) {
    curve.eps(i) = subsampled_gaussian_rdp(q, sigma, alphas(i));
  }
  return curve;
}

RdpCurve compose_steps(const RdpCurve& step, std::int64_t steps) {
  if (steps < 0) throw std::invalid_argument("compose_steps: negative steps");
  RdpCurve out = step;
  out.eps *= static_cast<double>(steps);
  return out;
}

DpPoint to_dp(const RdpCurve& curve, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("to_dp: delta outside (0,1)");
  }
  if (curve.alphas.size() == 0) {
    throw std::invalid_argument("to_dp: empty curve");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  DpPoint best{kInf, 0.0};
  for (Eigen::Index i = 0; i < curve.alphas.size(); ++i) {
    const double eps = curve.eps(i) + log_inv_delta / (curve.alphas(i) - 1.0);
    if (eps < best.epsilon) best = DpPoint{eps, curve.alphas(i)};
  }
  return best;
}

RdpCurve data_norm_charge(double sigma_norm, const Eigen::ArrayXd& alphas) {
  if (!(sigma_norm > 0.0)) {
    throw std::invalid_argument("data_norm_charge: sigma_norm <= 0");
  }
  RdpCurve curve;
  curve.alphas = alphas;
  curve.eps = alphas / (sigma_norm * sigma_norm);
  return curve;
}

DpPoint ledger_total(std::optional<double> norm_sigma, const RdpCurve& sgd_curve,
                     double delta) {
  if (!norm_sigma.has_value()) return to_dp(sgd_curve, delta);
  return to_dp(sgd_curve + data_norm_charge(*norm_sigma, sgd_curve.alphas),
               delta);
}

DpPoint PrivacyLedger::total(double delta) const {
  if (!norm.has_value()) return to_dp(sgd, delta);
  return to_dp(sgd + *norm, delta);
}

double solve_sigma(double q, std::int64_t steps, double eps_target, double delta,
                   const std::optional<RdpCurve>& precharge) {
  if (!(eps_target > 0.0)) {
    throw std::invalid_argument("solve_sigma: eps_target <= 0");
  }
  auto spent = [&](double sigma) {
    RdpCurve curve = compose_steps(subsampled_gaussian_rdp(q, sigma), steps);
    if (precharge.has_value()) curve += *precharge;
    return to_dp(curve, delta).epsilon;
  };

  double lo = 1e-2, hi = 1e4;
  if (spent(hi) > eps_target) {
    throw std::runtime_error("solve_sigma: target unattainable within sigma <= 1e4");
  }
  if (spent(lo) <= eps_target) return lo;
  while ((hi - lo) / hi > 1e-4) {
    const double mid = 0.5 * (lo + hi);
    if (spent(mid) <= eps_target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;  // round up: hi always satisfies the target
}

}  // namespace scatterdp
