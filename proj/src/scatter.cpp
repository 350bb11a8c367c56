#include "scatterdp/scatter.hpp"

#include "scatterdp/fft2.hpp"

#include <cmath>
#include <stdexcept>

namespace scatterdp {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// DFT bin -> angular frequency, with the Nyquist bin mapped to +pi.
double bin_freq(int k, int n) {
  return 2.0 * kPi * (k <= n / 2 ? k : k - n) / n;
}

// Frequency response of a sampled 2-D Gabor (Gaussian envelope `sigma`,
// anisotropy `slant` across the oscillation, center frequency `xi` along
// direction `theta`), folded over +-2 spectral periods. Real-valued.
double gabor_hat(double wx, double wy, double sigma, double theta, double xi,
                 double slant) {
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  double value = 0.0;
  for (int mx = -2; mx <= 2; ++mx) {
    for (int my = -2; my <= 2; ++my) {
      const double ax = wx + 2.0 * kPi * mx;
      const double ay = wy + 2.0 * kPi * my;
      const double u = ax * ct + ay * st;
      const double v = -ax * st + ay * ct;
      value += std::exp(-0.5 * sigma * sigma *
                        ((u - xi) * (u - xi) + v * v / (slant * slant)));
    }
  }
  return value;
}

// Morlet: Gabor minus the DC-cancelling Gaussian.
double morlet_hat(double wx, double wy, double sigma, double theta, double xi,
                  double slant) {
  const double k = gabor_hat(0.0, 0.0, sigma, theta, xi, slant) /
                   gabor_hat(0.0, 0.0, sigma, theta, 0.0, slant);
  return gabor_hat(wx, wy, sigma, theta, xi, slant) -
         k * gabor_hat(wx, wy, sigma, theta, 0.0, slant);
}

Eigen::ArrayXXd sample_grid(int rows, int cols,
                            double (*hat)(double, double, double, double,
                                          double, double),
                            double sigma, double theta, double xi,
                            double slant) {
  Eigen::ArrayXXd grid(rows, cols);
  for (int ky = 0; ky < rows; ++ky) {
    const double wy = bin_freq(ky, rows);
    for (int kx = 0; kx < cols; ++kx) {
      grid(ky, kx) = hat(bin_freq(kx, cols), wy, sigma, theta, xi, slant);
    }
  }
  return grid;
}

// Fold a filter grid by `factor` per axis with a block SUM: the response a
// decimated signal sees at its representative frequency. (Signal spectra fold
// with a block mean instead -- that is exact decimation; see fft2.)
Eigen::ArrayXXd fold_filter(const Eigen::ArrayXXd& level0, int factor) {
  return periodize(level0, factor) * static_cast<double>(factor) *
         static_cast<double>(factor);
}

std::vector<Eigen::ArrayXXd> make_levels(const Eigen::ArrayXXd& level0, int J) {
  std::vector<Eigen::ArrayXXd> levels;
  levels.reserve(static_cast<std::size_t>(J));
  levels.push_back(level0);
  for (int r = 1; r < J; ++r) levels.push_back(fold_filter(level0, 1 << r));
  return levels;
}

// Reflection index without edge repetition (reflect about the border sample).
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

Eigen::ArrayXXcd pad_reflect(const Eigen::ArrayXXd& image,
                             const ScatterGeometry& g) {
  Eigen::ArrayXXcd padded(g.padded_h, g.padded_w);
  for (int r = 0; r < g.padded_h; ++r) {
    const int sr = reflect(r - g.pad_top, g.logical_h);
    for (int c = 0; c < g.padded_w; ++c) {
      padded(r, c) = image(sr, reflect(c - g.pad_left, g.logical_w));
    }
  }
  return padded;
}

Eigen::ArrayXXcd filter_product(const Eigen::ArrayXXcd& spectrum,
                                const Eigen::ArrayXXd& filter) {
  Eigen::ArrayXXcd out(spectrum.rows(), spectrum.cols());
  out.real() = spectrum.real() * filter;
  out.imag() = spectrum.imag() * filter;
  return out;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

ScatterGeometry make_geometry(int J, int height, int width) {
  const int block = 1 << J;
  ScatterGeometry g;
  g.logical_h = height;
  g.logical_w = width;
  g.padded_h = (height / block + 1) * block;  // strictly greater multiple
  g.padded_w = (width / block + 1) * block;
  g.pad_top = (g.padded_h - height) / 2;
  g.pad_left = (g.padded_w - width) / 2;
  g.out_h = ceil_div(height, block);
  g.out_w = ceil_div(width, block);
  return g;
}

}  // namespace

int FilterBank::paths_per_channel() const {
  return 1 + J * L + L * L * (J * (J - 1)) / 2;
}

FilterBank build_filter_bank(int J, int L, int height, int width) {
  if (J < 1) throw std::invalid_argument("build_filter_bank: J must be >= 1");
  if (L < 1) throw std::invalid_argument("build_filter_bank: L must be >= 1");
  if (height < (1 << J) || width < (1 << J)) {
    throw std::invalid_argument("build_filter_bank: image smaller than 2^J");
  }

  FilterBank bank;
  bank.J = J;
  bank.L = L;
  bank.geom = make_geometry(J, height, width);
  const int ph = bank.geom.padded_h;
  const int pw = bank.geom.padded_w;
  const double slant = 4.0 / L;

  bank.psi.reserve(static_cast<std::size_t>(J) * L);
  for (int j = 0; j < J; ++j) {
    const double sigma = 0.8 * (1 << j);
    const double xi = 3.0 * kPi / 4.0 / (1 << j);
    for (int l = 0; l < L; ++l) {
      Filter f;
      f.j = j;
      f.theta = l;
      f.levels.push_back(
          sample_grid(ph, pw, &morlet_hat, sigma, l * kPi / L, xi, slant));
      bank.psi.push_back(std::move(f));
    }
  }
  bank.phi.j = J;
  bank.phi.theta = 0;
  bank.phi.levels.push_back(
      sample_grid(ph, pw, &gabor_hat, 0.8 * (1 << (J - 1)), 0.0, 0.0, 1.0));

  bank.lp_max_raw = littlewood_paley_max(bank);
  const double scale = 1.0 / std::sqrt(bank.lp_max_raw);
  for (auto& f : bank.psi) f.levels[0] *= scale;
  bank.phi.levels[0] *= scale;
  bank.lp_max = littlewood_paley_max(bank);

  for (auto& f : bank.psi) f.levels = make_levels(f.levels[0], J);
  bank.phi.levels = make_levels(bank.phi.levels[0], J);
  return bank;
}

double littlewood_paley_max(const FilterBank& bank) {
  Eigen::ArrayXXd lp = bank.phi.levels[0].square();
  for (const auto& f : bank.psi) lp += f.levels[0].square();
  return lp.maxCoeff();
}

FeatureMap scatter2d(const std::vector<Eigen::ArrayXXd>& channels,
                     const FilterBank& bank) {
  if (channels.empty()) {
    throw std::invalid_argument("scatter2d: no input channels");
  }
  const ScatterGeometry& g = bank.geom;
  for (const auto& ch : channels) {
    if (ch.rows() != g.logical_h || ch.cols() != g.logical_w) {
      throw std::invalid_argument("scatter2d: image does not match bank geometry");
    }
  }

  const int J = bank.J;
  const int L = bank.L;
  const int paths = bank.paths_per_channel();
  FeatureMap out;
  out.shape = FeatureShape{static_cast<int>(channels.size()) * paths, g.out_h,
                           g.out_w};
  out.values.assign(out.shape.dim(), 0.0);

  Fft2 fft;

  // Final low-pass at level r: multiply by phi[r], decimate to level J, crop.
  const int crop_r = ceil_div(g.pad_top, 1 << J);
  const int crop_c = ceil_div(g.pad_left, 1 << J);
  auto emit = [&](const Eigen::ArrayXXcd& spectrum, int level, int channel) {
    Eigen::ArrayXXcd low = periodize(
        filter_product(spectrum, bank.phi.levels[static_cast<std::size_t>(level)]),
        1 << (J - level));
    fft.inverse(low);
    double* dst = out.values.data() +
                  static_cast<std::size_t>(channel) * g.out_h * g.out_w;
    for (int y = 0; y < g.out_h; ++y) {
      for (int x = 0; x < g.out_w; ++x) {
        dst[y * g.out_w + x] = low(crop_r + y, crop_c + x).real();
      }
    }
  };

  for (std::size_t c = 0; c < channels.size(); ++c) {
    const int base = static_cast<int>(c) * paths;
    Eigen::ArrayXXcd spectrum = pad_reflect(channels[c], g);
    fft.forward(spectrum);

    emit(spectrum, 0, base);  // order 0

    int order2 = base + 1 + J * L;
    for (int j1 = 0; j1 < J; ++j1) {
      for (int t1 = 0; t1 < L; ++t1) {
        const Filter& psi1 = bank.psi[static_cast<std::size_t>(j1) * L + t1];
        Eigen::ArrayXXcd u1 =
            periodize(filter_product(spectrum, psi1.levels[0]), 1 << j1);
        fft.inverse(u1);
        Eigen::ArrayXXcd m1 = u1.abs().cast<std::complex<double>>();
        fft.forward(m1);

        emit(m1, j1, base + 1 + j1 * L + t1);  // order 1

        for (int j2 = j1 + 1; j2 < J; ++j2) {
          for (int t2 = 0; t2 < L; ++t2) {
            const Filter& psi2 = bank.psi[static_cast<std::size_t>(j2) * L + t2];
            Eigen::ArrayXXcd u2 = periodize(
                filter_product(m1, psi2.levels[static_cast<std::size_t>(j1)]),
                1 << (j2 - j1));
            fft.inverse(u2);
            Eigen::ArrayXXcd m2 = u2.abs().cast<std::complex<double>>();
            fft.forward(m2);
            emit(m2, j2, order2++);  // order 2
          }
        }
      }
    }
  }
  return out;
}

}  // namespace scatterdp
