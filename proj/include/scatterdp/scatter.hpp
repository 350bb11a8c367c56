// Two-layer wavelet scattering transform.
//
// S(x) cascades Morlet wavelet convolutions and complex moduli:
//   order 0:  A_J x
//   order 1:  A_J |x * psi_{j1,t1}|                      (j1 < J)
//   order 2:  A_J ||x * psi_{j1,t1}| * psi_{j2,t2}|      (j1 < j2 < J)
// where A_J low-passes with a Gaussian at scale 2^J and decimates by 2^J.
// Intermediate first-order signals are decimated by 2^j1. Convolutions run in
// the frequency domain on a reflection-padded grid; outputs are cropped back
// to the logical geometry.
//
// The whole bank is rescaled once at build time so that the Littlewood-Paley
// sum max_w (|phi(w)|^2 + sum |psi(w)|^2) equals 1, making the transform
// nonexpansive.
#pragma once

#include "scatterdp/types.hpp"

#include <Eigen/Dense>

#include <vector>

namespace scatterdp {

// Padded/cropped geometry shared by a bank and the images it accepts.
struct ScatterGeometry {
  int logical_h = 0;
  int logical_w = 0;
  int padded_h = 0;  // smallest multiple of 2^J strictly greater than logical
  int padded_w = 0;
  int pad_top = 0;   // logical region starts at (pad_top, pad_left)
  int pad_left = 0;
  int out_h = 0;     // logical_h / 2^J
  int out_w = 0;

  bool operator==(const ScatterGeometry&) const = default;
};

// One frequency-domain filter stored at every resolution it is applied at:
// levels[r] is the level-0 grid folded by 2^r (padded_h/2^r x padded_w/2^r).
struct Filter {
  int j = 0;      // dyadic scale
  int theta = 0;  // orientation index (band-pass only)
  std::vector<Eigen::ArrayXXd> levels;
};

struct FilterBank {
  int J = 0;
  int L = 0;
  ScatterGeometry geom;
  double lp_max = 0.0;              // Littlewood-Paley max after rescaling (== 1)
  double lp_max_raw = 0.0;          // the max before rescaling (parameterization-dependent)
  std::vector<Filter> psi;          // J*L band-pass filters, (j asc, theta asc)
  Filter phi;                       // Gaussian low-pass at scale 2^J

  // Number of output channels per input channel: 1 + J*L + L^2*J*(J-1)/2.
  int paths_per_channel() const;
};

// Build the Morlet bank for J >= 1 scales and L >= 1 orientations on images of
// the given logical size. Throws std::invalid_argument for J < 1, L < 1, or a
// dimension smaller than 2^J. Construction is deterministic.
FilterBank build_filter_bank(int J, int L, int height, int width);

// Littlewood-Paley frame bound of the stored bank, recomputed from the
// level-0 grids: max over frequencies of |phi|^2 + sum_{j,theta} |psi|^2.
double littlewood_paley_max(const FilterBank& bank);

// Scattering coefficients of one multi-channel image; values laid out
// row-major (channel-major: all paths of input channel 0, then channel 1, ...)
// with path order (order 0, order 1 by (j1, t1), order 2 by (j1, t1, j2, t2)).
struct FeatureMap {
  FeatureShape shape;
  std::vector<double> values;

  double at(int c, int y, int x) const {
    return values[static_cast<std::size_t>(c) * shape.spatial() + y * shape.width + x];
  }
};

// Apply the transform to each input channel independently. Every channel array
// must match the bank's logical geometry. Deterministic: identical input and
// bank give bit-identical output.
FeatureMap scatter2d(const std::vector<Eigen::ArrayXXd>& channels,
                     const FilterBank& bank);

}  // namespace scatterdp
