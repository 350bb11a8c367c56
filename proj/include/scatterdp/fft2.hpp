// Small 2-D FFT helper on top of Eigen's bundled FFT module.
//
// Transforms are unnormalized forward / 1-(rows*cols) inverse, matching the
// usual DFT convention. Plans are cached per length inside Eigen::FFT, so one
// Fft2 instance should be reused across calls (one per worker thread).
#pragma once

#include <Eigen/Dense>

#include <complex>

namespace scatterdp {

class Fft2 {
 public:
  Fft2();
  ~Fft2();
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  // In-place 2-D transforms of a column-major complex array.
  void forward(Eigen::ArrayXXcd& a);
  void inverse(Eigen::ArrayXXcd& a);

 private:
  struct Impl;
  Impl* impl_;
  void transform(Eigen::ArrayXXcd& a, bool inverse);
};

// Fold a frequency-domain array by `factor` in each dimension (block mean).
// This is the Fourier-domain equivalent of spatial decimation by `factor`.
Eigen::ArrayXXcd periodize(const Eigen::ArrayXXcd& freq, int factor);
Eigen::ArrayXXd periodize(const Eigen::ArrayXXd& freq, int factor);

}  // namespace scatterdp
