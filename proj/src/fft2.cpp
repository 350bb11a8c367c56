#include "scatterdp/fft2.hpp"

#include <unsupported/Eigen/FFT>

#include <stdexcept>
#include <vector>

namespace scatterdp {

struct Fft2::Impl {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in;
  std::vector<std::complex<double>> out;
};

Fft2::Fft2() : impl_(new Impl) {}
Fft2::~Fft2() { delete impl_; }

void Fft2::transform(Eigen::ArrayXXcd& a, bool inverse) {
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  auto run = [&](const std::complex<double>* src, std::complex<double>* dst,
                 Eigen::Index n) {
    if (inverse) {
      impl_->fft.inv(dst, src, n);
    } else {
      impl_->fft.fwd(dst, src, n);
    }
  };

  // Columns are contiguous in the column-major array.
  if (rows > 1) {
    impl_->out.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index j = 0; j < cols; ++j) {
      run(a.col(j).data(), impl_->out.data(), rows);
      std::copy(impl_->out.begin(), impl_->out.end(), a.col(j).data());
    }
  }
  // Rows are strided: gather, transform, scatter.
  if (cols > 1) {
    impl_->in.resize(static_cast<std::size_t>(cols));
    impl_->out.resize(static_cast<std::size_t>(cols));
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        impl_->in[static_cast<std::size_t>(j)] = a(i, j);
      }
      run(impl_->in.data(), impl_->out.data(), cols);
      for (Eigen::Index j = 0; j < cols; ++j) {
        a(i, j) = impl_->out[static_cast<std::size_t>(j)];
      }
    }
  }
}

void Fft2::forward(Eigen::ArrayXXcd& a) { transform(a, false); }
void Fft2::inverse(Eigen::ArrayXXcd& a) { transform(a, true); }

namespace {

template <typename ArrayT>
ArrayT periodize_impl(const ArrayT& freq, int factor) {
  if (factor < 1) throw std::invalid_argument("periodize: factor must be >= 1");
  if (factor == 1) return freq;
  if (freq.rows() % factor != 0 || freq.cols() % factor != 0) {
    throw std::invalid_argument("periodize: shape not divisible by factor");
  }
  const Eigen::Index r = freq.rows() / factor;
  const Eigen::Index c = freq.cols() / factor;
  ArrayT out = ArrayT::Zero(r, c);
  for (int a = 0; a < factor; ++a) {
    for (int b = 0; b < factor; ++b) {
      out += freq.block(a * r, b * c, r, c);
    }
  }
  return out / static_cast<double>(factor * factor);
}

}  // namespace

Eigen::ArrayXXcd periodize(const Eigen::ArrayXXcd& freq, int factor) {
  return periodize_impl(freq, factor);
}

Eigen::ArrayXXd periodize(const Eigen::ArrayXXd& freq, int factor) {
  return periodize_impl(freq, factor);
}

}  // namespace scatterdp
