// Shared basic types and error taxonomy.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace scatterdp {

// Per-sample feature tensors are flattened row-major (channel, row, col) into
// rows of an N x d matrix. Caches hold them in 32-bit; all model-side math
// widens to 64-bit at the point of use.
using FeatureMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FeatureMap32 = Eigen::Map<const FeatureMatrix>;

// Logical layout of one sample's feature tensor.
struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  int dim() const { return channels * height * width; }
  int spatial() const { return height * width; }
  bool operator==(const FeatureShape&) const = default;
};

// Raised for malformed or inconsistent input data (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when training produces non-finite state (CLI exit code 3).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::int64_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

// Raised for bad command-line or config usage (CLI exit code 1).
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace scatterdp
