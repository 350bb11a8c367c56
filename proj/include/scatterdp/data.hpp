// Dataset loading, feature extraction, and feature caching.
//
// Raw inputs: IDX image/label pairs (MNIST layout, big-endian headers) and
// CIFAR-10 binary batches (label byte + 3072 channel-plane bytes per record).
// Pixels are scaled to [0,1].
//
// Feature caches are little-endian files: a fixed header (magic, version,
// shape, dtype tag, provenance hash), the row-major float32 tensor, the
// labels, and a trailing 64-bit checksum over tensor+labels. Caches load
// memory-mapped and are validated against the checksum and, when the caller
// states expectations, against the provenance hash.
#pragma once

#include "scatterdp/normalize.hpp"
#include "scatterdp/scatter.hpp"
#include "scatterdp/types.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace scatterdp {

// Images in [0,1], pixel layout row-major (channel, row, col).
struct RawImages {
  int count = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  std::vector<std::uint8_t> labels;

  int pixel_dim() const { return channels * height * width; }
  const float* sample(int i) const {
    return pixels.data() + static_cast<std::size_t>(i) * pixel_dim();
  }
};

// Identity of a feature cache: what was extracted from, and how.
struct Provenance {
  std::string dataset;       // "mnist" | "fashion" | "cifar10" | test ids
  std::string split;         // "train" | "test"
  int J = 0, L = 0;
  int channels = 0, height = 0, width = 0;  // raw image geometry
  std::string normalization = "none";       // caches store raw features

  std::uint64_t hash() const;
  std::string describe() const;
};

// A set of per-sample feature tensors, either owned or memory-mapped from a
// cache file. Feature values are row-major float32 rows of an N x d matrix.
struct FeatureSet {
  int count = 0;
  FeatureShape shape;
  Provenance provenance;
  std::vector<std::uint8_t> labels;

  FeatureMap32 matrix() const;
  const float* row(int i) const;
  float* mutable_data();  // owned sets only

  // Storage: exactly one of these is active.
  std::vector<float> owned;
  std::shared_ptr<const class CacheMapping> mapping;
  const float* mapped_ptr = nullptr;
};

// IDX pair loader. Throws DataError on bad magic, truncation, or mismatched
// image/label counts.
RawImages load_idx(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path);

// CIFAR-10 binary batch loader; files are concatenated in the order given.
// Throws DataError on bad record geometry or labels outside [0, 9].
RawImages load_cifar10(const std::vector<std::filesystem::path>& batch_files);

// Scatter every sample through the bank into an owned float32 FeatureSet.
// The bank must match the raw geometry. Deterministic.
FeatureSet extract_features(const RawImages& raw, const FilterBank& bank,
                            const Provenance& provenance);

// Write a cache file (creates parent directories).
void cache_features(const std::filesystem::path& path, const FeatureSet& set);

// Streaming extraction straight into a cache file; peak memory stays at the
// raw-image scale. Equivalent to cache_features(extract_features(...)).
void extract_to_cache(const RawImages& raw, const FilterBank& bank,
                      const Provenance& provenance,
                      const std::filesystem::path& path);

// Memory-map a cache. Verifies magic, version, dtype, and checksum; the
// overload with `expected` additionally rejects provenance mismatches.
// Throws DataError on any validation failure.
FeatureSet load_features(const std::filesystem::path& path);
FeatureSet load_features(const std::filesystem::path& path,
                         const Provenance& expected);

// Uniform subset of size n without replacement, seed-deterministic. Selected
// indices are emitted in increasing order, so n = count is the identity.
RawImages subset(const RawImages& raw, int n, std::uint64_t seed);

}  // namespace scatterdp
