#include "scatterdp/data.hpp"

#include "scatterdp/rng.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace scatterdp {

namespace {

constexpr std::uint64_t kMagic = 0x3152434654414353ULL;  // "SCATFCR1"
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeFloat32 = 1;
constexpr std::size_t kHeaderAlign = 64;

std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t hash = 14695981039346656037ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    hash ^= p[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("truncated header in " + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

std::vector<std::uint8_t> read_exact(std::istream& in, std::size_t len,
                                     const std::string& what) {
  std::vector<std::uint8_t> buf(len);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len)) {
    throw DataError("truncated payload in " + what);
  }
  return buf;
}

void check_labels(const std::vector<std::uint8_t>& labels,
                  const std::string& what) {
  for (auto l : labels) {
    if (l > 9) throw DataError("label outside [0,9] in " + what);
  }
}

// Serialized cache header; fixed-width fields, native (little-endian) layout.
struct CacheHeader {
  std::uint64_t magic = kMagic;
  std::uint32_t version = kVersion;
  std::uint32_t dtype = kDtypeFloat32;
  std::uint64_t count = 0;
  std::uint32_t channels = 0, height = 0, width = 0;
  std::uint64_t prov_hash = 0;
  std::uint32_t ds_len = 0, split_len = 0, norm_len = 0;
  std::uint32_t J = 0, L = 0;
  std::uint32_t raw_channels = 0, raw_height = 0, raw_width = 0;
};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::string encode_header(const FeatureSet& set) {
  const Provenance& p = set.provenance;
  CacheHeader h;
  h.count = static_cast<std::uint64_t>(set.count);
  h.channels = static_cast<std::uint32_t>(set.shape.channels);
  h.height = static_cast<std::uint32_t>(set.shape.height);
  h.width = static_cast<std::uint32_t>(set.shape.width);
  h.prov_hash = p.hash();
  h.ds_len = static_cast<std::uint32_t>(p.dataset.size());
  h.split_len = static_cast<std::uint32_t>(p.split.size());
  h.norm_len = static_cast<std::uint32_t>(p.normalization.size());
  h.J = static_cast<std::uint32_t>(p.J);
  h.L = static_cast<std::uint32_t>(p.L);
  h.raw_channels = static_cast<std::uint32_t>(p.channels);
  h.raw_height = static_cast<std::uint32_t>(p.height);
  h.raw_width = static_cast<std::uint32_t>(p.width);

  std::string out;
  put(out, h.magic);
  put(out, h.version);
  put(out, h.dtype);
  put(out, h.count);
  put(out, h.channels);
  put(out, h.height);
  put(out, h.width);
  put(out, h.prov_hash);
  put(out, h.ds_len);
  put(out, h.split_len);
  put(out, h.norm_len);
  put(out, h.J);
  put(out, h.L);
  put(out, h.raw_channels);
  put(out, h.raw_height);
  put(out, h.raw_width);
  out += p.dataset;
  out += p.split;
  out += p.normalization;
  out.resize((out.size() + kHeaderAlign - 1) / kHeaderAlign * kHeaderAlign,
             '\0');
  return out;
}

}  // namespace

// Read-only mapping of a whole cache file.
class CacheMapping {
 public:
  explicit CacheMapping(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0) throw DataError("cannot open feature cache " + path.string());
    struct stat st{};
    if (::fstat(fd_, &st) != 0 || st.st_size < 0) {
      ::close(fd_);
      throw DataError("cannot stat feature cache " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
      if (p == MAP_FAILED) {
        ::close(fd_);
        throw DataError("cannot map feature cache " + path.string());
      }
      base_ = static_cast<const unsigned char*>(p);
    }
  }
  ~CacheMapping() {
    if (base_ != nullptr) ::munmap(const_cast<unsigned char*>(base_), size_);
    if (fd_ >= 0) ::close(fd_);
  }
  CacheMapping(const CacheMapping&) = delete;
  CacheMapping& operator=(const CacheMapping&) = delete;

  const unsigned char* data() const { return base_; }
  std::size_t size() const { return size_; }

 private:
  int fd_ = -1;
  std::size_t size_ = 0;
  const unsigned char* base_ = nullptr;
};

FeatureMap32 FeatureSet::matrix() const {
  const float* ptr = owned.empty() ? mapped_ptr : owned.data();
  return FeatureMap32(ptr, count, shape.dim());
}

const float* FeatureSet::row(int i) const {
  return matrix().data() + static_cast<std::size_t>(i) * shape.dim();
}

float* FeatureSet::mutable_data() {
  if (owned.empty()) {
    throw DataError("feature set is memory-mapped and read-only");
  }
  return owned.data();
}

std::uint64_t Provenance::hash() const {
  const std::string text = describe();
  return fnv1a(text.data(), text.size());
}

std::string Provenance::describe() const {
  std::ostringstream out;
  out << "dataset=" << dataset << " split=" << split << " J=" << J
      << " L=" << L << " channels=" << channels << " height=" << height
      << " width=" << width << " norm=" << normalization;
  return out.str();
}

RawImages load_idx(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot open " + images_path.string());
  if (read_be32(img, images_path.string()) != 0x00000803) {
    throw DataError("bad image magic in " + images_path.string());
  }
  const std::uint32_t n = read_be32(img, images_path.string());
  const std::uint32_t h = read_be32(img, images_path.string());
  const std::uint32_t w = read_be32(img, images_path.string());
  const auto pixels = read_exact(
      img, static_cast<std::size_t>(n) * h * w, images_path.string());

  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw DataError("cannot open " + labels_path.string());
  if (read_be32(lbl, labels_path.string()) != 0x00000801) {
    throw DataError("bad label magic in " + labels_path.string());
  }
  const std::uint32_t ln = read_be32(lbl, labels_path.string());
  if (ln != n) {
    throw DataError("image/label count mismatch: " + images_path.string());
  }
  auto labels = read_exact(lbl, ln, labels_path.string());
  check_labels(labels, labels_path.string());

  RawImages raw;
  raw.count = static_cast<int>(n);
  raw.channels = 1;
  raw.height = static_cast<int>(h);
  raw.width = static_cast<int>(w);
  raw.pixels.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    raw.pixels[i] = static_cast<float>(pixels[i]) / 255.0f;
  }
  raw.labels = std::move(labels);
  return raw;
}

RawImages load_cifar10(const std::vector<std::filesystem::path>& batch_files) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  RawImages raw;
  raw.channels = 3;
  raw.height = 32;
  raw.width = 32;
  for (const auto& path : batch_files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    if (size == 0 || size % kRecord != 0) {
      throw DataError("not a whole number of records: " + path.string());
    }
    const auto payload = read_exact(in, size, path.string());
    const std::size_t records = size / kRecord;
    for (std::size_t r = 0; r < records; ++r) {
      const std::uint8_t* rec = payload.data() + r * kRecord;
      if (rec[0] > 9) throw DataError("label outside [0,9] in " + path.string());
      raw.labels.push_back(rec[0]);
      for (std::size_t i = 1; i < kRecord; ++i) {
        raw.pixels.push_back(static_cast<float>(rec[i]) / 255.0f);
      }
    }
    raw.count += static_cast<int>(records);
  }
  return raw;
}

namespace {

FeatureMap scatter_sample(const RawImages& raw, const FilterBank& bank, int i) {
  std::vector<Eigen::ArrayXXd> channels(static_cast<std::size_t>(raw.channels));
  const float* src = raw.sample(i);
  for (int c = 0; c < raw.channels; ++c) {
    Eigen::ArrayXXd& ch = channels[static_cast<std::size_t>(c)];
    ch.resize(raw.height, raw.width);
    const float* plane =
        src + static_cast<std::size_t>(c) * raw.height * raw.width;
    for (int y = 0; y < raw.height; ++y) {
      for (int x = 0; x < raw.width; ++x) {
        ch(y, x) = static_cast<double>(plane[y * raw.width + x]);
      }
    }
  }
  return scatter2d(channels, bank);
}

}  // namespace

FeatureSet extract_features(const RawImages& raw, const FilterBank& bank,
                            const Provenance& provenance) {
  FeatureSet set;
  set.count = raw.count;
  set.provenance = provenance;
  set.labels = raw.labels;
  set.shape = FeatureShape{raw.channels * bank.paths_per_channel(),
                           bank.geom.out_h, bank.geom.out_w};
  set.owned.resize(static_cast<std::size_t>(set.count) * set.shape.dim());
  for (int i = 0; i < raw.count; ++i) {
    const FeatureMap fm = scatter_sample(raw, bank, i);
    float* dst = set.owned.data() + static_cast<std::size_t>(i) * set.shape.dim();
    for (std::size_t j = 0; j < fm.values.size(); ++j) {
      dst[j] = static_cast<float>(fm.values[j]);
    }
  }
  return set;
}

void cache_features(const std::filesystem::path& path, const FeatureSet& set) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write feature cache " + path.string());
  const std::string header = encode_header(set);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  const auto m = set.matrix();
  const std::size_t tensor_bytes =
      static_cast<std::size_t>(set.count) * set.shape.dim() * sizeof(float);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(tensor_bytes));
  out.write(reinterpret_cast<const char*>(set.labels.data()),
            static_cast<std::streamsize>(set.labels.size()));

  std::uint64_t checksum = fnv1a(m.data(), tensor_bytes);
  checksum = fnv1a(set.labels.data(), set.labels.size(), checksum);
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out) throw DataError("write failure on feature cache " + path.string());
}

void extract_to_cache(const RawImages& raw, const FilterBank& bank,
                      const Provenance& provenance,
                      const std::filesystem::path& path) {
  FeatureSet meta;
  meta.count = raw.count;
  meta.provenance = provenance;
  meta.labels = raw.labels;
  meta.shape = FeatureShape{raw.channels * bank.paths_per_channel(),
                            bank.geom.out_h, bank.geom.out_w};

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write feature cache " + path.string());
  const std::string header = encode_header(meta);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  std::uint64_t checksum = 14695981039346656037ULL;
  std::vector<float> row(static_cast<std::size_t>(meta.shape.dim()));
  for (int i = 0; i < raw.count; ++i) {
    const FeatureMap fm = scatter_sample(raw, bank, i);
    for (std::size_t j = 0; j < fm.values.size(); ++j) {
      row[j] = static_cast<float>(fm.values[j]);
    }
    const std::size_t bytes = row.size() * sizeof(float);
    checksum = fnv1a(row.data(), bytes, checksum);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(bytes));
  }
  checksum = fnv1a(meta.labels.data(), meta.labels.size(), checksum);
  out.write(reinterpret_cast<const char*>(meta.labels.data()),
            static_cast<std::streamsize>(meta.labels.size()));
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out) throw DataError("write failure on feature cache " + path.string());
}

namespace {

template <typename T>
T take(const unsigned char*& p, const unsigned char* end,
       const std::string& what) {
  if (p + sizeof(T) > end) throw DataError("truncated feature cache " + what);
  T v;
  std::memcpy(&v, p, sizeof(T));
  p += sizeof(T);
  return v;
}

}  // namespace

FeatureSet load_features(const std::filesystem::path& path) {
  auto mapping = std::make_shared<const CacheMapping>(path);
  const unsigned char* p = mapping->data();
  const unsigned char* end = p + mapping->size();
  const std::string what = path.string();

  if (take<std::uint64_t>(p, end, what) != kMagic) {
    throw DataError("not a feature cache: " + what);
  }
  if (take<std::uint32_t>(p, end, what) != kVersion) {
    throw DataError("unsupported cache version: " + what);
  }
  if (take<std::uint32_t>(p, end, what) != kDtypeFloat32) {
    throw DataError("unsupported cache dtype: " + what);
  }
  FeatureSet set;
  set.count = static_cast<int>(take<std::uint64_t>(p, end, what));
  set.shape.channels = static_cast<int>(take<std::uint32_t>(p, end, what));
  set.shape.height = static_cast<int>(take<std::uint32_t>(p, end, what));
  set.shape.width = static_cast<int>(take<std::uint32_t>(p, end, what));
  const std::uint64_t prov_hash = take<std::uint64_t>(p, end, what);
  const auto ds_len = take<std::uint32_t>(p, end, what);
  const auto split_len = take<std::uint32_t>(p, end, what);
  const auto norm_len = take<std::uint32_t>(p, end, what);
  set.provenance.J = static_cast<int>(take<std::uint32_t>(p, end, what));
  set.provenance.L = static_cast<int>(take<std::uint32_t>(p, end, what));
  set.provenance.channels = static_cast<int>(take<std::uint32_t>(p, end, what));
  set.provenance.height = static_cast<int>(take<std::uint32_t>(p, end, what));
  set.provenance.width = static_cast<int>(take<std::uint32_t>(p, end, what));

  const std::size_t strings = std::size_t{ds_len} + split_len + norm_len;
  if (p + strings > end) throw DataError("truncated feature cache " + what);
  set.provenance.dataset.assign(reinterpret_cast<const char*>(p), ds_len);
  set.provenance.split.assign(reinterpret_cast<const char*>(p) + ds_len,
                              split_len);
  set.provenance.normalization.assign(
      reinterpret_cast<const char*>(p) + ds_len + split_len, norm_len);
  if (set.provenance.hash() != prov_hash) {
    throw DataError("provenance hash mismatch in " + what);
  }

  const std::size_t header_bytes =
      (static_cast<std::size_t>(p - mapping->data()) + strings + kHeaderAlign -
       1) /
      kHeaderAlign * kHeaderAlign;
  const std::size_t tensor_bytes =
      static_cast<std::size_t>(set.count) * set.shape.dim() * sizeof(float);
  const std::size_t want =
      header_bytes + tensor_bytes + set.count + sizeof(std::uint64_t);
  if (mapping->size() != want) {
    throw DataError("truncated feature cache " + what);
  }

  const unsigned char* tensor = mapping->data() + header_bytes;
  const unsigned char* labels = tensor + tensor_bytes;
  std::uint64_t checksum = fnv1a(tensor, tensor_bytes);
  checksum = fnv1a(labels, static_cast<std::size_t>(set.count), checksum);
  std::uint64_t stored;
  std::memcpy(&stored, labels + set.count, sizeof(stored));
  if (checksum != stored) {
    throw DataError("checksum mismatch in feature cache " + what);
  }

  set.labels.assign(labels, labels + set.count);
  set.mapping = mapping;
  set.mapped_ptr = reinterpret_cast<const float*>(tensor);
  return set;
}

FeatureSet load_features(const std::filesystem::path& path,
                         const Provenance& expected) {
  FeatureSet set = load_features(path);
  if (set.provenance.hash() != expected.hash()) {
    throw DataError("feature cache " + path.string() + " holds " +
                    set.provenance.describe() + ", expected " +
                    expected.describe());
  }
  return set;
}

RawImages subset(const RawImages& raw, int n, std::uint64_t seed) {
  if (n < 1 || n > raw.count) {
    throw DataError("subset size outside [1, count]");
  }
  if (n == raw.count) return raw;

  RawImages out;
  out.count = n;
  out.channels = raw.channels;
  out.height = raw.height;
  out.width = raw.width;
  out.pixels.reserve(static_cast<std::size_t>(n) * raw.pixel_dim());
  out.labels.reserve(static_cast<std::size_t>(n));

  // Selection sampling: index i is taken with probability
  // (still needed) / (still available), which is uniform over all subsets and
  // emits indices in increasing order.
  RngStream rng(seed, StreamDomain::kSubset, 0);
  int needed = n;
  for (int i = 0; i < raw.count && needed > 0; ++i) {
    const double p = static_cast<double>(needed) /
                     static_cast<double>(raw.count - i);
    if (rng.uniform() < p) {
      const float* src = raw.sample(i);
      out.pixels.insert(out.pixels.end(), src, src + raw.pixel_dim());
      out.labels.push_back(raw.labels[static_cast<std::size_t>(i)]);
      --needed;
    }
  }
  return out;
}

}  // namespace scatterdp
