#pragma once

// Named parameter collections and the binary checkpoint container.
//
// Checkpoint layout, all integers little-endian:
//
//   magic    8 bytes   "STEMGAN\0"
//   version  u32       kCheckpointVersion
//   header   u32 n, then n bytes of UTF-8 "key=value" lines (architecture)
//   count    u32       number of records
//   record   u32 name length, name bytes,
//            u32 rank, rank x u64 dims,
//            u8 dtype (0 = float32, 1 = float64),
//            raw values in row-major order

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stemgan/autograd/tensor.hpp"

namespace stemgan::ag {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
class ParameterSet {
 public:
  Tensor<T> add(std::string name, Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape), true);
    entries_.push_back({std::move(name), t});
    return t;
  }

  /// Shares the tensors of `other`, prefixing their names.
  void append(const ParameterSet& other, const std::string& prefix = "") {
    for (const auto& e : other.entries_) entries_.push_back({prefix + e.name, e.tensor});
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_) out.push_back(e.tensor);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  /// FNV-1a over names and raw values; used to prove a parameter set was not
  /// touched by an update.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
    };
    for (const auto& e : entries_) {
      mix(e.name.data(), e.name.size());
      mix(e.tensor.data().data(), e.tensor.numel() * sizeof(T));
    }
    return h;
  }

  std::vector<NamedTensor<T>>& entries() { return entries_; }
  const std::vector<NamedTensor<T>>& entries() const { return entries_; }

 private:
  std::vector<NamedTensor<T>> entries_;
};

template <class T>
void fill_normal(Tensor<T>& t, double mean, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <class T>
void fill_constant(Tensor<T>& t, T value) {
  for (auto& v : t.data()) v = value;
}

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'E', 'M', 'G', 'A', 'N', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A flat record as stored on disk. Values are kept in double regardless of
/// the stored dtype; conversion back is exact for float32 records.
struct Record {
  std::string name;
  Shape shape;
  std::uint8_t dtype = 0;
  std::vector<double> values;
};

struct CheckpointFile {
  std::string header;
  std::vector<Record> records;
};

template <class T>
Record make_record(std::string name, const Shape& shape, std::span<const T> values) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  Record r;
  r.name = std::move(name);
  r.shape = shape;
  r.dtype = std::is_same_v<T, float> ? 0 : 1;
  r.values.assign(values.begin(), values.end());
  return r;
}

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}
template <class I>
void put_int(std::string& out, I v) {
  put_bytes(out, &v, sizeof v);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  template <class I>
  I get() {
    I v;
    take(&v, sizeof v);
    return v;
  }
  void take(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error(Errc::format_error, "checkpoint truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string string(std::size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointFile& file) {
  std::string out;
  detail::put_bytes(out, kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_int<std::uint32_t>(out, kCheckpointVersion);
  detail::put_int<std::uint32_t>(out, static_cast<std::uint32_t>(file.header.size()));
  out += file.header;
  detail::put_int<std::uint32_t>(out, static_cast<std::uint32_t>(file.records.size()));
  for (const auto& r : file.records) {
    detail::put_int<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    detail::put_int<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) detail::put_int<std::uint64_t>(out, d);
    detail::put_int<std::uint8_t>(out, r.dtype);
    for (double v : r.values) {
      if (r.dtype == 0) detail::put_int<float>(out, static_cast<float>(v));
      else detail::put_int<double>(out, v);
    }
  }
  return out;
}

inline CheckpointFile decode_checkpoint(std::string bytes) {
  detail::Reader in(std::move(bytes));
  char magic[8];
  in.take(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error(Errc::format_error, "bad checkpoint magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error(Errc::config_mismatch, "unsupported checkpoint version " + std::to_string(version));
  CheckpointFile file;
  file.header = in.string(in.get<std::uint32_t>());
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    r.name = in.string(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw Error(Errc::format_error, "implausible rank in record " + r.name);
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(in.get<std::uint64_t>());
    r.dtype = in.get<std::uint8_t>();
    if (r.dtype > 1) throw Error(Errc::format_error, "unknown dtype in record " + r.name);
    const std::size_t n = numel_of(r.shape);
    r.values.resize(n);
    for (std::size_t j = 0; j < n; ++j)
      r.values[j] = r.dtype == 0 ? static_cast<double>(in.get<float>()) : in.get<double>();
    file.records.push_back(std::move(r));
  }
  if (!in.done()) throw Error(Errc::format_error, "trailing bytes after checkpoint records");
  return file;
}

inline void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  const std::string bytes = encode_checkpoint(file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_failure, "write failed: " + path.string());
}

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace stemgan::ag
