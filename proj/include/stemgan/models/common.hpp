#pragma once

// Pieces shared by the two translation systems: adversarial loss forms, the
// generated-image history pool, checkpoint header helpers and loss logs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stemgan/autograd/adam.hpp"
#include "stemgan/autograd/ops.hpp"
#include "stemgan/autograd/parameters.hpp"
#include "stemgan/models/networks.hpp"

namespace stemgan::models {

enum class GanMode { least_squares, cross_entropy };

inline const char* to_string(GanMode m) { return m == GanMode::least_squares ? "lsgan" : "bce"; }

inline GanMode parse_gan_mode(const std::string& s) {
  if (s == "lsgan" || s == "least_squares") return GanMode::least_squares;
  if (s == "bce" || s == "cross_entropy") return GanMode::cross_entropy;
  throw Error(Errc::invalid_argument, "unknown gan mode '" + s + "'");
}

/// Adversarial term for a patch map of discriminator outputs against the
/// real (1) or fake (0) label.
template <class T>
Tensor<T> gan_loss(const Tensor<T>& pred, bool real, GanMode mode) {
  const T target = real ? T(1) : T(0);
  return mode == GanMode::least_squares ? ag::mse_loss(pred, target) : ag::bce_with_logits(pred, target);
}

/// History of generated images shown to a discriminator. Once full, each
/// query returns a stored image (swapping in the new one) with probability
/// one half, otherwise the new image. Size 0 always returns the input.
template <class T>
class ImagePool {
 public:
  ImagePool() = default;
  ImagePool(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}

  Tensor<T> query(const Tensor<T>& image) {
    Tensor<T> img = image.detach();
    if (capacity_ == 0) return img;
    if (images_.size() < capacity_) {
      images_.push_back(img);
      return img;
    }
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < 0.5) {
      const auto i = std::uniform_int_distribution<std::size_t>(0, capacity_ - 1)(rng_);
      std::swap(images_[i], img);
    }
    return img;
  }

  std::size_t size() const { return images_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_ = 0;
  std::mt19937_64 rng_;
  std::vector<Tensor<T>> images_;
};

template <class T>
void set_trainable(ParameterSet<T>& ps, bool flag) {
  for (auto& e : ps.entries()) e.tensor.set_requires_grad(flag);
}

// ---- checkpoint helpers ---------------------------------------------------

using Header = std::map<std::string, std::string>;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string encode_header(const Header& h) {
  std::string out;
  for (const auto& [k, v] : h) out += k + "=" + v + "\n";
  return out;
}

inline Header decode_header(const std::string& text) {
  Header h;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::format_error, "bad header line '" + line + "'");
    h[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return h;
}

inline const std::string& header_get(const Header& h, const std::string& key) {
  const auto it = h.find(key);
  if (it == h.end()) throw Error(Errc::format_error, "checkpoint header lacks '" + key + "'");
  return it->second;
}

inline int header_int(const Header& h, const std::string& key) { return std::stoi(header_get(h, key)); }
inline double header_double(const Header& h, const std::string& key) { return std::stod(header_get(h, key)); }

inline void put(Header& h, const std::string& prefix, const GeneratorConfig& c) {
  h[prefix + ".n_res_blocks"] = std::to_string(c.n_res_blocks);
  h[prefix + ".base_channels"] = std::to_string(c.base_channels);
  h[prefix + ".n_down_up"] = std::to_string(c.n_down_up);
  h[prefix + ".in_channels"] = std::to_string(c.in_channels);
  h[prefix + ".out_channels"] = std::to_string(c.out_channels);
  h[prefix + ".image_size"] = std::to_string(c.image_size);
}

inline void get(const Header& h, const std::string& prefix, GeneratorConfig& c) {
  c.n_res_blocks = header_int(h, prefix + ".n_res_blocks");
  c.base_channels = header_int(h, prefix + ".base_channels");
  c.n_down_up = header_int(h, prefix + ".n_down_up");
  c.in_channels = header_int(h, prefix + ".in_channels");
  c.out_channels = header_int(h, prefix + ".out_channels");
  c.image_size = header_int(h, prefix + ".image_size");
}

inline void put(Header& h, const std::string& prefix, const DiscriminatorConfig& c) {
  h[prefix + ".n_layers"] = std::to_string(c.n_layers);
  h[prefix + ".base_channels"] = std::to_string(c.base_channels);
  h[prefix + ".in_channels"] = std::to_string(c.in_channels);
}

inline void get(const Header& h, const std::string& prefix, DiscriminatorConfig& c) {
  c.n_layers = header_int(h, prefix + ".n_layers");
  c.base_channels = header_int(h, prefix + ".base_channels");
  c.in_channels = header_int(h, prefix + ".in_channels");
}

inline void put(Header& h, const std::string& prefix, const UNetConfig& c) {
  h[prefix + ".n_levels"] = std::to_string(c.n_levels);
  h[prefix + ".base_channels"] = std::to_string(c.base_channels);
  h[prefix + ".in_channels"] = std::to_string(c.in_channels);
  h[prefix + ".out_channels"] = std::to_string(c.out_channels);
  h[prefix + ".image_size"] = std::to_string(c.image_size);
}

inline void get(const Header& h, const std::string& prefix, UNetConfig& c) {
  c.n_levels = header_int(h, prefix + ".n_levels");
  c.base_channels = header_int(h, prefix + ".base_channels");
  c.in_channels = header_int(h, prefix + ".in_channels");
  c.out_channels = header_int(h, prefix + ".out_channels");
  c.image_size = header_int(h, prefix + ".image_size");
}

inline void put(Header& h, const ag::AdamOptions& o) {
  h["adam.lr"] = format_double(o.lr);
  h["adam.beta1"] = format_double(o.beta1);
  h["adam.beta2"] = format_double(o.beta2);
  h["adam.eps"] = format_double(o.eps);
}

inline void get(const Header& h, ag::AdamOptions& o) {
  o.lr = header_double(h, "adam.lr");
  o.beta1 = header_double(h, "adam.beta1");
  o.beta2 = header_double(h, "adam.beta2");
  o.eps = header_double(h, "adam.eps");
}

template <class T>
void append_parameters(ag::CheckpointFile& f, const std::string& prefix, const ParameterSet<T>& ps) {
  for (const auto& e : ps.entries())
    f.records.push_back(ag::make_record<T>(prefix + e.name, e.tensor.shape(), e.tensor.data()));
}

template <class T>
void append_optimizer(ag::CheckpointFile& f, const std::string& prefix, const ag::Adam<T>& opt,
                      const ParameterSet<T>& ps) {
  const auto& names = ps.entries();
  for (std::size_t i = 0; i < names.size(); ++i) {
    f.records.push_back(ag::make_record<T>(prefix + ".m." + names[i].name, names[i].tensor.shape(),
                                           opt.first_moments()[i]));
    f.records.push_back(ag::make_record<T>(prefix + ".v." + names[i].name, names[i].tensor.shape(),
                                           opt.second_moments()[i]));
  }
}

/// Record lookup for a loaded checkpoint.
class RecordIndex {
 public:
  explicit RecordIndex(const ag::CheckpointFile& f) {
    for (const auto& r : f.records)
      if (!index_.emplace(r.name, &r).second) throw Error(Errc::format_error, "duplicate record " + r.name);
  }

  const ag::Record& at(const std::string& name, const ag::Shape& shape) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error(Errc::config_mismatch, "checkpoint lacks record " + name);
    if (it->second->shape != shape)
      throw Error(Errc::config_mismatch, "record " + name + " has shape " + ag::shape_str(it->second->shape) +
                                             ", expected " + ag::shape_str(shape));
    return *it->second;
  }

  template <class T>
  void restore(const std::string& name, std::span<T> dst, const ag::Shape& shape) const {
    const auto& r = at(name, shape);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r.values[i]);
  }

 private:
  std::map<std::string, const ag::Record*> index_;
};

template <class T>
void restore_parameters(const RecordIndex& idx, const std::string& prefix, ParameterSet<T>& ps) {
  for (auto& e : ps.entries()) idx.restore<T>(prefix + e.name, e.tensor.data(), e.tensor.shape());
}

template <class T>
void restore_optimizer(const RecordIndex& idx, const std::string& prefix, ag::Adam<T>& opt, ParameterSet<T>& ps) {
  auto& names = ps.entries();
  for (std::size_t i = 0; i < names.size(); ++i) {
    idx.restore<T>(prefix + ".m." + names[i].name, std::span<T>(opt.first_moments()[i]), names[i].tensor.shape());
    idx.restore<T>(prefix + ".v." + names[i].name, std::span<T>(opt.second_moments()[i]), names[i].tensor.shape());
  }
}

/// Fails with config_mismatch when any of `keys` differs between headers.
inline void check_header_keys(const Header& expected, const Header& found, const std::string& key_prefix) {
  for (const auto& [k, v] : expected) {
    if (k.rfind(key_prefix, 0) != 0) continue;
    const auto it = found.find(k);
    if (it == found.end() || it->second != v)
      throw Error(Errc::config_mismatch, "checkpoint " + k + "=" + (it == found.end() ? "<missing>" : it->second) +
                                             " but model has " + v);
  }
}

// ---- loss logs ------------------------------------------------------------

/// Tab-separated loss log, one line per step after a '#' column header.
class LossLog {
 public:
  LossLog() = default;
  LossLog(const std::filesystem::path& path, const std::vector<std::string>& columns, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw Error(Errc::io_failure, "cannot write " + path.string());
    if (!append) {
      out_ << "#";
      for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "\t" : "") << columns[i];
      out_ << "\n";
    }
  }

  void write(std::size_t step, const std::vector<double>& values) {
    if (!out_.is_open()) return;
    out_ << step;
    char buf[40];
    for (double v : values) {
      std::snprintf(buf, sizeof buf, "\t%.9g", v);
      out_ << buf;
    }
    out_ << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace stemgan::models
