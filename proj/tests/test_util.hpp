#pragma once

#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("stemgan_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> random_signal(std::size_t n, std::mt19937_64& rng, double amp = 0.5) {
  std::uniform_real_distribution<double> u(-amp, amp);
  std::vector<double> x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

/// Direct O(N^2) DFT bin, the textbook sum.
inline std::complex<double> naive_dft_bin(const std::vector<double>& frame, int k) {
  const int n = static_cast<int>(frame.size());
  std::complex<double> acc = 0.0;
  for (int i = 0; i < n; ++i)
    acc += frame[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
  return acc;
}

}  // namespace testutil
