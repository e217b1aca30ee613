#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "subbag/data_source.hpp"
#include "subbag/rng.hpp"

namespace testing {

inline std::filesystem::path temp_dir() {
#ifdef SUBBAG_TEST_TMP
  std::filesystem::path dir(SUBBAG_TEST_TMP);
#else
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "subbag_tests";
#endif
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string temp_path(const std::string& name) { return (temp_dir() / name).string(); }

inline std::string write_text(const std::string& name, const std::string& text) {
  const auto path = temp_path(name);
  std::ofstream(path, std::ios::binary) << text;
  return path;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Row-major records built from a generator.
inline subbag::MemorySource make_source(std::size_t rows, std::size_t cols,
                                        const std::vector<double>& values) {
  return subbag::MemorySource(values, rows, cols);
}

// Logistic records (y, 1, x) with x ~ N(0,1).
inline std::vector<double> logistic_records(std::size_t n, double b0, double b1,
                                            std::uint64_t seed) {
  subbag::Xoshiro256 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> out;
  out.reserve(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = normal(rng);
    const double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x)));
    out.push_back(rng.uniform() < p ? 1.0 : 0.0);
    out.push_back(1.0);
    out.push_back(x);
  }
  return out;
}

// Same layout with fractional responses in (0.05, 0.95): the logistic
// estimating equations then have a root on every subset, however small.
inline std::vector<double> fractional_logistic_records(std::size_t n, std::uint64_t seed) {
  subbag::Xoshiro256 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> out;
  out.reserve(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(0.05 + 0.9 * rng.uniform());
    out.push_back(1.0);
    out.push_back(normal(rng));
  }
  return out;
}

inline double sample_variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace testing
