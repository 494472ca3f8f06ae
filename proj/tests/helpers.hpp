#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "kdaif/data.hpp"
#include "kdaif/model.hpp"

namespace kdaif::test {

inline MlpSpec mlp(std::vector<std::size_t> sizes, Activation a = Activation::tanh) {
  return MlpSpec{std::move(sizes), a};
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

inline std::vector<LabeledExample> random_examples(std::size_t n, std::size_t dim, std::size_t classes,
                                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<LabeledExample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].x.resize(dim);
    for (auto& x : out[i].x) x = g(rng);
    out[i].y = i % classes;
  }
  return out;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("kdaif_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline BlobsParams small_blobs(std::uint64_t seed, double separation = 5.0) {
  BlobsParams p;
  p.classes = 3;
  p.per_class = 40;
  p.dim = 2;
  p.separation = separation;
  p.seed = seed;
  return p;
}

}  // namespace kdaif::test
