#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kdaif/model.hpp"

namespace kdaif {

struct Provenance {
  std::string generator;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> parameters;
};

struct DatasetBundle {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> val;
  std::vector<LabeledExample> test;
  std::vector<bool> noise_mask;  // per train index: label was flipped
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  Provenance provenance;

  // Shapes, label ranges, |val| <= |train| / 4, mask length.
  void validate() const;
  // Hash of every split and the mask.
  std::uint64_t fingerprint() const;
};

// Per-class split proportions; train takes the remainder.
struct SplitFractions {
  double val = 0.15;
  double test = 0.25;
};

struct BlobsParams {
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::size_t dim = 2;
  double separation = 5.0;  // distance between neighbouring class means
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  SplitFractions split;
};

// Isotropic Gaussian clusters; class means on a circle in the first two
// coordinates (on a line when dim = 1).
DatasetBundle gen_blobs(const BlobsParams& params);

// Two interleaving half circles, n points in total (balanced to within one).
DatasetBundle gen_two_moons(std::size_t n, double noise_std, std::uint64_t seed,
                            SplitFractions split = {});

// Stratified split of labelled examples.
DatasetBundle split_examples(std::vector<LabeledExample> examples, std::size_t num_classes,
                             std::uint64_t seed, SplitFractions split, std::string generator);

struct NoiseSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;  // the only mode is uniform flipping to another class
};

// Exactly round(rate * N_train) training labels moved uniformly to one of the
// other K-1 classes; val/test and all features untouched.
DatasetBundle inject_noise(const DatasetBundle& bundle, const NoiseSpec& spec);

// Translates validation features by `shift`.
DatasetBundle shift_validation(const DatasetBundle& bundle, std::span<const double> shift);

struct SplitMetrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

SplitMetrics metrics(const Model& model, std::span<const LabeledExample> split);

// CSV with header f1,...,fd,label.
std::vector<LabeledExample> read_examples_csv(const std::filesystem::path& path);
void write_examples_csv(const std::filesystem::path& path, std::span<const LabeledExample> examples,
                        std::size_t dim);

// Directory with train.csv, val.csv, test.csv, noise_mask.csv, provenance.json.
void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle read_bundle(const std::filesystem::path& dir);

}  // namespace kdaif
