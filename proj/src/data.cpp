#include "kdaif/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>
#include <sstream>

#include "kdaif/error.hpp"

namespace kdaif {
namespace {

using json = nlohmann::json;

std::uint64_t fnv(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv_examples(std::uint64_t h, std::span<const LabeledExample> xs) {
  for (const auto& z : xs) {
    h = fnv(h, z.x.data(), z.x.size() * sizeof(double));
    const std::uint64_t y = z.y;
    h = fnv(h, &y, sizeof y);
  }
  return h;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_doubles(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += format_double(v[i]);
  }
  return s;
}

}  // namespace

void DatasetBundle::validate() const {
  if (num_classes < 2) throw InputError("bundle needs at least 2 classes");
  if (train.empty()) throw InputError("bundle has no training data");
  if (noise_mask.size() != train.size()) throw InputError("noise mask length differs from N_train");
  if (val.size() > train.size() / 4) {
    throw InputError("validation split too large: N_val must be <= N_train / 4");
  }
  for (const auto* split : {&train, &val, &test}) {
    for (const auto& z : *split) {
      if (z.x.size() != dim) throw InputError("example dimension differs from bundle dimension");
      if (z.y >= num_classes) throw InputError("label out of range");
    }
  }
}

std::uint64_t DatasetBundle::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  h = fnv_examples(h, train);
  h = fnv_examples(h, val);
  h = fnv_examples(h, test);
  for (bool b : noise_mask) {
    const unsigned char c = b ? 1 : 0;
    h = fnv(h, &c, 1);
  }
  return h;
}

DatasetBundle split_examples(std::vector<LabeledExample> examples, std::size_t num_classes,
                             std::uint64_t seed, SplitFractions split, std::string generator) {
  if (num_classes < 2) throw InputError("need at least 2 classes");
  if (!(split.val >= 0.0 && split.test >= 0.0 && split.val + split.test < 1.0)) {
    throw InputError("split fractions must be nonnegative and sum below 1");
  }
  std::vector<std::vector<LabeledExample>> by_class(num_classes);
  for (auto& z : examples) {
    if (z.y >= num_classes) throw InputError("label out of range");
    by_class[z.y].push_back(std::move(z));
  }
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  DatasetBundle b;
  b.num_classes = num_classes;
  for (auto& group : by_class) {
    std::shuffle(group.begin(), group.end(), rng);
    const auto n = group.size();
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * split.val));
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * split.test));
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_val) {
        b.val.push_back(std::move(group[i]));
      } else if (i < n_val + n_test) {
        b.test.push_back(std::move(group[i]));
      } else {
        b.train.push_back(std::move(group[i]));
      }
    }
  }
  while (!b.val.empty() && b.val.size() > b.train.size() / 4) {
    b.train.push_back(std::move(b.val.back()));
    b.val.pop_back();
  }
  if (b.train.empty()) throw InputError("split left no training data");
  b.dim = b.train.front().x.size();
  b.noise_mask.assign(b.train.size(), false);
  b.provenance.generator = std::move(generator);
  b.provenance.seed = seed;
  b.provenance.parameters["split_val"] = format_double(split.val);
  b.provenance.parameters["split_test"] = format_double(split.test);
  b.validate();
  return b;
}

DatasetBundle gen_blobs(const BlobsParams& p) {
  if (p.classes < 2) throw InputError("blobs need at least 2 classes");
  if (p.per_class < 4) throw InputError("blobs need at least 4 points per class");
  if (p.dim == 0) throw InputError("blobs need a positive dimension");
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double k = static_cast<double>(p.classes);
  const double radius = p.separation / (2.0 * std::sin(std::numbers::pi / k));
  std::vector<LabeledExample> all;
  all.reserve(p.classes * p.per_class);
  for (std::size_t c = 0; c < p.classes; ++c) {
    std::vector<double> mu(p.dim, 0.0);
    if (p.dim == 1) {
      mu[0] = static_cast<double>(c) * p.separation;
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / k;
      mu[0] = radius * std::cos(angle);
      mu[1] = radius * std::sin(angle);
    }
    for (std::size_t i = 0; i < p.per_class; ++i) {
      LabeledExample z{std::vector<double>(p.dim), c};
      for (std::size_t d = 0; d < p.dim; ++d) z.x[d] = mu[d] + p.noise_std * gauss(rng);
      all.push_back(std::move(z));
    }
  }
  auto b = split_examples(std::move(all), p.classes, p.seed, p.split, "blobs");
  auto& params = b.provenance.parameters;
  params["classes"] = std::to_string(p.classes);
  params["per_class"] = std::to_string(p.per_class);
  params["dim"] = std::to_string(p.dim);
  params["separation"] = format_double(p.separation);
  params["noise_std"] = format_double(p.noise_std);
  return b;
}

DatasetBundle gen_two_moons(std::size_t n, double noise_std, std::uint64_t seed,
                            SplitFractions split) {
  if (n < 8) throw InputError("two moons need at least 8 points");
  if (!(noise_std >= 0.0)) throw InputError("noise_std must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n0 = (n + 1) / 2;
  const std::size_t n1 = n - n0;
  std::vector<LabeledExample> all;
  all.reserve(n);
  for (std::size_t i = 0; i < n0; ++i) {
    const double t = std::numbers::pi * static_cast<double>(i) / static_cast<double>(n0 - 1);
    all.push_back({{std::cos(t) + noise_std * gauss(rng), std::sin(t) + noise_std * gauss(rng)}, 0});
  }
  for (std::size_t i = 0; i < n1; ++i) {
    const double t = std::numbers::pi * static_cast<double>(i) / static_cast<double>(n1 - 1);
    all.push_back({{1.0 - std::cos(t) + noise_std * gauss(rng),
                    0.5 - std::sin(t) + noise_std * gauss(rng)},
                   1});
  }
  auto b = split_examples(std::move(all), 2, seed, split, "moons");
  b.provenance.parameters["n"] = std::to_string(n);
  b.provenance.parameters["noise_std"] = format_double(noise_std);
  return b;
}

DatasetBundle inject_noise(const DatasetBundle& bundle, const NoiseSpec& spec) {
  if (bundle.num_classes < 2) throw InputError("label noise needs at least 2 classes");
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) throw InputError("noise rate must lie in [0, 1)");
  DatasetBundle out = bundle;
  const std::size_t n = out.train.size();
  const auto flips = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(n)));
  if (flips == 0) return out;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> pick(0, out.num_classes - 2);
  for (std::size_t k = 0; k < flips; ++k) {
    auto& z = out.train[order[k]];
    const std::size_t r = pick(rng);
    z.y = r < z.y ? r : r + 1;
    out.noise_mask[order[k]] = true;
  }
  out.provenance.parameters["noise_rate"] = format_double(spec.rate);
  out.provenance.parameters["noise_seed"] = std::to_string(spec.seed);
  return out;
}

DatasetBundle shift_validation(const DatasetBundle& bundle, std::span<const double> shift) {
  if (shift.size() != bundle.dim) throw InputError("shift dimension differs from feature dimension");
  DatasetBundle out = bundle;
  for (auto& z : out.val) {
    for (std::size_t d = 0; d < shift.size(); ++d) z.x[d] += shift[d];
  }
  out.provenance.parameters["val_shift"] = join_doubles(shift);
  return out;
}

SplitMetrics metrics(const Model& model, std::span<const LabeledExample> split) {
  if (split.empty()) throw InputError("metrics over an empty split");
  std::size_t correct = 0;
  double loss = 0.0;
  for (const auto& z : split) {
    const SoftLabel p = forward(model, z.x);
    if (p.argmax() == z.y) ++correct;
    loss += loss_ce(z.y, p);
  }
  const double n = static_cast<double>(split.size());
  return {static_cast<double>(correct) / n, loss / n};
}

std::vector<LabeledExample> read_examples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": missing header");
  std::size_t cols = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (cols < 2 || line.substr(line.rfind(',') + 1).find("label") != 0) {
    throw InputError(path.string() + ": header must be f1,...,fd,label");
  }
  std::vector<LabeledExample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != cols) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(cols) + " columns");
    }
    LabeledExample z;
    for (std::size_t c = 0; c + 1 < cols; ++c) {
      char* end = nullptr;
      const double v = std::strtod(cells[c].c_str(), &end);
      if (end == cells[c].c_str() || *end != '\0' || !std::isfinite(v)) {
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cells[c] + "'");
      }
      z.x.push_back(v);
    }
    char* end = nullptr;
    const long y = std::strtol(cells.back().c_str(), &end, 10);
    if (end == cells.back().c_str() || *end != '\0' || y < 0) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": bad label '" + cells.back() + "'");
    }
    z.y = static_cast<std::size_t>(y);
    out.push_back(std::move(z));
  }
  return out;
}

void write_examples_csv(const std::filesystem::path& path, std::span<const LabeledExample> examples,
                        std::size_t dim) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (std::size_t d = 0; d < dim; ++d) out << 'f' << (d + 1) << ',';
  out << "label\n";
  for (const auto& z : examples) {
    for (double v : z.x) out << format_double(v) << ',';
    out << z.y << '\n';
  }
}

void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  bundle.validate();
  std::filesystem::create_directories(dir);
  write_examples_csv(dir / "train.csv", bundle.train, bundle.dim);
  write_examples_csv(dir / "val.csv", bundle.val, bundle.dim);
  write_examples_csv(dir / "test.csv", bundle.test, bundle.dim);
  {
    std::ofstream mask(dir / "noise_mask.csv", std::ios::binary);
    mask << "index,flipped\n";
    for (std::size_t i = 0; i < bundle.noise_mask.size(); ++i) {
      mask << i << ',' << (bundle.noise_mask[i] ? 1 : 0) << '\n';
    }
  }
  json prov;
  prov["schema_version"] = 1;
  prov["generator"] = bundle.provenance.generator;
  prov["seed"] = bundle.provenance.seed;
  prov["num_classes"] = bundle.num_classes;
  prov["dim"] = bundle.dim;
  prov["parameters"] = bundle.provenance.parameters;
  prov["counts"] = {{"train", bundle.train.size()}, {"val", bundle.val.size()}, {"test", bundle.test.size()}};
  std::ofstream(dir / "provenance.json", std::ios::binary) << prov.dump(2) << '\n';
}

DatasetBundle read_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("data directory " + dir.string() + " not found");
  std::ifstream pin(dir / "provenance.json");
  if (!pin) throw InputError(dir.string() + ": missing provenance.json");
  json prov;
  try {
    prov = json::parse(pin);
  } catch (const json::exception& e) {
    throw InputError(dir.string() + "/provenance.json: " + e.what());
  }
  DatasetBundle b;
  b.train = read_examples_csv(dir / "train.csv");
  b.val = read_examples_csv(dir / "val.csv");
  b.test = read_examples_csv(dir / "test.csv");
  b.num_classes = prov.at("num_classes").get<std::size_t>();
  b.dim = prov.at("dim").get<std::size_t>();
  b.provenance.generator = prov.at("generator").get<std::string>();
  b.provenance.seed = prov.at("seed").get<std::uint64_t>();
  b.provenance.parameters = prov.at("parameters").get<std::map<std::string, std::string>>();
  b.noise_mask.assign(b.train.size(), false);
  std::ifstream mask(dir / "noise_mask.csv");
  if (!mask) throw InputError(dir.string() + ": missing noise_mask.csv");
  std::string line;
  std::getline(mask, line);
  while (std::getline(mask, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const auto idx = std::stoul(line.substr(0, comma));
    if (idx >= b.noise_mask.size()) throw InputError("noise mask index out of range");
    b.noise_mask[idx] = line.substr(comma + 1) == "1";
  }
  b.validate();
  return b;
}

}  // namespace kdaif
