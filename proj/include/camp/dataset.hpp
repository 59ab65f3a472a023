#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "camp/batch.hpp"
#include "camp/error.hpp"
#include "camp/tensor.hpp"

namespace camp {

template <std::floating_point T>
struct Dataset {
  Batch<T> train;
  Batch<T> test;
  std::size_t num_classes = 0;
};

// Isotropic Gaussian clusters with centres drawn uniformly in
// [-center_box, center_box]^features. Labels cycle 0..classes-1.
template <std::floating_point T = double>
Batch<T> make_blobs(std::size_t classes, std::size_t samples, std::size_t features, double spread, double center_box,
                    std::uint64_t seed) {
  if (classes < 2 || samples < classes || features == 0) {
    throw UsageError("blobs need >= 2 classes, at least one sample per class and >= 1 feature");
  }
  if (!(spread > 0.0)) throw UsageError("blob spread must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> box(-center_box, center_box);
  std::vector<double> centres(classes * features);
  for (double& c : centres) c = box(rng);
  std::normal_distribution<double> noise(0.0, spread);
  std::vector<T> x(samples * features);
  std::vector<int> y(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t c = i % classes;
    y[i] = static_cast<int>(c);
    for (std::size_t f = 0; f < features; ++f) x[i * features + f] = static_cast<T>(centres[c * features + f] + noise(rng));
  }
  return Batch<T>{Tensor<T>({samples, features}, std::move(x)), std::move(y)};
}

// Two interleaving half circles with Gaussian noise; labels alternate 0/1.
template <std::floating_point T = double>
Batch<T> make_moons(std::size_t samples, double noise, std::uint64_t seed) {
  if (samples < 2) throw UsageError("moons need at least two samples");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, noise > 0.0 ? noise : 1.0);
  std::vector<T> x(samples * 2);
  std::vector<int> y(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const double t = angle(rng);
    const bool inner = i % 2 == 1;
    double px = inner ? 1.0 - std::cos(t) : std::cos(t);
    double py = inner ? 0.5 - std::sin(t) : std::sin(t);
    if (noise > 0.0) {
      px += jitter(rng);
      py += jitter(rng);
    }
    x[2 * i] = static_cast<T>(px);
    x[2 * i + 1] = static_cast<T>(py);
    y[i] = inner ? 1 : 0;
  }
  return Batch<T>{Tensor<T>({samples, 2}, std::move(x)), std::move(y)};
}

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_u32be(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("'" + path + "': truncated IDX header");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

inline std::ifstream open_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return is;
}

inline void check_idx_magic(std::uint32_t magic, const std::string& path) {
  if (magic != kIdxImageMagic && magic != kIdxLabelMagic) {
    throw FormatError("'" + path + "': bad IDX magic " + hex32(magic) + ", expected " + hex32(kIdxImageMagic) +
                      " (images) or " + hex32(kIdxLabelMagic) + " (labels)");
  }
}

}  // namespace detail

// IDX image file (big-endian, magic 0x00000803) as raw byte values shaped (n, 1, rows, cols).
template <std::floating_point T = double>
Tensor<T> read_idx_images(const std::string& path) {
  auto is = detail::open_binary(path);
  const std::uint32_t magic = detail::read_u32be(is, path);
  detail::check_idx_magic(magic, path);
  if (magic != kIdxImageMagic) {
    throw FormatError("'" + path + "': expected image magic " + detail::hex32(kIdxImageMagic) + ", found label magic " +
                      detail::hex32(magic));
  }
  const std::size_t n = detail::read_u32be(is, path);
  const std::size_t rows = detail::read_u32be(is, path);
  const std::size_t cols = detail::read_u32be(is, path);
  std::vector<unsigned char> raw(n * rows * cols);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("'" + path + "': IDX image data shorter than header claims");
  }
  std::vector<T> data(raw.begin(), raw.end());
  return Tensor<T>({n, 1, rows, cols}, std::move(data));
}

// IDX label file (big-endian, magic 0x00000801).
inline std::vector<int> read_idx_labels(const std::string& path) {
  auto is = detail::open_binary(path);
  const std::uint32_t magic = detail::read_u32be(is, path);
  detail::check_idx_magic(magic, path);
  if (magic != kIdxLabelMagic) {
    throw FormatError("'" + path + "': expected label magic " + detail::hex32(kIdxLabelMagic) + ", found image magic " +
                      detail::hex32(magic));
  }
  const std::size_t n = detail::read_u32be(is, path);
  std::vector<unsigned char> raw(n);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n))) {
    throw FormatError("'" + path + "': IDX label data shorter than header claims");
  }
  return std::vector<int>(raw.begin(), raw.end());
}

template <std::floating_point T = double>
Batch<T> load_idx(const std::string& images, const std::string& labels) {
  Tensor<T> x = read_idx_images<T>(images);
  std::vector<int> y = read_idx_labels(labels);
  if (x.dim(0) != y.size()) {
    throw FormatError("IDX image count " + std::to_string(x.dim(0)) + " does not match label count " +
                      std::to_string(y.size()));
  }
  return Batch<T>{std::move(x), std::move(y)};
}

// Numeric CSV; the last column is an integer class label. A first line that
// does not parse as numbers is treated as a header.
template <std::floating_point T = double>
Batch<T> load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::vector<T> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
      if (!numeric) break;
    }
    if (!numeric) {
      if (labels.empty() && width == 0) continue;  // header
      throw FormatError("'" + path + "' line " + std::to_string(line_no) + ": non-numeric value");
    }
    if (row.size() < 2) throw FormatError("'" + path + "' line " + std::to_string(line_no) + ": need features and a label");
    if (width == 0) width = row.size();
    if (row.size() != width) {
      throw FormatError("'" + path + "' line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                        " columns, found " + std::to_string(row.size()));
    }
    const double label = row.back();
    if (label < 0 || label != std::floor(label)) {
      throw FormatError("'" + path + "' line " + std::to_string(line_no) + ": label must be a non-negative integer");
    }
    labels.push_back(static_cast<int>(label));
    for (std::size_t c = 0; c + 1 < row.size(); ++c) values.push_back(static_cast<T>(row[c]));
  }
  if (labels.empty()) throw FormatError("'" + path + "' contains no samples");
  return Batch<T>{Tensor<T>({labels.size(), width - 1}, std::move(values)), std::move(labels)};
}

// Rescale every feature to [0, 1] using its min and max over the batch;
// constant features become 0.
template <std::floating_point T>
void minmax_normalize(Batch<T>& data) {
  const std::size_t n = data.size();
  const std::size_t f = data.sample_size();
  auto x = data.inputs.values();
  for (std::size_t j = 0; j < f; ++j) {
    double lo = x[j], hi = x[j];
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, static_cast<double>(x[i * f + j]));
      hi = std::max(hi, static_cast<double>(x[i * f + j]));
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < n; ++i) {
      x[i * f + j] = range > 0.0 ? static_cast<T>((x[i * f + j] - lo) / range) : T{0};
    }
  }
}

// Seeded shuffle, then the first round(test_fraction * n) samples form the test split.
template <std::floating_point T>
std::pair<Batch<T>, Batch<T>> split(const Batch<T>& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test_fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, data.size() - 1);
  const std::span<const std::size_t> all(idx);
  return {gather(data, all.subspan(n_test)), gather(data, all.first(n_test))};
}

template <std::floating_point T>
std::size_t count_classes(const Batch<T>& data) {
  int m = 0;
  for (int y : data.labels) m = std::max(m, y);
  return static_cast<std::size_t>(m) + 1;
}

enum class DatasetKind { synthetic_blobs, synthetic_moons, idx, csv };

inline std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::synthetic_blobs: return "synthetic-blobs";
    case DatasetKind::synthetic_moons: return "synthetic-moons";
    case DatasetKind::idx: return "idx";
    case DatasetKind::csv: return "csv";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(std::string_view name) {
  for (DatasetKind k : {DatasetKind::synthetic_blobs, DatasetKind::synthetic_moons, DatasetKind::idx, DatasetKind::csv}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown dataset kind '" + std::string(name) +
                    "' (expected synthetic-blobs, synthetic-moons, idx or csv)");
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic_blobs;
  std::size_t classes = 3;  // synthetic-blobs only
  std::size_t samples = 600;
  std::size_t features = 2;  // synthetic-blobs only
  double spread = 1.0;
  double center_box = 5.0;
  double noise = 0.1;  // synthetic-moons only
  std::string images;  // idx
  std::string labels;  // idx
  std::string path;    // csv
  double test_fraction = 0.2;
};

// Build or read the samples, normalise to [0, 1] and split. IDX pixels are
// divided by 255; everything else is min-max scaled per feature over the whole
// set before splitting. `seed` drives generation and the split.
template <std::floating_point T = double>
Dataset<T> load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  Batch<T> all;
  switch (spec.kind) {
    case DatasetKind::synthetic_blobs:
      all = make_blobs<T>(spec.classes, spec.samples, spec.features, spec.spread, spec.center_box, seed);
      break;
    case DatasetKind::synthetic_moons: all = make_moons<T>(spec.samples, spec.noise, seed); break;
    case DatasetKind::idx:
      all = load_idx<T>(spec.images, spec.labels);
      for (T& v : all.inputs.values()) v /= T{255};
      break;
    case DatasetKind::csv: all = load_csv<T>(spec.path); break;
  }
  if (spec.kind != DatasetKind::idx) minmax_normalize(all);
  if (all.size() < 2) throw FormatError("dataset needs at least two samples to split");
  Dataset<T> out;
  out.num_classes = std::max<std::size_t>(count_classes(all), spec.kind == DatasetKind::synthetic_blobs ? spec.classes : 0);
  auto [train, test] = split(all, spec.test_fraction, seed ^ 0x5851F42D4C957F2Dull);
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

}  // namespace camp
