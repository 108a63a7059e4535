#include "cmcdrop/datasets.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "cmcdrop/errors.hpp"
#include "cmcdrop/format.hpp"
#include "cmcdrop/rng.hpp"

namespace cmcdrop {

namespace {

void check_generator_args(std::size_t n, double noise) {
  if (n < 2) throw ConfigError("generator needs n >= 2");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
}

double grid_angle(std::size_t i, std::size_t m, double span, bool include_end) {
  if (include_end) {
    return m == 1 ? 0.0 : span * static_cast<double>(i) / static_cast<double>(m - 1);
  }
  return span * static_cast<double>(i) / static_cast<double>(m);
}

}  // namespace

LabeledDataset make_moons(std::size_t n, double noise, std::uint64_t seed) {
  check_generator_args(n, noise);
  const std::size_t upper = (n + 1) / 2;
  const std::size_t lower = n / 2;

  LabeledDataset ds;
  ds.class_count = 2;
  ds.features.resize(static_cast<Index>(n), 2);
  ds.labels.resize(n);

  Rng rng(seed);
  std::size_t row = 0;
  for (std::size_t i = 0; i < upper; ++i, ++row) {
    const double theta = grid_angle(i, upper, std::numbers::pi, true);
    ds.features(static_cast<Index>(row), 0) = std::cos(theta) + noise * rng.normal();
    ds.features(static_cast<Index>(row), 1) = std::sin(theta) + noise * rng.normal();
    ds.labels[row] = 0;
  }
  for (std::size_t i = 0; i < lower; ++i, ++row) {
    const double theta = grid_angle(i, lower, std::numbers::pi, true);
    ds.features(static_cast<Index>(row), 0) = 1.0 - std::cos(theta) + noise * rng.normal();
    ds.features(static_cast<Index>(row), 1) = 0.5 - std::sin(theta) + noise * rng.normal();
    ds.labels[row] = 1;
  }
  return ds;
}

LabeledDataset make_circles(std::size_t n, double noise, double factor, std::uint64_t seed) {
  check_generator_args(n, noise);
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("circle factor must lie in (0, 1)");
  const std::size_t outer = (n + 1) / 2;
  const std::size_t inner = n / 2;

  LabeledDataset ds;
  ds.class_count = 2;
  ds.features.resize(static_cast<Index>(n), 2);
  ds.labels.resize(n);

  Rng rng(seed);
  std::size_t row = 0;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < outer; ++i, ++row) {
    const double theta = grid_angle(i, outer, two_pi, false);
    ds.features(static_cast<Index>(row), 0) = std::cos(theta) + noise * rng.normal();
    ds.features(static_cast<Index>(row), 1) = std::sin(theta) + noise * rng.normal();
    ds.labels[row] = 0;
  }
  for (std::size_t i = 0; i < inner; ++i, ++row) {
    const double theta = grid_angle(i, inner, two_pi, false);
    ds.features(static_cast<Index>(row), 0) = factor * std::cos(theta) + noise * rng.normal();
    ds.features(static_cast<Index>(row), 1) = factor * std::sin(theta) + noise * rng.normal();
    ds.labels[row] = 1;
  }
  return ds;
}

std::array<LabeledDataset, 3> split_dataset(const LabeledDataset& ds, const SplitSpec& spec) {
  const std::size_t n = static_cast<std::size_t>(ds.size());
  if (ds.labels.size() != n) throw ConfigError("dataset labels do not match feature rows");
  if (spec.train_n + spec.val_n + spec.test_n > n) {
    throw ConfigError("split sizes exceed the dataset size");
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(spec.seed);
  for (std::size_t i = n; i-- > 1;) {
    std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
  }

  std::array<LabeledDataset, 3> out;
  const std::size_t sizes[3] = {spec.train_n, spec.val_n, spec.test_n};
  std::size_t offset = 0;
  for (std::size_t part = 0; part < 3; ++part) {
    auto& d = out[part];
    d.class_count = ds.class_count;
    d.features.resize(static_cast<Index>(sizes[part]), ds.dim());
    d.labels.resize(sizes[part]);
    for (std::size_t i = 0; i < sizes[part]; ++i) {
      const std::size_t src = perm[offset + i];
      d.features.row(static_cast<Index>(i)) = ds.features.row(static_cast<Index>(src));
      d.labels[i] = ds.labels[src];
    }
    offset += sizes[part];
  }
  return out;
}

namespace {

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated IDX file: " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

MnistRaw load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path);
  if (read_be_u32(img, images_path) != 0x00000803u) {
    throw IoError("bad image magic in " + images_path);
  }
  const std::uint32_t n = read_be_u32(img, images_path);
  const std::uint32_t rows = read_be_u32(img, images_path);
  const std::uint32_t cols = read_be_u32(img, images_path);
  if (rows != 28 || cols != 28) {
    throw IoError("expected 28x28 images in " + images_path + ", got " + std::to_string(rows) +
                  "x" + std::to_string(cols));
  }

  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw IoError("cannot open " + labels_path);
  if (read_be_u32(lbl, labels_path) != 0x00000801u) {
    throw IoError("bad label magic in " + labels_path);
  }
  const std::uint32_t n_labels = read_be_u32(lbl, labels_path);
  if (n_labels != n) {
    throw IoError("image count " + std::to_string(n) + " does not match label count " +
                  std::to_string(n_labels));
  }

  MnistRaw raw;
  raw.images.resize(static_cast<Index>(n), 784);
  raw.labels.resize(n);
  std::vector<unsigned char> buf(784);
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), 784);
    if (!img) throw IoError("truncated IDX file: " + images_path);
    for (std::size_t j = 0; j < 784; ++j) {
      raw.images(static_cast<Index>(i), static_cast<Index>(j)) =
          static_cast<double>(buf[j]) / 255.0;
    }
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    unsigned char v;
    lbl.read(reinterpret_cast<char*>(&v), 1);
    if (!lbl) throw IoError("truncated IDX file: " + labels_path);
    if (v > 9) throw IoError("label " + std::to_string(v) + " outside 0-9 in " + labels_path);
    raw.labels[i] = static_cast<int>(v);
  }
  return raw;
}

void write_mnist_idx(const std::vector<std::uint8_t>& image_bytes,
                     const std::vector<std::uint8_t>& label_bytes, std::size_t n,
                     const std::string& images_path, const std::string& labels_path) {
  if (image_bytes.size() != n * 784) throw ConfigError("image byte count must be n*784");
  if (label_bytes.size() != n) throw ConfigError("label byte count must be n");

  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot write " + images_path);
  write_be_u32(img, 0x00000803u);
  write_be_u32(img, static_cast<std::uint32_t>(n));
  write_be_u32(img, 28);
  write_be_u32(img, 28);
  img.write(reinterpret_cast<const char*>(image_bytes.data()),
            static_cast<std::streamsize>(image_bytes.size()));
  if (!img) throw IoError("failed writing " + images_path);

  std::ofstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw IoError("cannot write " + labels_path);
  write_be_u32(lbl, 0x00000801u);
  write_be_u32(lbl, static_cast<std::uint32_t>(n));
  lbl.write(reinterpret_cast<const char*>(label_bytes.data()),
            static_cast<std::streamsize>(label_bytes.size()));
  if (!lbl) throw IoError("failed writing " + labels_path);
}

LabeledDataset to_dataset(MnistRaw raw) {
  LabeledDataset ds;
  ds.features = std::move(raw.images);
  ds.labels = std::move(raw.labels);
  ds.class_count = 10;
  return ds;
}

void write_dataset_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (Index j = 0; j < ds.dim(); ++j) out << "x" << j << ",";
  out << "label\n";
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.dim(); ++j) out << format_double(ds.features(i, j)) << ",";
    out << ds.labels[static_cast<std::size_t>(i)] << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace cmcdrop
