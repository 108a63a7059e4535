#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cmcdrop/matrix.hpp"

namespace cmcdrop {

struct LabeledDataset {
  Matrix features;          // N x D
  std::vector<int> labels;  // values in [0, class_count)
  int class_count = 2;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
};

struct SplitSpec {
  std::size_t train_n = 0;
  std::size_t val_n = 0;
  std::size_t test_n = 0;
  std::uint64_t seed = 0;
};

// Two interleaving half-circles: upper moon (cos t, sin t) labeled 0,
// lower moon (1 - cos t, 0.5 - sin t) labeled 1, angles on a uniform grid
// over [0, pi], iid Gaussian noise of the given std added per coordinate.
LabeledDataset make_moons(std::size_t n, double noise, std::uint64_t seed);

// Concentric circles: outer radius 1 labeled 0, inner radius `factor`
// labeled 1, uniform angle grids over [0, 2*pi).
LabeledDataset make_circles(std::size_t n, double noise, double factor, std::uint64_t seed);

// Seed-determined random permutation partitioned into train/val/test.
std::array<LabeledDataset, 3> split_dataset(const LabeledDataset& ds, const SplitSpec& spec);

struct MnistRaw {
  Matrix images;            // N x 784, pixel values in [0, 1]
  std::vector<int> labels;  // digits 0-9
};

// Parses the big-endian IDX pair (image magic 0x00000803 with 28x28 rows,
// label magic 0x00000801), flattens to 784 features and scales by 1/255.
MnistRaw load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// Writes the same format from byte images; used by tooling and tests.
void write_mnist_idx(const std::vector<std::uint8_t>& image_bytes,
                     const std::vector<std::uint8_t>& label_bytes, std::size_t n,
                     const std::string& images_path, const std::string& labels_path);

LabeledDataset to_dataset(MnistRaw raw);

// CSV with header x0,x1,...,label.
void write_dataset_csv(const LabeledDataset& ds, const std::string& path);

}  // namespace cmcdrop
