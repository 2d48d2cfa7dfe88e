#pragma once

#include <filesystem>

#include "ntk/tensor.hpp"

namespace ntk {

struct Dataset {
  Tensor train_x;  // [N_train, ...]
  std::vector<int> train_y;
  Tensor test_x;  // [N_test, ...]
  std::vector<int> test_y;
  int class_count = 0;
  std::string name;
};

// Gaussian blobs in [0,1]^d around per-class means. For C=2 the means sit at
// 0.5 +- (margin/2) u along one deterministic unit direction, so they are
// exactly `margin` apart; for C>2 each class gets its own seeded direction.
Dataset gen_blobs(int n_train, int n_test, int classes, int d, uint64_t seed,
                  double margin = 0.3, double sigma = 0.05);

// Two interleaved spiral arms in [0,1]^2.
Dataset gen_spirals(int n_train, int n_test, uint64_t seed, double noise = 0.01);

// Two-class 3x32x32 images: oriented sinusoidal gratings (horizontal vs.
// vertical) with random frequency, phase, contrast and pixel noise. Serves
// as a drop-in image dataset when no CIFAR-10 binaries are available.
Dataset gen_gratings(int n_train, int n_test, uint64_t seed, double noise = 0.1);

// CIFAR-10 binary batches (3073-byte records: label + 3072 RGB-plane bytes,
// pixels scaled to [0,1]). `classes` filters and remaps labels (e.g. {3,5}
// becomes {0,1}); n_train/n_test are class-balanced deterministic subsets.
Dataset load_cifar10_bin(const std::filesystem::path& dir, int n_train, int n_test,
                         const std::vector<int>& classes, uint64_t seed);

// Indices of a class-balanced subset of size per_class * (number of classes),
// sampled without replacement, deterministic per seed.
std::vector<int> balanced_subset(const std::vector<int>& labels, int class_count,
                                 int per_class, uint64_t seed);

// Rows of X (and labels) at the given indices.
Tensor take_rows(const Tensor& X, const std::vector<int>& idx);
std::vector<int> take_labels(const std::vector<int>& labels, const std::vector<int>& idx);

}  // namespace ntk
