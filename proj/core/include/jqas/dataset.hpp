#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "jqas/random.hpp"
#include "jqas/tensor.hpp"

namespace jqas {

/// Labelled images, NCHW.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t resolution() const { return images.dim(2); }
  void validate() const;
};

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

/// Class templates are mixtures of a shared bank of smooth primitives, so
/// classes generated from the same seed share low-level structure. Class c
/// always has the same template for a given seed, whatever num_classes is.
struct SyntheticConfig {
  std::size_t num_classes = 4;
  std::size_t samples = 1024;
  std::size_t resolution = 8;
  std::size_t channels = 3;
  std::size_t primitives = 12;
  double noise = 0.6;
  int max_shift = 1;
  // Each class is a mixture of this many unrelated templates.
  std::size_t modes_per_class = 1;
  std::uint64_t seed = 0;
  // Samples are drawn from their own stream so that train and held-out sets
  // can share templates.
  std::uint64_t sample_seed = 1;
};

Dataset make_synthetic(const SyntheticConfig& cfg);

/// One CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes.
Dataset load_cifar10_file(const std::filesystem::path& path);
/// data_batch_1..5 (train) or test_batch from a CIFAR-10 binary directory.
Dataset load_cifar10(const std::filesystem::path& dir, bool train);

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};

ChannelStats channel_stats(const Dataset& ds);
void normalize(Dataset& ds, const ChannelStats& stats);

/// Average-pools by an integer factor.
Dataset downsample(const Dataset& ds, std::size_t factor);

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices);
/// Keeps the listed classes and relabels them 0..k-1 in the listed order;
/// num_classes becomes `num_classes` when non-zero, else classes.size().
Dataset class_subset(const Dataset& ds, const std::vector<int>& classes,
                     std::size_t num_classes = 0);
/// Random half split: first half of a seeded permutation is returned first.
std::pair<Dataset, Dataset> split_half(const Dataset& ds, std::uint64_t seed);

/// Consecutive batches, optionally over a shuffled order. A trailing batch
/// with a single sample is dropped (batch statistics need two).
std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, Rng* shuffle = nullptr);

}  // namespace jqas
