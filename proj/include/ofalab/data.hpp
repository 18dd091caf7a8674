#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ofalab/rng.hpp"
#include "ofalab/tensor.hpp"

namespace ofalab {

struct Dataset {
  Tensor images;  // [N,C,H,W], floats (pixels scaled to [0,1], then normalized)
  std::vector<int> labels;
  std::string split;  // "train" | "test"
  int class_count = 10;
  // per-channel stats applied by normalize_* (train-split stats, reused for test)
  std::vector<float> norm_mean, norm_std;

  int size() const { return images.shape.empty() ? 0 : images.shape[0]; }
  int channels() const { return images.shape[1]; }
};

// Big-endian IDX pair (MNIST/FMNIST): image magic 0x00000803 with dims
// (N,28,28), label magic 0x00000801 with dim (N). Bytes -> floats in [0,1].
// Malformed headers/sizes raise DataFormatError naming the offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR binary batches. c10 records: 1 label byte + 3072 pixels (RGB planes,
// row-major). c100 records: coarse + fine label bytes + 3072 pixels; the fine
// label is used.
Dataset load_cifar(const std::vector<std::string>& batch_files, const std::string& variant);

// Computes per-channel mean/std from this (training) split, applies them and
// caches them on the dataset.
void normalize_train(Dataset& train);
// Applies previously computed training stats (test split: no leakage).
void normalize_with(Dataset& ds, const std::vector<float>& mean, const std::vector<float>& std);

struct AugmentPolicy {
  int pad = 0;      // reflect-pad then random crop back to original size
  bool flip = false;  // horizontal flip with p = 0.5
};

// CIFAR train policy: pad-4 reflect + random crop + flip. Identity policy
// returns the batch unchanged. Draws per image: flip, then crop dy, dx.
Tensor augment_batch(const Tensor& batch, const AugmentPolicy& policy, Rng& rng);

// Seeded epoch iteration: a fresh permutation per (seed, epoch) from the
// "shuffle" substream; the last partial batch is kept.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, int batch_size, uint64_t seed, int epoch, bool shuffle);
  // Fills images [n,C,H,W] (n <= batch_size) and labels; false when exhausted.
  bool next(Tensor& images, std::vector<int>& labels);
  int num_batches() const;

 private:
  const Dataset& ds_;
  int batch_size_;
  std::vector<uint32_t> order_;
  size_t pos_ = 0;
};

}  // namespace ofalab
