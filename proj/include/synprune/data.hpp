#pragma once

// Dataset ingestion and preparation: IDX (MNIST layout) and CIFAR-10 binary
// parsers, deterministic synthetic generators for offline work, train-split
// normalization, and the standard flip/pad-crop augmentation.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "synprune/training.hpp"

namespace synprune {

// IDX pair (big-endian headers, magic 0x803 for images / 0x801 for labels).
// Pixels scale to [0, 1]. Throws std::runtime_error on bad magic, truncation
// (with the byte offset), or an image/label count mismatch.
LabeledSet load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a single-channel set as an IDX pair, quantizing pixels to bytes.
void save_idx(const LabeledSet& set, const std::string& images_path,
              const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records, one label byte then 3072
// channel-major pixels (3x32x32). Throws std::runtime_error when a file's
// length is not a multiple of 3073 or a label byte exceeds 9.
LabeledSet load_cifar10(const std::vector<std::string>& batch_paths);

// Deterministic seven-segment digit images, 1x28x28, balanced classes 0-9
// with position/intensity jitter and background noise. A self-contained
// stand-in for handwritten digits when no dataset files are available.
LabeledSet synthetic_digits(std::size_t count, std::uint32_t seed);

// Two linearly separable 1x10x10 classes (lit top-left vs bottom-right
// quadrant plus noise); the smallest end-to-end smoke dataset.
LabeledSet synthetic_blobs(std::size_t count, std::uint32_t seed);

// Seeded shuffle, then the first count examples (all of them if count == 0
// or count >= size).
LabeledSet subsample(const LabeledSet& set, std::size_t count, std::uint32_t seed);

struct Normalization {
  std::vector<float> mean;   // per channel
  std::vector<float> stdev;  // per channel, floored away from zero
};

// Per-channel statistics over every pixel of the (train) split.
Normalization compute_normalization(const LabeledSet& set);

// x <- (x - mean_c) / stdev_c in place.
void apply_normalization(LabeledSet& set, const Normalization& norm);

// Mirrors image columns. Involution: flip(flip(x)) == x bitwise.
Tensor flip_horizontal(const Tensor& images);

// Zero-pads by pad on all sides, then crops back to the original extents at
// offset (oy, ox) in [0, 2*pad]. Offset (pad, pad) is the identity.
Tensor pad_crop(const Tensor& images, int pad, int oy, int ox);

// Standard train-split augmentation: per image an independent horizontal
// flip with probability 0.5 (when flip is set), then a pad-4-style random
// crop (when pad > 0). Never applied to a test split by the training loop.
AugmentFn make_augment(int pad, bool flip);

}  // namespace synprune
