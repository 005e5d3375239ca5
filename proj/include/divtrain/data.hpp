#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divtrain/model.hpp"

namespace divtrain::data {

struct DatasetBundle {
  Tensor images;                     // [M,C,H,W], pixels in [0,1]
  std::vector<std::int64_t> labels;  // length M
  std::string name;

  std::int64_t size() const { return images.dim(0); }
  std::int64_t classes() const;
  nn::InputShape input_shape() const {
    return {images.dim(1), images.dim(2), images.dim(3)};
  }
};

// Copy of examples [start, start+count).
DatasetBundle slice(const DatasetBundle& d, std::int64_t start, std::int64_t count);
Tensor image_at(const DatasetBundle& d, std::int64_t index);

// IDX containers (big-endian u32 magic 2051/2049, u8 pixels scaled to [0,1]).
DatasetBundle load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const DatasetBundle& d, const std::string& images_path,
              const std::string& labels_path);

// CIFAR-10 binary batches: records of (label u8, 3*32*32 u8 pixels).
DatasetBundle load_cifar10_bin(const std::vector<std::string>& batch_paths);

// Well-separated Gaussian class blobs clipped to [0,1]; a linear model
// separates them essentially perfectly.
DatasetBundle synth_blobs(std::int64_t classes, std::int64_t per_class, nn::InputShape dims,
                          std::uint64_t seed);

// Procedural digit glyphs at 1x28x28 with random shifts, intensity jitter and
// pixel noise. Stands in for handwritten-digit data when no IDX files are
// available.
DatasetBundle synth_digits(std::int64_t per_class, std::uint64_t seed);

struct AugmentConfig {
  std::int64_t shift = 2;  // max crop offset from center, <= pad
  std::int64_t pad = 2;    // reflect padding before cropping
  bool flip = false;
  std::uint64_t seed = 0;
};

// Reflect-pad, randomly crop back to the original size, optionally flip
// horizontally. Labels are preserved.
DatasetBundle augment(const DatasetBundle& batch, const AugmentConfig& cfg);

struct NoiseConfig {
  double epsilon = 0.3;
  double sigma = 0.15;   // epsilon / 2
  double bound = 0.3;    // 2 * sigma, so noise never exceeds epsilon

  static NoiseConfig from_epsilon(double eps) { return {eps, eps / 2.0, eps}; }
};

// Additive truncated-normal pixel noise, clipped to [0,1]; labels unchanged.
DatasetBundle make_noise_dataset(const DatasetBundle& base, const NoiseConfig& cfg,
                                 std::uint64_t seed);

// One-step sign-gradient examples from a frozen model, with per-example
// budgets |N(0, eps/2)| truncated at eps.
DatasetBundle make_adv_dataset(const nn::Model& static_model, const DatasetBundle& base,
                               double eps, std::uint64_t seed);

}  // namespace divtrain::data
