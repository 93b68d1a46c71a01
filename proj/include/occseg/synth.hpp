#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "occseg/grid.hpp"

namespace occseg {

struct ShapeDataset {
  std::vector<BinaryMask> shapes;
  std::vector<int> train;
  std::vector<int> test;
  std::vector<std::string> names;
  int width = 0;
  int height = 0;

  std::vector<BinaryMask> training_shapes() const;
  std::vector<BinaryMask> test_shapes() const;
  void validate() const;
};

/// Crops a mask to its tight bounding box, pads it symmetrically to the
/// target aspect ratio, resamples bilinearly to target_w x target_h and
/// re-binarises at 0.5. An empty mask stays empty.
BinaryMask normalize_shape(const BinaryMask& mask, int target_w, int target_h);

/// Seeded shuffle of all shape indices; the first half (rounded up) trains.
void split_dataset(ShapeDataset& ds, std::uint64_t seed);

/// Every .png/.pgm/.pbm file in the directory, in file-name order.
ShapeDataset load_dataset(const std::filesystem::path& dir, int target_w, int target_h,
                          std::uint64_t split_seed = 0);

BinaryMask flip_horizontal(const BinaryMask& mask);
/// Appends the horizontal mirror of every training shape to the dataset and
/// its training split.
ShapeDataset flip_augment(const ShapeDataset& ds);

/// Concatenates datasets of equal dimensions, keeping each one's split.
ShapeDataset concat_datasets(const std::vector<ShapeDataset>& parts);

enum class ToyShape { cross, square, disk };

/// Centred parametric shapes with jittered size (and arm thickness for
/// crosses). Split with the same seed.
ShapeDataset toy_shapes(ToyShape kind, int width, int height, int count, std::uint64_t seed);

struct SyntheticScene {
  Image image;
  /// Full, unoccluded canvas-sized masks, front to back.
  std::vector<BinaryMask> truth_masks;
  /// Object intensities front to back, then the background.
  std::vector<double> intensities;
  std::vector<int> shape_indices;
  std::vector<std::pair<int, int>> positions;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Draws n_objects test shapes uniformly, places each uniformly so its tile
/// stays inside the canvas, renders with the given intensities and adds
/// clamped Gaussian noise. Placements hiding any object entirely are redrawn.
SyntheticScene synthesize(const ShapeDataset& ds, int n_objects, int canvas_w, int canvas_h,
                          double sigma, std::uint64_t seed,
                          std::optional<std::vector<double>> intensities = std::nullopt);

/// Noise-free rendering: the front-most covering object's intensity, else
/// the background (last entry).
Image render(const std::vector<BinaryMask>& masks, const std::vector<double>& intensities);

/// Visible part of each mask given the depth order.
std::vector<BinaryMask> visible_masks(const std::vector<BinaryMask>& masks);

}  // namespace occseg
