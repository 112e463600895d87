#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbs/frame.hpp"
#include "cbs/segmenter.hpp"

namespace cbs {

enum ShapeClass : int { kBackground = 0, kCircle = 1, kSquare = 2, kTriangle = 3 };

/// Class names ordered by index.
const std::vector<std::string>& shape_class_names();

/// One rendered shape. `extent` is the radius for circles, the half side for
/// squares and the circumradius for upright equilateral triangles.
struct ShapeSpec {
  int class_id = kCircle;
  double cx = 0.0;
  double cy = 0.0;
  double extent = 0.0;
  std::array<double, 3> color{};

  /// True when the point (px, py) lies inside the shape. Pixel (x, y) is
  /// sampled at its center (x + 0.5, y + 0.5).
  bool contains(double px, double py) const noexcept;
  /// Radius of a circle around the center that encloses the shape.
  double bounding_radius() const noexcept;
};

struct SyntheticSample {
  Frame image;
  LabelMap labels;
  int sample_id = 0;
  std::uint64_t seed = 0;
  std::array<double, 3> background{};
  std::vector<ShapeSpec> shapes;
};

inline constexpr int kMinDatasetSize = 32;

/// Renders one sample; fully determined by (dataset seed, id, size).
SyntheticSample generate_sample(int sample_id, std::uint64_t seed, int size);
/// `n` samples with ids 0..n-1. Throws ValidationError for n < 1 or size < 32.
std::vector<SyntheticSample> generate_dataset(int n, std::uint64_t seed, int size);

/// Dataset directory: images/<id>.png, labels/<id>.png (class indices) and index.json.
void save_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples,
                  std::uint64_t seed, int size);
std::vector<SyntheticSample> load_dataset(const std::filesystem::path& dir);

std::vector<LabeledFrame> labeled_frames(const std::vector<SyntheticSample>& samples);

}  // namespace cbs
