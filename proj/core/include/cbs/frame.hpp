#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cbs {

/// An H x W x 3 image with interleaved RGB values in [0,1].
///
/// Frames are immutable once constructed; every constructor validates that
/// values are finite and inside the unit interval.
class Frame {
 public:
  static constexpr int kChannels = 3;

  Frame() = default;
  Frame(int height, int width, double fill = 0.0);
  Frame(int height, int width, std::vector<double> pixels);

  static Frame filled(int height, int width, double r, double g, double b);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  double at(int y, int x, int c) const noexcept {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  std::span<const double> pixels() const noexcept { return pixels_; }

  bool same_extent(int height, int width) const noexcept {
    return height_ == height && width_ == width;
  }

  friend bool operator==(const Frame&, const Frame&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

/// Binary per-class mask; entries are exactly 0 or 1.
class ClassMask {
 public:
  ClassMask() = default;
  ClassMask(int class_id, int height, int width, std::vector<std::uint8_t> mask);

  int class_id() const noexcept { return class_id_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::uint8_t at(int y, int x) const noexcept {
    return mask_[static_cast<std::size_t>(y) * width_ + x];
  }
  std::span<const std::uint8_t> values() const noexcept { return mask_; }

  friend bool operator==(const ClassMask&, const ClassMask&) = default;

 private:
  int class_id_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> mask_;
};

/// Real-valued mask in [0,1]; produced by feathering a ClassMask.
class SoftMask {
 public:
  SoftMask() = default;
  SoftMask(int class_id, int height, int width, std::vector<double> mask);

  int class_id() const noexcept { return class_id_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  double at(int y, int x) const noexcept {
    return mask_[static_cast<std::size_t>(y) * width_ + x];
  }
  std::span<const double> values() const noexcept { return mask_; }

 private:
  int class_id_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> mask_;
};

/// The user's class -> style mapping. Class ids are unique by construction.
class StyleAssignment {
 public:
  StyleAssignment() = default;
  explicit StyleAssignment(std::map<int, std::string> entries) : entries_(std::move(entries)) {}

  void assign(int class_id, std::string style_id) { entries_[class_id] = std::move(style_id); }
  void clear(int class_id) { entries_.erase(class_id); }

  const std::map<int, std::string>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }
  std::vector<std::string> distinct_styles() const;

  friend bool operator==(const StyleAssignment&, const StyleAssignment&) = default;

 private:
  std::map<int, std::string> entries_;
};

/// 8-bit quantization used at every file and wire boundary (round half up).
std::uint8_t to_byte(double value) noexcept;
double from_byte(std::uint8_t value) noexcept;

/// Snaps every value onto the 8-bit grid so a PNG round trip is exact.
Frame quantize(const Frame& frame);

/// Bilinear resampling (pixel-center aligned) to a new extent.
Frame resize(const Frame& frame, int height, int width);

}  // namespace cbs
