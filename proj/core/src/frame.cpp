#include "cbs/frame.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cbs/error.hpp"

namespace cbs {
namespace {

void check_extent(int height, int width) {
  if (height < 1 || width < 1) {
    throw ValidationError("frame extent must be at least 1x1, got " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
}

}  // namespace

Frame::Frame(int height, int width, double fill) : height_(height), width_(width) {
  check_extent(height, width);
  if (!std::isfinite(fill) || fill < 0.0 || fill > 1.0) {
    throw ValidationError("frame fill value outside [0,1]");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

Frame::Frame(int height, int width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  check_extent(height, width);
  if (pixels_.size() != static_cast<std::size_t>(height) * width * kChannels) {
    throw ShapeError("frame buffer holds " + std::to_string(pixels_.size()) + " values, expected " +
                     std::to_string(static_cast<std::size_t>(height) * width * kChannels));
  }
  for (double v : pixels_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ValidationError("frame value outside [0,1]: " + std::to_string(v));
    }
  }
}

Frame Frame::filled(int height, int width, double r, double g, double b) {
  check_extent(height, width);
  std::vector<double> px(static_cast<std::size_t>(height) * width * kChannels);
  for (std::size_t i = 0; i < px.size(); i += kChannels) {
    px[i] = r;
    px[i + 1] = g;
    px[i + 2] = b;
  }
  return Frame(height, width, std::move(px));
}

ClassMask::ClassMask(int class_id, int height, int width, std::vector<std::uint8_t> mask)
    : class_id_(class_id), height_(height), width_(width), mask_(std::move(mask)) {
  check_extent(height, width);
  if (mask_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("mask buffer size does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  for (auto v : mask_) {
    if (v > 1) throw ValidationError("class mask entries must be 0 or 1");
  }
}

SoftMask::SoftMask(int class_id, int height, int width, std::vector<double> mask)
    : class_id_(class_id), height_(height), width_(width), mask_(std::move(mask)) {
  check_extent(height, width);
  if (mask_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("soft mask buffer size does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  for (double v : mask_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ValidationError("soft mask value outside [0,1]");
    }
  }
}

std::vector<std::string> StyleAssignment::distinct_styles() const {
  std::set<std::string> ids;
  for (const auto& [cls, style] : entries_) ids.insert(style);
  return {ids.begin(), ids.end()};
}

std::uint8_t to_byte(double value) noexcept {
  const double scaled = std::floor(std::clamp(value, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(scaled);
}

double from_byte(std::uint8_t value) noexcept { return value / 255.0; }

Frame quantize(const Frame& frame) {
  std::vector<double> px(frame.pixels().begin(), frame.pixels().end());
  for (double& v : px) v = from_byte(to_byte(v));
  return Frame(frame.height(), frame.width(), std::move(px));
}

Frame resize(const Frame& frame, int height, int width) {
  if (height < 1 || width < 1) throw ValidationError("resize target must be at least 1x1");
  if (frame.same_extent(height, width)) return frame;
  const double sy = static_cast<double>(frame.height()) / height;
  const double sx = static_cast<double>(frame.width()) / width;
  std::vector<double> px(static_cast<std::size_t>(height) * width * Frame::kChannels);
  for (int y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), frame.height() - 1);
    const int y1 = std::min(y0 + 1, frame.height() - 1);
    const double ay = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), frame.width() - 1);
      const int x1 = std::min(x0 + 1, frame.width() - 1);
      const double ax = fx - x0;
      for (int c = 0; c < Frame::kChannels; ++c) {
        const double top = frame.at(y0, x0, c) * (1 - ax) + frame.at(y0, x1, c) * ax;
        const double bot = frame.at(y1, x0, c) * (1 - ax) + frame.at(y1, x1, c) * ax;
        px[(static_cast<std::size_t>(y) * width + x) * Frame::kChannels + c] =
            std::clamp(top * (1 - ay) + bot * ay, 0.0, 1.0);
      }
    }
  }
  return Frame(height, width, std::move(px));
}

}  // namespace cbs
