#include "cbs/composite.hpp"

#include <algorithm>
#include <set>

#include "cbs/error.hpp"

namespace cbs {
namespace {

template <typename Mask>
void require_same_extent(const Frame& input, const Frame& styled, const Mask& mask) {
  if (!input.same_extent(styled.height(), styled.width()) ||
      !input.same_extent(mask.height(), mask.width())) {
    throw ShapeError("composite operands differ in extent: input " + std::to_string(input.height()) +
                     "x" + std::to_string(input.width()) + ", styled " +
                     std::to_string(styled.height()) + "x" + std::to_string(styled.width()) +
                     ", mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
}

template <typename Mask>
Frame blend(const Frame& input, const Frame& styled, const Mask& mask) {
  require_same_extent(input, styled, mask);
  const auto in = input.pixels();
  const auto st = styled.pixels();
  const auto m = mask.values();
  std::vector<double> out(in.size());
  for (std::size_t p = 0; p < m.size(); ++p) {
    const double r = m[p];
    for (int c = 0; c < Frame::kChannels; ++c) {
      const std::size_t i = p * Frame::kChannels + c;
      out[i] = std::clamp(r * st[i] + (1.0 - r) * in[i], 0.0, 1.0);
    }
  }
  return Frame(input.height(), input.width(), std::move(out));
}

template <typename Mask>
Frame blend_multi(const Frame& input, const std::map<std::string, Frame>& styled,
                  const std::vector<Mask>& masks, const StyleAssignment& assignment,
                  double coverage_limit) {
  const std::size_t pixels = static_cast<std::size_t>(input.height()) * input.width();
  std::set<int> seen;
  std::vector<double> coverage(pixels, 0.0);
  for (const auto& mask : masks) {
    if (!input.same_extent(mask.height(), mask.width())) {
      throw ShapeError("mask for class " + std::to_string(mask.class_id()) +
                       " does not match the input extent");
    }
    if (!seen.insert(mask.class_id()).second) {
      throw ValidationError("duplicate mask for class " + std::to_string(mask.class_id()));
    }
    const auto v = mask.values();
    for (std::size_t p = 0; p < pixels; ++p) {
      coverage[p] += v[p];
      if (coverage[p] > coverage_limit) {
        throw ValidationError("masks overlap at pixel " + std::to_string(p) + " (class " +
                              std::to_string(mask.class_id()) + ")");
      }
    }
  }

  const auto in = input.pixels();
  std::vector<double> acc(in.size(), 0.0);
  std::fill(coverage.begin(), coverage.end(), 0.0);
  for (const auto& [class_id, style_id] : assignment.entries()) {
    const auto mask_it = std::find_if(masks.begin(), masks.end(),
                                      [&](const Mask& m) { return m.class_id() == class_id; });
    if (mask_it == masks.end()) {
      throw ValidationError("no mask for assigned class " + std::to_string(class_id));
    }
    const auto styled_it = styled.find(style_id);
    if (styled_it == styled.end()) {
      throw ValidationError("no styled frame for style '" + style_id + "' (class " +
                            std::to_string(class_id) + ")");
    }
    const Frame& t = styled_it->second;
    if (!input.same_extent(t.height(), t.width())) {
      throw ShapeError("styled frame '" + style_id + "' does not match the input extent");
    }
    const auto st = t.pixels();
    const auto m = mask_it->values();
    for (std::size_t p = 0; p < pixels; ++p) {
      const double r = m[p];
      coverage[p] += r;
      for (int c = 0; c < Frame::kChannels; ++c) {
        acc[p * Frame::kChannels + c] += r * st[p * Frame::kChannels + c];
      }
    }
  }

  std::vector<double> out(in.size());
  for (std::size_t p = 0; p < pixels; ++p) {
    const double rest = 1.0 - coverage[p];
    for (int c = 0; c < Frame::kChannels; ++c) {
      const std::size_t i = p * Frame::kChannels + c;
      out[i] = std::clamp(acc[i] + rest * in[i], 0.0, 1.0);
    }
  }
  return Frame(input.height(), input.width(), std::move(out));
}

}  // namespace

Frame composite_single(const Frame& input, const Frame& styled, const ClassMask& mask) {
  return blend(input, styled, mask);
}

Frame composite_single(const Frame& input, const Frame& styled, const SoftMask& mask) {
  return blend(input, styled, mask);
}

Frame composite_multi(const Frame& input, const std::map<std::string, Frame>& styled,
                      const std::vector<ClassMask>& masks, const StyleAssignment& assignment) {
  return blend_multi(input, styled, masks, assignment, 1.0);
}

Frame composite_multi(const Frame& input, const std::map<std::string, Frame>& styled,
                      const std::vector<SoftMask>& masks, const StyleAssignment& assignment) {
  // Feathered disjoint masks sum to at most one up to rounding.
  return blend_multi(input, styled, masks, assignment, 1.0 + 1e-9);
}

SoftMask feather_mask(const ClassMask& mask, int radius) {
  if (radius < 0) throw ValidationError("feather radius must be >= 0, got " + std::to_string(radius));
  const int h = mask.height();
  const int w = mask.width();
  std::vector<double> src(mask.values().begin(), mask.values().end());
  if (radius == 0) return SoftMask(mask.class_id(), h, w, std::move(src));

  const double window = 2 * radius + 1;
  std::vector<double> rows(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        sum += src[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
      }
      rows[static_cast<std::size_t>(y) * w + x] = sum / window;
    }
  }
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        sum += rows[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = std::clamp(sum / window, 0.0, 1.0);
    }
  }
  return SoftMask(mask.class_id(), h, w, std::move(out));
}

}  // namespace cbs
