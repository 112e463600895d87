#pragma once

#include <map>
#include <string>
#include <vector>

#include "cbs/frame.hpp"

namespace cbs {

/// U = R * T + (1 - R) * I, per pixel and channel.
///
/// On binary masks every output pixel is bit-identical to the pixel of
/// exactly one input. Throws ShapeError when the extents differ.
Frame composite_single(const Frame& input, const Frame& styled, const ClassMask& mask);
Frame composite_single(const Frame& input, const Frame& styled, const SoftMask& mask);

/// Multi-class compositing:
///   U = sum_c R_c * T_assign(c) + (1 - sum_c R_c) * I  over assigned classes.
///
/// Masks must be pairwise disjoint (soft masks must sum to at most one).
/// Throws ValidationError when an assigned class has no mask or no styled frame.
Frame composite_multi(const Frame& input, const std::map<std::string, Frame>& styled,
                      const std::vector<ClassMask>& masks, const StyleAssignment& assignment);
Frame composite_multi(const Frame& input, const std::map<std::string, Frame>& styled,
                      const std::vector<SoftMask>& masks, const StyleAssignment& assignment);

/// Normalized (2r+1)x(2r+1) box filter with replicate padding.
SoftMask feather_mask(const ClassMask& mask, int radius);

}  // namespace cbs
