#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbs/frame.hpp"

namespace cbs {

/// 8-bit single-channel raster.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;
};

Frame read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Frame& frame);

/// In-memory encode/decode, used by the streaming service.
std::vector<std::uint8_t> encode_png(const Frame& frame);
Frame decode_png(const std::vector<std::uint8_t>& bytes);

GrayImage read_gray_png(const std::filesystem::path& path);
void write_gray_png(const std::filesystem::path& path, const GrayImage& image);

/// Mask files use 0/255 grayscale; any other value is rejected.
ClassMask read_mask_png(const std::filesystem::path& path, int class_id);
void write_mask_png(const std::filesystem::path& path, const ClassMask& mask);

/// Hex SHA-256 of the 8-bit RGB content plus extent.
std::string content_hash(const Frame& frame);

}  // namespace cbs
