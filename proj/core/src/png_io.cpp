#include "cbs/png_io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <array>
#include <cstring>
#include <memory>

#include "cbs/error.hpp"

namespace cbs {
namespace {

struct ImageGuard {
  png_image image{};
  ImageGuard() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~ImageGuard() { png_image_free(&image); }
};

std::vector<std::uint8_t> to_rgb_bytes(const Frame& frame) {
  std::vector<std::uint8_t> bytes(frame.pixels().size());
  const auto px = frame.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) bytes[i] = to_byte(px[i]);
  return bytes;
}

Frame from_rgb_bytes(int height, int width, const std::vector<std::uint8_t>& bytes) {
  std::vector<double> px(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) px[i] = from_byte(bytes[i]);
  return Frame(height, width, std::move(px));
}

std::vector<std::uint8_t> finish_read(ImageGuard& guard, std::uint32_t format, const std::string& where) {
  guard.image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(guard.image));
  if (!png_image_finish_read(&guard.image, nullptr, buffer.data(), 0, nullptr)) {
    throw IoError("cannot decode PNG " + where + ": " + guard.image.message);
  }
  return buffer;
}

}  // namespace

Frame read_png(const std::filesystem::path& path) {
  ImageGuard guard;
  if (!png_image_begin_read_from_file(&guard.image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + guard.image.message);
  }
  const int h = static_cast<int>(guard.image.height);
  const int w = static_cast<int>(guard.image.width);
  auto bytes = finish_read(guard, PNG_FORMAT_RGB, path.string());
  return from_rgb_bytes(h, w, bytes);
}

void write_png(const std::filesystem::path& path, const Frame& frame) {
  ImageGuard guard;
  guard.image.width = static_cast<png_uint_32>(frame.width());
  guard.image.height = static_cast<png_uint_32>(frame.height());
  guard.image.format = PNG_FORMAT_RGB;
  const auto bytes = to_rgb_bytes(frame);
  if (!png_image_write_to_file(&guard.image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + guard.image.message);
  }
}

std::vector<std::uint8_t> encode_png(const Frame& frame) {
  ImageGuard guard;
  guard.image.width = static_cast<png_uint_32>(frame.width());
  guard.image.height = static_cast<png_uint_32>(frame.height());
  guard.image.format = PNG_FORMAT_RGB;
  const auto bytes = to_rgb_bytes(frame);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&guard.image, nullptr, &size, 0, bytes.data(), 0, nullptr)) {
    throw IoError(std::string("cannot size PNG buffer: ") + guard.image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&guard.image, out.data(), &size, 0, bytes.data(), 0, nullptr)) {
    throw IoError(std::string("cannot encode PNG: ") + guard.image.message);
  }
  out.resize(size);
  return out;
}

Frame decode_png(const std::vector<std::uint8_t>& bytes) {
  ImageGuard guard;
  if (!png_image_begin_read_from_memory(&guard.image, bytes.data(), bytes.size())) {
    throw IoError(std::string("cannot decode PNG buffer: ") + guard.image.message);
  }
  const int h = static_cast<int>(guard.image.height);
  const int w = static_cast<int>(guard.image.width);
  auto rgb = finish_read(guard, PNG_FORMAT_RGB, "buffer");
  return from_rgb_bytes(h, w, rgb);
}

GrayImage read_gray_png(const std::filesystem::path& path) {
  ImageGuard guard;
  if (!png_image_begin_read_from_file(&guard.image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + guard.image.message);
  }
  GrayImage out;
  out.height = static_cast<int>(guard.image.height);
  out.width = static_cast<int>(guard.image.width);
  out.values = finish_read(guard, PNG_FORMAT_GRAY, path.string());
  return out;
}

void write_gray_png(const std::filesystem::path& path, const GrayImage& image) {
  if (image.values.size() != static_cast<std::size_t>(image.height) * image.width) {
    throw ShapeError("gray image buffer does not match its extent");
  }
  ImageGuard guard;
  guard.image.width = static_cast<png_uint_32>(image.width);
  guard.image.height = static_cast<png_uint_32>(image.height);
  guard.image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&guard.image, path.c_str(), 0, image.values.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + guard.image.message);
  }
}

ClassMask read_mask_png(const std::filesystem::path& path, int class_id) {
  auto gray = read_gray_png(path);
  for (auto& v : gray.values) {
    if (v != 0 && v != 255) {
      throw IoError("mask " + path.string() + " contains value " + std::to_string(v) +
                    " (expected 0 or 255)");
    }
    v = v == 255 ? 1 : 0;
  }
  return ClassMask(class_id, gray.height, gray.width, std::move(gray.values));
}

void write_mask_png(const std::filesystem::path& path, const ClassMask& mask) {
  GrayImage gray{mask.height(), mask.width(), {}};
  gray.values.reserve(mask.values().size());
  for (auto v : mask.values()) gray.values.push_back(v ? 255 : 0);
  write_gray_png(path, gray);
}

std::string content_hash(const Frame& frame) {
  const auto bytes = to_rgb_bytes(frame);
  std::array<std::uint32_t, 2> extent{static_cast<std::uint32_t>(frame.height()),
                                      static_cast<std::uint32_t>(frame.width())};
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), extent.data(), sizeof(extent)) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

}  // namespace cbs
