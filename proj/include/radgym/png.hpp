#pragma once

// Minimal PNG encoder (grayscale 8/16-bit, RGB 8-bit). Filter type 0 on every
// row; zlib does the rest.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "radgym/error.hpp"

namespace radgym::png {

namespace detail {

inline void put_be32(std::string& out, std::uint32_t v) {
  out += static_cast<char>(v >> 24);
  out += static_cast<char>(v >> 16);
  out += static_cast<char>(v >> 8);
  out += static_cast<char>(v);
}

inline void chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

/// color_type: 0 grayscale, 2 RGB. `rows` holds the raw scanlines without
/// filter bytes.
inline std::string encode(int width, int height, int bit_depth, int color_type, std::span<const std::uint8_t> rows) {
  const int channels = color_type == 2 ? 3 : 1;
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  if (width <= 0 || height <= 0 || rows.size() != stride * static_cast<std::size_t>(height))
    throw Error(ErrorCode::InvariantViolation, "png buffer does not match dimensions");

  std::string filtered;
  filtered.reserve((stride + 1) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    filtered += '\0';
    filtered.append(reinterpret_cast<const char*>(rows.data()) + stride * static_cast<std::size_t>(y), stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(filtered.size()));
  std::string compressed(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound, reinterpret_cast<const Bytef*>(filtered.data()),
                static_cast<uLong>(filtered.size()), 6) != Z_OK)
    throw Error(ErrorCode::IoError, "zlib compression failed");
  compressed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += static_cast<char>(bit_depth);
  ihdr += static_cast<char>(color_type);
  ihdr += std::string(3, '\0');  // compression, filter, interlace
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", compressed);
  chunk(out, "IEND", "");
  return out;
}

}  // namespace detail

inline std::string encode_gray8(int width, int height, std::span<const std::uint8_t> pixels) {
  return detail::encode(width, height, 8, 0, pixels);
}

inline std::string encode_gray16(int width, int height, std::span<const std::uint16_t> pixels) {
  std::vector<std::uint8_t> be;
  be.reserve(pixels.size() * 2);
  for (auto v : pixels) {
    be.push_back(static_cast<std::uint8_t>(v >> 8));
    be.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  return detail::encode(width, height, 16, 0, be);
}

inline std::string encode_rgb8(int width, int height, std::span<const std::uint8_t> rgb) {
  return detail::encode(width, height, 8, 2, rgb);
}

}  // namespace radgym::png
