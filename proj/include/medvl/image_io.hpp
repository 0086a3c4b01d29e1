#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medvl/grounding.hpp"

namespace medvl {

/// 8-bit RGB, row-major, channels interleaved.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageSize size() const { return {width, height}; }
  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

RgbImage make_solid_image(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// PNG, JPEG, BMP, PPM and anything else the codec backend recognises.
/// Grayscale input is expanded to three channels. Throws DecodeError.
RgbImage decode_image(std::span<const std::uint8_t> bytes);
RgbImage read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const RgbImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Strict RFC 4648 decoding; whitespace is skipped. Throws DecodeError.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace medvl
