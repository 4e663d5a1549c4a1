#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "erpgs/image.hpp"

namespace erpgs {

struct PngInfo {
  int width = 0;
  int height = 0;
  int channels = 0;   // as stored, before any conversion
  int bit_depth = 0;  // 8 or 16
  std::map<std::string, std::string> text;
};

/// Decodes a PNG into [0,1] doubles with `channels` (1 or 3) output channels.
/// Gray is expanded to RGB, RGB is reduced to luma, alpha is dropped.
Image read_png(const std::filesystem::path& path, int channels, PngInfo* info = nullptr);

PngInfo read_png_info(const std::filesystem::path& path);

/// Writes a 1- or 3-channel image, rounding clamped values to `bit_depth`
/// (8 or 16) levels. `text` entries become tEXt chunks.
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8,
               const std::map<std::string, std::string>& text = {});

/// The value read_png returns for `x` after a write at `bit_depth`.
double quantize(double x, int bit_depth);
Image quantize(const Image& image, int bit_depth);

}  // namespace erpgs
