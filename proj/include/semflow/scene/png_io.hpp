#pragma once

// Minimal PNG codec: 8-bit grayscale / RGB, non-interlaced. Enough for the
// dataset layout; zlib does the heavy lifting.

#include <cstdint>
#include <string>
#include <vector>

namespace sf {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

void write_png(const std::string& path, const std::uint8_t* pixels, int width,
               int height, int channels);
PngImage read_png(const std::string& path);

}  // namespace sf
