#pragma once

// On-disk dataset layout:
//   frames/frame_###.png        8-bit RGB
//   labels/label_###.png        8-bit single channel, value = class id
//   flow/fwd_###.bin, bwd_###.bin   "SFLO", u32 w, u32 h, h*w LE f32 (dx,dy) row-major
//   depth/depth_###.bin         "SDEP", u32 w, u32 h, f32 row-major
//   masks/fg_###.png            8-bit single channel foreground flag (0/1)
//   poses.txt                   per frame: 9 rotation floats row-major, 3 translation,
//                               fx fy cx cy
//   meta.txt                    key=value: N, W, H, L, seed
// Frame RGB is quantized to 8 bits at generation time, so write/read
// round-trips are bit-exact.

#include <string>

#include "semflow/scene/scene.hpp"

namespace sf {

void write_dataset(const SyntheticScene& scene, const std::string& dir);
SyntheticScene read_dataset(const std::string& dir);

// 8-bit quantization applied to freshly generated frames (see generate_scene).
inline float quantize8(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return std::round(c * 255.0f) / 255.0f;
}

}  // namespace sf
