#pragma once

#include <cstdint>

#include "puregen/dataset.hpp"

namespace puregen::io {

// Oriented sinusoidal gratings, one orientation band per class, with random
// frequency, phase, amplitude, per-channel tint and pixel noise.
struct TextureConfig {
  int classes = 4;
  int per_class = 128;
  int channels = 3;
  int height = 8;
  int width = 8;
  float pixel_noise = 0.03f;
  float amplitude_min = 0.15f;
  float amplitude_max = 0.3f;
  float frequency_min = 0.12f;  // cycles per pixel
  float frequency_max = 0.22f;
  // Orientation jitter as a fraction of the class band; > 0.5 makes classes overlap.
  float orientation_jitter = 0.35f;
  std::uint64_t seed = 0;
};

// Images are interleaved by class (0,1,...,J-1,0,1,...) so any prefix is balanced.
Dataset make_textures(const TextureConfig& config, const std::string& name = "textures");

}  // namespace puregen::io
