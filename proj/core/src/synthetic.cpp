#include "puregen/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "puregen/rng.hpp"

namespace puregen::io {

Dataset make_textures(const TextureConfig& config, const std::string& name) {
  if (config.classes < 1 || config.classes > 255) throw ConfigError("textures: classes must be in [1,255]");
  if (config.per_class < 0) throw ConfigError("textures: per_class must be >= 0");
  if (!(config.amplitude_min >= 0.0f && config.amplitude_min <= config.amplitude_max)) {
    throw ConfigError("textures: need 0 <= amplitude_min <= amplitude_max");
  }
  if (!(config.frequency_min >= 0.0f && config.frequency_min <= config.frequency_max)) {
    throw ConfigError("textures: need 0 <= frequency_min <= frequency_max");
  }
  if (config.channels < 1 || config.height < 1 || config.width < 1) throw ConfigError("textures: bad image shape");

  Dataset ds;
  ds.name = name;
  ds.image_shape = {config.channels, config.height, config.width};
  ds.class_count = config.classes;
  std::mt19937_64 rng(derive_seed(config.seed, {0x7E47}));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double band = std::numbers::pi / config.classes;

  for (int n = 0; n < config.per_class; ++n) {
    for (int label = 0; label < config.classes; ++label) {
      const double theta = band * (label + config.orientation_jitter * (2.0 * uni(rng) - 1.0));
      const double freq = config.frequency_min + (config.frequency_max - config.frequency_min) * uni(rng);
      const double phase = 2.0 * std::numbers::pi * uni(rng);
      const double amp = config.amplitude_min + (config.amplitude_max - config.amplitude_min) * uni(rng);
      const double ct = std::cos(theta);
      const double st = std::sin(theta);
      Tensor img(ds.image_shape);
      for (int c = 0; c < config.channels; ++c) {
        const double base = 0.35 + 0.3 * uni(rng);
        const double gain = 0.7 + 0.3 * uni(rng);
        for (int h = 0; h < config.height; ++h) {
          for (int w = 0; w < config.width; ++w) {
            const double wave = std::sin(2.0 * std::numbers::pi * freq * (w * ct + h * st) + phase);
            const double v = base + gain * amp * wave + config.pixel_noise * normal(rng);
            img[(static_cast<std::size_t>(c) * config.height + h) * config.width + w] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(static_cast<std::uint8_t>(label));
    }
  }
  return ds;
}

}  // namespace puregen::io
