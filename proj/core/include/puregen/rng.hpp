#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace puregen {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a root seed and a key path
// (e.g. image index, repetition, stage).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

// Source of standard-normal draws. Langevin and Lyapunov dynamics take one
// of these so tests can observe or replay the noise sequence.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual void fill_normal(std::span<float> out) = 0;
  virtual void fill_normal(std::span<double> out) = 0;
};

class GaussianNoise final : public NoiseSource {
 public:
  explicit GaussianNoise(std::uint64_t seed) : engine_(seed) {}

  void fill_normal(std::span<float> out) override {
    for (float& v : out) v = static_cast<float>(normal_(engine_));
  }
  void fill_normal(std::span<double> out) override {
    for (double& v : out) v = normal_(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace puregen
