#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "puregen/dataset.hpp"
#include "puregen/rng.hpp"

namespace puregen::test {

// Wraps GaussianNoise and keeps every draw.
class RecordingNoise final : public NoiseSource {
 public:
  explicit RecordingNoise(std::uint64_t seed) : inner_(seed) {}
  void fill_normal(std::span<float> out) override {
    inner_.fill_normal(out);
    sizes.push_back(out.size());
  }
  void fill_normal(std::span<double> out) override {
    inner_.fill_normal(out);
    sizes.push_back(out.size());
  }
  std::vector<std::size_t> sizes;

 private:
  GaussianNoise inner_;
};

inline Tensor random_image(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t(shape);
  for (float& v : t.data()) v = u(rng);
  return t;
}

inline Dataset random_dataset(std::size_t n, const Shape& shape, int classes, std::uint64_t seed) {
  Dataset d{"random", shape, classes, {}, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    d.images.push_back(random_image(shape, rng()));
    d.labels.push_back(static_cast<std::uint8_t>(i % static_cast<std::size_t>(classes)));
  }
  return d;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("puregen_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace puregen::test
