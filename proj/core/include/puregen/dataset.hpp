#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "puregen/tensor.hpp"

namespace puregen {

// Labeled image collection. Images are (C,H,W) with values in [0,1].
struct Dataset {
  std::string name;
  Shape image_shape;
  int class_count = 0;
  std::vector<Tensor> images;
  std::vector<std::uint8_t> labels;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }

  // Throws DataError on count/shape/label/range violations.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Rows of `source` at `indices`, in that order.
Dataset subset(const Dataset& source, const std::vector<std::size_t>& indices);

}  // namespace puregen
