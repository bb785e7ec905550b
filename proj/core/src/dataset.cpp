#include "puregen/dataset.hpp"

namespace puregen {

void Dataset::validate() const {
  if (images.size() != labels.size()) {
    throw DataError("dataset '" + name + "': " + std::to_string(images.size()) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (image_shape.size() != 3) throw DataError("dataset '" + name + "': image shape must be (C,H,W)");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != image_shape) {
      throw DataError("dataset '" + name + "': image " + std::to_string(i) + " has shape " +
                      shape_to_string(images[i].shape()));
    }
    for (float v : images[i].data()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw DataError("dataset '" + name + "': image " + std::to_string(i) + " has value outside [0,1]");
      }
    }
    if (labels[i] >= class_count) {
      throw DataError("dataset '" + name + "': label " + std::to_string(labels[i]) + " >= class count " +
                      std::to_string(class_count));
    }
  }
}

Dataset subset(const Dataset& source, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.name = source.name;
  out.image_shape = source.image_shape;
  out.class_count = source.class_count;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.images.push_back(source.images.at(i));
    out.labels.push_back(source.labels.at(i));
  }
  return out;
}

}  // namespace puregen
