#pragma once

#include <vector>

namespace puregen {

// One purification step. Distances are l2 from the current image to the
// clean reference and to the (poisoned) starting image.
struct TrajectoryRecord {
  int step = 0;
  double energy = 0.0;
  double l2_clean = 0.0;
  double l2_poisoned = 0.0;
};

struct TrajectoryLog {
  std::vector<TrajectoryRecord> records;

  bool empty() const noexcept { return records.empty(); }
  std::size_t size() const noexcept { return records.size(); }
};

}  // namespace puregen
