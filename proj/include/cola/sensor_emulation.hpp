#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cola/ingestion.hpp"
#include "cola/manifest.hpp"

namespace cola {

enum class RingMethod { native, elevation_binned };

struct RingAssignment {
  std::vector<std::uint16_t> ring_of_point;  // each < fiber_count
  int fiber_count = 0;
  RingMethod method = RingMethod::native;
};

class KeepPattern {
 public:
  // Throws ValidationError when no ring is kept.
  explicit KeepPattern(std::vector<bool> keep);

  std::size_t size() const { return keep_.size(); }
  bool keeps(std::size_t ring) const { return keep_[ring]; }
  std::size_t kept() const;
  const std::vector<bool>& mask() const { return keep_; }

 private:
  std::vector<bool> keep_;
};

// Uses the native ring channel when the cloud has one. Otherwise bins the
// elevation angle atan2(z, hypot(x, y)) into fiber_count equal-width bins
// over the sensor's vertical field of view; ring 0 is the lowest bin and
// points outside the field of view clamp to the nearest edge ring.
RingAssignment infer_rings(const PointCloud& cloud, const std::optional<SensorInfo>& sensor);

// keep[i] = (i % stride == 0). Throws ValidationError for stride 0.
KeepPattern make_decimation_pattern(int fiber_count, int stride);

struct Subsampled {
  PointCloud cloud;  // ring channel holds the rank of the ring among kept rings
  LabelArray labels;
};

// Keeps the points whose ring is kept, in their original order. Labels and
// reflectivity are filtered with them. The output ring channel is renumbered
// 0..kept-1, so the result is itself a valid kept-fiber cloud.
Subsampled subsample_rings(const PointCloud& cloud, const LabelArray& labels,
                           const RingAssignment& rings, const KeepPattern& pattern);

// Sensor metadata of the emulated lower-resolution device.
SensorInfo emulated_sensor(const SensorInfo& original, const KeepPattern& pattern);

}  // namespace cola
