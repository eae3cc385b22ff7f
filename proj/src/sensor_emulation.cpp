#include "cola/sensor_emulation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cola/error.hpp"

namespace cola {

KeepPattern::KeepPattern(std::vector<bool> keep) : keep_(std::move(keep)) {
  if (std::none_of(keep_.begin(), keep_.end(), [](bool b) { return b; })) {
    throw ValidationError("keep pattern keeps no ring");
  }
}

std::size_t KeepPattern::kept() const {
  return static_cast<std::size_t>(std::count(keep_.begin(), keep_.end(), true));
}

RingAssignment infer_rings(const PointCloud& cloud, const std::optional<SensorInfo>& sensor) {
  cloud.validate();
  if (cloud.ring) {
    RingAssignment out{*cloud.ring, 0, RingMethod::native};
    const auto max_ring = cloud.ring->empty()
                              ? 0
                              : *std::max_element(cloud.ring->begin(), cloud.ring->end());
    out.fiber_count = sensor ? sensor->fiber_count : max_ring + 1;
    if (!cloud.ring->empty() && max_ring >= out.fiber_count) {
      throw ValidationError("native ring index " + std::to_string(max_ring) +
                            " exceeds the sensor's fiber count " + std::to_string(out.fiber_count));
    }
    return out;
  }
  if (!sensor || sensor->fiber_count <= 0) {
    throw ValidationError(
        "ring inference needs sensor metadata (fiber count and vertical field of view) when the "
        "cloud has no ring channel");
  }
  if (!(sensor->fov_down_deg < sensor->fov_up_deg)) {
    throw ValidationError("sensor vertical field of view is empty");
  }
  if (sensor->fiber_count > 0xFFFF) throw ValidationError("fiber count exceeds 65535");

  const int fibers = sensor->fiber_count;
  const double to_rad = std::numbers::pi / 180.0;
  const double lo = sensor->fov_down_deg * to_rad;
  const double bins_per_rad = fibers / ((sensor->fov_up_deg - sensor->fov_down_deg) * to_rad);

  RingAssignment out{std::vector<std::uint16_t>(cloud.size()), fibers, RingMethod::elevation_binned};
  const float* p = cloud.xyz.data();
  for (std::size_t i = 0; i < cloud.size(); ++i, p += 3) {
    const double x = p[0], y = p[1], z = p[2];
    const double elevation = std::atan2(z, std::hypot(x, y));
    const double bin = std::floor((elevation - lo) * bins_per_rad);
    out.ring_of_point[i] = static_cast<std::uint16_t>(std::clamp(bin, 0.0, double(fibers - 1)));
  }
  return out;
}

KeepPattern make_decimation_pattern(int fiber_count, int stride) {
  if (stride < 1) throw ValidationError("decimation stride must be at least 1");
  if (fiber_count < 1) throw ValidationError("fiber count must be at least 1");
  std::vector<bool> keep(static_cast<std::size_t>(fiber_count));
  for (int i = 0; i < fiber_count; ++i) keep[i] = i % stride == 0;
  return KeepPattern(std::move(keep));
}

Subsampled subsample_rings(const PointCloud& cloud, const LabelArray& labels,
                           const RingAssignment& rings, const KeepPattern& pattern) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (labels.size() != n) {
    throw ValidationError("subsample: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " points");
  }
  if (rings.ring_of_point.size() != n) {
    throw ValidationError("subsample: ring assignment covers " +
                          std::to_string(rings.ring_of_point.size()) + " of " + std::to_string(n) +
                          " points");
  }
  if (pattern.size() != static_cast<std::size_t>(rings.fiber_count)) {
    throw ValidationError("subsample: keep pattern has " + std::to_string(pattern.size()) +
                          " entries for a " + std::to_string(rings.fiber_count) + "-fiber sensor");
  }

  std::vector<int> rank(pattern.size(), -1);
  int next = 0;
  for (std::size_t r = 0; r < pattern.size(); ++r) {
    if (pattern.keeps(r)) rank[r] = next++;
  }

  Subsampled out;
  out.labels.labelset = labels.labelset;
  std::vector<std::uint16_t> new_ring;
  if (cloud.reflectivity) out.cloud.reflectivity.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint16_t r = rings.ring_of_point[i];
    if (r >= rank.size()) {
      throw ValidationError("subsample: ring " + std::to_string(r) + " at point " +
                            std::to_string(i) + " exceeds the fiber count");
    }
    if (rank[r] < 0) continue;
    out.cloud.xyz.insert(out.cloud.xyz.end(), cloud.xyz.begin() + 3 * i, cloud.xyz.begin() + 3 * i + 3);
    if (cloud.reflectivity) out.cloud.reflectivity->push_back((*cloud.reflectivity)[i]);
    new_ring.push_back(static_cast<std::uint16_t>(rank[r]));
    out.labels.values.push_back(labels.values[i]);
  }
  out.cloud.ring = std::move(new_ring);
  return out;
}

SensorInfo emulated_sensor(const SensorInfo& original, const KeepPattern& pattern) {
  SensorInfo out = original;
  out.fiber_count = static_cast<int>(pattern.kept());
  if (!out.model.empty()) out.model += " (" + std::to_string(out.fiber_count) + "-fiber emulation)";
  return out;
}

}  // namespace cola
