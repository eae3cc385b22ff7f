#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cola/taxonomy.hpp"

namespace cola {

// One LiDAR frame. xyz is interleaved (x0, y0, z0, x1, ...), meters, sensor
// frame. Optional channels, when present, hold one value per point.
struct PointCloud {
  std::vector<float> xyz;
  std::optional<std::vector<float>> reflectivity;
  std::optional<std::vector<std::uint16_t>> ring;
  // Indices (in the file as read) of points dropped for non-finite
  // coordinates. Paired label readers drop the same records.
  std::vector<std::uint32_t> dropped;

  std::size_t size() const { return xyz.size() / 3; }
  // Throws ValidationError when a channel length disagrees with size().
  void validate() const;

  bool operator==(const PointCloud&) const = default;
};

// Native SemanticKITTI / KITTI-360 scan: little-endian float32 x, y, z,
// reflectivity per point (16 bytes).
PointCloud read_kitti_bin(const std::filesystem::path& path);
PointCloud parse_kitti_bin(std::span<const std::byte> bytes);

// Native SemanticKITTI label file: one uint32 per point, semantic id in the
// low 16 bits. `paired` is the cloud read from the matching scan.
LabelArray read_kitti_label(const std::filesystem::path& path, const PointCloud& paired,
                            std::string labelset);
LabelArray parse_kitti_label(std::span<const std::byte> bytes, const PointCloud& paired,
                             std::string labelset);

// nuScenes sweep: float32 x, y, z, intensity, ring index (20 bytes).
PointCloud read_nuscenes_bin(const std::filesystem::path& path);
PointCloud parse_nuscenes_bin(std::span<const std::byte> bytes);

// nuScenes lidarseg file: one uint8 label per point.
LabelArray read_nuscenes_label(const std::filesystem::path& path, const PointCloud& paired,
                               std::string labelset);
LabelArray parse_nuscenes_label(std::span<const std::byte> bytes, const PointCloud& paired,
                                std::string labelset);

// Flat little-endian uint16 per point, the prediction layout accepted by eval.
LabelArray read_u16_labels(const std::filesystem::path& path, std::string labelset);
void write_u16_labels(const LabelArray& labels, const std::filesystem::path& path);

// Interchange container. Layout (little-endian):
//   "COLA" | u16 version=1 | u16 flags | u64 point count |
//   f32 xyz[3N] | f32 reflectivity[N]? | u16 ring[N]? | u16 labels[N]? |
//   u32 CRC-32 (IEEE) of the array bytes between header and checksum.
// flags: bit0 reflectivity, bit1 ring, bit2 labels.
namespace cola_frame {
inline constexpr char kMagic[4] = {'C', 'O', 'L', 'A'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint16_t kHasReflectivity = 1u << 0;
inline constexpr std::uint16_t kHasRing = 1u << 1;
inline constexpr std::uint16_t kHasLabels = 1u << 2;
inline constexpr std::size_t kHeaderSize = 16;
inline constexpr std::size_t kTrailerSize = 4;
}  // namespace cola_frame

struct ColaFrame {
  PointCloud cloud;
  std::optional<LabelArray> labels;  // labelset name is not stored in the file
};

std::vector<std::byte> encode_cola_frame(const PointCloud& cloud, const LabelArray* labels);
ColaFrame decode_cola_frame(std::span<const std::byte> bytes);

// Writes to a temporary sibling and renames, so readers never observe a
// partially written frame.
void write_cola_frame(const PointCloud& cloud, const LabelArray* labels,
                      const std::filesystem::path& path);
ColaFrame read_cola_frame(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::byte> bytes);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace cola
