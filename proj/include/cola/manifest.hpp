#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cola/ingestion.hpp"
#include "cola/taxonomy.hpp"

namespace cola {

enum class FrameFormat { kitti_bin, nuscenes_bin, cola_frame };

std::string_view to_string(FrameFormat format);
// Throws ValidationError for unknown tags; tags of formats that need an
// external converter (waymo_proto, pandaset_pkl) get a pointer to it.
FrameFormat parse_frame_format(std::string_view tag);

struct SensorInfo {
  std::string model;
  int fiber_count = 0;
  double fov_down_deg = 0.0;  // lower edge of the vertical field of view
  double fov_up_deg = 0.0;

  bool operator==(const SensorInfo&) const = default;
};

struct FrameEntry {
  std::string sequence;
  std::string frame;
  std::string scan;   // relative to the manifest root unless absolute
  std::string label;  // empty when labels live inside the scan file
  // Provenance, set on frames produced by a build.
  std::string source_dataset;
  std::string source_frame;
  // Per-frame label set; empty means the manifest's.
  std::string labelset;
  std::uint64_t dropped_points = 0;

  bool operator==(const FrameEntry&) const = default;
};

struct SourceInfo {
  std::string name;
  std::string labelset;  // label set of the built frames
  std::string manifest;
  std::uint64_t frames = 0;

  bool operator==(const SourceInfo&) const = default;
};

struct DatasetManifest {
  std::string name;
  FrameFormat format = FrameFormat::cola_frame;
  std::filesystem::path root;  // absolute after loading
  std::string labelset;
  std::optional<SensorInfo> sensor;
  std::vector<FrameEntry> frames;
  std::vector<SourceInfo> sources;
  // Label sets defined inside the manifest (built corpora carry the sets
  // they were labeled with).
  std::vector<LabelSetPtr> embedded_labelsets;

  std::filesystem::path scan_path(const FrameEntry& frame) const;
  std::filesystem::path label_path(const FrameEntry& frame) const;
  const std::string& labelset_of(const FrameEntry& frame) const;
};

// Orders frames lexicographically by (sequence, frame).
void sort_frames(std::vector<FrameEntry>& frames);

// Parses and validates a manifest. Relative roots resolve against the
// manifest's directory. With `verify`, every referenced file must exist.
DatasetManifest load_manifest(const std::filesystem::path& path, const LabelRegistry& registry,
                              bool verify = false);
DatasetManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir,
                               const LabelRegistry& registry, bool verify = false);

// Looks `name` up among the manifest's embedded sets, then in `registry`.
LabelSetPtr resolve_labelset(const DatasetManifest& manifest, const LabelRegistry& registry,
                             std::string_view name);

// Writes `manifest` as JSON. The root is written relative to the output
// directory when it lies inside it.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Reads one frame in any supported format. Labels carry the frame's label set.
ColaFrame load_frame(const DatasetManifest& manifest, const FrameEntry& frame);

}  // namespace cola
