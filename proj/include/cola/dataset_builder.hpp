#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cola/manifest.hpp"
#include "cola/parallel.hpp"
#include "cola/strategy.hpp"
#include "cola/taxonomy.hpp"

namespace cola {

// Per-class point counts and the number of frames in which each class occurs.
struct ClassHistogram {
  std::string labelset;
  std::map<LabelId, std::uint64_t> points;
  std::map<LabelId, std::uint64_t> frames;

  ClassHistogram() = default;
  // Starts with a zero entry for every label of `set`.
  explicit ClassHistogram(const LabelSet& set);

  void add_frame(std::span<const LabelId> labels);
  void merge(const ClassHistogram& other);
  std::uint64_t total_points() const;

  bool operator==(const ClassHistogram&) const = default;
};

struct ChannelOptions {
  bool reflectivity = true;
  bool ring = true;
};

struct BuildOptions {
  ChannelOptions channels;
  unsigned jobs = default_jobs();
  // Reuse frames listed in the checkpoint of an earlier, aborted build.
  bool resume = false;
  std::string corpus_name = "cola";
  // Called from worker threads after each frame.
  std::function<void(std::size_t done, std::size_t total)> progress;
};

struct DatasetCounts {
  std::string name;
  std::uint64_t frames = 0;
  std::uint64_t points = 0;   // points written
  std::uint64_t dropped = 0;  // non-finite points removed at ingestion

  bool operator==(const DatasetCounts&) const = default;
};

struct BuildReport {
  std::vector<DatasetCounts> datasets;            // in input order
  std::map<std::string, ClassHistogram> classes;  // by output label set
  std::uint64_t total_points = 0;
  std::uint64_t dropped_points = 0;
  std::uint64_t resumed_frames = 0;
  double wall_seconds = 0.0;

  // Element-wise sum; datasets are matched by name.
  void merge(const BuildReport& other);
  // JSON text; wall time is left out unless requested so that reports of
  // identical builds compare equal.
  std::string to_json(bool with_timing = false) const;
};

inline constexpr const char* kBuildManifestName = "manifest.json";
inline constexpr const char* kCheckpointName = "build.checkpoint.json";

// Converts every frame of every manifest into a cola_frame under `out_dir`,
// relabeled through `plan`, and writes `out_dir/manifest.json`. On an I/O
// failure the frames finished so far are recorded in the checkpoint file
// and the error is rethrown; a later call with `resume` skips them.
BuildReport build_multi_source(std::span<const DatasetManifest> manifests, const LabelingPlan& plan,
                               const BuildOptions& options, const std::filesystem::path& out_dir);

// Annotation-budget subset of a manifest's frames.
struct SubsetManifest {
  std::string parent;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::size_t parent_frames = 0;
  std::vector<std::size_t> selected;  // strictly increasing frame indices
};

// SplitMix64: the i-th output (i from 0) of the generator seeded with `seed`.
std::uint64_t splitmix64_at(std::uint64_t seed, std::uint64_t i);

// max(1, round(fraction * frame_count)), half away from zero.
std::size_t subset_size(std::size_t frame_count, double fraction);

// Frame i gets the key splitmix64_at(seed, i); frames are ranked by
// (key, index) and the first subset_size() are kept. Smaller fractions under
// one seed therefore select subsets of larger ones.
SubsetManifest sample_subset(std::size_t frame_count, double fraction, std::uint64_t seed);
SubsetManifest sample_subset(const DatasetManifest& manifest, double fraction, std::uint64_t seed);

void write_subset_manifest(const SubsetManifest& subset, const DatasetManifest& parent,
                           const std::filesystem::path& path);
SubsetManifest read_subset_manifest(const std::filesystem::path& path);
// The parent manifest restricted to the selected frames.
DatasetManifest apply_subset(const DatasetManifest& parent, const SubsetManifest& subset);

struct ClassStats {
  std::map<std::string, ClassHistogram> histograms;  // by label set
  std::uint64_t frames_read = 0;
  std::vector<std::string> unreadable;  // "path: reason"
};

// Counts labels over every frame. With `plan`, labels are first remapped to
// its targets. Unreadable frames are recorded and skipped.
ClassStats compute_class_stats(const DatasetManifest& manifest, const LabelRegistry& registry,
                               const LabelingPlan* plan = nullptr, unsigned jobs = default_jobs());

}  // namespace cola
