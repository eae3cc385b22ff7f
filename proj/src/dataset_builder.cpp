#include "cola/dataset_builder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cola/error.hpp"

namespace cola {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// Histograms and reports

ClassHistogram::ClassHistogram(const LabelSet& set) : labelset(set.name()) {
  for (const auto& l : set.labels()) {
    points[l.id] = 0;
    frames[l.id] = 0;
  }
}

void ClassHistogram::add_frame(std::span<const LabelId> labels) {
  std::vector<std::uint64_t> counts(65536, 0);
  LabelId lo = 0xFFFF, hi = 0;
  for (LabelId v : labels) {
    ++counts[v];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (labels.empty()) return;
  for (std::size_t id = lo; id <= hi; ++id) {
    if (counts[id] == 0) continue;
    points[static_cast<LabelId>(id)] += counts[id];
    frames[static_cast<LabelId>(id)] += 1;
  }
}

void ClassHistogram::merge(const ClassHistogram& other) {
  if (labelset.empty()) labelset = other.labelset;
  for (const auto& [id, c] : other.points) points[id] += c;
  for (const auto& [id, c] : other.frames) frames[id] += c;
}

std::uint64_t ClassHistogram::total_points() const {
  std::uint64_t sum = 0;
  for (const auto& [_, c] : points) sum += c;
  return sum;
}

void BuildReport::merge(const BuildReport& other) {
  for (const auto& d : other.datasets) {
    auto it = std::find_if(datasets.begin(), datasets.end(),
                           [&](const DatasetCounts& x) { return x.name == d.name; });
    if (it == datasets.end()) {
      datasets.push_back(d);
    } else {
      it->frames += d.frames;
      it->points += d.points;
      it->dropped += d.dropped;
    }
  }
  for (const auto& [name, h] : other.classes) classes[name].merge(h);
  total_points += other.total_points;
  dropped_points += other.dropped_points;
  resumed_frames += other.resumed_frames;
}

namespace {

json histogram_json(const ClassHistogram& h, const LabelSet* set) {
  json classes = json::array();
  for (const auto& [id, c] : h.points) {
    json j{{"id", id}};
    if (set && set->contains(id)) j["name"] = set->label(id).name;
    j["points"] = c;
    auto f = h.frames.find(id);
    j["frames"] = f == h.frames.end() ? 0 : f->second;
    classes.push_back(j);
  }
  return json{{"labelset", h.labelset}, {"total_points", h.total_points()}, {"classes", classes}};
}

}  // namespace

std::string BuildReport::to_json(bool with_timing) const {
  json doc;
  json ds = json::array();
  for (const auto& d : datasets) {
    ds.push_back({{"name", d.name}, {"frames", d.frames}, {"points", d.points}, {"dropped", d.dropped}});
  }
  doc["datasets"] = ds;
  json cls = json::array();
  for (const auto& [_, h] : classes) cls.push_back(histogram_json(h, nullptr));
  doc["classes"] = cls;
  doc["total_points"] = total_points;
  doc["dropped_points"] = dropped_points;
  doc["resumed_frames"] = resumed_frames;
  if (with_timing) doc["wall_seconds"] = wall_seconds;
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Multi-source build

namespace {

struct WorkItem {
  std::size_t manifest;
  std::size_t frame;
};

std::string output_relpath(const DatasetManifest& m, const FrameEntry& f) {
  fs::path p = m.name;
  if (!f.sequence.empty()) p /= f.sequence;
  p /= f.frame + ".cola";
  return p.generic_string();
}

std::string source_frame_id(const FrameEntry& f) {
  return f.sequence.empty() ? f.frame : f.sequence + "/" + f.frame;
}

struct Checkpoint {
  std::map<std::string, std::uint64_t> completed;  // output relpath -> dropped points
};

Checkpoint read_checkpoint(const fs::path& path) {
  Checkpoint cp;
  std::ifstream in(path);
  if (!in) return cp;
  try {
    const json doc = json::parse(in);
    for (const auto& e : doc.at("completed")) {
      cp.completed.emplace(e.at("path").get<std::string>(), e.value("dropped", std::uint64_t{0}));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return cp;
}

void write_checkpoint(const fs::path& path, const Checkpoint& cp, const std::string& failure) {
  json doc;
  json completed = json::array();
  for (const auto& [p, d] : cp.completed) completed.push_back({{"path", p}, {"dropped", d}});
  doc["completed"] = completed;
  doc["failure"] = failure;
  const std::string text = doc.dump(2) + "\n";
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

}  // namespace

BuildReport build_multi_source(std::span<const DatasetManifest> manifests, const LabelingPlan& plan,
                               const BuildOptions& options, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  if (manifests.empty()) throw ValidationError("build: no input manifests");

  std::set<std::string> names;
  for (const auto& m : manifests) {
    if (!names.insert(m.name).second) {
      throw ValidationError("build: dataset name '" + m.name + "' appears twice");
    }
    for (const auto& f : m.frames) plan.mapping_for(m.labelset_of(f));
  }

  std::vector<WorkItem> items;
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    for (std::size_t j = 0; j < manifests[i].frames.size(); ++j) items.push_back({i, j});
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  for (const auto& m : manifests) {
    std::set<fs::path> dirs;
    for (const auto& f : m.frames) dirs.insert((out_dir / output_relpath(m, f)).parent_path());
    for (const auto& d : dirs) {
      fs::create_directories(d, ec);
      if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
    }
  }

  const fs::path checkpoint_path = out_dir / kCheckpointName;
  Checkpoint previous;
  if (options.resume) previous = read_checkpoint(checkpoint_path);

  const unsigned jobs = std::max(1u, options.jobs);
  std::vector<BuildReport> partial(jobs);
  for (auto& r : partial) {
    for (const auto& m : manifests) r.datasets.push_back({m.name, 0, 0, 0});
    for (const auto& [_, mapping] : plan.mappings) {
      r.classes.try_emplace(mapping.target().name(), mapping.target());
    }
  }
  std::vector<FrameEntry> out_frames(items.size());
  Checkpoint done;
  std::mutex done_mutex;
  std::atomic<std::size_t> finished{0};

  try {
    parallel_for(items.size(), jobs, [&](unsigned worker, std::size_t k) {
      const DatasetManifest& m = manifests[items[k].manifest];
      const FrameEntry& f = m.frames[items[k].frame];
      const MappingTable& mapping = plan.mapping_for(m.labelset_of(f));
      const std::string rel = output_relpath(m, f);
      const fs::path out_path = out_dir / rel;

      BuildReport& report = partial[worker];
      DatasetCounts& counts = report.datasets[items[k].manifest];
      ClassHistogram& hist = report.classes[mapping.target().name()];

      std::uint64_t dropped = 0;
      std::uint64_t points = 0;
      auto resumed = previous.completed.find(rel);
      if (resumed != previous.completed.end() && fs::exists(out_path)) {
        ColaFrame frame = read_cola_frame(out_path);
        if (!frame.labels) throw FormatError(out_path.string() + ": resumed frame has no labels");
        hist.add_frame(frame.labels->values);
        dropped = resumed->second;
        points = frame.cloud.size();
        ++report.resumed_frames;
      } else {
        ColaFrame frame = load_frame(m, f);
        LabelArray coarse = remap_labels(*frame.labels, mapping);
        if (!options.channels.reflectivity) frame.cloud.reflectivity.reset();
        if (!options.channels.ring) frame.cloud.ring.reset();
        write_cola_frame(frame.cloud, &coarse, out_path);
        hist.add_frame(coarse.values);
        dropped = frame.cloud.dropped.size();
        points = frame.cloud.size();
      }
      counts.frames += 1;
      counts.points += points;
      counts.dropped += dropped;
      report.total_points += points;
      report.dropped_points += dropped;

      FrameEntry& out = out_frames[k];
      out.sequence = f.sequence.empty() ? m.name : m.name + "/" + f.sequence;
      out.frame = f.frame;
      out.scan = rel;
      out.source_dataset = m.name;
      out.source_frame = source_frame_id(f);
      out.dropped_points = dropped;
      if (!plan.uniform_target()) out.labelset = mapping.target().name();
      {
        std::lock_guard lock(done_mutex);
        done.completed.emplace(rel, dropped);
      }
      const std::size_t n = ++finished;
      if (options.progress) options.progress(n, items.size());
    });
  } catch (const IoError& e) {
    write_checkpoint(checkpoint_path, done, e.what());
    throw;
  }

  BuildReport report;
  for (const auto& r : partial) report.merge(r);

  DatasetManifest out;
  out.name = options.corpus_name;
  out.format = FrameFormat::cola_frame;
  out.root = out_dir;
  const auto uniform = plan.uniform_target();
  out.labelset = uniform ? *uniform : plan.name;
  if (manifests.size() == 1) out.sensor = manifests[0].sensor;
  std::set<std::string> embedded;
  for (const auto& [_, mapping] : plan.mappings) {
    if (embedded.insert(mapping.target().name()).second) {
      out.embedded_labelsets.push_back(mapping.target_ptr());
    }
  }
  for (const auto& m : manifests) {
    const std::string target = plan.mapping_for(m.labelset_of(m.frames.front())).target().name();
    out.sources.push_back({m.name, target, m.name + ".json", m.frames.size()});
  }
  out.frames = std::move(out_frames);
  sort_frames(out.frames);
  write_manifest(out, out_dir / kBuildManifestName);
  fs::remove(checkpoint_path, ec);

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Subsets

std::uint64_t splitmix64_at(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t z = seed + (i + 1) * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::size_t subset_size(std::size_t frame_count, double fraction) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(frame_count)));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(frame_count, 1));
}

SubsetManifest sample_subset(std::size_t frame_count, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("subset fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  if (frame_count == 0) throw ValidationError("cannot sample a subset of an empty frame list");

  std::vector<std::pair<std::uint64_t, std::size_t>> ranked(frame_count);
  for (std::size_t i = 0; i < frame_count; ++i) ranked[i] = {splitmix64_at(seed, i), i};
  const std::size_t k = subset_size(frame_count, fraction);
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end());

  SubsetManifest out{{}, fraction, seed, frame_count, {}};
  out.selected.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.selected.push_back(ranked[i].second);
  std::sort(out.selected.begin(), out.selected.end());
  return out;
}

SubsetManifest sample_subset(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
  SubsetManifest out = sample_subset(manifest.frames.size(), fraction, seed);
  out.parent = manifest.name;
  return out;
}

void write_subset_manifest(const SubsetManifest& subset, const DatasetManifest& parent,
                           const fs::path& path) {
  json doc;
  doc["parent"] = subset.parent.empty() ? parent.name : subset.parent;
  doc["fraction"] = subset.fraction;
  doc["seed"] = subset.seed;
  doc["generator"] = "splitmix64-rank";
  doc["parent_frames"] = subset.parent_frames;
  doc["selected"] = subset.selected;
  json frames = json::array();
  for (std::size_t i : subset.selected) {
    const FrameEntry& f = parent.frames.at(i);
    json j;
    if (!f.sequence.empty()) j["sequence"] = f.sequence;
    j["frame"] = f.frame;
    j["scan"] = f.scan;
    frames.push_back(j);
  }
  doc["frames"] = frames;
  const std::string text = doc.dump(2) + "\n";
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

SubsetManifest read_subset_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const json doc = json::parse(in);
    SubsetManifest s;
    s.parent = doc.at("parent").get<std::string>();
    s.fraction = doc.at("fraction").get<double>();
    s.seed = doc.at("seed").get<std::uint64_t>();
    s.parent_frames = doc.at("parent_frames").get<std::size_t>();
    s.selected = doc.at("selected").get<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < s.selected.size(); ++i) {
      if (s.selected[i] >= s.parent_frames || (i > 0 && s.selected[i] <= s.selected[i - 1])) {
        throw ValidationError(path.string() + ": selected indices must be increasing and < " +
                              std::to_string(s.parent_frames));
      }
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

DatasetManifest apply_subset(const DatasetManifest& parent, const SubsetManifest& subset) {
  if (subset.parent_frames != parent.frames.size()) {
    throw ValidationError("subset was drawn from " + std::to_string(subset.parent_frames) +
                          " frames but the manifest has " + std::to_string(parent.frames.size()));
  }
  DatasetManifest out = parent;
  out.frames.clear();
  for (std::size_t i : subset.selected) out.frames.push_back(parent.frames.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Class statistics

ClassStats compute_class_stats(const DatasetManifest& manifest, const LabelRegistry& registry,
                               const LabelingPlan* plan, unsigned jobs) {
  auto target_of = [&](const std::string& labelset) -> LabelSetPtr {
    if (plan) return plan->mapping_for(labelset).target_ptr();
    return resolve_labelset(manifest, registry, labelset);
  };

  jobs = std::max(1u, jobs);
  struct Partial {
    std::map<std::string, ClassHistogram> histograms;
    std::uint64_t frames = 0;
    std::vector<std::pair<std::size_t, std::string>> unreadable;
  };
  std::vector<Partial> partial(jobs);
  const bool per_frame = std::all_of(manifest.frames.begin(), manifest.frames.end(),
                                     [](const FrameEntry& f) { return !f.labelset.empty(); });
  ClassStats stats;
  if (!(per_frame && !manifest.frames.empty())) {
    const LabelSetPtr set = target_of(manifest.labelset);
    stats.histograms.emplace(set->name(), ClassHistogram(*set));
  }

  parallel_for(manifest.frames.size(), jobs, [&](unsigned worker, std::size_t i) {
    const FrameEntry& f = manifest.frames[i];
    Partial& p = partial[worker];
    try {
      ColaFrame frame = load_frame(manifest, f);
      if (!frame.labels) throw FormatError("frame has no labels");
      const std::string& labelset = manifest.labelset_of(f);
      const LabelSetPtr target = target_of(labelset);
      auto it = p.histograms.try_emplace(target->name(), *target).first;
      if (plan) {
        it->second.add_frame(remap_labels(*frame.labels, plan->mapping_for(labelset)).values);
      } else {
        it->second.add_frame(frame.labels->values);
      }
      ++p.frames;
    } catch (const Error& e) {
      p.unreadable.emplace_back(i, manifest.scan_path(f).string() + ": " + e.what());
    }
  });

  std::vector<std::pair<std::size_t, std::string>> unreadable;
  for (auto& p : partial) {
    for (const auto& [name, h] : p.histograms) {
      auto it = stats.histograms.find(name);
      if (it == stats.histograms.end()) {
        stats.histograms.emplace(name, h);
      } else {
        it->second.merge(h);
      }
    }
    stats.frames_read += p.frames;
    unreadable.insert(unreadable.end(), p.unreadable.begin(), p.unreadable.end());
  }
  std::sort(unreadable.begin(), unreadable.end());
  for (auto& [_, msg] : unreadable) stats.unreadable.push_back(std::move(msg));
  return stats;
}

}  // namespace cola
