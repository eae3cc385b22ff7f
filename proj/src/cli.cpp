#include "cola/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "cola/dataset_builder.hpp"
#include "cola/error.hpp"
#include "cola/evaluation.hpp"
#include "cola/manifest.hpp"
#include "cola/parallel.hpp"
#include "cola/sensor_emulation.hpp"
#include "cola/strategy.hpp"

#ifndef COLA_DEFAULT_DATA_DIR
#define COLA_DEFAULT_DATA_DIR "data"
#endif

namespace cola {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
  std::string data_dir = COLA_DEFAULT_DATA_DIR;
  unsigned jobs = 0;
  std::uint64_t seed = 0;
  bool verify = false;
  std::string log_level = "info";

  unsigned workers() const { return jobs == 0 ? default_jobs() : jobs; }
};

struct Context {
  Globals g;
  std::ostream* out = nullptr;
  std::shared_ptr<spdlog::logger> log;
  std::unique_ptr<LabelRegistry> registry;

  const LabelRegistry& labels() {
    if (!registry) {
      registry = std::make_unique<LabelRegistry>(load_label_registry(fs::path(g.data_dir) / "labelsets.yaml"));
    }
    return *registry;
  }
  SynonymTable synonyms() const { return load_synonyms(fs::path(g.data_dir) / "synonyms.yaml"); }
  fs::path taxonomy_dir() const { return fs::path(g.data_dir) / "taxonomies"; }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

LabelTaxonomy taxonomy_by_name(Context& ctx, const std::string& name) {
  fs::path path = name;
  if (!(path.has_extension() && fs::is_regular_file(path))) {
    path = ctx.taxonomy_dir() / (name + ".yaml");
    if (!fs::is_regular_file(path)) {
      throw ValidationError("unknown taxonomy '" + name + "' (no file " + path.string() + ")");
    }
  }
  return load_taxonomy(path, ctx.labels());
}

// A strategy name or a taxonomy file.
LabelingPlan plan_by_name(Context& ctx, const std::string& name, const std::vector<std::string>& sources) {
  if (auto s = parse_strategy(name)) {
    return make_plan(*s, ctx.labels(), ctx.synonyms(), sources, ctx.taxonomy_dir());
  }
  return plan_from_taxonomy(taxonomy_by_name(ctx, name));
}

std::vector<std::string> manifest_labelsets(const DatasetManifest& m) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (const auto& f : m.frames) {
    if (seen.insert(m.labelset_of(f)).second) out.push_back(m.labelset_of(f));
  }
  if (out.empty()) out.push_back(m.labelset);
  return out;
}

std::function<void(std::size_t, std::size_t)> progress_logger(Context& ctx, std::string what) {
  auto log = ctx.log;
  return [log, what](std::size_t done, std::size_t total) {
    const std::size_t step = std::max<std::size_t>(1, total / 10);
    if (done == total || done % step == 0) {
      log->info("event=progress task={} done={} total={}", what, done, total);
    }
  };
}

json histogram_json(const ClassHistogram& h, const LabelSet* set) {
  json classes = json::array();
  for (const auto& [id, points] : h.points) {
    json c{{"id", id}};
    if (set && set->contains(id)) c["name"] = set->label(id).name;
    c["points"] = points;
    auto f = h.frames.find(id);
    c["frames"] = f == h.frames.end() ? 0 : f->second;
    classes.push_back(std::move(c));
  }
  return json{{"labelset", h.labelset}, {"total_points", h.total_points()}, {"classes", classes}};
}

LabelSetPtr try_labelset(Context& ctx, const std::vector<LabelSetPtr>& extra, const std::string& name) {
  for (const auto& s : extra) {
    if (s->name() == name) return s;
  }
  return ctx.labels().contains(name) ? ctx.labels().get(name) : nullptr;
}

// Recursively collects files under `dir` keyed by relative path without
// extension.
std::map<std::string, fs::path> files_by_key(const fs::path& dir, const std::set<std::string>& exts) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path& p = e.path();
    if (!exts.empty() && !exts.contains(p.extension().string())) continue;
    fs::path rel = fs::relative(p, dir);
    rel.replace_extension();
    if (!out.emplace(rel.generic_string(), p).second) {
      throw ValidationError("two files share the key '" + rel.generic_string() + "' under " + dir.string());
    }
  }
  return out;
}

// .cola frames, .label SemanticKITTI files (low 16 bits), anything else flat u16.
LabelArray read_any_labels(const fs::path& path, const std::string& labelset) {
  const std::string ext = path.extension().string();
  if (ext == ".cola") {
    ColaFrame f = read_cola_frame(path);
    if (!f.labels) throw FormatError(path.string() + ": frame carries no labels");
    f.labels->labelset = labelset;
    return *f.labels;
  }
  if (ext == ".label") {
    const auto bytes = read_file(path);
    if (bytes.size() % 4 != 0) {
      throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 4");
    }
    LabelArray out{std::vector<LabelId>(bytes.size() / 4), labelset};
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      std::uint32_t v;
      std::memcpy(&v, bytes.data() + 4 * i, 4);
      out.values[i] = static_cast<LabelId>(v & 0xFFFFu);
    }
    return out;
  }
  return read_u16_labels(path, labelset);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  std::vector<std::string> manifests;
  std::string manifest;
  std::string taxonomy;
  std::string out;
  std::string name = "cola";
  bool no_reflectivity = false;
  bool no_ring = false;
  bool resume = false;
};

int do_build(Context& ctx, const std::vector<std::string>& paths, const std::string& taxonomy,
             const BuildArgs& a, const char* task) {
  std::vector<DatasetManifest> manifests;
  std::vector<std::string> sources;
  for (const auto& p : paths) {
    manifests.push_back(load_manifest(p, ctx.labels(), ctx.g.verify));
    for (auto& s : manifest_labelsets(manifests.back())) {
      if (std::find(sources.begin(), sources.end(), s) == sources.end()) sources.push_back(s);
    }
  }
  const LabelingPlan plan = taxonomy.empty() ? identity_plan(ctx.labels(), sources)
                                             : plan_by_name(ctx, taxonomy, sources);
  BuildOptions opt;
  opt.channels.reflectivity = !a.no_reflectivity;
  opt.channels.ring = !a.no_ring;
  opt.jobs = ctx.g.workers();
  opt.resume = a.resume;
  opt.corpus_name = a.name.empty() ? manifests.front().name : a.name;
  opt.progress = progress_logger(ctx, task);
  ctx.log->info("event=start task={} plan={} datasets={} jobs={}", task, plan.name, manifests.size(), opt.jobs);
  const BuildReport report = build_multi_source(manifests, plan, opt, a.out);
  const std::string text = report.to_json() + "\n";
  write_text(fs::path(a.out) / "report.json", text);
  *ctx.out << text;
  ctx.log->info("event=done task={} frames={} points={} dropped={} resumed={} seconds={}", task,
                std::accumulate(report.datasets.begin(), report.datasets.end(), std::uint64_t{0},
                                [](std::uint64_t s, const DatasetCounts& d) { return s + d.frames; }),
                report.total_points, report.dropped_points, report.resumed_frames,
                fixed(report.wall_seconds, 3));
  return kExitOk;
}

struct SubsampleArgs {
  std::string manifest;
  std::string out;
  int stride = 0;
  int fibers = 0;
  bool no_reflectivity = false;
};

int do_subsample(Context& ctx, const SubsampleArgs& a) {
  const DatasetManifest m = load_manifest(a.manifest, ctx.labels(), ctx.g.verify);
  int stride = a.stride;
  if (a.fibers > 0) {
    if (!m.sensor || m.sensor->fiber_count <= 0) {
      throw ValidationError("--fibers needs sensor metadata in the manifest; use --stride");
    }
    if (m.sensor->fiber_count % a.fibers != 0) {
      throw ValidationError(std::to_string(m.sensor->fiber_count) + " fibers cannot be decimated to " +
                            std::to_string(a.fibers));
    }
    stride = m.sensor->fiber_count / a.fibers;
  }
  if (stride <= 0) throw ValidationError("subsample: give --stride or --fibers");

  const fs::path out_dir = a.out;
  std::vector<FrameEntry> frames(m.frames.size());
  std::vector<int> kept_rings(m.frames.size(), 0);
  auto progress = progress_logger(ctx, "subsample");
  std::atomic<std::size_t> done{0};
  parallel_for(m.frames.size(), ctx.g.workers(), [&](unsigned, std::size_t i) {
    const FrameEntry& f = m.frames[i];
    ColaFrame frame = load_frame(m, f);
    if (!frame.labels) throw ValidationError(m.scan_path(f).string() + ": frame carries no labels");
    const RingAssignment rings = infer_rings(frame.cloud, m.sensor);
    const KeepPattern pattern = make_decimation_pattern(rings.fiber_count, stride);
    Subsampled sub = subsample_rings(frame.cloud, *frame.labels, rings, pattern);
    if (a.no_reflectivity) sub.cloud.reflectivity.reset();
    fs::path rel = f.sequence.empty() ? fs::path(f.frame + ".cola") : fs::path(f.sequence) / (f.frame + ".cola");
    fs::create_directories((out_dir / rel).parent_path());
    write_cola_frame(sub.cloud, &sub.labels, out_dir / rel);
    FrameEntry e;
    e.sequence = f.sequence;
    e.frame = f.frame;
    e.scan = rel.generic_string();
    e.source_dataset = f.source_dataset.empty() ? m.name : f.source_dataset;
    e.source_frame = f.sequence.empty() ? f.frame : f.sequence + "/" + f.frame;
    e.labelset = f.labelset;
    e.dropped_points = frame.cloud.dropped.size();
    frames[i] = std::move(e);
    kept_rings[i] = static_cast<int>(pattern.kept());
    progress(++done, m.frames.size());
  });

  DatasetManifest out;
  out.format = FrameFormat::cola_frame;
  out.root = out_dir;
  out.labelset = m.labelset;
  if (m.sensor) {
    out.sensor = emulated_sensor(*m.sensor, make_decimation_pattern(m.sensor->fiber_count, stride));
  }
  out.name = m.name + "-" + std::to_string(out.sensor ? out.sensor->fiber_count : kept_rings.front());
  for (const auto& ls : manifest_labelsets(m)) {
    out.embedded_labelsets.push_back(resolve_labelset(m, ctx.labels(), ls));
  }
  out.frames = std::move(frames);
  sort_frames(out.frames);
  write_manifest(out, out_dir / kBuildManifestName);
  ctx.log->info("event=done task=subsample frames={} stride={} manifest={}", out.frames.size(), stride,
                (out_dir / kBuildManifestName).string());
  return kExitOk;
}

struct SplitArgs {
  std::string manifest;
  double fraction = 0.0;
  std::string out;
};

int do_split(Context& ctx, const SplitArgs& a) {
  const DatasetManifest m = load_manifest(a.manifest, ctx.labels(), ctx.g.verify);
  const SubsetManifest subset = sample_subset(m, a.fraction, ctx.g.seed);
  write_subset_manifest(subset, m, a.out);
  ctx.log->info("event=done task=split parent_frames={} selected={} seed={} out={}", subset.parent_frames,
                subset.selected.size(), subset.seed, a.out);
  return kExitOk;
}

struct StatsArgs {
  std::string manifest;
  std::string taxonomy;
  std::string out;
};

int do_stats(Context& ctx, const StatsArgs& a) {
  const DatasetManifest m = load_manifest(a.manifest, ctx.labels(), ctx.g.verify);
  std::optional<LabelingPlan> plan;
  if (!a.taxonomy.empty()) plan = plan_by_name(ctx, a.taxonomy, manifest_labelsets(m));
  const ClassStats stats = compute_class_stats(m, ctx.labels(), plan ? &*plan : nullptr, ctx.g.workers());

  std::vector<LabelSetPtr> targets;
  if (plan) {
    for (const auto& [_, mp] : plan->mappings) targets.push_back(mp.target_ptr());
  }
  targets.insert(targets.end(), m.embedded_labelsets.begin(), m.embedded_labelsets.end());

  json doc;
  doc["manifest"] = m.name;
  doc["frames"] = m.frames.size();
  doc["frames_read"] = stats.frames_read;
  json hs = json::array();
  for (const auto& [name, h] : stats.histograms) {
    const LabelSetPtr set = try_labelset(ctx, targets, name);
    hs.push_back(histogram_json(h, set.get()));
  }
  doc["histograms"] = hs;
  doc["unreadable"] = stats.unreadable;
  const std::string text = doc.dump(2) + "\n";
  if (a.out.empty()) {
    *ctx.out << text;
  } else {
    write_text(a.out, text);
  }
  for (const auto& u : stats.unreadable) ctx.log->error("event=unreadable_frame detail=\"{}\"", u);
  return stats.unreadable.empty() ? kExitOk : kExitIo;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string coarse;
  std::string pred_labelset;
  std::string gt_labelset;
  std::string report;
  std::string csv;
  bool zero_undefined = false;
};

int do_eval(Context& ctx, const EvalArgs& a) {
  const LabelTaxonomy tax = taxonomy_by_name(ctx, a.coarse);
  const LabelSetPtr coarse = tax.coarse_set;
  auto to_coarse = [&](const std::string& labelset) -> std::optional<MappingTable> {
    if (labelset.empty() || labelset == coarse->name()) return std::nullopt;
    return tax.mapping_for(labelset);
  };

  // Ground truth: a directory of label files or a manifest.
  struct GtItem {
    std::string key;
    fs::path path;
  };
  std::vector<GtItem> gt_items;
  std::optional<DatasetManifest> gt_manifest;
  if (fs::is_regular_file(a.gt) && fs::path(a.gt).extension() == ".json") {
    gt_manifest = load_manifest(a.gt, ctx.labels(), ctx.g.verify);
    for (const auto& f : gt_manifest->frames) {
      gt_items.push_back({f.sequence.empty() ? f.frame : f.sequence + "/" + f.frame, {}});
    }
  } else {
    for (auto& [k, p] : files_by_key(a.gt, {})) gt_items.push_back({k, p});
  }
  const auto preds = files_by_key(a.pred, {});
  for (const auto& g : gt_items) {
    if (!preds.contains(g.key)) throw ValidationError("no prediction for frame '" + g.key + "' under " + a.pred);
  }
  if (preds.size() > gt_items.size()) {
    ctx.log->warn("event=unpaired_predictions count={}", preds.size() - gt_items.size());
  }
  if (gt_items.empty()) throw ValidationError("eval: no ground-truth frames under " + a.gt);

  const std::string pred_set = a.pred_labelset.empty() ? coarse->name() : a.pred_labelset;
  const auto pred_map = to_coarse(pred_set);
  std::optional<MappingTable> gt_dir_map;
  if (!gt_manifest) gt_dir_map = to_coarse(a.gt_labelset);

  const unsigned jobs = ctx.g.workers();
  std::vector<ConfusionMatrix> partial(jobs, ConfusionMatrix(coarse));
  std::vector<std::uint64_t> points(jobs, 0);
  parallel_for(gt_items.size(), jobs, [&](unsigned w, std::size_t i) {
    const GtItem& g = gt_items[i];
    LabelArray gt;
    std::optional<MappingTable> gt_map;
    if (gt_manifest) {
      const FrameEntry& f = gt_manifest->frames[i];
      ColaFrame frame = load_frame(*gt_manifest, f);
      if (!frame.labels) throw ValidationError(gt_manifest->scan_path(f).string() + ": no labels");
      gt = std::move(*frame.labels);
      if (!a.gt_labelset.empty()) gt.labelset = a.gt_labelset;
      gt_map = to_coarse(gt.labelset);
    } else {
      gt = read_any_labels(g.path, a.gt_labelset.empty() ? coarse->name() : a.gt_labelset);
      gt_map = gt_dir_map;
    }
    LabelArray pred = read_any_labels(preds.at(g.key), pred_set);
    if (gt_map) gt = remap_labels(gt, *gt_map);
    if (pred_map) pred = remap_predictions(pred, *pred_map);
    if (pred.size() != gt.size()) {
      throw ValidationError("frame '" + g.key + "': " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(gt.size()) + " points");
    }
    partial[w].accumulate(pred.values, gt.values);
    points[w] += gt.size();
  });
  ConfusionMatrix cm(coarse);
  for (const auto& p : partial) cm.merge(p);
  const std::uint64_t total_points = std::accumulate(points.begin(), points.end(), std::uint64_t{0});

  const auto policy = a.zero_undefined ? UndefinedClasses::zero : UndefinedClasses::exclude;
  const auto ious = iou_per_class(cm);
  const double m = miou(cm, policy);

  json doc;
  doc["taxonomy"] = tax.name;
  doc["labelset"] = coarse->name();
  doc["frames"] = gt_items.size();
  doc["points"] = total_points;
  doc["evaluated_points"] = cm.total();
  doc["undefined_classes"] = a.zero_undefined ? "zero" : "exclude";
  json classes = json::array();
  std::ostringstream csv;
  csv << "id,name,iou,points,tp,fp,fn\n";
  std::ostringstream text;
  text << "class                   IoU     points        TP        FP        FN\n";
  for (const auto& c : ious) {
    const std::string& name = coarse->label(c.id).name;
    json j{{"id", c.id}, {"name", name}};
    j["iou"] = c.iou ? json(*c.iou) : json(nullptr);
    j["points"] = c.tp + c.fn;
    j["tp"] = c.tp;
    j["fp"] = c.fp;
    j["fn"] = c.fn;
    classes.push_back(j);
    csv << c.id << ',' << name << ',' << (c.iou ? fixed(*c.iou, 6) : "") << ',' << c.tp + c.fn << ',' << c.tp << ',' << c.fp << ','
        << c.fn << '\n';
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %6s %10llu %9llu %9llu %9llu\n", name.c_str(),
                  c.iou ? fixed(100.0 * *c.iou, 1).c_str() : "n/a", static_cast<unsigned long long>(c.tp + c.fn),
                  static_cast<unsigned long long>(c.tp),
                  static_cast<unsigned long long>(c.fp), static_cast<unsigned long long>(c.fn));
    text << line;
  }
  text << "mIoU " << fixed(m, 1) << "\n";
  doc["classes"] = classes;
  doc["miou"] = m;
  if (!a.report.empty()) write_text(a.report, doc.dump(2) + "\n");
  if (!a.csv.empty()) write_text(a.csv, csv.str());
  *ctx.out << text.str();
  return kExitOk;
}

struct FuseArgs {
  std::vector<std::string> heads;
  std::string taxonomy;
  std::string out;
  bool raw_logits = false;
};

int do_fuse(Context& ctx, const FuseArgs& a) {
  const LabelTaxonomy tax = taxonomy_by_name(ctx, a.taxonomy);
  struct Head {
    fs::path dir;
    LabelSetPtr set;
  };
  std::vector<Head> heads;
  std::vector<MappingTable> mappings;
  for (const auto& h : a.heads) {
    const auto colon = h.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == h.size()) {
      throw ValidationError("--head expects DIR:LABELSET, got '" + h + "'");
    }
    const std::string ls = h.substr(colon + 1);
    heads.push_back({h.substr(0, colon), ctx.labels().get(ls)});
    mappings.push_back(tax.mapping_for(ls));
  }
  const auto keys = files_by_key(heads[0].dir, {".scores"});
  std::vector<std::string> key_list;
  for (const auto& [k, _] : keys) key_list.push_back(k);

  const fs::path out_dir = a.out;
  parallel_for(key_list.size(), ctx.g.workers(), [&](unsigned, std::size_t i) {
    std::vector<ScoreFrame> frames;
    for (const auto& h : heads) {
      const fs::path p = h.dir / (key_list[i] + ".scores");
      const auto bytes = read_file(p);
      if (bytes.size() % 4 != 0) throw FormatError(p.string() + ": size is not a multiple of 4");
      ScoreFrame f{std::vector<float>(bytes.size() / 4), h.set};
      std::memcpy(f.scores.data(), bytes.data(), bytes.size());
      frames.push_back(std::move(f));
    }
    const LabelArray fused = fuse_multihead(frames, mappings, !a.raw_logits);
    const fs::path p = out_dir / (key_list[i] + ".pred");
    fs::create_directories(p.parent_path());
    write_u16_labels(fused, p);
  });
  ctx.log->info("event=done task=fuse frames={} heads={} out={}", key_list.size(), heads.size(), a.out);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Harmonizes LiDAR segmentation datasets onto shared label sets.", "cola"};
  app.set_config("--config", "", "Read options from a TOML or INI file; command-line flags win");
  app.fallthrough();
  app.require_subcommand(1);

  Context ctx;
  ctx.out = &out;
  Globals& g = ctx.g;
  app.add_option("--data-dir", g.data_dir, "Directory holding labelsets.yaml, synonyms.yaml and taxonomies/")
      ->capture_default_str();
  app.add_option("-j,--jobs", g.jobs, "Worker threads (0 = available parallelism)")->envname("COLA_JOBS");
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_flag("--verify", g.verify, "Check that every file referenced by a manifest exists");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->envname("COLA_LOG_LEVEL")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}))
      ->capture_default_str();

  BuildArgs convert_a, remap_a, build_a;
  convert_a.name = remap_a.name = "";
  auto* convert = app.add_subcommand("convert", "Convert native frames to cola_frame files, labels unchanged");
  convert->add_option("--manifest", convert_a.manifest, "Input manifest")->required();
  convert->add_option("--out", convert_a.out, "Output directory")->required();
  convert->add_flag("--no-reflectivity", convert_a.no_reflectivity, "Drop the reflectivity channel");
  convert->add_flag("--no-ring", convert_a.no_ring, "Drop the ring channel");
  convert->add_flag("--resume", convert_a.resume, "Skip frames recorded in an earlier run's checkpoint");

  auto* remap = app.add_subcommand("remap", "Convert one dataset and relabel it onto a taxonomy");
  remap->add_option("--manifest", remap_a.manifest, "Input manifest")->required();
  remap->add_option("--taxonomy,--strategy", remap_a.taxonomy, "cola7, cola5, cola9, intersection, union, multihead or a taxonomy file")->required();
  remap->add_option("--out", remap_a.out, "Output directory")->required();
  remap->add_flag("--no-reflectivity", remap_a.no_reflectivity, "Drop the reflectivity channel");
  remap->add_flag("--no-ring", remap_a.no_ring, "Drop the ring channel");
  remap->add_flag("--resume", remap_a.resume, "Skip frames recorded in an earlier run's checkpoint");

  SubsampleArgs sub_a;
  auto* subsample = app.add_subcommand("subsample", "Emulate a sensor with fewer fibers by dropping rings");
  subsample->add_option("--manifest", sub_a.manifest, "Input manifest")->required();
  subsample->add_option("--out", sub_a.out, "Output directory")->required();
  auto* stride = subsample->add_option("--stride", sub_a.stride, "Keep ring i when i % stride == 0")
                     ->check(CLI::PositiveNumber);
  subsample->add_option("--fibers", sub_a.fibers, "Target fiber count")->check(CLI::PositiveNumber)->excludes(stride);
  subsample->add_flag("--no-reflectivity", sub_a.no_reflectivity, "Drop the reflectivity channel");

  SplitArgs split_a;
  auto* split = app.add_subcommand("split", "Draw a seeded annotation-budget subset of a manifest");
  split->add_option("--manifest", split_a.manifest, "Input manifest")->required();
  split->add_option("--fraction", split_a.fraction, "Fraction of frames in (0, 1]")->required();
  split->add_option("--out", split_a.out, "Subset manifest to write")->required();

  StatsArgs stats_a;
  auto* stats = app.add_subcommand("stats", "Per-class point and frame counts");
  stats->add_option("--manifest", stats_a.manifest, "Input manifest")->required();
  stats->add_option("--taxonomy,--strategy", stats_a.taxonomy, "Count after relabeling onto this taxonomy");
  stats->add_option("--out", stats_a.out, "JSON file to write (default: standard output)");

  auto* build = app.add_subcommand("build", "Build a multi-source corpus on one labeling strategy");
  build->add_option("--manifests", build_a.manifests, "Input manifests")->required()->delimiter(',');
  build->add_option("--taxonomy,--strategy", build_a.taxonomy, "cola7, cola5, cola9, intersection, union, multihead or a taxonomy file")->required();
  build->add_option("--out", build_a.out, "Output directory")->required();
  build->add_option("--name", build_a.name, "Name of the output corpus")->capture_default_str();
  build->add_flag("--no-reflectivity", build_a.no_reflectivity, "Drop the reflectivity channel");
  build->add_flag("--no-ring", build_a.no_ring, "Drop the ring channel");
  build->add_flag("--resume", build_a.resume, "Skip frames recorded in an earlier run's checkpoint");

  EvalArgs eval_a;
  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth on a coarse label set");
  eval->add_option("--pred", eval_a.pred, "Directory of prediction files")->required();
  eval->add_option("--gt", eval_a.gt, "Directory of label files, or a manifest")->required();
  eval->add_option("--coarse", eval_a.coarse, "Taxonomy name or file defining the scored label set")->required();
  eval->add_option("--pred-labelset", eval_a.pred_labelset, "Label set of the predictions (default: coarse)");
  eval->add_option("--gt-labelset", eval_a.gt_labelset, "Label set of the ground truth (default: coarse, or the manifest's)");
  eval->add_option("--report", eval_a.report, "JSON report to write");
  eval->add_option("--csv", eval_a.csv, "CSV table to write");
  eval->add_flag("--zero-undefined", eval_a.zero_undefined, "Count classes with no support as IoU 0");

  FuseArgs fuse_a;
  auto* fuse = app.add_subcommand("fuse", "Fuse multi-head scores into coarse predictions");
  fuse->add_option("--head", fuse_a.heads, "DIR:LABELSET, one per head")->required();
  fuse->add_option("--taxonomy", fuse_a.taxonomy, "Taxonomy name or file")->required();
  fuse->add_option("--out", fuse_a.out, "Output directory for .pred files")->required();
  fuse->add_flag("--raw-logits", fuse_a.raw_logits, "Add raw scores instead of softmax probabilities");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return kExitUsage;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  ctx.log = std::make_shared<spdlog::logger>("cola", sink);
  ctx.log->set_pattern("%Y-%m-%dT%H:%M:%S.%e level=%l %v");
  ctx.log->set_level(spdlog::level::from_str(g.log_level));

  try {
    if (*convert) return do_build(ctx, {convert_a.manifest}, "", convert_a, "convert");
    if (*remap) return do_build(ctx, {remap_a.manifest}, remap_a.taxonomy, remap_a, "remap");
    if (*build) return do_build(ctx, build_a.manifests, build_a.taxonomy, build_a, "build");
    if (*subsample) return do_subsample(ctx, sub_a);
    if (*split) return do_split(ctx, split_a);
    if (*stats) return do_stats(ctx, stats_a);
    if (*eval) return do_eval(ctx, eval_a);
    if (*fuse) return do_fuse(ctx, fuse_a);
  } catch (const IoError& e) {
    ctx.log->error("event=failed kind=io detail=\"{}\"", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    ctx.log->error("event=failed kind=io detail=\"{}\"", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    ctx.log->error("event=failed kind=validation detail=\"{}\"", e.what());
    return kExitValidation;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cola
