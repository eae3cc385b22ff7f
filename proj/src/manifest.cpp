#include "cola/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cola/error.hpp"

namespace cola {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view to_string(FrameFormat format) {
  switch (format) {
    case FrameFormat::kitti_bin: return "kitti_bin";
    case FrameFormat::nuscenes_bin: return "nuscenes_bin";
    case FrameFormat::cola_frame: return "cola_frame";
  }
  return "unknown";
}

FrameFormat parse_frame_format(std::string_view tag) {
  if (tag == "kitti_bin") return FrameFormat::kitti_bin;
  if (tag == "nuscenes_bin") return FrameFormat::nuscenes_bin;
  if (tag == "cola_frame") return FrameFormat::cola_frame;
  if (tag == "waymo_proto" || tag == "waymo_tfrecord" || tag == "pandaset_pkl" ||
      tag == "pandaset") {
    throw ValidationError("format '" + std::string(tag) +
                          "' is not read natively; convert the dataset to cola_frame files with "
                          "an external converter (see docs/converters.md) and use format "
                          "'cola_frame'");
  }
  throw ValidationError("unknown frame format '" + std::string(tag) +
                        "' (expected kitti_bin, nuscenes_bin or cola_frame)");
}

fs::path DatasetManifest::scan_path(const FrameEntry& frame) const {
  fs::path p = frame.scan;
  return p.is_absolute() ? p : root / p;
}

fs::path DatasetManifest::label_path(const FrameEntry& frame) const {
  if (frame.label.empty()) return {};
  fs::path p = frame.label;
  return p.is_absolute() ? p : root / p;
}

const std::string& DatasetManifest::labelset_of(const FrameEntry& frame) const {
  return frame.labelset.empty() ? labelset : frame.labelset;
}

void sort_frames(std::vector<FrameEntry>& frames) {
  std::stable_sort(frames.begin(), frames.end(), [](const FrameEntry& a, const FrameEntry& b) {
    if (a.sequence != b.sequence) return a.sequence < b.sequence;
    return a.frame < b.frame;
  });
}

namespace {

std::string get_string(const json& obj, const char* key, const std::string& context,
                       bool required = true) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) throw ParseError(context + ": missing '" + key + "'");
    return {};
  }
  if (!it->is_string()) throw ParseError(context + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

LabelSetPtr parse_embedded_labelset(const std::string& name, const json& node) {
  const std::string ctx = "embedded label set '" + name + "'";
  if (!node.is_object() || !node.contains("labels") || !node["labels"].is_object()) {
    throw ParseError(ctx + ": expected {\"ignore\": [...], \"labels\": {id: name}}");
  }
  std::set<LabelId> ignore;
  if (node.contains("ignore")) {
    for (const auto& v : node["ignore"]) {
      if (!v.is_number_unsigned() || v.get<std::uint64_t>() > 0xFFFF) {
        throw ParseError(ctx + ": ignore ids must be integers in [0, 65535]");
      }
      ignore.insert(v.get<LabelId>());
    }
  }
  std::vector<std::pair<LabelId, std::string>> labels;
  for (const auto& [key, value] : node["labels"].items()) {
    unsigned long id = 0;
    try {
      std::size_t used = 0;
      id = std::stoul(key, &used);
      if (used != key.size() || id > 0xFFFF) throw std::out_of_range(key);
    } catch (const std::exception&) {
      throw ParseError(ctx + ": label id '" + key + "' is not an integer in [0, 65535]");
    }
    if (!value.is_string()) throw ParseError(ctx + ": label names must be strings");
    labels.emplace_back(static_cast<LabelId>(id), value.get<std::string>());
  }
  return std::make_shared<const LabelSet>(LabelSet::from_pairs(name, labels, ignore));
}

json labelset_json(const LabelSet& set) {
  json labels = json::object();
  for (const auto& l : set.labels()) labels[std::to_string(l.id)] = l.name;
  return json{{"ignore", std::vector<LabelId>(set.ignore_ids().begin(), set.ignore_ids().end())},
              {"labels", labels}};
}

}  // namespace

namespace {

DatasetManifest parse_manifest_impl(std::string_view json_text, const fs::path& base_dir,
                                    const LabelRegistry& registry, bool verify) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("manifest: top level must be an object");

  DatasetManifest m;
  m.name = get_string(doc, "name", "manifest");
  const std::string ctx = "manifest '" + m.name + "'";
  m.format = parse_frame_format(get_string(doc, "format", ctx));
  fs::path root = get_string(doc, "root", ctx, false);
  if (root.empty()) root = ".";
  m.root = (root.is_absolute() ? root : base_dir / root).lexically_normal();
  // "/a/." normalizes to "/a/"; drop the trailing separator.
  if (!m.root.has_filename() && m.root.has_parent_path() && m.root != m.root.root_path()) {
    m.root = m.root.parent_path();
  }
  m.labelset = get_string(doc, "labelset", ctx);

  if (doc.contains("labelsets")) {
    if (!doc["labelsets"].is_object()) throw ParseError(ctx + ": 'labelsets' must be an object");
    for (const auto& [name, node] : doc["labelsets"].items()) {
      try {
        m.embedded_labelsets.push_back(parse_embedded_labelset(name, node));
      } catch (const ValidationError& e) {
        throw ValidationError(ctx + ": " + e.what());
      }
    }
  }
  auto known = [&](const std::string& name) {
    return registry.contains(name) ||
           std::any_of(m.embedded_labelsets.begin(), m.embedded_labelsets.end(),
                       [&](const LabelSetPtr& s) { return s->name() == name; });
  };

  if (doc.contains("sensor") && !doc["sensor"].is_null()) {
    const json& s = doc["sensor"];
    SensorInfo info;
    info.model = get_string(s, "model", ctx + " sensor", false);
    if (!s.contains("fiber_count") || !s["fiber_count"].is_number_integer() ||
        s["fiber_count"].get<int>() <= 0) {
      throw ParseError(ctx + ": sensor.fiber_count must be a positive integer");
    }
    info.fiber_count = s["fiber_count"].get<int>();
    const json& fov = s.contains("vertical_fov_deg") ? s["vertical_fov_deg"] : json();
    if (!fov.is_array() || fov.size() != 2 || !fov[0].is_number() || !fov[1].is_number()) {
      throw ParseError(ctx + ": sensor.vertical_fov_deg must be [down, up] in degrees");
    }
    info.fov_down_deg = fov[0].get<double>();
    info.fov_up_deg = fov[1].get<double>();
    if (!(info.fov_down_deg < info.fov_up_deg)) {
      throw ValidationError(ctx + ": sensor vertical field of view is empty");
    }
    m.sensor = info;
  }

  if (!doc.contains("frames") || !doc["frames"].is_array()) {
    throw ParseError(ctx + ": missing 'frames' list");
  }
  for (const auto& f : doc["frames"]) {
    if (!f.is_object()) throw ParseError(ctx + ": frame entries must be objects");
    FrameEntry e;
    e.scan = get_string(f, "scan", ctx + " frame");
    e.label = get_string(f, "label", ctx + " frame", false);
    e.sequence = get_string(f, "sequence", ctx + " frame", false);
    e.frame = get_string(f, "frame", ctx + " frame", false);
    if (e.frame.empty()) e.frame = fs::path(e.scan).stem().string();
    e.source_dataset = get_string(f, "source_dataset", ctx + " frame", false);
    e.source_frame = get_string(f, "source_frame", ctx + " frame", false);
    e.labelset = get_string(f, "labelset", ctx + " frame", false);
    if (f.contains("dropped_points")) e.dropped_points = f["dropped_points"].get<std::uint64_t>();
    if (m.format != FrameFormat::cola_frame && e.label.empty()) {
      throw ValidationError(ctx + ": frame '" + e.scan + "' has no label file");
    }
    if (!e.labelset.empty() && !known(e.labelset)) {
      throw ValidationError(ctx + ": frame '" + e.scan + "' uses unknown label set '" +
                            e.labelset + "'");
    }
    m.frames.push_back(std::move(e));
  }
  if (m.frames.empty()) throw ValidationError(ctx + ": frame list is empty");

  const bool per_frame = std::all_of(m.frames.begin(), m.frames.end(),
                                     [](const FrameEntry& e) { return !e.labelset.empty(); });
  if (!per_frame && !known(m.labelset)) {
    throw ValidationError(ctx + ": unknown label set '" + m.labelset + "'");
  }

  if (doc.contains("sources")) {
    for (const auto& s : doc["sources"]) {
      SourceInfo info;
      info.name = get_string(s, "name", ctx + " source");
      info.labelset = get_string(s, "labelset", ctx + " source", false);
      info.manifest = get_string(s, "manifest", ctx + " source", false);
      if (s.contains("frames")) info.frames = s["frames"].get<std::uint64_t>();
      m.sources.push_back(std::move(info));
    }
  }

  sort_frames(m.frames);

  if (verify) {
    if (!fs::is_directory(m.root)) throw IoError(ctx + ": root " + m.root.string() + " is not a directory");
    for (const auto& f : m.frames) {
      if (!fs::exists(m.scan_path(f))) throw IoError(ctx + ": missing scan " + m.scan_path(f).string());
      if (!f.label.empty() && !fs::exists(m.label_path(f))) {
        throw IoError(ctx + ": missing label " + m.label_path(f).string());
      }
    }
  }
  return m;
}

}  // namespace

DatasetManifest parse_manifest(std::string_view json_text, const fs::path& base_dir,
                               const LabelRegistry& registry, bool verify) {
  try {
    return parse_manifest_impl(json_text, base_dir, registry, verify);
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

LabelSetPtr resolve_labelset(const DatasetManifest& manifest, const LabelRegistry& registry,
                             std::string_view name) {
  for (const auto& s : manifest.embedded_labelsets) {
    if (s->name() == name) return s;
  }
  return registry.get(name);
}

DatasetManifest load_manifest(const fs::path& path, const LabelRegistry& registry, bool verify) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_manifest(text.str(), fs::absolute(path).parent_path(), registry, verify);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  json doc;
  doc["name"] = m.name;
  doc["format"] = std::string(to_string(m.format));
  const fs::path out_dir = fs::absolute(path).parent_path().lexically_normal();
  fs::path root = m.root.empty() ? fs::path(".") : m.root;
  if (root.is_absolute()) {
    const fs::path rel = root.lexically_normal().lexically_relative(out_dir);
    if (!rel.empty() && *rel.begin() != "..") root = rel;
  }
  doc["root"] = root.generic_string();
  doc["labelset"] = m.labelset;
  if (m.sensor) {
    json s;
    if (!m.sensor->model.empty()) s["model"] = m.sensor->model;
    s["fiber_count"] = m.sensor->fiber_count;
    s["vertical_fov_deg"] = {m.sensor->fov_down_deg, m.sensor->fov_up_deg};
    doc["sensor"] = s;
  }
  if (!m.embedded_labelsets.empty()) {
    json sets = json::object();
    for (const auto& s : m.embedded_labelsets) sets[s->name()] = labelset_json(*s);
    doc["labelsets"] = sets;
  }
  if (!m.sources.empty()) {
    json sources = json::array();
    for (const auto& s : m.sources) {
      json j{{"name", s.name}};
      if (!s.labelset.empty()) j["labelset"] = s.labelset;
      if (!s.manifest.empty()) j["manifest"] = s.manifest;
      j["frames"] = s.frames;
      sources.push_back(j);
    }
    doc["sources"] = sources;
  }
  json frames = json::array();
  for (const auto& f : m.frames) {
    json j;
    if (!f.sequence.empty()) j["sequence"] = f.sequence;
    j["frame"] = f.frame;
    j["scan"] = f.scan;
    if (!f.label.empty()) j["label"] = f.label;
    if (!f.labelset.empty()) j["labelset"] = f.labelset;
    if (!f.source_dataset.empty()) j["source_dataset"] = f.source_dataset;
    if (!f.source_frame.empty()) j["source_frame"] = f.source_frame;
    if (f.dropped_points) j["dropped_points"] = f.dropped_points;
    frames.push_back(j);
  }
  doc["frames"] = frames;
  const std::string text = doc.dump(2) + "\n";
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

ColaFrame load_frame(const DatasetManifest& manifest, const FrameEntry& frame) {
  const std::string& labelset = manifest.labelset_of(frame);
  const fs::path scan = manifest.scan_path(frame);
  ColaFrame out;
  switch (manifest.format) {
    case FrameFormat::kitti_bin:
      out.cloud = read_kitti_bin(scan);
      out.labels = read_kitti_label(manifest.label_path(frame), out.cloud, labelset);
      break;
    case FrameFormat::nuscenes_bin:
      out.cloud = read_nuscenes_bin(scan);
      out.labels = read_nuscenes_label(manifest.label_path(frame), out.cloud, labelset);
      break;
    case FrameFormat::cola_frame:
      out = read_cola_frame(scan);
      if (!frame.label.empty()) {
        LabelArray labels = read_u16_labels(manifest.label_path(frame), labelset);
        if (labels.size() != out.cloud.size()) {
          throw ValidationError(manifest.label_path(frame).string() + ": " +
                                std::to_string(labels.size()) + " labels for " +
                                std::to_string(out.cloud.size()) + " points");
        }
        out.labels = std::move(labels);
      } else if (out.labels) {
        out.labels->labelset = labelset;
      }
      break;
  }
  return out;
}

}  // namespace cola
