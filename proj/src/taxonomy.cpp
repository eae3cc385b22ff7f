#include "cola/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "cola/error.hpp"

namespace cola {

namespace fs = std::filesystem;

std::string canonical_name(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  bool pending_space = false;
  for (char c : name) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LabelSet

LabelSet::LabelSet(std::string name, std::vector<Label> labels, std::set<LabelId> ignore_ids)
    : name_(std::move(name)), labels_(std::move(labels)), ignore_ids_(std::move(ignore_ids)) {
  std::sort(labels_.begin(), labels_.end(),
            [](const Label& a, const Label& b) { return a.id < b.id; });
  std::set<std::string> seen_names;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    auto& label = labels_[i];
    label.canonical = canonical_name(label.name);
    if (label.canonical.empty()) {
      throw ValidationError("label set '" + name_ + "': label id " + std::to_string(label.id) +
                            " has an empty name");
    }
    if (i > 0 && labels_[i - 1].id == label.id) {
      throw ValidationError("label set '" + name_ + "': duplicate id " + std::to_string(label.id));
    }
    if (!seen_names.insert(label.canonical).second) {
      throw ValidationError("label set '" + name_ + "': duplicate name '" + label.canonical + "'");
    }
  }
  for (LabelId id : ignore_ids_) {
    if (!contains(id)) {
      throw ValidationError("label set '" + name_ + "': ignore id " + std::to_string(id) +
                            " is not a label of the set");
    }
  }
}

LabelSet LabelSet::from_pairs(std::string name,
                              const std::vector<std::pair<LabelId, std::string>>& labels,
                              std::set<LabelId> ignore_ids) {
  std::vector<Label> out;
  out.reserve(labels.size());
  for (const auto& [id, label_name] : labels) out.push_back({id, label_name, {}});
  return LabelSet(std::move(name), std::move(out), std::move(ignore_ids));
}

bool LabelSet::contains(LabelId id) const {
  return std::binary_search(labels_.begin(), labels_.end(), Label{id, {}, {}},
                            [](const Label& a, const Label& b) { return a.id < b.id; });
}

std::optional<LabelId> LabelSet::designated_ignore() const {
  if (ignore_ids_.empty()) return std::nullopt;
  return *ignore_ids_.begin();
}

std::optional<LabelId> LabelSet::find(std::string_view name) const {
  const std::string key = canonical_name(name);
  for (const auto& label : labels_) {
    if (label.canonical == key) return label.id;
  }
  return std::nullopt;
}

const Label& LabelSet::label(LabelId id) const {
  auto it = std::lower_bound(labels_.begin(), labels_.end(), id,
                             [](const Label& a, LabelId v) { return a.id < v; });
  if (it == labels_.end() || it->id != id) {
    throw ValidationError("label set '" + name_ + "' has no id " + std::to_string(id));
  }
  return *it;
}

std::vector<LabelId> LabelSet::class_ids() const {
  std::vector<LabelId> ids;
  for (const auto& label : labels_) {
    if (!is_ignore(label.id)) ids.push_back(label.id);
  }
  return ids;
}

LabelId LabelSet::max_id() const { return labels_.empty() ? 0 : labels_.back().id; }

bool LabelSet::operator==(const LabelSet& other) const {
  return name_ == other.name_ && labels_ == other.labels_ && ignore_ids_ == other.ignore_ids_;
}

// ---------------------------------------------------------------------------
// MappingTable

namespace {

std::string describe(const LabelSet& set, LabelId id) {
  if (set.contains(id)) return "'" + set.label(id).name + "' (id " + std::to_string(id) + ")";
  return "id " + std::to_string(id);
}

}  // namespace

MappingTable::MappingTable(LabelSetPtr source, LabelSetPtr target,
                           std::map<LabelId, MappingTarget> entries)
    : source_(std::move(source)), target_(std::move(target)), entries_(std::move(entries)) {
  const std::string where = "mapping " + source_->name() + " -> " + target_->name();
  bool has_ignore_entry = false;
  for (const auto& label : source_->labels()) {
    auto it = entries_.find(label.id);
    if (it == entries_.end()) {
      throw ValidationError(where + ": no entry for label " + describe(*source_, label.id));
    }
    if (!it->second) {
      has_ignore_entry = true;
      continue;
    }
    const LabelId out = *it->second;
    if (!target_->contains(out)) {
      throw ValidationError(where + ": label " + describe(*source_, label.id) +
                            " maps to unknown target id " + std::to_string(out));
    }
    if (source_->is_ignore(label.id) && !target_->is_ignore(out)) {
      throw ValidationError(where + ": ignore label " + describe(*source_, label.id) +
                            " maps to non-ignore target " + describe(*target_, out));
    }
  }
  for (const auto& [id, _] : entries_) {
    if (!source_->contains(id)) {
      throw ValidationError(where + ": entry for id " + std::to_string(id) +
                            " which is not in the source set");
    }
  }
  if (has_ignore_entry && !target_->designated_ignore()) {
    throw ValidationError(where + ": IGNORE entries require an ignore id in the target set");
  }

  lut_.assign(static_cast<std::size_t>(source_->max_id()) + 1, -1);
  const std::int32_t ignore_out =
      target_->designated_ignore() ? static_cast<std::int32_t>(*target_->designated_ignore()) : -1;
  for (const auto& [id, out] : entries_) {
    lut_[id] = out ? static_cast<std::int32_t>(*out) : ignore_out;
  }
}

MappingTable MappingTable::identity(LabelSetPtr set) {
  std::map<LabelId, MappingTarget> entries;
  for (const auto& label : set->labels()) entries.emplace(label.id, label.id);
  return MappingTable(set, set, std::move(entries));
}

MappingTarget MappingTable::entry(LabelId source_id) const {
  auto it = entries_.find(source_id);
  if (it == entries_.end()) {
    throw ValidationError("mapping " + source_->name() + " -> " + target_->name() +
                          ": unknown source id " + std::to_string(source_id));
  }
  return it->second;
}

LabelId MappingTable::apply(LabelId source_id) const {
  if (source_id >= lut_.size() || lut_[source_id] < 0) {
    throw ValidationError("mapping " + source_->name() + " -> " + target_->name() +
                          ": unknown source id " + std::to_string(source_id));
  }
  return static_cast<LabelId>(lut_[source_id]);
}

std::vector<LabelId> MappingTable::unreached_targets() const {
  std::set<LabelId> reached;
  for (const auto& [_, out] : entries_) {
    if (out) reached.insert(*out);
  }
  std::vector<LabelId> missing;
  for (LabelId id : target_->class_ids()) {
    if (!reached.contains(id)) missing.push_back(id);
  }
  return missing;
}

bool MappingTable::operator==(const MappingTable& other) const {
  return *source_ == *other.source_ && *target_ == *other.target_ && entries_ == other.entries_;
}

void remap_values(std::span<const LabelId> in, std::span<LabelId> out, const MappingTable& mapping) {
  if (in.size() != out.size()) {
    throw ValidationError("remap: output length " + std::to_string(out.size()) +
                          " differs from input length " + std::to_string(in.size()));
  }
  const auto lut = mapping.lut();
  const std::size_t lut_size = lut.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const LabelId v = in[i];
    const std::int32_t m = v < lut_size ? lut[v] : -1;
    if (m < 0) {
      throw ValidationError("remap " + mapping.source().name() + " -> " + mapping.target().name() +
                            ": unknown source id " + std::to_string(v) + " at index " +
                            std::to_string(i));
    }
    out[i] = static_cast<LabelId>(m);
  }
}

LabelArray remap_labels(const LabelArray& labels, const MappingTable& mapping) {
  if (labels.labelset != mapping.source().name()) {
    throw ValidationError("remap: labels belong to '" + labels.labelset + "' but mapping source is '" +
                          mapping.source().name() + "'");
  }
  LabelArray out{std::vector<LabelId>(labels.size()), mapping.target().name()};
  remap_values(labels.values, out.values, mapping);
  return out;
}

MappingTable compose_mappings(const MappingTable& a, const MappingTable& b) {
  if (!(a.target() == b.source())) {
    throw ValidationError("compose: target of first mapping ('" + a.target().name() +
                          "') is not the source of the second ('" + b.source().name() + "')");
  }
  std::map<LabelId, MappingTarget> entries;
  for (const auto& [id, mid] : a.entries()) {
    entries.emplace(id, mid ? b.entry(*mid) : std::nullopt);
  }
  return MappingTable(a.source_ptr(), b.target_ptr(), std::move(entries));
}

// ---------------------------------------------------------------------------
// Synonyms, intersection and union

SynonymTable::SynonymTable(const std::map<std::string, std::string>& synonyms) {
  for (const auto& [from, to] : synonyms) synonyms_.emplace(normalize(from), normalize(to));
}

std::string SynonymTable::normalize(std::string_view name) {
  std::string spaced(name);
  std::replace(spaced.begin(), spaced.end(), '-', ' ');
  std::replace(spaced.begin(), spaced.end(), '_', ' ');
  return canonical_name(spaced);
}

std::string SynonymTable::resolve(std::string_view name) const {
  std::string key = normalize(name);
  auto it = synonyms_.find(key);
  return it == synonyms_.end() ? key : it->second;
}

namespace {

// Canonical (post-synonym) name -> id for the non-ignore labels of one set.
std::map<std::string, LabelId> resolved_names(const LabelSet& set, const SynonymTable& synonyms) {
  std::map<std::string, LabelId> out;
  for (LabelId id : set.class_ids()) {
    out.emplace(synonyms.resolve(set.label(id).name), id);
  }
  return out;
}

DerivedLabelSet derive(std::span<const LabelSetPtr> sets, const SynonymTable& synonyms,
                       const std::set<std::string>& names, std::string set_name) {
  std::vector<std::pair<LabelId, std::string>> pairs{{0, "unlabeled"}};
  std::map<std::string, LabelId> id_of;
  LabelId next = 1;
  for (const auto& n : names) {
    id_of.emplace(n, next);
    pairs.emplace_back(next++, n);
  }
  auto result = std::make_shared<const LabelSet>(LabelSet::from_pairs(std::move(set_name), pairs, {0}));

  DerivedLabelSet derived{result, {}};
  for (const auto& set : sets) {
    std::map<LabelId, MappingTarget> entries;
    for (const auto& label : set->labels()) {
      MappingTarget out = std::nullopt;
      if (!set->is_ignore(label.id)) {
        auto it = id_of.find(synonyms.resolve(label.name));
        if (it != id_of.end()) out = it->second;
      }
      entries.emplace(label.id, out);
    }
    derived.mappings.emplace_back(set, result, std::move(entries));
  }
  return derived;
}

}  // namespace

DerivedLabelSet build_intersection_labelset(std::span<const LabelSetPtr> sets,
                                            const SynonymTable& synonyms, std::string name) {
  if (sets.size() < 2) throw ValidationError("intersection needs at least two label sets");
  std::set<std::string> common;
  for (const auto& [n, _] : resolved_names(*sets[0], synonyms)) common.insert(n);
  for (std::size_t i = 1; i < sets.size(); ++i) {
    const auto names = resolved_names(*sets[i], synonyms);
    std::erase_if(common, [&](const std::string& n) { return !names.contains(n); });
  }
  if (common.empty()) {
    std::string list;
    for (const auto& s : sets) list += (list.empty() ? "" : ", ") + s->name();
    throw ValidationError("intersection of label sets {" + list + "} is empty");
  }
  return derive(sets, synonyms, common, std::move(name));
}

DerivedLabelSet build_union_labelset(std::span<const LabelSetPtr> sets, const SynonymTable& synonyms,
                                     std::string name) {
  if (sets.empty()) throw ValidationError("union needs at least one label set");
  std::set<std::string> all;
  for (const auto& set : sets) {
    for (const auto& [n, _] : resolved_names(*set, synonyms)) all.insert(n);
  }
  return derive(sets, synonyms, all, std::move(name));
}

// ---------------------------------------------------------------------------
// Registry and file loading

void LabelRegistry::add(LabelSetPtr set) {
  const std::string name = set->name();
  if (!sets_.emplace(name, std::move(set)).second) {
    throw ValidationError("label set '" + name + "' defined twice");
  }
}

void LabelRegistry::add_learning_map(MappingTable map) {
  const std::string name = map.source().name();
  learning_maps_.insert_or_assign(name, std::move(map));
}

bool LabelRegistry::contains(std::string_view name) const { return sets_.find(name) != sets_.end(); }

LabelSetPtr LabelRegistry::get(std::string_view name) const {
  auto it = sets_.find(name);
  if (it == sets_.end()) throw ValidationError("unknown label set '" + std::string(name) + "'");
  return it->second;
}

std::vector<std::string> LabelRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : sets_) out.push_back(n);
  return out;
}

const MappingTable* LabelRegistry::learning_map(std::string_view source) const {
  auto it = learning_maps_.find(source);
  return it == learning_maps_.end() ? nullptr : &it->second;
}

namespace {

YAML::Node load_yaml(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  try {
    return YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw IoError("cannot read " + path.string());
  } catch (const YAML::Exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

[[noreturn]] void parse_fail(const fs::path& path, const YAML::Node& node, const std::string& msg) {
  std::ostringstream os;
  os << path.string();
  if (node.IsDefined() && node.Mark().line >= 0) os << ":" << node.Mark().line + 1;
  os << ": " << msg;
  throw ParseError(os.str());
}

LabelId parse_id(const fs::path& path, const YAML::Node& node) {
  try {
    const int v = node.as<int>();
    if (v < 0 || v > 0xFFFF) parse_fail(path, node, "label id out of range: " + std::to_string(v));
    return static_cast<LabelId>(v);
  } catch (const YAML::Exception&) {
    parse_fail(path, node, "label id must be an integer");
  }
}

std::string parse_string(const fs::path& path, const YAML::Node& node, const char* what) {
  if (!node.IsScalar()) parse_fail(path, node, std::string(what) + " must be a string");
  return node.Scalar();
}

// `labels:` block: `id: name` or `id: {name: ..., ignore: true}`.
LabelSetPtr parse_labelset(const fs::path& path, const std::string& name, const YAML::Node& node) {
  if (!node.IsMap()) parse_fail(path, node, "label set '" + name + "' must be a map");
  const YAML::Node labels = node["labels"] ? node["labels"] : node;
  std::set<LabelId> ignore;
  if (node["ignore"]) {
    if (!node["ignore"].IsSequence()) parse_fail(path, node["ignore"], "'ignore' must be a list");
    for (const auto& v : node["ignore"]) ignore.insert(parse_id(path, v));
  }
  std::vector<Label> out;
  for (const auto& kv : labels) {
    const LabelId id = parse_id(path, kv.first);
    if (kv.second.IsMap()) {
      out.push_back({id, parse_string(path, kv.second["name"], "label name"), {}});
      if (kv.second["ignore"] && kv.second["ignore"].as<bool>()) ignore.insert(id);
    } else {
      out.push_back({id, parse_string(path, kv.second, "label name"), {}});
    }
  }
  try {
    return std::make_shared<const LabelSet>(name, std::move(out), std::move(ignore));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// `fine_name: target_name` entries; `IGNORE` (any case) is the sentinel.
MappingTable parse_mapping(const fs::path& path, const std::string& context, const YAML::Node& node,
                           const LabelSetPtr& source, const LabelSetPtr& target) {
  if (!node.IsMap()) parse_fail(path, node, context + ": mapping must be a map of name: name");
  std::map<LabelId, MappingTarget> entries;
  for (const auto& kv : node) {
    const std::string from = parse_string(path, kv.first, "label name");
    const std::string to = parse_string(path, kv.second, "label name");
    const auto from_id = source->find(from);
    if (!from_id) {
      throw ValidationError(path.string() + ": " + context + ": '" + from +
                            "' is not a label of '" + source->name() + "'");
    }
    MappingTarget to_id;
    if (canonical_name(to) != "ignore") {
      to_id = target->find(to);
      if (!to_id) {
        throw ValidationError(path.string() + ": " + context + ": label '" + from +
                              "' maps to unknown target '" + to + "'");
      }
    }
    if (!entries.emplace(*from_id, to_id).second) {
      throw ValidationError(path.string() + ": " + context + ": label '" + from +
                            "' has more than one entry");
    }
  }
  try {
    return MappingTable(source, target, std::move(entries));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + context + ": " + e.what());
  }
}

void read_registry_node(const fs::path& path, const YAML::Node& root, LabelRegistry& registry) {
  const YAML::Node sets = root["labelsets"];
  if (!sets || !sets.IsMap()) parse_fail(path, root, "missing 'labelsets' map");
  for (const auto& kv : sets) {
    const std::string name = parse_string(path, kv.first, "label set name");
    registry.add(parse_labelset(path, name, kv.second));
  }
  if (const YAML::Node maps = root["learning_maps"]) {
    for (const auto& kv : maps) {
      const std::string source = parse_string(path, kv.first, "label set name");
      const std::string target = parse_string(path, kv.second["target"], "target");
      registry.add_learning_map(parse_mapping(path, "learning map '" + source + "'",
                                              kv.second["entries"], registry.get(source),
                                              registry.get(target)));
    }
  }
}

}  // namespace

LabelRegistry load_label_registry(const fs::path& path) {
  LabelRegistry registry;
  read_registry_node(path, load_yaml(path), registry);
  return registry;
}

const MappingTable& LabelTaxonomy::mapping_for(std::string_view labelset) const {
  auto it = mappings.find(std::string(labelset));
  if (it == mappings.end()) {
    throw ValidationError("taxonomy '" + name + "' has no mapping for label set '" +
                          std::string(labelset) + "'");
  }
  return it->second;
}

bool LabelTaxonomy::operator==(const LabelTaxonomy& other) const {
  return name == other.name && *coarse_set == *other.coarse_set && mappings == other.mappings;
}

namespace {

LabelTaxonomy load_taxonomy_node(const fs::path& path, const YAML::Node& root,
                                 const LabelRegistry& registry) {
  LabelTaxonomy taxonomy;
  taxonomy.name = root["name"] ? parse_string(path, root["name"], "name") : path.stem().string();
  if (!root["coarse"]) parse_fail(path, root, "missing 'coarse' label block");
  taxonomy.coarse_set = parse_labelset(path, taxonomy.name, root["coarse"]);

  const YAML::Node mappings = root["mappings"];
  if (!mappings || !mappings.IsMap()) parse_fail(path, root, "missing 'mappings' map");
  for (const auto& kv : mappings) {
    const std::string dataset = parse_string(path, kv.first, "dataset name");
    if (!registry.contains(dataset)) {
      throw ValidationError(path.string() + ": mapping for unknown label set '" + dataset + "'");
    }
    MappingTable table = parse_mapping(path, "dataset '" + dataset + "'", kv.second,
                                       registry.get(dataset), taxonomy.coarse_set);
    for (LabelId id : table.unreached_targets()) {
      taxonomy.warnings.push_back("dataset '" + dataset + "' never maps onto coarse label '" +
                                  taxonomy.coarse_set->label(id).name + "'");
    }
    if (!taxonomy.mappings.emplace(dataset, std::move(table)).second) {
      throw ValidationError(path.string() + ": dataset '" + dataset + "' mapped twice");
    }
  }
  return taxonomy;
}

}  // namespace

LabelTaxonomy load_taxonomy(const fs::path& path) {
  const YAML::Node root = load_yaml(path);
  LabelRegistry registry;
  const YAML::Node include = root["labelsets"];
  if (include && include.IsScalar()) {
    fs::path inc = include.Scalar();
    if (inc.is_relative()) inc = path.parent_path() / inc;
    read_registry_node(inc, load_yaml(inc), registry);
  } else if (include && include.IsMap()) {
    read_registry_node(path, root, registry);
  }
  return load_taxonomy_node(path, root, registry);
}

LabelTaxonomy load_taxonomy(const fs::path& path, const LabelRegistry& registry) {
  return load_taxonomy_node(path, load_yaml(path), registry);
}

SynonymTable load_synonyms(const fs::path& path) {
  const YAML::Node root = load_yaml(path);
  const YAML::Node node = root["synonyms"];
  std::map<std::string, std::string> table;
  if (node) {
    if (!node.IsMap()) parse_fail(path, node, "'synonyms' must be a map");
    for (const auto& kv : node) {
      table.emplace(parse_string(path, kv.first, "name"), parse_string(path, kv.second, "name"));
    }
  }
  return SynonymTable(table);
}

std::map<std::string, MappingTable> load_bridges(const fs::path& path,
                                                 const std::map<std::string, LabelSetPtr>& sets) {
  const YAML::Node root = load_yaml(path);
  const YAML::Node bridges = root["bridges"];
  if (!bridges || !bridges.IsMap()) parse_fail(path, root, "missing 'bridges' map");
  std::map<std::string, MappingTable> out;
  for (const auto& kv : bridges) {
    const std::string name = parse_string(path, kv.first, "bridge name");
    auto lookup = [&](const char* key) {
      const std::string set = parse_string(path, kv.second[key], key);
      auto it = sets.find(set);
      if (it == sets.end()) throw ValidationError(path.string() + ": unknown label set '" + set + "'");
      return it->second;
    };
    out.emplace(name, parse_mapping(path, "bridge '" + name + "'", kv.second["entries"],
                                    lookup("source"), lookup("target")));
  }
  return out;
}

}  // namespace cola
