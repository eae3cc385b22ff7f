#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cola {

using LabelId = std::uint16_t;

// Lowercase, trimmed, inner whitespace collapsed to single spaces.
std::string canonical_name(std::string_view name);

struct Label {
  LabelId id = 0;
  std::string name;       // as written in the source file
  std::string canonical;  // canonical_name(name)

  bool operator==(const Label&) const = default;
};

// A named, immutable set of labels. ids and canonical names are unique and
// every ignore id is one of the ids.
class LabelSet {
 public:
  LabelSet(std::string name, std::vector<Label> labels, std::set<LabelId> ignore_ids);

  // Convenience: labels given as (id, name); canonical names are derived.
  static LabelSet from_pairs(std::string name,
                             const std::vector<std::pair<LabelId, std::string>>& labels,
                             std::set<LabelId> ignore_ids = {});

  const std::string& name() const { return name_; }
  std::span<const Label> labels() const { return labels_; }
  const std::set<LabelId>& ignore_ids() const { return ignore_ids_; }
  std::size_t size() const { return labels_.size(); }

  bool contains(LabelId id) const;
  bool is_ignore(LabelId id) const { return ignore_ids_.contains(id); }
  // Smallest ignore id; the value IGNORE mapping entries resolve to.
  std::optional<LabelId> designated_ignore() const;
  std::optional<LabelId> find(std::string_view name) const;
  const Label& label(LabelId id) const;
  // Ids of the non-ignore labels, ascending.
  std::vector<LabelId> class_ids() const;
  LabelId max_id() const;

  bool operator==(const LabelSet& other) const;

 private:
  std::string name_;
  std::vector<Label> labels_;  // sorted by id
  std::set<LabelId> ignore_ids_;
};

using LabelSetPtr = std::shared_ptr<const LabelSet>;

// Target of one mapping entry; std::nullopt is the IGNORE sentinel.
using MappingTarget = std::optional<LabelId>;

// Total map from every id of `source` to an id of `target` or IGNORE.
class MappingTable {
 public:
  // Throws ValidationError when an entry is missing, points outside the
  // target, or when a source ignore id maps to a non-ignore target label.
  MappingTable(LabelSetPtr source, LabelSetPtr target, std::map<LabelId, MappingTarget> entries);

  static MappingTable identity(LabelSetPtr set);

  const LabelSet& source() const { return *source_; }
  const LabelSet& target() const { return *target_; }
  const LabelSetPtr& source_ptr() const { return source_; }
  const LabelSetPtr& target_ptr() const { return target_; }
  const std::map<LabelId, MappingTarget>& entries() const { return entries_; }

  MappingTarget entry(LabelId source_id) const;
  // Entry with IGNORE resolved to the target's designated ignore id.
  LabelId apply(LabelId source_id) const;

  // Dense lookup table: lut()[id] is the resolved output for ids of the source
  // set and -1 for ids outside it.
  std::span<const std::int32_t> lut() const { return lut_; }

  // Non-ignore target ids that no source id maps to.
  std::vector<LabelId> unreached_targets() const;

  bool operator==(const MappingTable& other) const;

 private:
  LabelSetPtr source_;
  LabelSetPtr target_;
  std::map<LabelId, MappingTarget> entries_;
  std::vector<std::int32_t> lut_;
};

struct LabelArray {
  std::vector<LabelId> values;
  std::string labelset;

  std::size_t size() const { return values.size(); }
  bool operator==(const LabelArray&) const = default;
};

// Throws ValidationError naming the first unknown id and its index.
LabelArray remap_labels(const LabelArray& labels, const MappingTable& mapping);

// In-place variant over raw values; no label-set check.
void remap_values(std::span<const LabelId> in, std::span<LabelId> out, const MappingTable& mapping);

// entries[x] = b[a[x]], IGNORE absorbing. Requires a.target() == b.source().
MappingTable compose_mappings(const MappingTable& a, const MappingTable& b);

// Normalized-name synonym table used to match labels across datasets.
class SynonymTable {
 public:
  SynonymTable() = default;
  explicit SynonymTable(const std::map<std::string, std::string>& synonyms);

  // lowercase, '-' and '_' to spaces, whitespace collapsed.
  static std::string normalize(std::string_view name);
  std::string resolve(std::string_view name) const;

 private:
  std::map<std::string, std::string> synonyms_;
};

SynonymTable load_synonyms(const std::filesystem::path& path);

struct DerivedLabelSet {
  LabelSetPtr set;
  std::vector<MappingTable> mappings;  // one per input set, in input order
};

// Labels present (after synonym resolution) in every input set. The result
// holds id 0 "unlabeled" as ignore, then the shared names in lexicographic
// order from id 1.
DerivedLabelSet build_intersection_labelset(std::span<const LabelSetPtr> sets,
                                            const SynonymTable& synonyms,
                                            std::string name = "intersection");

// Deduplicated union of all non-ignore labels, same layout as above.
DerivedLabelSet build_union_labelset(std::span<const LabelSetPtr> sets, const SynonymTable& synonyms,
                                     std::string name = "union");

// Label sets and dataset learning maps, usually loaded from labelsets.yaml.
class LabelRegistry {
 public:
  void add(LabelSetPtr set);
  void add_learning_map(MappingTable map);

  bool contains(std::string_view name) const;
  LabelSetPtr get(std::string_view name) const;  // throws ValidationError
  std::vector<std::string> names() const;
  // Map from a native set to its training set, if one is declared.
  const MappingTable* learning_map(std::string_view source) const;

 private:
  std::map<std::string, LabelSetPtr, std::less<>> sets_;
  std::map<std::string, MappingTable, std::less<>> learning_maps_;
};

LabelRegistry load_label_registry(const std::filesystem::path& path);

struct LabelTaxonomy {
  std::string name;
  LabelSetPtr coarse_set;
  // Keyed by source label-set name.
  std::map<std::string, MappingTable> mappings;
  // Non-fatal findings, e.g. coarse labels a dataset never maps onto.
  std::vector<std::string> warnings;

  const MappingTable& mapping_for(std::string_view labelset) const;
  bool operator==(const LabelTaxonomy& other) const;
};

// Loads a taxonomy file (see docs/formats.md). Source label sets come from the
// file's `labelsets` include or, when given, from `registry`.
LabelTaxonomy load_taxonomy(const std::filesystem::path& path);
LabelTaxonomy load_taxonomy(const std::filesystem::path& path, const LabelRegistry& registry);

// Loads named mappings between already-known sets (bridges.yaml).
std::map<std::string, MappingTable> load_bridges(const std::filesystem::path& path,
                                                 const std::map<std::string, LabelSetPtr>& sets);

}  // namespace cola
