#include "cola/strategy.hpp"

#include <algorithm>
#include <set>
#include <vector>

#include "cola/error.hpp"

namespace cola {

namespace {

constexpr std::pair<Strategy, std::string_view> kNames[] = {
    {Strategy::cola7, "cola7"},
    {Strategy::cola5, "cola5"},
    {Strategy::cola9, "cola9"},
    {Strategy::intersection, "intersection"},
    {Strategy::union_labels, "union"},
    {Strategy::multihead, "multihead"},
};

}  // namespace

std::optional<Strategy> parse_strategy(std::string_view name) {
  const std::string key = canonical_name(name);
  for (const auto& [s, n] : kNames) {
    if (key == n) return s;
  }
  if (key == "cola" || key == "cola-7") return Strategy::cola7;
  if (key == "cola-5") return Strategy::cola5;
  if (key == "cola-9") return Strategy::cola9;
  if (key == "mh") return Strategy::multihead;
  return std::nullopt;
}

std::string_view to_string(Strategy strategy) {
  for (const auto& [s, n] : kNames) {
    if (s == strategy) return n;
  }
  return "unknown";
}

const MappingTable& LabelingPlan::mapping_for(std::string_view labelset) const {
  auto it = mappings.find(std::string(labelset));
  if (it == mappings.end()) {
    throw ValidationError("labeling '" + name + "' has no mapping for label set '" +
                          std::string(labelset) + "'");
  }
  return it->second;
}

std::optional<std::string> LabelingPlan::uniform_target() const {
  std::optional<std::string> target;
  for (const auto& [_, m] : mappings) {
    if (target && *target != m.target().name()) return std::nullopt;
    target = m.target().name();
  }
  return target;
}

LabelingPlan plan_from_taxonomy(const LabelTaxonomy& taxonomy) {
  return LabelingPlan{taxonomy.name, taxonomy.mappings};
}

LabelingPlan identity_plan(const LabelRegistry& registry, std::span<const std::string> sources) {
  LabelingPlan plan{"identity", {}};
  for (const auto& s : sources) plan.mappings.emplace(s, MappingTable::identity(registry.get(s)));
  return plan;
}

LabelSetPtr training_set(const LabelRegistry& registry, std::string_view source) {
  if (const MappingTable* m = registry.learning_map(source)) return m->target_ptr();
  return registry.get(source);
}

namespace {

MappingTable to_training(const LabelRegistry& registry, const std::string& source) {
  if (const MappingTable* m = registry.learning_map(source)) return *m;
  return MappingTable::identity(registry.get(source));
}

}  // namespace

LabelingPlan make_plan(Strategy strategy, const LabelRegistry& registry, const SynonymTable& synonyms,
                       std::span<const std::string> sources, const std::filesystem::path& taxonomy_dir) {
  std::vector<std::string> unique;
  for (const auto& s : sources) {
    if (std::find(unique.begin(), unique.end(), s) == unique.end()) unique.push_back(s);
  }

  switch (strategy) {
    case Strategy::cola7:
    case Strategy::cola5:
    case Strategy::cola9: {
      const auto path = taxonomy_dir / (std::string(to_string(strategy)) + ".yaml");
      const LabelTaxonomy taxonomy = load_taxonomy(path, registry);
      LabelingPlan plan{taxonomy.name, {}};
      for (const auto& s : unique) plan.mappings.emplace(s, taxonomy.mapping_for(s));
      return plan;
    }
    case Strategy::intersection:
    case Strategy::union_labels: {
      std::vector<LabelSetPtr> train_sets;
      for (const auto& s : unique) train_sets.push_back(training_set(registry, s));
      DerivedLabelSet derived = strategy == Strategy::intersection
                                    ? build_intersection_labelset(train_sets, synonyms)
                                    : build_union_labelset(train_sets, synonyms);
      LabelingPlan plan{std::string(to_string(strategy)), {}};
      for (std::size_t i = 0; i < unique.size(); ++i) {
        plan.mappings.emplace(unique[i], compose_mappings(to_training(registry, unique[i]),
                                                          derived.mappings[i]));
      }
      return plan;
    }
    case Strategy::multihead: {
      LabelingPlan plan{"multihead", {}};
      for (const auto& s : unique) plan.mappings.emplace(s, to_training(registry, s));
      return plan;
    }
  }
  throw ValidationError("unknown strategy");
}

}  // namespace cola
