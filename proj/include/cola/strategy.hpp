#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "cola/taxonomy.hpp"

namespace cola {

// The six ways of labeling a multi-source corpus.
enum class Strategy { cola7, cola5, cola9, intersection, union_labels, multihead };

std::optional<Strategy> parse_strategy(std::string_view name);
std::string_view to_string(Strategy strategy);

// Per-source mappings that a build applies. For every strategy except
// multihead all mappings share one target set.
struct LabelingPlan {
  std::string name;
  std::map<std::string, MappingTable> mappings;  // keyed by source label set

  const MappingTable& mapping_for(std::string_view labelset) const;
  // Name of the common target set, if there is one.
  std::optional<std::string> uniform_target() const;
};

LabelingPlan plan_from_taxonomy(const LabelTaxonomy& taxonomy);

// Every source keeps its own labels.
LabelingPlan identity_plan(const LabelRegistry& registry, std::span<const std::string> sources);

// The set a network is trained on for `source`: the learning-map target when
// the registry declares one, otherwise the set itself.
LabelSetPtr training_set(const LabelRegistry& registry, std::string_view source);

// Builds the plan for `strategy` over the given native label sets.
// cola7/cola5/cola9 read `<taxonomy_dir>/<name>.yaml`; intersection and union
// are derived from the training sets with `synonyms`; multihead maps each
// source onto its own training set.
LabelingPlan make_plan(Strategy strategy, const LabelRegistry& registry, const SynonymTable& synonyms,
                       std::span<const std::string> sources, const std::filesystem::path& taxonomy_dir);

}  // namespace cola
