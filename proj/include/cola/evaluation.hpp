#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cola/taxonomy.hpp"

namespace cola {

// Square count matrix over the labels of one set; row = ground truth,
// column = prediction. Points whose ground truth is an ignore id are not
// counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(LabelSetPtr labelset);

  const LabelSet& labelset() const { return *labelset_; }
  const LabelSetPtr& labelset_ptr() const { return labelset_; }
  // Number of rows (= columns) = labels in the set.
  std::size_t size() const { return ids_.size(); }
  // Label id of row / column `index`.
  LabelId id_at(std::size_t index) const { return ids_[index]; }
  std::size_t index_of(LabelId id) const;

  std::uint64_t at(LabelId gt, LabelId pred) const;
  std::uint64_t& at(LabelId gt, LabelId pred);
  std::span<const std::uint64_t> counts() const { return counts_; }
  std::uint64_t total() const;

  // Throws ValidationError for length mismatch or ids outside the set.
  void accumulate(std::span<const LabelId> pred, std::span<const LabelId> gt);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix& other) const;

 private:
  LabelSetPtr labelset_;
  std::vector<LabelId> ids_;
  std::vector<std::int32_t> index_;  // id -> row, -1 when absent
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix accumulate_confusion(const LabelArray& pred, const LabelArray& gt, ConfusionMatrix cm);
ConfusionMatrix merge_confusion(const ConfusionMatrix& a, const ConfusionMatrix& b);

// Sums the blocks of a fine matrix into the coarse matrix of `mapping`.
ConfusionMatrix aggregate_confusion(const ConfusionMatrix& fine, const MappingTable& mapping);

struct ClassIoU {
  LabelId id = 0;
  std::optional<double> iou;  // empty when TP + FP + FN == 0
  std::uint64_t tp = 0, fp = 0, fn = 0;
};

// One entry per non-ignore label, ascending id.
std::vector<ClassIoU> iou_per_class(const ConfusionMatrix& cm);

enum class UndefinedClasses { exclude, zero };

// Mean IoU in percent. Undefined classes are excluded by default; with
// UndefinedClasses::zero they count as 0. Throws ValidationError when no
// class is defined.
double miou(const ConfusionMatrix& cm, UndefinedClasses policy = UndefinedClasses::exclude);

// Same contract as remap_labels; used on fine predictions before scoring
// them against coarse ground truth.
LabelArray remap_predictions(const LabelArray& pred, const MappingTable& mapping);

// Per-point scores of one head: row-major points x K, K = number of
// non-ignore labels of `labelset`, columns in ascending id order.
struct ScoreFrame {
  std::vector<float> scores;
  LabelSetPtr labelset;

  std::size_t classes() const { return labelset->class_ids().size(); }
  std::size_t points() const;
};

// Per point: softmax each head's scores (when `normalize`), add every fine
// score into its coarse class, add the heads together and take the argmax
// over coarse non-ignore classes, ties to the lowest id. Fine classes mapped
// to IGNORE contribute nothing.
LabelArray fuse_multihead(std::span<const ScoreFrame> heads, std::span<const MappingTable> mappings,
                          bool normalize = true);

}  // namespace cola
