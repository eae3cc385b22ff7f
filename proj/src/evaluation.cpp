#include "cola/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cola/error.hpp"

namespace cola {

ConfusionMatrix::ConfusionMatrix(LabelSetPtr labelset) : labelset_(std::move(labelset)) {
  for (const auto& l : labelset_->labels()) ids_.push_back(l.id);
  index_.assign(static_cast<std::size_t>(labelset_->max_id()) + 1, -1);
  for (std::size_t i = 0; i < ids_.size(); ++i) index_[ids_[i]] = static_cast<std::int32_t>(i);
  counts_.assign(ids_.size() * ids_.size(), 0);
}

std::size_t ConfusionMatrix::index_of(LabelId id) const {
  if (id >= index_.size() || index_[id] < 0) {
    throw ValidationError("label id " + std::to_string(id) + " is not in label set '" +
                          labelset_->name() + "'");
  }
  return static_cast<std::size_t>(index_[id]);
}

std::uint64_t ConfusionMatrix::at(LabelId gt, LabelId pred) const {
  return counts_[index_of(gt) * size() + index_of(pred)];
}

std::uint64_t& ConfusionMatrix::at(LabelId gt, LabelId pred) {
  return counts_[index_of(gt) * size() + index_of(pred)];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (auto c : counts_) sum += c;
  return sum;
}

void ConfusionMatrix::accumulate(std::span<const LabelId> pred, std::span<const LabelId> gt) {
  if (pred.size() != gt.size()) {
    throw ValidationError("confusion: " + std::to_string(pred.size()) + " predictions for " +
                          std::to_string(gt.size()) + " ground-truth labels");
  }
  std::vector<char> skip(ids_.size(), 0);
  for (std::size_t i = 0; i < ids_.size(); ++i) skip[i] = labelset_->is_ignore(ids_[i]);

  const std::size_t n = size();
  const std::size_t limit = index_.size();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const LabelId g = gt[i];
    const LabelId p = pred[i];
    const std::int32_t gi = g < limit ? index_[g] : -1;
    const std::int32_t pi = p < limit ? index_[p] : -1;
    if (gi < 0 || pi < 0) {
      const LabelId bad = gi < 0 ? g : p;
      throw ValidationError(std::string("confusion: ") + (gi < 0 ? "ground-truth" : "predicted") +
                            " id " + std::to_string(bad) + " at index " + std::to_string(i) +
                            " is not in label set '" + labelset_->name() + "'");
    }
    if (skip[gi]) continue;
    ++counts_[static_cast<std::size_t>(gi) * n + static_cast<std::size_t>(pi)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (!(*labelset_ == *other.labelset_) || counts_.size() != other.counts_.size()) {
    throw ValidationError("confusion: cannot merge matrices over '" + labelset_->name() + "' and '" +
                          other.labelset_->name() + "'");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

bool ConfusionMatrix::operator==(const ConfusionMatrix& other) const {
  return *labelset_ == *other.labelset_ && counts_ == other.counts_;
}

ConfusionMatrix accumulate_confusion(const LabelArray& pred, const LabelArray& gt, ConfusionMatrix cm) {
  const std::string& set = cm.labelset().name();
  if (pred.labelset != set || gt.labelset != set) {
    throw ValidationError("confusion over '" + set + "' given predictions in '" + pred.labelset +
                          "' and ground truth in '" + gt.labelset + "'");
  }
  cm.accumulate(pred.values, gt.values);
  return cm;
}

ConfusionMatrix merge_confusion(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  ConfusionMatrix out = a;
  out.merge(b);
  return out;
}

ConfusionMatrix aggregate_confusion(const ConfusionMatrix& fine, const MappingTable& mapping) {
  if (!(fine.labelset() == mapping.source())) {
    throw ValidationError("aggregate: matrix is over '" + fine.labelset().name() +
                          "' but mapping source is '" + mapping.source().name() + "'");
  }
  ConfusionMatrix coarse(mapping.target_ptr());
  const LabelSet& target = mapping.target();
  for (std::size_t r = 0; r < fine.size(); ++r) {
    const LabelId g = mapping.apply(fine.id_at(r));
    if (target.is_ignore(g)) continue;
    for (std::size_t c = 0; c < fine.size(); ++c) {
      const std::uint64_t v = fine.counts()[r * fine.size() + c];
      if (v) coarse.at(g, mapping.apply(fine.id_at(c))) += v;
    }
  }
  return coarse;
}

std::vector<ClassIoU> iou_per_class(const ConfusionMatrix& cm) {
  const std::size_t n = cm.size();
  const auto counts = cm.counts();
  std::vector<ClassIoU> out;
  for (std::size_t c = 0; c < n; ++c) {
    const LabelId id = cm.id_at(c);
    if (cm.labelset().is_ignore(id)) continue;
    ClassIoU r{id, std::nullopt, counts[c * n + c], 0, 0};
    for (std::size_t k = 0; k < n; ++k) {
      if (k == c) continue;
      r.fn += counts[c * n + k];
      r.fp += counts[k * n + c];
    }
    const std::uint64_t denom = r.tp + r.fp + r.fn;
    if (denom > 0) r.iou = static_cast<double>(r.tp) / static_cast<double>(denom);
    out.push_back(r);
  }
  return out;
}

double miou(const ConfusionMatrix& cm, UndefinedClasses policy) {
  double sum = 0.0;
  std::size_t count = 0;
  bool any_defined = false;
  for (const auto& c : iou_per_class(cm)) {
    if (c.iou) {
      sum += *c.iou;
      ++count;
      any_defined = true;
    } else if (policy == UndefinedClasses::zero) {
      ++count;
    }
  }
  if (!any_defined) {
    throw ValidationError("mIoU over '" + cm.labelset().name() + "': no class has a defined IoU");
  }
  return 100.0 * sum / static_cast<double>(count);
}

LabelArray remap_predictions(const LabelArray& pred, const MappingTable& mapping) {
  return remap_labels(pred, mapping);
}

std::size_t ScoreFrame::points() const {
  const std::size_t k = classes();
  return k == 0 ? 0 : scores.size() / k;
}

LabelArray fuse_multihead(std::span<const ScoreFrame> heads, std::span<const MappingTable> mappings,
                          bool normalize) {
  if (heads.empty()) throw ValidationError("fuse: no heads");
  if (heads.size() != mappings.size()) {
    throw ValidationError("fuse: " + std::to_string(heads.size()) + " heads but " +
                          std::to_string(mappings.size()) + " mappings");
  }
  const LabelSet& coarse = mappings[0].target();
  const std::vector<LabelId> coarse_ids = coarse.class_ids();
  if (coarse_ids.empty()) throw ValidationError("fuse: coarse set has no classes");

  // column_to_coarse[h][k]: index into coarse_ids, or -1.
  std::vector<std::vector<int>> column_to_coarse;
  const std::size_t n = heads[0].labelset ? heads[0].points() : 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const ScoreFrame& head = heads[h];
    const MappingTable& m = mappings[h];
    if (!head.labelset) throw ValidationError("fuse: head " + std::to_string(h) + " has no label set");
    if (!(m.target() == coarse)) {
      throw ValidationError("fuse: mapping " + std::to_string(h) + " targets '" + m.target().name() +
                            "', expected '" + coarse.name() + "'");
    }
    if (!(m.source() == *head.labelset)) {
      throw ValidationError("fuse: head " + std::to_string(h) + " scores '" + head.labelset->name() +
                            "' but its mapping starts from '" + m.source().name() + "'");
    }
    const std::size_t k = head.classes();
    if (k == 0 || head.scores.size() % k != 0) {
      throw ValidationError("fuse: head " + std::to_string(h) + " has " +
                            std::to_string(head.scores.size()) + " scores for " + std::to_string(k) +
                            " classes");
    }
    if (head.points() != n) {
      throw ValidationError("fuse: head " + std::to_string(h) + " covers " +
                            std::to_string(head.points()) + " points, head 0 covers " +
                            std::to_string(n));
    }
    std::vector<int> cols;
    for (LabelId fine : head.labelset->class_ids()) {
      const MappingTarget t = m.entry(fine);
      int idx = -1;
      if (t && !coarse.is_ignore(*t)) {
        idx = static_cast<int>(std::lower_bound(coarse_ids.begin(), coarse_ids.end(), *t) -
                               coarse_ids.begin());
      }
      cols.push_back(idx);
    }
    column_to_coarse.push_back(std::move(cols));
  }

  LabelArray out{std::vector<LabelId>(n), coarse.name()};
  std::vector<double> total(coarse_ids.size());
  std::vector<double> prob;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const auto& cols = column_to_coarse[h];
      const std::size_t k = cols.size();
      const float* s = heads[h].scores.data() + i * k;
      if (normalize) {
        prob.resize(k);
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) peak = std::max(peak, static_cast<double>(s[j]));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += prob[j] = std::exp(static_cast<double>(s[j]) - peak);
        for (std::size_t j = 0; j < k; ++j) {
          if (cols[j] >= 0) total[cols[j]] += prob[j] / z;
        }
      } else {
        for (std::size_t j = 0; j < k; ++j) {
          if (cols[j] >= 0) total[cols[j]] += s[j];
        }
      }
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < total.size(); ++c) {
      if (total[c] > total[best]) best = c;
    }
    out.values[i] = coarse_ids[best];
  }
  return out;
}

}  // namespace cola
