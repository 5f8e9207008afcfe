#pragma once

// Tensor-shaped domain types and their invariants.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spff/error.hpp"

namespace spff {

using RowMatrixF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorF = Eigen::VectorXf;
using VectorD = Eigen::VectorXd;

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::val,
                                                 Split::test};

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

enum class DistanceMetric { cosine, manhattan, euclidean };

inline const char* to_string(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::cosine: return "cosine";
    case DistanceMetric::manhattan: return "manhattan";
    case DistanceMetric::euclidean: return "euclidean";
  }
  return "?";
}

inline std::optional<DistanceMetric> parse_metric(std::string_view s) {
  if (s == "cosine") return DistanceMetric::cosine;
  if (s == "manhattan") return DistanceMetric::manhattan;
  if (s == "euclidean") return DistanceMetric::euclidean;
  return std::nullopt;
}

enum class SelectionKind { stochastic, deterministic, random, mixed };

inline const char* to_string(SelectionKind k) {
  switch (k) {
    case SelectionKind::stochastic: return "stochastic";
    case SelectionKind::deterministic: return "deterministic";
    case SelectionKind::random: return "random";
    case SelectionKind::mixed: return "mixed";
  }
  return "?";
}

inline std::optional<SelectionKind> parse_selection_kind(std::string_view s) {
  if (s == "stochastic") return SelectionKind::stochastic;
  if (s == "deterministic") return SelectionKind::deterministic;
  if (s == "random") return SelectionKind::random;
  if (s == "mixed") return SelectionKind::mixed;
  return std::nullopt;
}

// How patches are picked. `stochastic_fraction` only matters for `mixed`:
// the share of the k patches drawn stochastically, the rest taken top-k.
struct SelectionMode {
  SelectionKind kind = SelectionKind::stochastic;
  double stochastic_fraction = 1.0;

  static SelectionMode stochastic() { return {SelectionKind::stochastic, 1.0}; }
  static SelectionMode deterministic() {
    return {SelectionKind::deterministic, 0.0};
  }
  static SelectionMode random() { return {SelectionKind::random, 0.0}; }
  static SelectionMode mixed(double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
      throw InvariantError("stochastic_fraction must lie in [0, 1]");
    return {SelectionKind::mixed, fraction};
  }

  friend bool operator==(const SelectionMode&, const SelectionMode&) = default;
};

inline bool all_finite(const float* data, std::size_t n) {
  return std::all_of(data, data + n, [](float v) { return std::isfinite(v); });
}

// One image: P patch vectors plus the class-token vector. Optional
// `foreground` carries generator ground truth (sorted patch indices).
class PatchEmbeddingSet {
 public:
  PatchEmbeddingSet(std::string image_id, std::string label, RowMatrixF patches,
                    VectorF class_token,
                    std::vector<std::uint32_t> foreground = {})
      : image_id_(std::move(image_id)),
        label_(std::move(label)),
        patches_(std::move(patches)),
        class_token_(std::move(class_token)),
        foreground_(std::move(foreground)) {
    if (patches_.rows() < 1 || patches_.cols() < 1)
      throw InvariantError("patch matrix must be at least 1x1 (image '" +
                           image_id_ + "')");
    if (class_token_.size() != patches_.cols())
      throw InvariantError("class token width differs from patch width (image '" +
                           image_id_ + "')");
    if (!all_finite(patches_.data(), static_cast<std::size_t>(patches_.size())) ||
        !all_finite(class_token_.data(),
                    static_cast<std::size_t>(class_token_.size())))
      throw InvariantError("non-finite embedding entry (image '" + image_id_ +
                           "')");
    for (std::size_t i = 0; i < foreground_.size(); ++i) {
      if (foreground_[i] >= static_cast<std::uint32_t>(patches_.rows()) ||
          (i > 0 && foreground_[i] <= foreground_[i - 1]))
        throw InvariantError(
            "foreground indices must be sorted, distinct and < P (image '" +
            image_id_ + "')");
    }
  }

  const std::string& image_id() const noexcept { return image_id_; }
  const std::string& label() const noexcept { return label_; }
  const RowMatrixF& patches() const noexcept { return patches_; }
  const VectorF& class_token() const noexcept { return class_token_; }
  const std::vector<std::uint32_t>& foreground() const noexcept {
    return foreground_;
  }
  std::size_t num_patches() const noexcept {
    return static_cast<std::size_t>(patches_.rows());
  }
  std::size_t dim() const noexcept {
    return static_cast<std::size_t>(patches_.cols());
  }

 private:
  std::string image_id_;
  std::string label_;
  RowMatrixF patches_;
  VectorF class_token_;
  std::vector<std::uint32_t> foreground_;
};

using ItemPtr = std::shared_ptr<const PatchEmbeddingSet>;

// Unvalidated dataset contents, as produced by a reader or a builder.
struct ItemDraft {
  std::string image_id;
  std::string label;
  std::vector<float> patches;  // P*D, row-major
  std::vector<float> class_token;
  std::vector<std::uint32_t> foreground;
};

struct DatasetDraft {
  std::uint32_t num_patches = 0;
  std::uint32_t dim = 0;
  std::vector<ItemDraft> items;
  // Class names per split, indexed by Split.
  std::array<std::vector<std::string>, 3> split_classes;
};

struct Violation {
  enum class Kind {
    shape,
    non_finite,
    split_overlap,
    unassigned_label,
    empty_class,
    bad_foreground,
    duplicate_image_id,
  };
  Kind kind;
  std::string message;
};

// Returns every problem found; empty iff the draft is usable.
inline std::vector<Violation> validate_dataset(const DatasetDraft& draft) {
  std::vector<Violation> out;
  using K = Violation::Kind;
  const std::size_t P = draft.num_patches;
  const std::size_t D = draft.dim;
  if (P < 1 || D < 1)
    out.push_back({K::shape, "shape: P and D must be >= 1 (got P=" +
                                 std::to_string(P) + ", D=" + std::to_string(D) +
                                 ")"});

  std::map<std::string, Split> first_split;
  std::set<std::string> reported_overlap;
  for (Split s : kAllSplits) {
    for (const auto& cls : draft.split_classes[static_cast<int>(s)]) {
      auto [it, inserted] = first_split.emplace(cls, s);
      if (!inserted && reported_overlap.insert(cls).second)
        out.push_back({K::split_overlap, "split overlap: " + cls});
    }
  }

  std::set<std::string> labels_seen;
  std::set<std::string> ids_seen;
  for (std::size_t i = 0; i < draft.items.size(); ++i) {
    const auto& item = draft.items[i];
    const std::string where = "item " + std::to_string(i);
    if (item.patches.size() != P * D || item.class_token.size() != D) {
      out.push_back({K::shape, "shape mismatch: " + where + " has " +
                                   std::to_string(item.patches.size()) +
                                   " patch values and token width " +
                                   std::to_string(item.class_token.size())});
    } else {
      for (std::size_t j = 0; j < item.patches.size(); ++j) {
        if (!std::isfinite(item.patches[j])) {
          out.push_back({K::non_finite, "non-finite value: " + where +
                                            ", patch " + std::to_string(j / D) +
                                            ", coord " + std::to_string(j % D)});
          break;
        }
      }
      if (!all_finite(item.class_token.data(), item.class_token.size()))
        out.push_back({K::non_finite, "non-finite value: " + where + ", class token"});
    }
    for (std::size_t f = 0; f < item.foreground.size(); ++f) {
      if (item.foreground[f] >= P ||
          (f > 0 && item.foreground[f] <= item.foreground[f - 1])) {
        out.push_back({K::bad_foreground, "bad foreground indices: " + where});
        break;
      }
    }
    if (!ids_seen.insert(item.image_id).second)
      out.push_back({K::duplicate_image_id,
                     "duplicate image id: " + item.image_id + " (" + where + ")"});
    labels_seen.insert(item.label);
    if (!first_split.contains(item.label))
      out.push_back({K::unassigned_label,
                     "unassigned label: " + item.label + " (" + where + ")"});
  }
  for (const auto& [cls, split] : first_split) {
    if (!labels_seen.contains(cls))
      out.push_back({K::empty_class, "empty class: " + cls});
  }
  return out;
}

// Labeled collection of PatchEmbeddingSets with class-disjoint splits.
// Immutable after construction.
class EmbeddingDataset {
 public:
  EmbeddingDataset() = default;

  explicit EmbeddingDataset(const DatasetDraft& draft) {
    const auto violations = validate_dataset(draft);
    if (!violations.empty()) {
      std::string msg = "invalid dataset:";
      for (const auto& v : violations) msg += "\n  " + v.message;
      throw InvariantError(msg);
    }
    num_patches_ = draft.num_patches;
    dim_ = draft.dim;
    const auto P = static_cast<Eigen::Index>(num_patches_);
    const auto D = static_cast<Eigen::Index>(dim_);
    items_.reserve(draft.items.size());
    for (const auto& d : draft.items) {
      RowMatrixF patches = Eigen::Map<const RowMatrixF>(d.patches.data(), P, D);
      VectorF token = Eigen::Map<const VectorF>(d.class_token.data(), D);
      items_.push_back(std::make_shared<const PatchEmbeddingSet>(
          d.image_id, d.label, std::move(patches), std::move(token),
          d.foreground));
      class_index_[d.label].push_back(items_.size() - 1);
    }
    for (Split s : kAllSplits) {
      for (const auto& cls : draft.split_classes[static_cast<int>(s)])
        split_of_[cls] = s;
    }
  }

  std::size_t num_patches() const noexcept { return num_patches_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return items_.size(); }
  const std::vector<ItemPtr>& items() const noexcept { return items_; }
  const ItemPtr& item(std::size_t i) const { return items_.at(i); }

  const std::map<std::string, std::vector<std::size_t>>& class_index()
      const noexcept {
    return class_index_;
  }
  const std::map<std::string, Split>& split_assignment() const noexcept {
    return split_of_;
  }

  // Sorted class names assigned to `split`.
  std::vector<std::string> classes_in(Split split) const {
    std::vector<std::string> out;
    for (const auto& [cls, s] : split_of_)
      if (s == split) out.push_back(cls);
    return out;
  }

  std::optional<std::size_t> find_image(std::string_view image_id) const {
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i]->image_id() == image_id) return i;
    return std::nullopt;
  }

  bool has_foreground() const {
    return !items_.empty() &&
           std::all_of(items_.begin(), items_.end(),
                       [](const ItemPtr& p) { return !p->foreground().empty(); });
  }

  DatasetDraft to_draft() const {
    DatasetDraft d;
    d.num_patches = static_cast<std::uint32_t>(num_patches_);
    d.dim = static_cast<std::uint32_t>(dim_);
    for (const auto& item : items_) {
      ItemDraft it;
      it.image_id = item->image_id();
      it.label = item->label();
      it.patches.assign(item->patches().data(),
                        item->patches().data() + item->patches().size());
      it.class_token.assign(item->class_token().data(),
                            item->class_token().data() + item->class_token().size());
      it.foreground = item->foreground();
      d.items.push_back(std::move(it));
    }
    for (const auto& [cls, s] : split_of_)
      d.split_classes[static_cast<int>(s)].push_back(cls);
    return d;
  }

 private:
  std::size_t num_patches_ = 0;
  std::size_t dim_ = 0;
  std::vector<ItemPtr> items_;
  std::map<std::string, std::vector<std::size_t>> class_index_;
  std::map<std::string, Split> split_of_;
};

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t m_shot = 5;
  std::size_t n_query = 15;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_way < 2) throw InvariantError("n_way must be >= 2");
    if (m_shot < 1) throw InvariantError("m_shot must be >= 1");
    if (n_query < 1) throw InvariantError("n_query must be >= 1");
  }
};

struct EpisodeItem {
  ItemPtr item;
  std::size_t slot = 0;
};

// One N-way M-shot task. Support is slot-major: slot s occupies positions
// [s*M, (s+1)*M). Queries are listed slot-major as well.
class Episode {
 public:
  Episode(std::size_t n_way, std::size_t m_shot, std::vector<EpisodeItem> support,
          std::vector<EpisodeItem> query, std::vector<std::string> class_slots)
      : n_way_(n_way),
        m_shot_(m_shot),
        support_(std::move(support)),
        query_(std::move(query)),
        class_slots_(std::move(class_slots)) {
    if (n_way_ < 2) throw InvariantError("episode needs n_way >= 2");
    if (m_shot_ < 1) throw InvariantError("episode needs m_shot >= 1");
    if (class_slots_.size() != n_way_)
      throw InvariantError("episode class_slots size differs from n_way");
    if (support_.size() != n_way_ * m_shot_)
      throw InvariantError("episode support size differs from N*M");
    if (query_.empty()) throw InvariantError("episode has no queries");
    std::set<const PatchEmbeddingSet*> support_ptrs;
    for (std::size_t i = 0; i < support_.size(); ++i) {
      if (!support_[i].item) throw InvariantError("null support item");
      if (support_[i].slot != i / m_shot_)
        throw InvariantError("support must be slot-major with M items per slot");
      support_ptrs.insert(support_[i].item.get());
    }
    for (const auto& q : query_) {
      if (!q.item) throw InvariantError("null query item");
      if (q.slot >= n_way_) throw InvariantError("query slot out of range");
      if (support_ptrs.contains(q.item.get()))
        throw InvariantError("item '" + q.item->image_id() +
                             "' appears in both support and query");
    }
    const std::size_t P = support_.front().item->num_patches();
    const std::size_t D = support_.front().item->dim();
    auto check = [&](const EpisodeItem& e) {
      if (e.item->num_patches() != P || e.item->dim() != D)
        throw InvariantError("episode items differ in shape");
    };
    for (const auto& e : support_) check(e);
    for (const auto& e : query_) check(e);
  }

  std::size_t n_way() const noexcept { return n_way_; }
  std::size_t m_shot() const noexcept { return m_shot_; }
  const std::vector<EpisodeItem>& support() const noexcept { return support_; }
  const std::vector<EpisodeItem>& query() const noexcept { return query_; }
  const std::vector<std::string>& class_slots() const noexcept {
    return class_slots_;
  }
  std::size_t num_patches() const noexcept {
    return support_.front().item->num_patches();
  }

 private:
  std::size_t n_way_;
  std::size_t m_shot_;
  std::vector<EpisodeItem> support_;
  std::vector<EpisodeItem> query_;
  std::vector<std::string> class_slots_;
};

// Outcome of filtering one image. `indices` are sorted ascending and
// `selected` rows follow that order.
struct SelectionResult {
  std::vector<std::uint32_t> indices;
  VectorD probabilities;
  RowMatrixD selected;
  SelectionMode mode;
};

}  // namespace spff
