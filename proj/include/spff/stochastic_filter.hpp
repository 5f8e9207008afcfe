#pragma once

// Patch filtering: cosine similarity of each patch to the class token,
// softmax into a selection distribution, k-of-P selection, and additive
// class-token fusion.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "spff/config.hpp"
#include "spff/error.hpp"
#include "spff/rng.hpp"
#include "spff/types.hpp"

namespace spff {

inline constexpr double kNormEpsilon = 1e-12;

struct NormalizedRows {
  RowMatrixD rows;
  std::vector<bool> zero;  // true where the input norm was below kNormEpsilon
};

// Row-wise L2 normalisation. Rows with norm < kNormEpsilon come back as
// zeros and are flagged.
template <typename Derived>
NormalizedRows l2_normalize(const Eigen::MatrixBase<Derived>& vectors) {
  NormalizedRows out;
  out.rows = vectors.template cast<double>();
  out.zero.assign(static_cast<std::size_t>(out.rows.rows()), false);
  for (Eigen::Index r = 0; r < out.rows.rows(); ++r) {
    const double norm = out.rows.row(r).norm();
    if (norm < kNormEpsilon) {
      out.rows.row(r).setZero();
      out.zero[static_cast<std::size_t>(r)] = true;
    } else {
      out.rows.row(r) /= norm;
    }
  }
  return out;
}

// S_i = cos(patch_i, class_token). Zero patches score 0.
template <typename DerivedP, typename DerivedC>
VectorD class_similarity(const Eigen::MatrixBase<DerivedP>& patches,
                         const Eigen::MatrixBase<DerivedC>& class_token) {
  if (patches.cols() != class_token.size())
    throw InvariantError("class_similarity: token width differs from patch width");
  VectorD token = class_token.template cast<double>();
  const double tnorm = token.norm();
  if (!(tnorm >= kNormEpsilon)) throw InvariantError("degenerate class token");
  token /= tnorm;
  const NormalizedRows p = l2_normalize(patches);
  VectorD s = p.rows * token;
  // Rounding can push |cos| a hair past 1.
  return s.cwiseMax(-1.0).cwiseMin(1.0);
}

// Numerically stable softmax.
inline VectorD similarity_to_probabilities(const VectorD& scores) {
  if (scores.size() == 0) throw InvariantError("softmax of empty vector");
  if (!scores.allFinite()) throw InvariantError("softmax input not finite");
  VectorD e = (scores.array() - scores.maxCoeff()).exp().matrix();
  return e / e.sum();
}

namespace detail {

inline void check_k(std::size_t P, std::size_t k) {
  if (k < 1) throw InvariantError("k must be >= 1");
  if (k > P)
    throw InvariantError("k (" + std::to_string(k) + ") exceeds number of patches (" +
                         std::to_string(P) + ")");
}

inline void check_distribution(const VectorD& p) {
  if (p.size() == 0) throw InvariantError("empty probability vector");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!(std::isfinite(p[i]) && p[i] >= 0.0))
      throw InvariantError("probabilities must be finite and non-negative");
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw InvariantError("probabilities must sum to 1");
}

// Sequential categorical draws, removing each pick. `weights` need not be
// normalised; entries set to 0 are never drawn unless every remaining
// weight is 0, in which case the draw is uniform over the remaining indices.
inline void draw_without_replacement(std::vector<double> weights,
                                     std::vector<bool> taken, std::size_t count,
                                     Rng& rng, std::vector<std::uint32_t>& out) {
  const std::size_t P = weights.size();
  for (std::size_t i = 0; i < P; ++i)
    if (taken[i]) weights[i] = 0.0;
  for (std::size_t draw = 0; draw < count; ++draw) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double u = rng.uniform();
    std::size_t pick = P;
    if (total > 0.0) {
      const double target = u * total;
      double acc = 0.0;
      std::size_t last_positive = P;
      for (std::size_t i = 0; i < P; ++i) {
        if (weights[i] <= 0.0) continue;
        last_positive = i;
        acc += weights[i];
        if (target < acc) {
          pick = i;
          break;
        }
      }
      if (pick == P) pick = last_positive;  // u*total rounded up to total
    } else {
      std::vector<std::uint32_t> remaining;
      for (std::size_t i = 0; i < P; ++i)
        if (!taken[i]) remaining.push_back(static_cast<std::uint32_t>(i));
      pick = remaining[static_cast<std::size_t>(u * static_cast<double>(remaining.size()))];
    }
    out.push_back(static_cast<std::uint32_t>(pick));
    taken[pick] = true;
    weights[pick] = 0.0;
  }
}

}  // namespace detail

// k distinct indices, drawn sequentially with probability proportional to p
// among the indices not yet chosen. Returned in draw order.
inline std::vector<std::uint32_t> select_stochastic(const VectorD& probabilities,
                                                    std::size_t k, Rng& rng) {
  detail::check_k(static_cast<std::size_t>(probabilities.size()), k);
  detail::check_distribution(probabilities);
  std::vector<std::uint32_t> out;
  out.reserve(k);
  std::vector<double> w(probabilities.data(), probabilities.data() + probabilities.size());
  std::vector<bool> taken(w.size(), false);
  detail::draw_without_replacement(std::move(w), std::move(taken), k, rng, out);
  return out;
}

// Top-k by probability; ties go to the lowest index. Returned best-first.
inline std::vector<std::uint32_t> select_deterministic(const VectorD& probabilities,
                                                       std::size_t k) {
  const auto P = static_cast<std::size_t>(probabilities.size());
  detail::check_k(P, k);
  std::vector<std::uint32_t> order(P);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return probabilities[a] > probabilities[b];
  });
  order.resize(k);
  return order;
}

// Uniform k-subset of [0, P) via partial Fisher-Yates.
inline std::vector<std::uint32_t> select_random(std::size_t P, std::size_t k, Rng& rng) {
  detail::check_k(P, k);
  std::vector<std::uint32_t> pool(P);
  std::iota(pool.begin(), pool.end(), 0u);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(P - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

// round((1-f)k) indices top-k, the rest drawn stochastically from the
// leftover indices (probabilities renormalised implicitly by the draw).
inline std::vector<std::uint32_t> select_mixed(const VectorD& probabilities,
                                               std::size_t k, double stochastic_fraction,
                                               Rng& rng) {
  const auto P = static_cast<std::size_t>(probabilities.size());
  detail::check_k(P, k);
  if (!(stochastic_fraction >= 0.0 && stochastic_fraction <= 1.0))
    throw InvariantError("stochastic_fraction must lie in [0, 1]");
  detail::check_distribution(probabilities);
  const auto k_fix = static_cast<std::size_t>(
      std::lround((1.0 - stochastic_fraction) * static_cast<double>(k)));
  std::vector<std::uint32_t> out =
      k_fix > 0 ? select_deterministic(probabilities, k_fix) : std::vector<std::uint32_t>{};
  out.reserve(k);
  std::vector<bool> taken(P, false);
  for (auto i : out) taken[i] = true;
  std::vector<double> w(probabilities.data(), probabilities.data() + P);
  detail::draw_without_replacement(std::move(w), std::move(taken), k - k_fix, rng, out);
  return out;
}

inline std::size_t mixed_fixed_count(std::size_t k, double stochastic_fraction) {
  return static_cast<std::size_t>(
      std::lround((1.0 - stochastic_fraction) * static_cast<double>(k)));
}

// row_i + lambda * class_token
template <typename DerivedC>
RowMatrixD class_aware_addition(const RowMatrixD& selected,
                                const Eigen::MatrixBase<DerivedC>& class_token,
                                double lambda) {
  if (selected.cols() != class_token.size())
    throw InvariantError("class_aware_addition: token width differs");
  RowMatrixD out = selected;
  const Eigen::RowVectorXd t = lambda * class_token.template cast<double>().transpose();
  out.rowwise() += t;
  return out;
}

inline std::vector<std::uint32_t> select_indices(const VectorD& probabilities,
                                                 std::size_t k, const SelectionMode& mode,
                                                 Rng& rng) {
  switch (mode.kind) {
    case SelectionKind::stochastic: return select_stochastic(probabilities, k, rng);
    case SelectionKind::deterministic: return select_deterministic(probabilities, k);
    case SelectionKind::random:
      return select_random(static_cast<std::size_t>(probabilities.size()), k, rng);
    case SelectionKind::mixed:
      return select_mixed(probabilities, k, mode.stochastic_fraction, rng);
  }
  throw InvariantError("unknown selection mode");
}

// Full filter for one image: similarity -> softmax -> selection -> sort ->
// gather -> class-aware addition.
inline SelectionResult filter_patches(const PatchEmbeddingSet& item, std::size_t k,
                                      double lambda, const SelectionMode& mode, Rng& rng) {
  SelectionResult r;
  r.mode = mode;
  r.probabilities =
      similarity_to_probabilities(class_similarity(item.patches(), item.class_token()));
  r.indices = select_indices(r.probabilities, k, mode, rng);
  std::sort(r.indices.begin(), r.indices.end());
  RowMatrixD gathered(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(item.dim()));
  for (std::size_t i = 0; i < k; ++i)
    gathered.row(static_cast<Eigen::Index>(i)) =
        item.patches().row(r.indices[i]).template cast<double>();
  r.selected = class_aware_addition(gathered, item.class_token(), lambda);
  return r;
}

inline SelectionResult filter_patches(const PatchEmbeddingSet& item, const RunConfig& config,
                                      Rng& rng) {
  return filter_patches(item, config.k_patches, config.lambda_class, config.selection, rng);
}

}  // namespace spff
