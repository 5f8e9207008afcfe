#pragma once

// Dense query/support patch score matrices, shot aggregation, softmax
// classification and the cross-entropy objective.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <vector>

#include "spff/error.hpp"
#include "spff/stochastic_filter.hpp"
#include "spff/types.hpp"

namespace spff {

inline constexpr double kLogFloor = 1e-12;

// Entry (a, b) compares query patch a with support patch b; larger means
// more similar for every metric. Flattened row-major for the scorer.
struct ScoreMatrix {
  RowMatrixD values;
  std::vector<bool> zero_query_rows;
  std::vector<bool> zero_support_rows;
};

// One side of a comparison, with rows pre-normalised when the metric is
// cosine so they can be reused across many pairs.
struct PreparedSelection {
  RowMatrixD rows;
  std::vector<bool> zero;
};

inline PreparedSelection prepare(const RowMatrixD& selected, DistanceMetric metric) {
  if (metric == DistanceMetric::cosine) {
    auto n = l2_normalize(selected);
    return {std::move(n.rows), std::move(n.zero)};
  }
  return {selected, std::vector<bool>(static_cast<std::size_t>(selected.rows()), false)};
}

// Writes the k_q x k_s matrix row-major into `out` (length k_q*k_s).
inline void pairwise_into(const PreparedSelection& q, const PreparedSelection& s,
                          DistanceMetric metric, double* out) {
  const Eigen::Index kq = q.rows.rows();
  const Eigen::Index ks = s.rows.rows();
  const Eigen::Index D = q.rows.cols();
  Eigen::Map<RowMatrixD> T(out, kq, ks);
  switch (metric) {
    case DistanceMetric::cosine:
      T.noalias() = q.rows * s.rows.transpose();
      T = T.cwiseMax(-1.0).cwiseMin(1.0);
      break;
    case DistanceMetric::manhattan:
      for (Eigen::Index a = 0; a < kq; ++a)
        for (Eigen::Index b = 0; b < ks; ++b) {
          double acc = 0.0;
          for (Eigen::Index d = 0; d < D; ++d) acc += std::abs(q.rows(a, d) - s.rows(b, d));
          T(a, b) = -acc;
        }
      break;
    case DistanceMetric::euclidean:
      for (Eigen::Index a = 0; a < kq; ++a)
        for (Eigen::Index b = 0; b < ks; ++b) {
          double acc = 0.0;
          for (Eigen::Index d = 0; d < D; ++d) {
            const double diff = q.rows(a, d) - s.rows(b, d);
            acc += diff * diff;
          }
          T(a, b) = -std::sqrt(acc);
        }
      break;
  }
}

inline ScoreMatrix pairwise_matrix(const RowMatrixD& query_sel, const RowMatrixD& support_sel,
                                   DistanceMetric metric) {
  if (query_sel.rows() != support_sel.rows() || query_sel.cols() != support_sel.cols())
    throw InvariantError("pairwise_matrix: query and support shapes differ");
  const auto q = prepare(query_sel, metric);
  const auto s = prepare(support_sel, metric);
  ScoreMatrix m;
  m.values.resize(query_sel.rows(), support_sel.rows());
  pairwise_into(q, s, metric, m.values.data());
  m.zero_query_rows = q.zero;
  m.zero_support_rows = s.zero;
  return m;
}

// s[i, n] = sum over the M shots of slot n (columns are slot-major blocks).
inline RowMatrixD aggregate_shots(const RowMatrixD& raw, std::size_t n_way, std::size_t m_shot) {
  if (static_cast<std::size_t>(raw.cols()) != n_way * m_shot)
    throw InvariantError("aggregate_shots: column count differs from N*M");
  RowMatrixD out = RowMatrixD::Zero(raw.rows(), static_cast<Eigen::Index>(n_way));
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    for (std::size_t n = 0; n < n_way; ++n) {
      double acc = 0.0;
      for (std::size_t m = 0; m < m_shot; ++m)
        acc += raw(i, static_cast<Eigen::Index>(n * m_shot + m));
      out(i, static_cast<Eigen::Index>(n)) = acc;
    }
  return out;
}

// Row-wise stable softmax.
inline RowMatrixD classify(const RowMatrixD& aggregated) {
  if (!aggregated.allFinite()) throw InvariantError("classify: non-finite scores");
  RowMatrixD p(aggregated.rows(), aggregated.cols());
  for (Eigen::Index i = 0; i < aggregated.rows(); ++i) {
    const double mx = aggregated.row(i).maxCoeff();
    p.row(i) = (aggregated.row(i).array() - mx).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// Lowest index wins ties.
inline std::size_t argmax_row(const RowMatrixD& m, Eigen::Index row) {
  std::size_t best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j)
    if (m(row, j) > m(row, static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(j);
  return best;
}

inline double cross_entropy_loss(const RowMatrixD& probabilities,
                                 const std::vector<std::size_t>& labels) {
  if (static_cast<std::size_t>(probabilities.rows()) != labels.size() || labels.empty())
    throw InvariantError("cross_entropy_loss: label count differs from rows");
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= static_cast<std::size_t>(probabilities.cols()))
      throw InvariantError("cross_entropy_loss: label out of range");
    acc -= std::log(std::max(probabilities(static_cast<Eigen::Index>(i),
                                           static_cast<Eigen::Index>(labels[i])),
                             kLogFloor));
  }
  return acc / static_cast<double>(labels.size());
}

// d(loss)/d(aggregated). A query whose true-class probability sits under
// the floor contributes a constant loss term, hence zero gradient.
inline RowMatrixD cross_entropy_grad(const RowMatrixD& probabilities,
                                     const std::vector<std::size_t>& labels) {
  RowMatrixD g = probabilities / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto y = static_cast<Eigen::Index>(labels[i]);
    if (probabilities(r, y) < kLogFloor) {
      g.row(r).setZero();
    } else {
      g(r, y) -= 1.0 / static_cast<double>(labels.size());
    }
  }
  return g;
}

}  // namespace spff
