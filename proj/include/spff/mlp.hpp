#pragma once

// MLP head: flattened k*k score matrix -> hidden ReLU layers -> one scalar.
// The only trainable state in the engine.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <vector>

#include "spff/error.hpp"
#include "spff/rng.hpp"
#include "spff/similarity.hpp"
#include "spff/types.hpp"

namespace spff {

struct DenseLayer {
  RowMatrixD weight;  // out x in
  VectorD bias;       // out
};

struct ScorerParams {
  std::vector<DenseLayer> layers;

  std::size_t input_width() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols());
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  // Structural checks; `k` is the patch count the head scores.
  void validate(std::size_t k) const {
    if (layers.empty()) throw InvariantError("scorer has no layers");
    if (input_width() != k * k)
      throw InvariantError("scorer input width " + std::to_string(input_width()) +
                           " differs from k^2 = " + std::to_string(k * k));
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.weight.rows())
        throw InvariantError("scorer layer bias size mismatch");
      if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows())
        throw InvariantError("scorer layer widths do not chain");
    }
    if (layers.back().weight.rows() != 1)
      throw InvariantError("scorer output layer must have width 1");
    if (!all_finite()) throw InvariantError("scorer parameters not finite");
  }

  // Same shapes, all zeros.
  ScorerParams zeros_like() const {
    ScorerParams z;
    for (const auto& l : layers)
      z.layers.push_back({RowMatrixD::Zero(l.weight.rows(), l.weight.cols()),
                          VectorD::Zero(l.bias.size())});
    return z;
  }

  friend bool operator==(const ScorerParams& a, const ScorerParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& x = a.layers[i];
      const auto& y = b.layers[i];
      if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
          x.bias.size() != y.bias.size() || x.weight != y.weight || x.bias != y.bias)
        return false;
    }
    return true;
  }
};

using ScorerGrads = ScorerParams;

// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
inline ScorerParams init_scorer(std::size_t k, const std::vector<std::size_t>& hidden,
                                std::uint64_t seed) {
  Rng rng(derive_seed(seed, "scorer-init"));
  ScorerParams p;
  std::size_t in = k * k;
  std::vector<std::size_t> widths = hidden;
  widths.push_back(1);
  for (std::size_t out : widths) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer l{RowMatrixD(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                 VectorD::Zero(static_cast<Eigen::Index>(out))};
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        l.weight(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
    p.layers.push_back(std::move(l));
    in = out;
  }
  return p;
}

// Activations kept by a forward pass for the backward pass.
struct MlpTape {
  std::vector<RowMatrixD> inputs;  // input to layer l (batch x in_l)
  bool filled = false;
};

// Scores a batch (one flattened score matrix per row).
inline VectorD mlp_forward(const ScorerParams& params, const RowMatrixD& batch,
                           MlpTape* tape = nullptr) {
  if (params.layers.empty()) throw InvariantError("scorer has no layers");
  if (static_cast<std::size_t>(batch.cols()) != params.input_width())
    throw InvariantError("scorer input width mismatch: got " + std::to_string(batch.cols()) +
                         ", expected " + std::to_string(params.input_width()));
  if (tape) {
    tape->inputs.clear();
    tape->filled = false;
  }
  RowMatrixD a = batch;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    RowMatrixD z = a * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    if (tape) tape->inputs.push_back(std::move(a));
    if (i + 1 < params.layers.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  if (tape) tape->filled = true;
  return a.col(0);
}

inline double mlp_score(const ScoreMatrix& matrix, const ScorerParams& params) {
  const Eigen::Map<const RowMatrixD> flat(matrix.values.data(), 1, matrix.values.size());
  return mlp_forward(params, RowMatrixD(flat))(0);
}

// Adds d(loss)/d(params) into `grads` given d(loss)/d(scores).
inline void mlp_backward(const ScorerParams& params, const MlpTape& tape,
                         const VectorD& d_scores, ScorerGrads& grads) {
  if (!tape.filled) throw InvariantError("backward called without a forward pass");
  if (tape.inputs.size() != params.layers.size())
    throw InvariantError("tape does not match scorer depth");
  if (d_scores.size() != tape.inputs.front().rows())
    throw InvariantError("backward: gradient batch size mismatch");
  if (grads.layers.size() != params.layers.size()) grads = params.zeros_like();
  RowMatrixD dz = d_scores;  // batch x 1
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& a_in = tape.inputs[li];
    grads.layers[li].weight.noalias() += dz.transpose() * a_in;
    grads.layers[li].bias += dz.colwise().sum().transpose();
    if (li == 0) break;
    RowMatrixD da = dz * params.layers[li].weight;
    // a_in is relu(z_prev); its positive set is the relu derivative.
    dz = (a_in.array() > 0.0).select(da, 0.0);
  }
}

}  // namespace spff
