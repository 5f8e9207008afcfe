#pragma once

#include <cmath>
#include <cstdint>

#include "spff/config.hpp"
#include "spff/mlp.hpp"

namespace spff {

// Moments for Adam (unused by SGD). `t` counts applied updates.
struct OptimizerState {
  ScorerParams m;
  ScorerParams v;
  std::uint64_t t = 0;
};

inline void apply_update(ScorerParams& params, const ScorerGrads& grads,
                         const OptimizerConfig& cfg, OptimizerState& state) {
  ++state.t;
  if (cfg.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      params.layers[i].weight -= cfg.learning_rate * grads.layers[i].weight;
      params.layers[i].bias -= cfg.learning_rate * grads.layers[i].bias;
    }
    return;
  }
  if (state.m.layers.size() != params.layers.size()) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
  }
  const double b1 = cfg.beta1;
  const double b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  auto step = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= cfg.learning_rate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + cfg.epsilon);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    step(params.layers[i].weight, grads.layers[i].weight, state.m.layers[i].weight,
         state.v.layers[i].weight);
    step(params.layers[i].bias, grads.layers[i].bias, state.m.layers[i].bias,
         state.v.layers[i].bias);
  }
}

}  // namespace spff
