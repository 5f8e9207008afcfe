#pragma once

// Small fixtures shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "spff/config.hpp"
#include "spff/episode.hpp"
#include "spff/rng.hpp"
#include "spff/types.hpp"

namespace spff::testing {

inline std::shared_ptr<const PatchEmbeddingSet> gaussian_item(Rng& rng, const std::string& id,
                                                              const std::string& label,
                                                              std::size_t P, std::size_t D) {
  RowMatrixF p(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(D));
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(rng.normal());
  VectorF t(static_cast<Eigen::Index>(D));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
  return std::make_shared<const PatchEmbeddingSet>(id, label, std::move(p), std::move(t));
}

// An episode of independent Gaussian items.
inline Episode gaussian_episode(std::uint64_t seed, std::size_t n_way, std::size_t m_shot,
                                std::size_t n_query, std::size_t P, std::size_t D) {
  Rng rng(seed);
  std::vector<EpisodeItem> support, query;
  std::vector<std::string> slots;
  for (std::size_t n = 0; n < n_way; ++n) {
    const std::string label = "c" + std::to_string(n);
    slots.push_back(label);
    for (std::size_t m = 0; m < m_shot; ++m)
      support.push_back({gaussian_item(rng, label + "s" + std::to_string(m), label, P, D), n});
  }
  for (std::size_t n = 0; n < n_way; ++n)
    for (std::size_t q = 0; q < n_query; ++q)
      query.push_back({gaussian_item(rng, slots[n] + "q" + std::to_string(q), slots[n], P, D), n});
  return Episode(n_way, m_shot, std::move(support), std::move(query), std::move(slots));
}

// Dataset of `classes` x `per_class` Gaussian items with the given split
// class counts (train, val, test taken in class order).
inline DatasetDraft gaussian_draft(std::uint64_t seed, std::size_t classes, std::size_t per_class,
                                   std::size_t P, std::size_t D, std::size_t n_train,
                                   std::size_t n_val) {
  Rng rng(seed);
  DatasetDraft d;
  d.num_patches = static_cast<std::uint32_t>(P);
  d.dim = static_cast<std::uint32_t>(D);
  for (std::size_t c = 0; c < classes; ++c) {
    const std::string label = "class_" + std::to_string(c);
    const auto split = c < n_train ? 0 : c < n_train + n_val ? 1 : 2;
    d.split_classes[static_cast<std::size_t>(split)].push_back(label);
    for (std::size_t i = 0; i < per_class; ++i) {
      ItemDraft it;
      it.image_id = label + "_" + std::to_string(i);
      it.label = label;
      it.patches.resize(P * D);
      it.class_token.resize(D);
      for (auto& x : it.patches) x = static_cast<float>(rng.normal());
      for (auto& x : it.class_token) x = static_cast<float>(rng.normal());
      d.items.push_back(std::move(it));
    }
  }
  return d;
}

struct GradientCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  // Parameters whose +-h probes straddled a ReLU kink and were re-checked
  // with a smaller step.
  std::size_t refined = 0;
  double worst_excess = 0.0;  // max of |g-fd| - tolerance(g, fd)
};

// ReLU on/off pattern of every hidden unit over every query/support pair.
inline std::vector<bool> activation_pattern(const FilteredEpisode& filtered,
                                            const RunConfig& config, const ScorerParams& params) {
  std::vector<bool> out;
  MlpTape tape;
  for (const auto& q : filtered.query) {
    mlp_forward(params, pair_features(q, filtered.support, config.metric), &tape);
    for (std::size_t l = 1; l < tape.inputs.size(); ++l)
      for (Eigen::Index i = 0; i < tape.inputs[l].size(); ++i)
        out.push_back(tape.inputs[l].data()[i] > 0.0);
  }
  return out;
}

// Central finite differences of the episode loss with respect to every
// scorer parameter, selection held fixed. Passes where
// |g - fd| <= rel * max(|g|, |fd|) + abs. Where the two probes see
// different ReLU patterns the loss is not differentiable across the probe
// interval, so the step is shrunk (down to 1e-9) until they agree.
inline GradientCheck check_gradients(const Episode& episode, const RunConfig& config,
                                     const ScorerParams& params, std::uint64_t stream_seed,
                                     double h = 1e-6, double rel = 1e-3, double abs = 1e-9) {
  const auto filtered = filter_episode(episode, config, stream_seed);
  const auto analytic = score_filtered(filtered, episode, config, params, RunMode::train);
  GradientCheck out;
  ScorerParams probe = params;
  auto loss_at = [&] {
    return score_filtered(filtered, episode, config, probe, RunMode::eval).loss;
  };
  auto visit = [&](double& slot, double g) {
    const double saved = slot;
    double step = h;
    double fd = 0.0;
    for (bool first = true;; first = false) {
      slot = saved + step;
      const double up = loss_at();
      const auto up_pattern = activation_pattern(filtered, config, probe);
      slot = saved - step;
      const double down = loss_at();
      const auto down_pattern = activation_pattern(filtered, config, probe);
      fd = (up - down) / (2.0 * step);
      if (up_pattern == down_pattern || step < 1e-9) break;
      if (first) ++out.refined;
      step *= 0.1;
    }
    slot = saved;
    const double excess = std::abs(g - fd) - (rel * std::max(std::abs(g), std::abs(fd)) + abs);
    ++out.checked;
    if (excess > 0.0) ++out.failures;
    out.worst_excess = std::max(out.worst_excess, excess);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto& layer = probe.layers[l];
    const auto& grad = analytic.grads->layers[l];
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
      visit(layer.weight.data()[i], grad.weight.data()[i]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) visit(layer.bias[i], grad.bias[i]);
  }
  return out;
}

}  // namespace spff::testing
