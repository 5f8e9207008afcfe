#pragma once

// Episode sampling and the per-episode forward (and optional backward) pass.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spff/config.hpp"
#include "spff/error.hpp"
#include "spff/mlp.hpp"
#include "spff/rng.hpp"
#include "spff/similarity.hpp"
#include "spff/stochastic_filter.hpp"
#include "spff/types.hpp"

namespace spff {

// Draws N classes uniformly (without replacement) among the split's classes
// that hold at least M + n_query items, then M support and n_query query
// items per class.
inline Episode sample_episode(const EmbeddingDataset& dataset, const EpisodeSpec& spec,
                              Split split) {
  spec.validate();
  const std::size_t need = spec.m_shot + spec.n_query;
  const auto split_classes = dataset.classes_in(split);
  std::vector<std::string> eligible;
  for (const auto& cls : split_classes) {
    auto it = dataset.class_index().find(cls);
    if (it != dataset.class_index().end() && it->second.size() >= need) eligible.push_back(cls);
  }
  if (eligible.size() < spec.n_way)
    throw SamplingError(std::string("split '") + to_string(split) + "' has " +
                        std::to_string(eligible.size()) + " classes with >= " +
                        std::to_string(need) + " items (of " +
                        std::to_string(split_classes.size()) + " classes); " +
                        std::to_string(spec.n_way) + "-way episodes need " +
                        std::to_string(spec.n_way));

  Rng rng(derive_seed(spec.seed, "episode"));
  for (std::size_t i = 0; i < spec.n_way; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(spec.n_way);

  std::vector<EpisodeItem> support;
  std::vector<EpisodeItem> query;
  support.reserve(spec.n_way * spec.m_shot);
  query.reserve(spec.n_way * spec.n_query);
  for (std::size_t slot = 0; slot < spec.n_way; ++slot) {
    std::vector<std::size_t> pool = dataset.class_index().at(eligible[slot]);
    for (std::size_t i = 0; i < need; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    for (std::size_t i = 0; i < spec.m_shot; ++i)
      support.push_back({dataset.item(pool[i]), slot});
    for (std::size_t i = spec.m_shot; i < need; ++i) query.push_back({dataset.item(pool[i]), slot});
  }
  return Episode(spec.n_way, spec.m_shot, std::move(support), std::move(query),
                 std::move(eligible));
}

// Per-pair, per-class and probability scores for every query.
struct EpisodeScores {
  RowMatrixD raw;            // n_q x (N*M)
  RowMatrixD aggregated;     // n_q x N
  RowMatrixD probabilities;  // n_q x N
};

enum class RunMode { train, eval };

struct EpisodeOutcome {
  double loss = 0.0;
  double accuracy = 0.0;
  EpisodeScores scores;
  std::optional<ScorerGrads> grads;  // train mode only
};

// Substream for the item at `position` (supports first, then queries).
inline std::uint64_t item_stream(std::uint64_t episode_stream, std::size_t position) {
  return derive_seed(episode_stream, "item", position);
}

// Filtered, fused and prepared selections for every episode item.
struct FilteredEpisode {
  std::vector<PreparedSelection> support;
  std::vector<PreparedSelection> query;
};

inline FilteredEpisode filter_episode(const Episode& episode, const RunConfig& config,
                                      std::uint64_t stream_seed) {
  FilteredEpisode f;
  const auto& sup = episode.support();
  const auto& qry = episode.query();
  f.support.reserve(sup.size());
  f.query.reserve(qry.size());
  for (std::size_t j = 0; j < sup.size(); ++j) {
    Rng rng(item_stream(stream_seed, j));
    f.support.push_back(prepare(filter_patches(*sup[j].item, config, rng).selected, config.metric));
  }
  for (std::size_t i = 0; i < qry.size(); ++i) {
    Rng rng(item_stream(stream_seed, sup.size() + i));
    f.query.push_back(
        prepare(filter_patches(*qry[i].item, config, rng).selected, config.metric));
  }
  return f;
}

// Flattened score matrices of one query against every support, one per row.
inline RowMatrixD pair_features(const PreparedSelection& query,
                                const std::vector<PreparedSelection>& supports,
                                DistanceMetric metric) {
  const Eigen::Index kk = query.rows.rows() * query.rows.rows();
  RowMatrixD x(static_cast<Eigen::Index>(supports.size()), kk);
  for (std::size_t j = 0; j < supports.size(); ++j)
    pairwise_into(query, supports[j], metric, x.row(static_cast<Eigen::Index>(j)).data());
  return x;
}

// Scores an already-filtered episode. Selection is a constant here, so this
// is the function the gradient is exact for.
inline EpisodeOutcome score_filtered(const FilteredEpisode& filtered, const Episode& episode,
                                     const RunConfig& config, const ScorerParams& params,
                                     RunMode mode) {
  const std::size_t n_way = episode.n_way();
  const std::size_t m_shot = episode.m_shot();
  const std::size_t n_q = episode.query().size();
  const auto NM = static_cast<Eigen::Index>(n_way * m_shot);

  EpisodeOutcome out;
  out.scores.raw.resize(static_cast<Eigen::Index>(n_q), NM);
  out.scores.aggregated.resize(static_cast<Eigen::Index>(n_q), static_cast<Eigen::Index>(n_way));
  out.scores.probabilities.resize(static_cast<Eigen::Index>(n_q),
                                  static_cast<Eigen::Index>(n_way));
  if (mode == RunMode::train) out.grads = params.zeros_like();

  MlpTape tape;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n_q; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const RowMatrixD x = pair_features(filtered.query[i], filtered.support, config.metric);
    const VectorD raw =
        mlp_forward(params, x, mode == RunMode::train ? &tape : nullptr);
    if (!raw.allFinite()) throw DivergenceError("scorer produced non-finite scores");
    out.scores.raw.row(row) = raw.transpose();
    const RowMatrixD agg = aggregate_shots(RowMatrixD(raw.transpose()), n_way, m_shot);
    const RowMatrixD prob = classify(agg);
    out.scores.aggregated.row(row) = agg.row(0);
    out.scores.probabilities.row(row) = prob.row(0);

    const std::vector<std::size_t> label{episode.query()[i].slot};
    loss += cross_entropy_loss(prob, label);
    if (argmax_row(agg, 0) == label[0]) ++correct;

    if (mode == RunMode::train) {
      const RowMatrixD g_agg = cross_entropy_grad(prob, label) / static_cast<double>(n_q);
      VectorD d_raw(NM);
      for (Eigen::Index j = 0; j < NM; ++j)
        d_raw(j) = g_agg(0, j / static_cast<Eigen::Index>(m_shot));
      mlp_backward(params, tape, d_raw, *out.grads);
    }
  }
  out.loss = loss / static_cast<double>(n_q);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n_q);
  return out;
}

// Filters every item with a fresh draw from the episode's stream, scores all
// query/support pairs, aggregates, classifies. In train mode the outcome
// carries parameter gradients for the caller to apply.
inline EpisodeOutcome run_episode(const Episode& episode, const RunConfig& config,
                                  const ScorerParams& params, std::uint64_t stream_seed,
                                  RunMode mode) {
  if (config.k_patches > episode.num_patches())
    throw ConfigError("k_patches exceeds patches per image");
  params.validate(config.k_patches);
  const auto filtered = filter_episode(episode, config, stream_seed);
  return score_filtered(filtered, episode, config, params, mode);
}

}  // namespace spff
