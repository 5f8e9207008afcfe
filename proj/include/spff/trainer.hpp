#pragma once

// Episodic training (one optimiser step per episode) and evaluation over
// independently seeded episodes.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "spff/config.hpp"
#include "spff/episode.hpp"
#include "spff/error.hpp"
#include "spff/mlp.hpp"
#include "spff/optimizer.hpp"
#include "spff/rng.hpp"
#include "spff/types.hpp"

namespace spff {

struct EvalReport {
  std::size_t episodes = 0;
  double mean_accuracy = 0.0;
  double ci95_halfwidth = 0.0;
  double mean_loss = 0.0;
  std::vector<double> accuracies;
};

// Mean and 1.96 * stddev / sqrt(n), stddev with ddof = 0.
inline EvalReport summarize(std::vector<double> accuracies, double mean_loss = 0.0) {
  EvalReport r;
  r.episodes = accuracies.size();
  r.mean_loss = mean_loss;
  if (!accuracies.empty()) {
    double sum = 0.0;
    for (double a : accuracies) sum += a;
    const double n = static_cast<double>(accuracies.size());
    r.mean_accuracy = sum / n;
    double ss = 0.0;
    for (double a : accuracies) ss += (a - r.mean_accuracy) * (a - r.mean_accuracy);
    r.ci95_halfwidth = 1.96 * std::sqrt(ss / n) / std::sqrt(n);
  }
  r.accuracies = std::move(accuracies);
  return r;
}

struct MetricsPoint {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> val_accuracy;
};

struct TrainState {
  ScorerParams params;
  std::size_t step = 0;
  OptimizerState optimizer;
  std::uint64_t root_seed = 0;
  double loss_ema = 0.0;
  double accuracy_ema = 0.0;
  ScorerParams best_params;
  std::optional<double> best_val_accuracy;
  std::vector<MetricsPoint> history;
};

inline std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

inline std::uint64_t eval_episode_seed(std::uint64_t root, Split split, std::size_t e) {
  return derive_seed(root, std::string("eval-episode-") + to_string(split), e);
}
inline std::uint64_t eval_stream_seed(std::uint64_t root, Split split, std::size_t e) {
  return derive_seed(root, std::string("eval-forward-") + to_string(split), e);
}

// Runs `episodes` evaluation episodes on `split`. Per-episode seeds are
// derived up front, results stored by index, and reduced in index order, so
// the thread count never changes the report.
inline EvalReport evaluate(const EmbeddingDataset& dataset, const RunConfig& config,
                           const ScorerParams& params, Split split = Split::test,
                           std::optional<std::size_t> episodes = std::nullopt) {
  config.validate_for(dataset.num_patches());
  params.validate(config.k_patches);
  const std::size_t n = episodes.value_or(config.eval_episodes);
  std::vector<double> acc(n, 0.0);
  std::vector<double> loss(n, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    for (;;) {
      const std::size_t e = next.fetch_add(1);
      if (e >= n) return;
      try {
        const Episode ep =
            sample_episode(dataset, config.episode_spec(eval_episode_seed(config.seed, split, e)),
                           split);
        for (const auto& cls : ep.class_slots())
          if (dataset.split_assignment().at(cls) != split)
            throw InvariantError("split leakage: class '" + cls + "' is not in split " +
                                 to_string(split));
        const auto out = run_episode(ep, config, params, eval_stream_seed(config.seed, split, e),
                                     RunMode::eval);
        acc[e] = out.accuracy;
        loss[e] = out.loss;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };

  const std::size_t n_threads = std::min(resolve_threads(config.threads), std::max<std::size_t>(n, 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  double loss_sum = 0.0;
  for (double l : loss) loss_sum += l;
  return summarize(std::move(acc), n ? loss_sum / static_cast<double>(n) : 0.0);
}

// True when `split` can host an episode of the configured shape.
inline bool split_supports(const EmbeddingDataset& dataset, const RunConfig& config, Split split) {
  std::size_t eligible = 0;
  for (const auto& cls : dataset.classes_in(split))
    if (dataset.class_index().at(cls).size() >= config.m_shot + config.n_query) ++eligible;
  return eligible >= config.n_way;
}

struct TrainOptions {
  std::ostream* log = nullptr;
  // Start from these parameters instead of a fresh initialisation.
  std::optional<ScorerParams> initial_params;
};

inline TrainState init_train_state(const RunConfig& config) {
  TrainState s;
  s.root_seed = config.seed;
  s.params = init_scorer(config.k_patches, config.hidden, config.seed);
  s.best_params = s.params;
  return s;
}

// Trains on the train split for config.train_episodes episodes, validating
// every config.val_every episodes and keeping the best-on-val parameters.
inline TrainState train(const EmbeddingDataset& dataset, const RunConfig& config,
                        const TrainOptions& options = {}) {
  config.validate_for(dataset.num_patches());
  TrainState state = init_train_state(config);
  if (options.initial_params) {
    options.initial_params->validate(config.k_patches);
    state.params = *options.initial_params;
    state.best_params = state.params;
  }
  const bool can_validate =
      config.val_every > 0 && config.val_episodes > 0 && split_supports(dataset, config, Split::val);
  if (options.log && config.val_every > 0 && !can_validate)
    *options.log << "validation disabled: val split cannot host a " << config.n_way << "-way "
                 << config.m_shot << "-shot episode\n";

  const double ema = 0.98;
  for (std::size_t t = 0; t < config.train_episodes; ++t) {
    const Episode ep = sample_episode(
        dataset, config.episode_spec(derive_seed(config.seed, "train-episode", t)), Split::train);
    auto out = run_episode(ep, config, state.params, derive_seed(config.seed, "train-forward", t),
                           RunMode::train);
    if (!std::isfinite(out.loss))
      throw DivergenceError("loss became non-finite at step " + std::to_string(state.step));
    apply_update(state.params, *out.grads, config.optimizer, state.optimizer);
    if (!state.params.all_finite())
      throw DivergenceError("parameters became non-finite at step " + std::to_string(state.step));
    ++state.step;
    state.loss_ema = state.step == 1 ? out.loss : ema * state.loss_ema + (1 - ema) * out.loss;
    state.accuracy_ema =
        state.step == 1 ? out.accuracy : ema * state.accuracy_ema + (1 - ema) * out.accuracy;

    const bool validate_now = can_validate && state.step % config.val_every == 0;
    const bool log_now = config.log_every > 0 && state.step % config.log_every == 0;
    if (validate_now || log_now || state.step == config.train_episodes) {
      MetricsPoint point{state.step, state.loss_ema, state.accuracy_ema, std::nullopt};
      if (validate_now) {
        const auto report =
            evaluate(dataset, config, state.params, Split::val, config.val_episodes);
        point.val_accuracy = report.mean_accuracy;
        if (!state.best_val_accuracy || report.mean_accuracy > *state.best_val_accuracy) {
          state.best_val_accuracy = report.mean_accuracy;
          state.best_params = state.params;
        }
      }
      state.history.push_back(point);
      if (options.log) {
        *options.log << "step " << state.step << " loss " << std::fixed << std::setprecision(4)
                     << point.loss << " acc " << point.accuracy;
        if (point.val_accuracy) *options.log << " val_acc " << *point.val_accuracy;
        *options.log << std::defaultfloat << '\n';
      }
    }
  }
  if (!state.best_val_accuracy) state.best_params = state.params;
  return state;
}

// Repeated optimisation on one fixed episode, with a fresh selection draw
// every step. Returns the per-step loss (before each update).
inline std::vector<double> fit_episode(const Episode& episode, const RunConfig& config,
                                       ScorerParams& params, std::size_t steps) {
  OptimizerState opt;
  std::vector<double> losses;
  losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    auto out = run_episode(episode, config, params, derive_seed(config.seed, "fit-episode", s),
                           RunMode::train);
    if (!std::isfinite(out.loss))
      throw DivergenceError("loss became non-finite at step " + std::to_string(s));
    losses.push_back(out.loss);
    apply_update(params, *out.grads, config.optimizer, opt);
  }
  return losses;
}

}  // namespace spff
