#pragma once

// Declarative run configuration. Defaults reproduce the 5-way 5-shot,
// K=98, lambda=2 setting; a JSON file overrides any subset of fields.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spff/error.hpp"
#include "spff/rng.hpp"
#include "spff/types.hpp"

namespace spff {

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AblationConfig {
  std::vector<std::size_t> k_list{32, 49, 64, 98, 128, 164, 196};
  std::vector<SelectionKind> k_modes{SelectionKind::stochastic};
  std::vector<double> fractions{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<DistanceMetric> metrics{DistanceMetric::cosine,
                                      DistanceMetric::manhattan,
                                      DistanceMetric::euclidean};
  bool sweep_k = true;
  bool sweep_fraction = true;
  bool sweep_metric = true;
};

struct RunConfig {
  // episode
  std::size_t n_way = 5;
  std::size_t m_shot = 5;
  std::size_t n_query = 15;
  // filter
  std::size_t k_patches = 98;
  double lambda_class = 2.0;
  SelectionMode selection = SelectionMode::stochastic();
  // scorer
  DistanceMetric metric = DistanceMetric::cosine;
  std::vector<std::size_t> hidden{256};
  // training / evaluation
  OptimizerConfig optimizer;
  std::size_t train_episodes = 10000;
  std::size_t val_every = 200;
  std::size_t val_episodes = 100;
  std::size_t eval_episodes = 1000;
  std::size_t log_every = 100;
  std::uint64_t seed = 0;
  // 0 = hardware concurrency. Does not affect results.
  std::size_t threads = 0;

  AblationConfig ablation;

  EpisodeSpec episode_spec(std::uint64_t s) const {
    return EpisodeSpec{n_way, m_shot, n_query, s};
  }

  void validate() const {
    if (n_way < 2) throw ConfigError("episode.n_way must be >= 2");
    if (m_shot < 1) throw ConfigError("episode.m_shot must be >= 1");
    if (n_query < 1) throw ConfigError("episode.n_query must be >= 1");
    if (k_patches < 1) throw ConfigError("filter.k_patches must be >= 1");
    if (!std::isfinite(lambda_class)) throw ConfigError("filter.lambda must be finite");
    if (!(selection.stochastic_fraction >= 0.0 &&
          selection.stochastic_fraction <= 1.0))
      throw ConfigError("filter.stochastic_fraction must lie in [0, 1]");
    for (auto h : hidden)
      if (h < 1) throw ConfigError("scorer.hidden widths must be >= 1");
    if (!(optimizer.learning_rate >= 0.0))
      throw ConfigError("optimizer.learning_rate must be >= 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
        !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
      throw ConfigError("optimizer betas must lie in [0, 1)");
    if (!(optimizer.epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be > 0");
    if (eval_episodes < 1) throw ConfigError("schedule.eval_episodes must be >= 1");
    for (double f : ablation.fractions)
      if (!(f >= 0.0 && f <= 1.0))
        throw ConfigError("ablation.fractions must lie in [0, 1]");
    for (auto k : ablation.k_list)
      if (k < 1) throw ConfigError("ablation.k_list entries must be >= 1");
  }

  // Checks that depend on the dataset's patch count.
  void validate_for(std::size_t num_patches) const {
    validate();
    if (k_patches > num_patches)
      throw ConfigError("filter.k_patches (" + std::to_string(k_patches) +
                        ") exceeds patches per image (" +
                        std::to_string(num_patches) + ")");
  }
};

inline const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "sgd";
}

inline nlohmann::json to_json(const RunConfig& c, bool include_threads = true) {
  using nlohmann::json;
  json kmodes = json::array();
  for (auto m : c.ablation.k_modes) kmodes.push_back(to_string(m));
  json metrics = json::array();
  for (auto m : c.ablation.metrics) metrics.push_back(to_string(m));
  json j = {
      {"episode", {{"n_way", c.n_way}, {"m_shot", c.m_shot}, {"n_query", c.n_query}}},
      {"filter",
       {{"k_patches", c.k_patches},
        {"lambda", c.lambda_class},
        {"mode", to_string(c.selection.kind)},
        {"stochastic_fraction", c.selection.stochastic_fraction}}},
      {"scorer", {{"metric", to_string(c.metric)}, {"hidden", c.hidden}}},
      {"optimizer",
       {{"kind", to_string(c.optimizer.kind)},
        {"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon}}},
      {"schedule",
       {{"train_episodes", c.train_episodes},
        {"val_every", c.val_every},
        {"val_episodes", c.val_episodes},
        {"eval_episodes", c.eval_episodes},
        {"log_every", c.log_every}}},
      {"ablation",
       {{"k_list", c.ablation.k_list},
        {"k_modes", kmodes},
        {"fractions", c.ablation.fractions},
        {"metrics", metrics},
        {"sweep_k", c.ablation.sweep_k},
        {"sweep_fraction", c.ablation.sweep_fraction},
        {"sweep_metric", c.ablation.sweep_metric}}},
      {"seed", c.seed},
  };
  if (include_threads) j["threads"] = c.threads;
  return j;
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out,
                const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field '" + path + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& obj,
                           std::initializer_list<const char*> known,
                           const std::string& path) {
  if (!obj.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config field '" + path + key + "'");
  }
}

}  // namespace detail

// Overlays `j` on `base`. Unknown keys are errors.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  using detail::read_field;
  using detail::reject_unknown;
  reject_unknown(j, {"episode", "filter", "scorer", "optimizer", "schedule",
                     "ablation", "seed", "threads"},
                 "");
  if (j.contains("episode")) {
    const auto& e = j["episode"];
    reject_unknown(e, {"n_way", "m_shot", "n_query"}, "episode.");
    read_field(e, "n_way", c.n_way, "episode.");
    read_field(e, "m_shot", c.m_shot, "episode.");
    read_field(e, "n_query", c.n_query, "episode.");
  }
  if (j.contains("filter")) {
    const auto& f = j["filter"];
    reject_unknown(f, {"k_patches", "lambda", "mode", "stochastic_fraction"}, "filter.");
    read_field(f, "k_patches", c.k_patches, "filter.");
    read_field(f, "lambda", c.lambda_class, "filter.");
    std::string mode = to_string(c.selection.kind);
    read_field(f, "mode", mode, "filter.");
    auto kind = parse_selection_kind(mode);
    if (!kind) throw ConfigError("unknown selection mode '" + mode + "'");
    c.selection.kind = *kind;
    read_field(f, "stochastic_fraction", c.selection.stochastic_fraction, "filter.");
  }
  if (j.contains("scorer")) {
    const auto& s = j["scorer"];
    reject_unknown(s, {"metric", "hidden"}, "scorer.");
    std::string metric = to_string(c.metric);
    read_field(s, "metric", metric, "scorer.");
    auto m = parse_metric(metric);
    if (!m) throw ConfigError("unknown distance metric '" + metric + "'");
    c.metric = *m;
    read_field(s, "hidden", c.hidden, "scorer.");
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    reject_unknown(o, {"kind", "learning_rate", "beta1", "beta2", "epsilon"}, "optimizer.");
    std::string kind = to_string(c.optimizer.kind);
    read_field(o, "kind", kind, "optimizer.");
    if (kind == "adam") c.optimizer.kind = OptimizerKind::adam;
    else if (kind == "sgd") c.optimizer.kind = OptimizerKind::sgd;
    else throw ConfigError("unknown optimizer '" + kind + "'");
    read_field(o, "learning_rate", c.optimizer.learning_rate, "optimizer.");
    read_field(o, "beta1", c.optimizer.beta1, "optimizer.");
    read_field(o, "beta2", c.optimizer.beta2, "optimizer.");
    read_field(o, "epsilon", c.optimizer.epsilon, "optimizer.");
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    reject_unknown(s, {"train_episodes", "val_every", "val_episodes", "eval_episodes",
                       "log_every"},
                   "schedule.");
    read_field(s, "train_episodes", c.train_episodes, "schedule.");
    read_field(s, "val_every", c.val_every, "schedule.");
    read_field(s, "val_episodes", c.val_episodes, "schedule.");
    read_field(s, "eval_episodes", c.eval_episodes, "schedule.");
    read_field(s, "log_every", c.log_every, "schedule.");
  }
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    reject_unknown(a, {"k_list", "k_modes", "fractions", "metrics", "sweep_k",
                       "sweep_fraction", "sweep_metric"},
                   "ablation.");
    read_field(a, "k_list", c.ablation.k_list, "ablation.");
    read_field(a, "fractions", c.ablation.fractions, "ablation.");
    read_field(a, "sweep_k", c.ablation.sweep_k, "ablation.");
    read_field(a, "sweep_fraction", c.ablation.sweep_fraction, "ablation.");
    read_field(a, "sweep_metric", c.ablation.sweep_metric, "ablation.");
    if (a.contains("k_modes")) {
      std::vector<std::string> names;
      read_field(a, "k_modes", names, "ablation.");
      c.ablation.k_modes.clear();
      for (const auto& n : names) {
        auto k = parse_selection_kind(n);
        if (!k || *k == SelectionKind::mixed)
          throw ConfigError("ablation.k_modes: unsupported mode '" + n + "'");
        c.ablation.k_modes.push_back(*k);
      }
    }
    if (a.contains("metrics")) {
      std::vector<std::string> names;
      read_field(a, "metrics", names, "ablation.");
      c.ablation.metrics.clear();
      for (const auto& n : names) {
        auto m = parse_metric(n);
        if (!m) throw ConfigError("ablation.metrics: unknown metric '" + n + "'");
        c.ablation.metrics.push_back(*m);
      }
    }
  }
  read_field(j, "seed", c.seed, "");
  read_field(j, "threads", c.threads, "");
  if (c.selection.kind == SelectionKind::stochastic) c.selection.stochastic_fraction = 1.0;
  if (c.selection.kind == SelectionKind::deterministic ||
      c.selection.kind == SelectionKind::random)
    c.selection.stochastic_fraction = 0.0;
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// Hash of every result-affecting field (thread count excluded).
inline std::uint64_t config_hash(const RunConfig& c) {
  return hash_tag(to_json(c, /*include_threads=*/false).dump());
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace spff
