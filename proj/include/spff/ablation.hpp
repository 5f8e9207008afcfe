#pragma once

// Sweeps over patch count K, stochastic fraction and distance metric, one
// evaluation per cell, reported as CSV.

#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spff/config.hpp"
#include "spff/error.hpp"
#include "spff/mlp.hpp"
#include "spff/trainer.hpp"
#include "spff/types.hpp"

namespace spff {

struct AblationCell {
  std::string sweep;  // "k", "fraction" or "metric"
  std::size_t k = 0;
  SelectionMode mode;
  DistanceMetric metric = DistanceMetric::cosine;
  EvalReport report;
};

struct AblationOptions {
  // Used for every cell whose k^2 matches its input width (unless
  // train_per_cell is set).
  std::optional<ScorerParams> checkpoint;
  bool train_per_cell = false;
  std::ostream* log = nullptr;
};

// Cell configurations in output order: K sweep (per configured k-mode),
// then fractions at the base K, then metrics at the base K and mode.
inline std::vector<AblationCell> ablation_cells(const RunConfig& base) {
  std::vector<AblationCell> cells;
  const auto& a = base.ablation;
  if (a.sweep_k)
    for (auto kind : a.k_modes)
      for (auto k : a.k_list) {
        SelectionMode m{kind, kind == SelectionKind::stochastic ? 1.0 : 0.0};
        cells.push_back({"k", k, m, base.metric, {}});
      }
  if (a.sweep_fraction)
    for (double f : a.fractions)
      cells.push_back({"fraction", base.k_patches, SelectionMode::mixed(f), base.metric, {}});
  if (a.sweep_metric)
    for (auto metric : a.metrics)
      cells.push_back({"metric", base.k_patches, base.selection, metric, {}});
  return cells;
}

inline RunConfig cell_config(const RunConfig& base, const AblationCell& cell) {
  RunConfig c = base;
  c.k_patches = cell.k;
  c.selection = cell.mode;
  c.metric = cell.metric;
  return c;
}

// Every cell uses the base seed, so cells that differ only in an equivalent
// selection mode produce identical numbers.
inline std::vector<AblationCell> run_ablation(const EmbeddingDataset& dataset, const RunConfig& base,
                                              const AblationOptions& options = {}) {
  base.validate();
  auto cells = ablation_cells(base);
  for (const auto& cell : cells)
    if (cell.k > dataset.num_patches())
      throw ConfigError("ablation K=" + std::to_string(cell.k) + " exceeds patches per image (" +
                        std::to_string(dataset.num_patches()) + ")");
  for (auto& cell : cells) {
    const RunConfig cfg = cell_config(base, cell);
    ScorerParams params;
    const bool fits = options.checkpoint && options.checkpoint->input_width() == cell.k * cell.k;
    if (options.train_per_cell) {
      params = train(dataset, cfg).best_params;
    } else if (fits) {
      params = *options.checkpoint;
    } else {
      throw ConfigError("no checkpoint with input width " + std::to_string(cell.k * cell.k) +
                        " for K=" + std::to_string(cell.k) + "; pass a matching checkpoint or train per cell");
    }
    cell.report = evaluate(dataset, cfg, params, Split::test);
    if (options.log)
      *options.log << cell.sweep << " k=" << cell.k << " mode=" << to_string(cell.mode.kind)
                   << " f=" << cell.mode.stochastic_fraction << " metric=" << to_string(cell.metric)
                   << " acc=" << cell.report.mean_accuracy << " +- " << cell.report.ci95_halfwidth
                   << '\n';
  }
  return cells;
}

inline std::string ablation_csv(const std::vector<AblationCell>& cells, const RunConfig& base) {
  std::ostringstream os;
  os << "sweep,k,mode,stochastic_fraction,metric,episodes,mean_accuracy,ci95_halfwidth,config_hash,seed\n";
  const std::string hash = hex64(config_hash(base));
  for (const auto& c : cells) {
    os << c.sweep << ',' << c.k << ',' << to_string(c.mode.kind) << ',' << std::fixed
       << std::setprecision(2) << c.mode.stochastic_fraction << ',' << to_string(c.metric) << ','
       << c.report.episodes << ',' << std::setprecision(6) << c.report.mean_accuracy << ','
       << c.report.ci95_halfwidth << ',' << hash << ',' << base.seed << '\n';
  }
  return os.str();
}

}  // namespace spff
