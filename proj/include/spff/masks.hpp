#pragma once

// Per-image selection masks (stochastic and deterministic) for external
// overlay rendering.

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "spff/config.hpp"
#include "spff/error.hpp"
#include "spff/rng.hpp"
#include "spff/stochastic_filter.hpp"
#include "spff/types.hpp"

namespace spff {

// Square grid when P is a perfect square, otherwise a single row.
inline std::pair<std::size_t, std::size_t> patch_grid(std::size_t num_patches) {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(num_patches))));
  if (side * side == num_patches) return {side, side};
  return {1, num_patches};
}

inline nlohmann::json export_masks(const EmbeddingDataset& dataset, const RunConfig& config,
                                   const std::vector<std::string>& image_ids) {
  config.validate_for(dataset.num_patches());
  const auto [rows, cols] = patch_grid(dataset.num_patches());
  nlohmann::json images = nlohmann::json::array();
  for (const auto& id : image_ids) {
    const auto index = dataset.find_image(id);
    if (!index) throw ConfigError("unknown image id: " + id);
    const auto& item = *dataset.item(*index);

    Rng stochastic_rng(derive_seed(config.seed, "mask", *index));
    Rng unused(0);
    const auto stochastic =
        filter_patches(item, config.k_patches, config.lambda_class, SelectionMode::stochastic(),
                       stochastic_rng);
    const auto deterministic = filter_patches(item, config.k_patches, config.lambda_class,
                                              SelectionMode::deterministic(), unused);
    std::vector<double> probs(stochastic.probabilities.data(),
                              stochastic.probabilities.data() + stochastic.probabilities.size());
    nlohmann::json entry{{"image_id", id},
                         {"label", item.label()},
                         {"dataset_index", *index},
                         {"num_patches", item.num_patches()},
                         {"grid", {rows, cols}},
                         {"probabilities", probs},
                         {"stochastic", {{"indices", stochastic.indices}}},
                         {"deterministic", {{"indices", deterministic.indices}}}};
    if (!item.foreground().empty()) entry["foreground"] = item.foreground();
    images.push_back(std::move(entry));
  }
  return {{"config_hash", hex64(config_hash(config))},
          {"seed", config.seed},
          {"k_patches", config.k_patches},
          {"lambda", config.lambda_class},
          {"images", images}};
}

}  // namespace spff
