#pragma once

// Synthetic embedding datasets with known foreground patches.
//
// Each class has a Gaussian prototype. An item places round(rho * P)
// foreground patches (prototype + noise) at random positions; the rest are
// drawn from a background pool shared by all classes, so they carry no
// class signal. The class token is the mean foreground patch plus a little
// noise.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "spff/data_io.hpp"
#include "spff/error.hpp"
#include "spff/rng.hpp"
#include "spff/types.hpp"

namespace spff {

struct SyntheticSpec {
  std::size_t n_classes = 20;
  std::size_t items_per_class = 50;
  std::size_t num_patches = 196;
  std::size_t dim = 384;
  double prototype_scale = 1.0;
  double foreground_fraction = 0.25;  // rho
  double noise_sigma = 0.05;
  std::size_t background_pool_size = 256;
  std::array<double, 3> split_fractions{0.7, 0.1, 0.2};
  std::uint64_t seed = 0;

  std::size_t foreground_count() const {
    const auto n = static_cast<std::size_t>(
        std::lround(foreground_fraction * static_cast<double>(num_patches)));
    return std::clamp<std::size_t>(n, 1, num_patches);
  }

  void validate() const {
    if (n_classes < 3) throw ConfigError("synthetic: n_classes must be >= 3");
    if (items_per_class < 1) throw ConfigError("synthetic: items_per_class must be >= 1");
    if (num_patches < 1 || dim < 1) throw ConfigError("synthetic: P and D must be >= 1");
    if (!(foreground_fraction > 0.0 && foreground_fraction <= 1.0))
      throw ConfigError("synthetic: foreground_fraction must lie in (0, 1]");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic: noise_sigma must be >= 0");
    if (!(prototype_scale > 0.0)) throw ConfigError("synthetic: prototype_scale must be > 0");
    if (background_pool_size < 1) throw ConfigError("synthetic: background_pool_size must be >= 1");
  }
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"generator", "synthetic"},
          {"n_classes", s.n_classes},
          {"items_per_class", s.items_per_class},
          {"num_patches", s.num_patches},
          {"dim", s.dim},
          {"prototype_scale", s.prototype_scale},
          {"foreground_fraction", s.foreground_fraction},
          {"noise_sigma", s.noise_sigma},
          {"background_pool_size", s.background_pool_size},
          {"split_fractions", s.split_fractions},
          {"seed", s.seed}};
}

inline std::string synthetic_class_name(std::size_t c) {
  std::string s = std::to_string(c);
  return "class_" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

inline EmbeddingDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t P = spec.num_patches;
  const std::size_t D = spec.dim;
  const std::size_t n_fg = spec.foreground_count();

  Rng pool_rng(derive_seed(spec.seed, "synthetic-background"));
  std::vector<std::vector<double>> pool(spec.background_pool_size, std::vector<double>(D));
  for (auto& v : pool)
    for (auto& x : v) x = spec.prototype_scale * pool_rng.normal();

  DatasetDraft draft;
  draft.num_patches = static_cast<std::uint32_t>(P);
  draft.dim = static_cast<std::uint32_t>(D);
  std::vector<std::string> classes;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    const std::string name = synthetic_class_name(c);
    classes.push_back(name);
    Rng rng(derive_seed(spec.seed, "synthetic-class", c));
    std::vector<double> prototype(D);
    for (auto& x : prototype) x = spec.prototype_scale * rng.normal();

    for (std::size_t i = 0; i < spec.items_per_class; ++i) {
      ItemDraft item;
      item.label = name;
      item.image_id = name + "/img_" + std::to_string(i);
      std::vector<std::uint32_t> positions(P);
      std::iota(positions.begin(), positions.end(), 0u);
      for (std::size_t f = 0; f < n_fg; ++f) {
        const auto j = f + static_cast<std::size_t>(rng.below(P - f));
        std::swap(positions[f], positions[j]);
      }
      item.foreground.assign(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(n_fg));
      std::sort(item.foreground.begin(), item.foreground.end());

      std::vector<bool> is_fg(P, false);
      for (auto f : item.foreground) is_fg[f] = true;
      item.patches.resize(P * D);
      std::vector<double> token_acc(D, 0.0);
      for (std::size_t p = 0; p < P; ++p) {
        const std::vector<double>& base =
            is_fg[p] ? prototype : pool[static_cast<std::size_t>(rng.below(pool.size()))];
        for (std::size_t d = 0; d < D; ++d) {
          const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
          const auto v = static_cast<float>(base[d] + noise);
          item.patches[p * D + d] = v;
          if (is_fg[p]) token_acc[d] += v;
        }
      }
      const double token_sigma = spec.noise_sigma / std::sqrt(static_cast<double>(n_fg));
      item.class_token.resize(D);
      for (std::size_t d = 0; d < D; ++d) {
        const double noise = token_sigma > 0.0 ? token_sigma * rng.normal() : 0.0;
        item.class_token[d] = static_cast<float>(token_acc[d] / static_cast<double>(n_fg) + noise);
      }
      draft.items.push_back(std::move(item));
    }
  }
  draft.split_classes = make_splits(classes, spec.split_fractions, derive_seed(spec.seed, "synthetic-splits"));
  return EmbeddingDataset(draft);
}

}  // namespace spff
