#pragma once

// Command-line surface: gen-synthetic, train, eval, ablate, export-masks,
// inspect. Exit codes: 0 success, 1 validation, 2 runtime.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spff/ablation.hpp"
#include "spff/checkpoint.hpp"
#include "spff/config.hpp"
#include "spff/data_io.hpp"
#include "spff/error.hpp"
#include "spff/masks.hpp"
#include "spff/synthetic.hpp"
#include "spff/trainer.hpp"

namespace spff::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Flag overrides layered on top of the config file.
struct Overrides {
  std::optional<std::size_t> n_way, m_shot, n_query, k_patches, episodes, train_episodes,
      threads, val_every, val_episodes;
  std::optional<double> lambda, fraction, learning_rate;
  std::optional<std::string> mode, metric, optimizer;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> hidden;

  void attach(CLI::App& app) {
    app.add_option("--way", n_way, "classes per episode (N)");
    app.add_option("--shots", m_shot, "support items per class (M)");
    app.add_option("--queries", n_query, "query items per class");
    app.add_option("--k", k_patches, "patches selected per image (K)");
    app.add_option("--lambda", lambda, "class-token weight in fusion");
    app.add_option("--mode", mode, "stochastic|deterministic|random|mixed");
    app.add_option("--fraction", fraction, "stochastic share for mixed mode");
    app.add_option("--metric", metric, "cosine|manhattan|euclidean");
    app.add_option("--hidden", hidden, "scorer hidden widths");
    app.add_option("--optimizer", optimizer, "adam|sgd");
    app.add_option("--lr", learning_rate, "learning rate");
    app.add_option("--train-episodes", train_episodes, "training episodes");
    app.add_option("--val-every", val_every, "validate every N training episodes (0 = never)");
    app.add_option("--val-episodes", val_episodes, "episodes per validation");
    app.add_option("--episodes", episodes, "evaluation episodes");
    app.add_option("--seed", seed, "root seed");
    app.add_option("--threads", threads, "evaluation workers (0 = all cores)");
  }

  RunConfig apply(RunConfig c) const {
    if (n_way) c.n_way = *n_way;
    if (m_shot) c.m_shot = *m_shot;
    if (n_query) c.n_query = *n_query;
    if (k_patches) c.k_patches = *k_patches;
    if (lambda) c.lambda_class = *lambda;
    if (mode) {
      auto k = parse_selection_kind(*mode);
      if (!k) throw ConfigError("unknown selection mode '" + *mode + "'");
      c.selection.kind = *k;
      c.selection.stochastic_fraction = *k == SelectionKind::stochastic ? 1.0
                                        : *k == SelectionKind::mixed    ? c.selection.stochastic_fraction
                                                                        : 0.0;
    }
    if (fraction) c.selection.stochastic_fraction = *fraction;
    if (metric) {
      auto m = parse_metric(*metric);
      if (!m) throw ConfigError("unknown distance metric '" + *metric + "'");
      c.metric = *m;
    }
    if (!hidden.empty()) c.hidden = hidden;
    if (optimizer) {
      if (*optimizer == "adam") c.optimizer.kind = OptimizerKind::adam;
      else if (*optimizer == "sgd") c.optimizer.kind = OptimizerKind::sgd;
      else throw ConfigError("unknown optimizer '" + *optimizer + "'");
    }
    if (learning_rate) c.optimizer.learning_rate = *learning_rate;
    if (train_episodes) c.train_episodes = *train_episodes;
    if (val_every) c.val_every = *val_every;
    if (val_episodes) c.val_episodes = *val_episodes;
    if (episodes) c.eval_episodes = *episodes;
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    c.validate();
    return c;
  }
};

inline RunConfig resolve_config(const std::string& config_path, const Overrides& o) {
  RunConfig base = config_path.empty() ? RunConfig{} : load_config(config_path);
  return o.apply(base);
}

inline std::string describe(const RunConfig& c) {
  std::ostringstream os;
  os << c.n_way << "-way " << c.m_shot << "-shot, " << c.n_query << " queries/class, K=" << c.k_patches
     << ", lambda=" << c.lambda_class << ", mode=" << to_string(c.selection.kind);
  if (c.selection.kind == SelectionKind::mixed) os << "(" << c.selection.stochastic_fraction << ")";
  os << ", metric=" << to_string(c.metric) << ", seed=" << c.seed
     << ", config_hash=" << hex64(config_hash(c));
  return os.str();
}

inline void require_file(const std::string& path, const char* what) {
  if (path.empty() || !std::filesystem::is_regular_file(path))
    throw ConfigError(std::string(what) + " not found: " + path);
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError(FormatErrorKind::io, "cannot create output directory " + dir);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw FormatError(FormatErrorKind::io, "cannot open for writing: " + path);
  out << text;
}

inline nlohmann::json report_json(const EvalReport& r, const RunConfig& c, Split split) {
  return {{"config_hash", hex64(config_hash(c))},
          {"seed", c.seed},
          {"split", to_string(split)},
          {"config", to_json(c, false)},
          {"episodes", r.episodes},
          {"mean_accuracy", r.mean_accuracy},
          {"ci95_halfwidth", r.ci95_halfwidth},
          {"mean_loss", r.mean_loss},
          {"per_episode_accuracy", r.accuracies}};
}

inline std::string report_summary(const EvalReport& r, const RunConfig& c, Split split) {
  std::ostringstream os;
  os << "config: " << describe(c) << '\n'
     << "split: " << to_string(split) << '\n'
     << "episodes: " << r.episodes << '\n'
     << std::fixed << std::setprecision(2) << "accuracy: " << 100.0 * r.mean_accuracy << " +- "
     << 100.0 * r.ci95_halfwidth << " %\n";
  return os.str();
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot classification with stochastic patch filtering over patch embeddings"};
  app.require_subcommand(1);

  // gen-synthetic
  SyntheticSpec synth;
  std::string synth_out;
  std::vector<double> split_fracs;
  auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic .spffemb dataset");
  gen->add_option("--out", synth_out, "output .spffemb path")->required();
  gen->add_option("--classes", synth.n_classes, "number of classes");
  gen->add_option("--items", synth.items_per_class, "items per class");
  gen->add_option("--patches", synth.num_patches, "patches per image (P)");
  gen->add_option("--dim", synth.dim, "embedding width (D)");
  gen->add_option("--rho", synth.foreground_fraction, "foreground fraction");
  gen->add_option("--noise", synth.noise_sigma, "foreground noise sigma");
  gen->add_option("--scale", synth.prototype_scale, "prototype scale");
  gen->add_option("--pool", synth.background_pool_size, "background pool size");
  gen->add_option("--splits", split_fracs, "train val test class fractions")->expected(3);
  gen->add_option("--seed", synth.seed, "generator seed");

  // shared options
  std::string data_path, config_path, out_dir, checkpoint_path, split_name = "test";
  std::string out_file;
  bool train_per_cell = false, as_json = false;
  std::vector<std::string> image_ids;
  Overrides train_o, eval_o, ablate_o, mask_o;

  auto* tr = app.add_subcommand("train", "episodic training on the train split");
  tr->add_option("--data", data_path, "dataset .spffemb")->required();
  tr->add_option("--config", config_path, "JSON run configuration");
  tr->add_option("--out", out_dir, "output directory")->required();
  train_o.attach(*tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over random episodes");
  ev->add_option("--data", data_path, "dataset .spffemb")->required();
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint .spffckpt")->required();
  ev->add_option("--config", config_path, "JSON run configuration");
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--split", split_name, "train|val|test");
  eval_o.attach(*ev);

  auto* ab = app.add_subcommand("ablate", "K / fraction / metric sweeps to CSV");
  ab->add_option("--data", data_path, "dataset .spffemb")->required();
  ab->add_option("--config", config_path, "JSON run configuration");
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--checkpoint", checkpoint_path, "checkpoint used where its width fits");
  ab->add_flag("--train-per-cell", train_per_cell, "train a fresh scorer for every cell");
  ablate_o.attach(*ab);

  auto* mk = app.add_subcommand("export-masks", "selected patch indices and probabilities per image");
  mk->add_option("--data", data_path, "dataset .spffemb")->required();
  mk->add_option("--config", config_path, "JSON run configuration");
  mk->add_option("--checkpoint", checkpoint_path, "checkpoint (optional)");
  mk->add_option("--images", image_ids, "image ids")->required();
  mk->add_option("--out", out_file, "output JSON path")->required();
  mask_o.attach(*mk);

  auto* in = app.add_subcommand("inspect", "print header and validation report of a dataset");
  in->add_option("--data", data_path, "dataset .spffemb")->required();
  in->add_flag("--json", as_json, "emit JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen) {
      if (!split_fracs.empty()) synth.split_fractions = {split_fracs[0], split_fracs[1], split_fracs[2]};
      const auto ds = generate_synthetic(synth);
      write_dataset(ds, synth_out);
      write_manifest(ds, manifest_path_for(synth_out), to_json(synth));
      out << "wrote " << ds.size() << " items (" << ds.class_index().size() << " classes, P="
          << ds.num_patches() << ", D=" << ds.dim() << ") to " << synth_out << '\n';
      return kExitOk;
    }

    if (*in) {
      require_file(data_path, "dataset");
      auto r = ByteReader::from_file(data_path);
      const auto draft = decode_dataset(r);
      const auto violations = validate_dataset(draft);
      if (as_json) {
        nlohmann::json v = nlohmann::json::array();
        for (const auto& x : violations) v.push_back(x.message);
        nlohmann::json splits;
        for (Split s : kAllSplits) splits[to_string(s)] = draft.split_classes[static_cast<int>(s)];
        out << nlohmann::json{{"items", draft.items.size()},
                              {"num_patches", draft.num_patches},
                              {"dim", draft.dim},
                              {"splits", splits},
                              {"violations", v}}
                   .dump(2)
            << '\n';
      } else {
        out << "items: " << draft.items.size() << "\nP: " << draft.num_patches
            << "\nD: " << draft.dim << '\n';
        for (Split s : kAllSplits)
          out << to_string(s) << " classes: " << draft.split_classes[static_cast<int>(s)].size() << '\n';
        if (violations.empty()) out << "OK: no violations\n";
        for (const auto& v : violations) out << "violation: " << v.message << '\n';
      }
      return violations.empty() ? kExitOk : kExitValidation;
    }

    if (*tr) {
      require_file(data_path, "dataset");
      const RunConfig cfg = resolve_config(config_path, train_o);
      const auto ds = read_dataset(data_path);
      cfg.validate_for(ds.num_patches());
      out << "config: " << describe(cfg) << '\n';
      ensure_dir(out_dir);
      const auto state = train(ds, cfg, TrainOptions{&out, std::nullopt});
      const auto base = std::filesystem::path(out_dir);
      write_checkpoint((base / "checkpoint.spffckpt").string(), state, state.params);
      write_checkpoint((base / "best.spffckpt").string(), state, state.best_params);
      write_checkpoint_sidecar((base / "checkpoint.json").string(), state, cfg);
      nlohmann::json metrics{{"config_hash", hex64(config_hash(cfg))},
                             {"seed", cfg.seed},
                             {"steps", state.step},
                             {"final_loss_ema", state.loss_ema},
                             {"final_accuracy_ema", state.accuracy_ema},
                             {"best_val_accuracy", state.best_val_accuracy
                                                       ? nlohmann::json(*state.best_val_accuracy)
                                                       : nlohmann::json(nullptr)},
                             {"history", history_json(state)}};
      write_text((base / "train_metrics.json").string(), metrics.dump(2) + "\n");
      std::ostringstream summary;
      summary << "config: " << describe(cfg) << "\nsteps: " << state.step << "\nloss (ema): "
              << state.loss_ema << "\naccuracy (ema): " << state.accuracy_ema << '\n';
      if (state.best_val_accuracy) summary << "best val accuracy: " << *state.best_val_accuracy << '\n';
      write_text((base / "train_summary.txt").string(), summary.str());
      out << summary.str();
      return kExitOk;
    }

    if (*ev) {
      require_file(data_path, "dataset");
      require_file(checkpoint_path, "checkpoint");
      const RunConfig cfg = resolve_config(config_path, eval_o);
      const auto split = parse_split(split_name);
      if (!split) throw ConfigError("unknown split '" + split_name + "'");
      const auto ds = read_dataset(data_path);
      cfg.validate_for(ds.num_patches());
      const auto ckpt = read_checkpoint(checkpoint_path);
      out << "config: " << describe(cfg) << '\n';
      ensure_dir(out_dir);
      const auto report = evaluate(ds, cfg, ckpt.params, *split);
      const auto base = std::filesystem::path(out_dir);
      write_text((base / "eval_report.json").string(), report_json(report, cfg, *split).dump(2) + "\n");
      const auto summary = report_summary(report, cfg, *split);
      write_text((base / "eval_summary.txt").string(), summary);
      out << summary;
      return kExitOk;
    }

    if (*ab) {
      require_file(data_path, "dataset");
      const RunConfig cfg = resolve_config(config_path, ablate_o);
      const auto ds = read_dataset(data_path);
      AblationOptions opts;
      opts.train_per_cell = train_per_cell;
      opts.log = &out;
      if (!checkpoint_path.empty()) {
        require_file(checkpoint_path, "checkpoint");
        opts.checkpoint = read_checkpoint(checkpoint_path).params;
      }
      if (!opts.checkpoint && !opts.train_per_cell)
        throw ConfigError("ablate needs --checkpoint or --train-per-cell");
      out << "config: " << describe(cfg) << '\n';
      ensure_dir(out_dir);
      const auto cells = run_ablation(ds, cfg, opts);
      const auto path = (std::filesystem::path(out_dir) / "ablation.csv").string();
      write_text(path, ablation_csv(cells, cfg));
      out << "wrote " << cells.size() << " cells to " << path << '\n';
      return kExitOk;
    }

    if (*mk) {
      require_file(data_path, "dataset");
      if (!checkpoint_path.empty()) {
        require_file(checkpoint_path, "checkpoint");
        (void)read_checkpoint(checkpoint_path);
      }
      const RunConfig cfg = resolve_config(config_path, mask_o);
      const auto ds = read_dataset(data_path);
      write_text(out_file, export_masks(ds, cfg, image_ids).dump(2) + "\n");
      out << "wrote masks for " << image_ids.size() << " images to " << out_file << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const InvariantError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return kExitValidation;
  } catch (const SamplingError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace spff::cli
