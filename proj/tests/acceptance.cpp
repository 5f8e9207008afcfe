// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Tolerances and time limits are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spff/spff.hpp"
#include "support.hpp"

using namespace spff;

namespace {

// ---- pinned tolerances ---------------------------------------------------

constexpr double kChiSquare2Dof001 = 9.21034037197618;  // chi2.ppf(0.99, 2)
constexpr double kFrequencyTolerance = 0.01;
constexpr double kProbabilitySumTolerance = 1e-6;
constexpr double kShiftTolerance = 1e-9;
constexpr double kGradStep = 1e-4;
constexpr double kGradRelTolerance = 1e-3;
constexpr double kGradAbsTolerance = 1e-9;
constexpr double kOverfitLoss = 0.01;
constexpr std::size_t kOverfitSteps = 500;
constexpr double kEndToEndAccuracy = 0.95;
constexpr double kRecoveryThreshold = 0.70;

constexpr double kSamplingSeconds = 5.0;
constexpr double kDistinctSeconds = 10.0;
constexpr double kGradientSeconds = 5.0;
constexpr double kOverfitSeconds = 30.0;
constexpr double kEndToEndSeconds = 300.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- shared synthetic setting --------------------------------------------

SyntheticSpec end_to_end_spec() {
  SyntheticSpec s;
  s.n_classes = 20;
  s.items_per_class = 50;
  s.num_patches = 64;
  s.dim = 32;
  s.foreground_fraction = 0.25;
  s.noise_sigma = 0.05;
  // 10/5/5 classes: the default 0.7/0.1/0.2 leaves four test classes,
  // too few for 5-way episodes.
  s.split_fractions = {0.5, 0.25, 0.25};
  s.seed = 0;
  return s;
}

const EmbeddingDataset& end_to_end_dataset() {
  static const EmbeddingDataset ds = generate_synthetic(end_to_end_spec());
  return ds;
}

std::size_t end_to_end_k() {
  return static_cast<std::size_t>(std::lround(0.25 * 64));
}

RunConfig end_to_end_config() {
  RunConfig c;
  c.k_patches = end_to_end_k();
  c.train_episodes = 300;
  c.val_every = 100;
  c.val_episodes = 20;
  c.log_every = 0;
  c.seed = 0;
  return c;
}

// ---- criteria ------------------------------------------------------------

Outcome sampling_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  VectorD p(3);
  p << 0.5, 0.3, 0.2;
  const std::size_t n = 100000;
  bool ok = true;
  std::ostringstream detail;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    double counts[3] = {0, 0, 0};
    for (std::size_t d = 0; d < n; ++d) counts[select_stochastic(p, 1, rng)[0]] += 1;
    double chi2 = 0.0, worst = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double e = p[i] * n;
      chi2 += (counts[i] - e) * (counts[i] - e) / e;
      worst = std::max(worst, std::abs(counts[i] / n - p[i]));
    }
    ok = ok && chi2 < kChiSquare2Dof001 && worst <= kFrequencyTolerance;
    detail << "seed " << seed << ": chi2=" << fmt("%.3f", chi2) << " max|f-p|=" << fmt("%.4f", worst)
           << "; ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kSamplingSeconds;
  detail << fmt("%.2fs", secs);
  return {ok, detail.str()};
}

Outcome distinctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng gen(2024);
  std::size_t bad = 0;
  const std::size_t cases = 10000;
  for (std::size_t c = 0; c < cases; ++c) {
    const auto P = 1 + static_cast<std::size_t>(gen.below(64));
    const auto k = 1 + static_cast<std::size_t>(gen.below(P));
    VectorD s(static_cast<Eigen::Index>(P));
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = 2.0 * gen.uniform() - 1.0;
    const auto p = similarity_to_probabilities(s);
    Rng rng(gen.next_u64());
    const double f = gen.uniform();
    for (const auto& idx : {select_stochastic(p, k, rng), select_deterministic(p, k),
                            select_random(P, k, rng), select_mixed(p, k, f, rng)}) {
      const std::set<std::uint32_t> u(idx.begin(), idx.end());
      bool in_range = true;
      for (auto i : idx) in_range = in_range && i < P;
      if (idx.size() != k || u.size() != k || !in_range) ++bad;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < kDistinctSeconds,
          std::to_string(cases) + " cases x 4 selectors, " + std::to_string(bad) + " violations; " +
              fmt("%.2fs", secs)};
}

Outcome k_equals_p() {
  const auto& ds = end_to_end_dataset();
  const std::size_t P = ds.num_patches();
  RunConfig c = end_to_end_config();
  c.k_patches = P;
  c.hidden = {32};
  const auto params = init_scorer(P, c.hidden, 5);
  const auto ep = sample_episode(ds, c.episode_spec(9), Split::test);

  bool same_indices = true;
  for (const auto& item : ds.items()) {
    Rng a(1), b(2), d(3);
    const auto s = filter_patches(*item, P, c.lambda_class, SelectionMode::stochastic(), a);
    const auto t = filter_patches(*item, P, c.lambda_class, SelectionMode::deterministic(), b);
    const auto r = filter_patches(*item, P, c.lambda_class, SelectionMode::random(), d);
    same_indices = same_indices && s.indices == t.indices && t.indices == r.indices &&
                   s.selected == t.selected && t.selected == r.selected;
  }
  c.selection = SelectionMode::deterministic();
  const auto ref = run_episode(ep, c, params, 11, RunMode::eval);
  bool same_scores = true;
  for (auto mode : {SelectionMode::stochastic(), SelectionMode::random()}) {
    c.selection = mode;
    const auto out = run_episode(ep, c, params, 12, RunMode::eval);
    same_scores = same_scores && out.scores.raw == ref.scores.raw &&
                  out.scores.aggregated == ref.scores.aggregated &&
                  out.scores.probabilities == ref.scores.probabilities;
  }
  return {same_indices && same_scores,
          std::string("sorted indices ") + (same_indices ? "identical" : "differ") +
              " over " + std::to_string(ds.size()) + " items; episode scores " +
              (same_scores ? "bit-identical" : "differ")};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig c;
  c.n_way = 2;
  c.m_shot = 1;
  c.n_query = 2;
  c.k_patches = 4;
  std::size_t checked = 0, failures = 0, refined = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto ep = spff::testing::gaussian_episode(seed, 2, 1, 2, 16, 8);
    const auto params = init_scorer(4, c.hidden, seed);
    const auto r = spff::testing::check_gradients(ep, c, params, seed, kGradStep,
                                                  kGradRelTolerance, kGradAbsTolerance);
    checked += r.checked;
    failures += r.failures;
    refined += r.refined;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < kGradientSeconds,
          std::to_string(checked) + " parameters over 3 seeds, " + std::to_string(failures) +
              " outside tolerance (" + std::to_string(refined) +
              " straddled a ReLU kink at the base step and were re-probed closer); " +
              fmt("%.2fs", secs)};
}

Outcome softmax_invariants() {
  Rng rng(77);
  std::size_t bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto rows = 1 + static_cast<Eigen::Index>(rng.below(8));
    const auto cols = 2 + static_cast<Eigen::Index>(rng.below(15));
    RowMatrixD s(rows, cols);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal(0.0, 30.0);
    const double shift = rng.normal(0.0, 100.0);
    const auto p = classify(s);
    const auto q = classify((s.array() + shift).matrix());
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (std::abs(p.row(r).sum() - 1.0) > kProbabilitySumTolerance) ++bad;
      if (argmax_row(p, r) != argmax_row(s, r)) ++bad;
    }
    if ((p - q).cwiseAbs().maxCoeff() > kShiftTolerance) ++bad;
    const auto v = similarity_to_probabilities(s.row(0).transpose());
    if (std::abs(v.sum() - 1.0) > kProbabilitySumTolerance) ++bad;
  }
  return {bad == 0, "1000 random score matrices, " + std::to_string(bad) + " violations"};
}

Outcome overfit_one_episode() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig c = end_to_end_config();
  c.n_query = 3;
  const auto ep = sample_episode(end_to_end_dataset(), c.episode_spec(4), Split::train);
  auto params = init_scorer(c.k_patches, c.hidden, c.seed);
  OptimizerState opt;
  double best = std::numeric_limits<double>::infinity();
  double initial = 0.0;
  std::size_t step = 0;
  for (; step < kOverfitSteps; ++step) {
    auto out = run_episode(ep, c, params, derive_seed(c.seed, "overfit", step), RunMode::train);
    if (step == 0) initial = out.loss;
    best = std::min(best, out.loss);
    if (out.loss < kOverfitLoss) break;
    apply_update(params, *out.grads, c.optimizer, opt);
  }
  const double secs = seconds_since(t0);
  return {best < kOverfitLoss && secs < kOverfitSeconds,
          "loss " + fmt("%.4f", initial) + " -> " + fmt("%.5f", best) + " at step " + std::to_string(step) + " (limit " +
              std::to_string(kOverfitSteps) + "); " + fmt("%.2fs", secs)};
}

struct EndToEnd {
  double accuracy = 0.0;
  double ci95 = 0.0;
  double seconds = 0.0;
};

EndToEnd run_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = generate_synthetic(end_to_end_spec());
  const auto cfg = end_to_end_config();
  const auto state = train(ds, cfg);
  const auto report = evaluate(ds, cfg, state.best_params, Split::test);
  return {report.mean_accuracy, report.ci95_halfwidth, seconds_since(t0)};
}

Outcome end_to_end() {
  const auto a = run_end_to_end();
  const auto b = run_end_to_end();
  const bool reproducible = a.accuracy == b.accuracy;
  return {a.accuracy >= kEndToEndAccuracy && reproducible && a.seconds < kEndToEndSeconds,
          "test accuracy " + fmt("%.4f", a.accuracy) + " +- " + fmt("%.4f", a.ci95) +
              ", rerun " + (reproducible ? "identical" : "differs (" + fmt("%.6f", b.accuracy) + ")") +
              "; " + fmt("%.1fs", a.seconds)};
}

Outcome foreground_recovery() {
  const auto& ds = end_to_end_dataset();
  const std::size_t k = end_to_end_k();
  Rng rng(derive_seed(0, "recovery"));
  double acc = 0.0;
  for (const auto& item : ds.items()) {
    const auto r = filter_patches(*item, k, 2.0, SelectionMode::stochastic(), rng);
    const std::set<std::uint32_t> fg(item->foreground().begin(), item->foreground().end());
    std::size_t hit = 0;
    for (auto i : r.indices) hit += fg.contains(i);
    acc += static_cast<double>(hit) / static_cast<double>(fg.size());
  }
  const double recovery = acc / static_cast<double>(ds.size());

  // Best case for a softmax over cosines: foreground at +1, background at -1.
  VectorD s = VectorD::Constant(static_cast<Eigen::Index>(ds.num_patches()), -1.0);
  s.head(static_cast<Eigen::Index>(k)).setConstant(1.0);
  const auto p = similarity_to_probabilities(s);
  Rng orng(1);
  double ideal = 0.0;
  const int trials = 20000;
  for (int t = 0; t < trials; ++t)
    for (auto i : select_stochastic(p, k, orng)) ideal += i < k ? 1.0 : 0.0;
  ideal /= static_cast<double>(k) * trials;

  return {recovery >= kRecoveryThreshold,
          "mean recovery " + fmt("%.4f", recovery) + " (threshold " + fmt("%.2f", kRecoveryThreshold) +
              "; ideal-separation ceiling " + fmt("%.4f", ideal) + ")"};
}

Outcome ablation_shape() {
  SyntheticSpec spec;
  spec.n_classes = 9;
  spec.items_per_class = 4;
  spec.num_patches = 196;
  spec.dim = 8;
  spec.split_fractions = {0.34, 0.33, 0.33};
  const auto ds = generate_synthetic(spec);
  RunConfig c;
  c.n_way = 2;
  c.m_shot = 1;
  c.n_query = 2;
  c.hidden = {4};
  c.train_episodes = 2;
  c.val_every = 0;
  c.eval_episodes = 3;
  c.ablation.k_modes = {SelectionKind::stochastic, SelectionKind::deterministic};
  AblationOptions opts;
  opts.train_per_cell = true;
  const auto cells = run_ablation(ds, c, opts);
  const auto csv = ablation_csv(cells, c);

  const std::size_t expected = 2 * 7 + 5 + 3;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  bool complete = true;
  while (std::getline(in, line)) {
    ++rows;
    std::size_t fields = 1;
    for (char ch : line) fields += ch == ',';
    complete = complete && fields == 10 && line.find(",,") == std::string::npos;
  }
  const AblationCell* det = nullptr;
  const AblationCell* f0 = nullptr;
  for (const auto& cell : cells) {
    if (cell.sweep == "k" && cell.k == c.k_patches && cell.mode.kind == SelectionKind::deterministic)
      det = &cell;
    if (cell.sweep == "fraction" && cell.mode.stochastic_fraction == 0.0) f0 = &cell;
  }
  const bool equal = det && f0 && det->report.accuracies == f0->report.accuracies &&
                     det->report.mean_loss == f0->report.mean_loss;
  return {rows == expected && complete && equal,
          std::to_string(rows) + "/" + std::to_string(expected) + " rows" +
              (complete ? ", all fields present" : ", missing fields") +
              "; fraction-0 vs deterministic at K=" + std::to_string(c.k_patches) + ": " +
              (equal ? "identical" : "differ")};
}

FormatErrorKind decode_kind(std::vector<char> bytes) {
  ByteReader r(std::move(bytes));
  try {
    decode_dataset(r);
  } catch (const FormatError& e) {
    return e.kind();
  }
  return FormatErrorKind::io;  // sentinel: accepted
}

Outcome file_round_trip() {
  SyntheticSpec spec;
  spec.n_classes = 5;
  spec.items_per_class = 6;
  spec.num_patches = 49;
  spec.dim = 16;
  const auto ds = generate_synthetic(spec);
  const auto draft = ds.to_draft();
  const auto bytes = encode_dataset(draft);
  ByteReader r(bytes);
  const auto back = decode_dataset(r);
  bool exact = encode_dataset(back) == bytes;
  for (std::size_t i = 0; exact && i < draft.items.size(); ++i)
    exact = back.items[i].patches == draft.items[i].patches &&
            back.items[i].class_token == draft.items[i].class_token &&
            back.items[i].foreground == draft.items[i].foreground &&
            back.items[i].image_id == draft.items[i].image_id &&
            back.items[i].label == draft.items[i].label;

  std::vector<std::pair<std::string, bool>> checks;
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  checks.push_back({"truncated", decode_kind(truncated) == FormatErrorKind::truncated});
  auto magic = bytes;
  magic[1] = 'Q';
  checks.push_back({"bad_magic", decode_kind(magic) == FormatErrorKind::bad_magic});
  auto version = bytes;
  version[8] = 9;
  checks.push_back({"unsupported_version", decode_kind(version) == FormatErrorKind::unsupported_version});
  auto shape = bytes;
  shape[28] = static_cast<char>(shape[28] + 1);  // D
  checks.push_back({"shape_mismatch", decode_kind(shape) == FormatErrorKind::shape_mismatch});
  auto trailing = bytes;
  trailing.push_back('\0');
  checks.push_back({"trailing_bytes", decode_kind(trailing) == FormatErrorKind::trailing_bytes});
  auto nan = draft;
  nan.items[3].patches[5] = std::numeric_limits<float>::quiet_NaN();
  ByteReader nr(encode_dataset(nan));
  const auto violations = validate_dataset(decode_dataset(nr));
  checks.push_back({"non_finite", violations.size() == 1 &&
                                      violations[0].kind == Violation::Kind::non_finite});

  TrainState st;
  st.params = init_scorer(4, {8}, 1);
  st.step = 3;
  apply_update(st.params, st.params, OptimizerConfig{}, st.optimizer);
  const auto cbytes = encode_checkpoint(st, st.params);
  ByteReader cr(cbytes);
  const auto ck = decode_checkpoint(cr);
  exact = exact && ck.params == st.params && ck.optimizer.m == st.optimizer.m &&
          ck.optimizer.v == st.optimizer.v && encode_checkpoint(st, ck.params) == cbytes;

  bool all = exact;
  std::string rejected;
  for (const auto& [name, ok] : checks) {
    all = all && ok;
    rejected += (rejected.empty() ? "" : ", ") + name + (ok ? "" : "(NOT rejected)");
  }
  return {all, std::string("round trip ") + (exact ? "bit-exact" : "differs") +
                   " (dataset and checkpoint); rejected: " + rejected};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"sampling-fidelity", sampling_fidelity},
      {"without-replacement-distinctness", distinctness},
      {"k-equals-p-degeneracy", k_equals_p},
      {"gradient-correctness", gradient_check},
      {"softmax-classification-invariants", softmax_invariants},
      {"overfit-one-episode", overfit_one_episode},
      {"synthetic-end-to-end", end_to_end},
      {"foreground-recovery", foreground_recovery},
      {"ablation-harness-shape", ablation_shape},
      {"file-format-round-trip", file_round_trip},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
