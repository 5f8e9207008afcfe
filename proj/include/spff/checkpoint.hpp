#pragma once

// Binary checkpoint (scorer parameters + optimiser state) and its JSON
// sidecar (config, config hash, metrics history).
//
// Layout (little-endian):
//   char[8] "SPFFCKP1", u32 version, u64 step, u64 root seed,
//   u32 optimizer kind (0 adam, 1 sgd), u64 optimizer t,
//   u32 has_moments, then params block, [m block, v block]
//   params block: u32 layer count; per layer u32 out, u32 in,
//                 f64 weight[out*in] row-major, f64 bias[out]

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <string>

#include "spff/binary.hpp"
#include "spff/config.hpp"
#include "spff/error.hpp"
#include "spff/mlp.hpp"
#include "spff/trainer.hpp"

namespace spff {

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'F', 'F', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_params(ByteWriter& w, const ScorerParams& p) {
  w.put(static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    w.put(static_cast<std::uint32_t>(l.weight.rows()));
    w.put(static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) w.put(l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.put(l.bias[i]);
  }
}

inline ScorerParams get_params(ByteReader& r) {
  ScorerParams p;
  const auto n = r.get<std::uint32_t>();
  if (n == 0 || n > 64) throw FormatError(FormatErrorKind::invalid_content, "bad layer count");
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto out = r.get<std::uint32_t>();
    const auto in = r.get<std::uint32_t>();
    if (static_cast<std::uint64_t>(out) * in * 8 > r.remaining())
      throw FormatError(FormatErrorKind::truncated, "unexpected end of payload");
    DenseLayer l{RowMatrixD(out, in), VectorD(out)};
    for (Eigen::Index j = 0; j < l.weight.size(); ++j) l.weight.data()[j] = r.get<double>();
    for (Eigen::Index j = 0; j < l.bias.size(); ++j) l.bias[j] = r.get<double>();
    p.layers.push_back(std::move(l));
  }
  return p;
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const TrainState& s, const ScorerParams& params) {
  ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 8));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(s.step));
  w.put(s.root_seed);
  const bool moments = s.optimizer.m.layers.size() == params.layers.size() && !params.layers.empty();
  // Only Adam keeps moments.
  w.put(static_cast<std::uint32_t>(moments ? 0 : 1));
  w.put(s.optimizer.t);
  w.put(static_cast<std::uint32_t>(moments ? 1 : 0));
  detail::put_params(w, params);
  if (moments) {
    detail::put_params(w, s.optimizer.m);
    detail::put_params(w, s.optimizer.v);
  }
  return w.bytes();
}

struct Checkpoint {
  ScorerParams params;
  std::size_t step = 0;
  std::uint64_t root_seed = 0;
  OptimizerState optimizer;
};

inline Checkpoint decode_checkpoint(ByteReader& r) {
  if (r.size() < 8 || r.get_bytes(8) != std::string(kCheckpointMagic, 8))
    throw FormatError(FormatErrorKind::bad_magic, "bad magic: not an SPFFCKP1 checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(FormatErrorKind::unsupported_version,
                      "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.step = static_cast<std::size_t>(r.get<std::uint64_t>());
  c.root_seed = r.get<std::uint64_t>();
  (void)r.get<std::uint32_t>();
  c.optimizer.t = r.get<std::uint64_t>();
  const bool moments = r.get<std::uint32_t>() != 0;
  c.params = detail::get_params(r);
  if (moments) {
    c.optimizer.m = detail::get_params(r);
    c.optimizer.v = detail::get_params(r);
  }
  if (r.remaining() != 0)
    throw FormatError(FormatErrorKind::trailing_bytes, "trailing bytes in checkpoint");
  return c;
}

// Writes the state with `params` (final or best-on-val) as the scorer.
inline void write_checkpoint(const std::string& path, const TrainState& s,
                             const ScorerParams& params) {
  write_file_bytes(path, encode_checkpoint(s, params));
}

inline Checkpoint read_checkpoint(const std::string& path) {
  auto r = ByteReader::from_file(path);
  return decode_checkpoint(r);
}

inline nlohmann::json history_json(const TrainState& s) {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& p : s.history) {
    nlohmann::json e{{"step", p.step}, {"loss", p.loss}, {"accuracy", p.accuracy}};
    e["val_accuracy"] = p.val_accuracy ? nlohmann::json(*p.val_accuracy) : nlohmann::json(nullptr);
    h.push_back(e);
  }
  return h;
}

inline void write_checkpoint_sidecar(const std::string& path, const TrainState& s,
                                     const RunConfig& config) {
  nlohmann::json j{{"config", to_json(config, false)},
                   {"config_hash", hex64(config_hash(config))},
                   {"seed", config.seed},
                   {"step", s.step},
                   {"best_val_accuracy",
                    s.best_val_accuracy ? nlohmann::json(*s.best_val_accuracy) : nlohmann::json(nullptr)},
                   {"history", history_json(s)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::io, "cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace spff
