#pragma once

// `.spffemb` embedding files, their JSON manifest, and class-level splits.
//
// Layout (all little-endian):
//   0   char[8]  magic "SPFFEMB1"
//   8   u32      version (1)
//   12  u32      flags (bit 0: per-item foreground indices present)
//   16  u64      item_count
//   24  u32      P (patches per image)
//   28  u32      D (embedding width)
//   32  u64      label_table_offset == 40 + item_count * (P + 1) * D * 4
//   40  f32[]    per item: class token [D], then patches [P x D] row-major
//   label table:
//       u32 class_count; per class: u32 len, bytes name, u8 split (0 train,
//       1 val, 2 test, 255 none)
//       per item: u32 class index, u32 len, bytes image id,
//                 [flags bit 0] u32 count, u32[count] foreground indices
//   end of file (trailing bytes are rejected)

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "spff/binary.hpp"
#include "spff/error.hpp"
#include "spff/rng.hpp"
#include "spff/types.hpp"

namespace spff {

inline constexpr char kEmbeddingMagic[8] = {'S', 'P', 'F', 'F', 'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::uint32_t kFlagForeground = 1u;
inline constexpr std::size_t kEmbeddingHeaderSize = 40;

struct EmbeddingFileHeader {
  std::uint32_t version = kEmbeddingVersion;
  std::uint32_t flags = 0;
  std::uint64_t item_count = 0;
  std::uint32_t num_patches = 0;
  std::uint32_t dim = 0;
  std::uint64_t label_table_offset = 0;
};

namespace detail {

inline std::uint8_t split_code(const std::map<std::string, Split>& splits, const std::string& cls) {
  auto it = splits.find(cls);
  return it == splits.end() ? 255 : static_cast<std::uint8_t>(it->second);
}

}  // namespace detail

inline std::vector<char> encode_dataset(const DatasetDraft& draft) {
  // Class table in first-appearance order of the split lists, then any
  // unassigned labels.
  std::vector<std::string> classes;
  std::map<std::string, std::uint32_t> class_id;
  std::map<std::string, Split> split_of;
  for (Split s : kAllSplits)
    for (const auto& cls : draft.split_classes[static_cast<int>(s)]) {
      split_of.emplace(cls, s);
      if (class_id.emplace(cls, static_cast<std::uint32_t>(classes.size())).second)
        classes.push_back(cls);
    }
  for (const auto& item : draft.items)
    if (class_id.emplace(item.label, static_cast<std::uint32_t>(classes.size())).second)
      classes.push_back(item.label);

  const bool has_fg = !draft.items.empty() &&
                      std::all_of(draft.items.begin(), draft.items.end(),
                                  [](const ItemDraft& i) { return !i.foreground.empty(); });
  const std::size_t P = draft.num_patches;
  const std::size_t D = draft.dim;

  ByteWriter w;
  w.put_bytes(std::string_view(kEmbeddingMagic, 8));
  w.put(kEmbeddingVersion);
  w.put(has_fg ? kFlagForeground : 0u);
  w.put(static_cast<std::uint64_t>(draft.items.size()));
  w.put(draft.num_patches);
  w.put(draft.dim);
  const std::size_t offset_pos = w.size();
  w.put(std::uint64_t{0});
  for (const auto& item : draft.items) {
    if (item.class_token.size() != D || item.patches.size() != P * D)
      throw FormatError(FormatErrorKind::shape_mismatch,
                        "item '" + item.image_id + "' does not match P x D");
    for (float v : item.class_token) w.put(v);
    for (float v : item.patches) w.put(v);
  }
  w.patch_u64(offset_pos, w.size());
  w.put(static_cast<std::uint32_t>(classes.size()));
  for (const auto& cls : classes) {
    w.put_string(cls);
    w.put(detail::split_code(split_of, cls));
  }
  for (const auto& item : draft.items) {
    w.put(class_id.at(item.label));
    w.put_string(item.image_id);
    if (has_fg) {
      w.put(static_cast<std::uint32_t>(item.foreground.size()));
      for (auto f : item.foreground) w.put(f);
    }
  }
  return w.bytes();
}

inline void write_dataset(const EmbeddingDataset& dataset, const std::string& path) {
  write_file_bytes(path, encode_dataset(dataset.to_draft()));
}

inline EmbeddingFileHeader read_header(ByteReader& r) {
  if (r.size() < 8 || r.get_bytes(8) != std::string(kEmbeddingMagic, 8))
    throw FormatError(FormatErrorKind::bad_magic, "bad magic: not an SPFFEMB1 embedding file");
  EmbeddingFileHeader h;
  h.version = r.get<std::uint32_t>();
  if (h.version != kEmbeddingVersion)
    throw FormatError(FormatErrorKind::unsupported_version,
                      "unsupported version " + std::to_string(h.version));
  h.flags = r.get<std::uint32_t>();
  h.item_count = r.get<std::uint64_t>();
  h.num_patches = r.get<std::uint32_t>();
  h.dim = r.get<std::uint32_t>();
  h.label_table_offset = r.get<std::uint64_t>();
  if ((h.flags & ~kFlagForeground) != 0)
    throw FormatError(FormatErrorKind::invalid_content, "unknown header flags");
  const unsigned __int128 expected =
      static_cast<unsigned __int128>(kEmbeddingHeaderSize) +
      static_cast<unsigned __int128>(h.item_count) * (static_cast<unsigned __int128>(h.num_patches) + 1) *
          h.dim * 4u;
  if (expected != h.label_table_offset)
    throw FormatError(FormatErrorKind::shape_mismatch,
                      "shape mismatch: label table offset " + std::to_string(h.label_table_offset) +
                          " disagrees with item_count, P and D");
  return h;
}

// Parses a file without validating dataset-level invariants.
inline DatasetDraft decode_dataset(ByteReader& r) {
  const EmbeddingFileHeader h = read_header(r);
  if (h.label_table_offset > r.size())
    throw FormatError(FormatErrorKind::truncated, "unexpected end of payload");
  DatasetDraft d;
  d.num_patches = h.num_patches;
  d.dim = h.dim;
  const std::size_t P = h.num_patches;
  const std::size_t D = h.dim;
  d.items.resize(static_cast<std::size_t>(h.item_count));
  for (auto& item : d.items) {
    item.class_token.resize(D);
    item.patches.resize(P * D);
    for (auto& v : item.class_token) v = r.get<float>();
    for (auto& v : item.patches) v = r.get<float>();
  }
  const auto class_count = r.get<std::uint32_t>();
  std::vector<std::string> classes;
  for (std::uint32_t c = 0; c < class_count; ++c) {
    classes.push_back(r.get_string());
    const auto code = r.get<std::uint8_t>();
    if (code <= 2) d.split_classes[code].push_back(classes.back());
    else if (code != 255)
      throw FormatError(FormatErrorKind::invalid_content, "invalid split code " + std::to_string(code));
  }
  for (auto& item : d.items) {
    const auto cid = r.get<std::uint32_t>();
    if (cid >= classes.size())
      throw FormatError(FormatErrorKind::invalid_content, "class index out of range");
    item.label = classes[cid];
    item.image_id = r.get_string();
    if (h.flags & kFlagForeground) {
      const auto n = r.get<std::uint32_t>();
      if (n > P) throw FormatError(FormatErrorKind::invalid_content, "foreground count exceeds P");
      item.foreground.resize(n);
      for (auto& f : item.foreground) f = r.get<std::uint32_t>();
    }
  }
  if (r.remaining() != 0)
    throw FormatError(FormatErrorKind::trailing_bytes,
                      std::to_string(r.remaining()) + " trailing bytes after label table");
  return d;
}

inline DatasetDraft read_draft(const std::string& path) {
  auto r = ByteReader::from_file(path);
  return decode_dataset(r);
}

// Reads and validates. Invariant violations surface as InvariantError.
inline EmbeddingDataset read_dataset(const std::string& path) {
  return EmbeddingDataset(read_draft(path));
}

// Class-level partition of a shuffled class list. Counts are floor(f * n)
// for train and val, test takes the rest; every split then gets >= 1 class
// by borrowing from the largest.
inline std::array<std::vector<std::string>, 3> make_splits(std::vector<std::string> classes,
                                                           std::array<double, 3> fractions,
                                                           std::uint64_t seed) {
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 3)
    throw ConfigError("make_splits needs >= 3 classes, got " + std::to_string(classes.size()));
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be >= 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1");

  Rng rng(derive_seed(seed, "splits"));
  rng.shuffle(std::span<std::string>(classes));
  const double n = static_cast<double>(classes.size());
  std::array<std::size_t, 3> count{};
  count[0] = static_cast<std::size_t>(std::floor(fractions[0] * n + 1e-9));
  count[1] = static_cast<std::size_t>(std::floor(fractions[1] * n + 1e-9));
  count[2] = classes.size() - count[0] - count[1];
  for (std::size_t s = 0; s < 3; ++s) {
    while (count[s] == 0) {
      auto largest = std::max_element(count.begin(), count.end());
      --*largest;
      ++count[s];
    }
  }
  std::array<std::vector<std::string>, 3> out;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    out[s].assign(classes.begin() + static_cast<std::ptrdiff_t>(pos),
                  classes.begin() + static_cast<std::ptrdiff_t>(pos + count[s]));
    std::sort(out[s].begin(), out[s].end());
    pos += count[s];
  }
  return out;
}

inline nlohmann::json make_manifest(const EmbeddingDataset& dataset,
                                    const nlohmann::json& provenance) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [cls, items] : dataset.class_index()) {
    auto it = dataset.split_assignment().find(cls);
    classes.push_back({{"name", cls},
                       {"split", it == dataset.split_assignment().end() ? "none" : to_string(it->second)},
                       {"items", items.size()}});
  }
  return {{"format", "spffemb"},
          {"version", kEmbeddingVersion},
          {"items", dataset.size()},
          {"num_patches", dataset.num_patches()},
          {"dim", dataset.dim()},
          {"has_foreground", dataset.has_foreground()},
          {"classes", classes},
          {"provenance", provenance}};
}

inline std::string manifest_path_for(const std::string& dataset_path) {
  return dataset_path + ".manifest.json";
}

inline void write_manifest(const EmbeddingDataset& dataset, const std::string& path,
                           const nlohmann::json& provenance) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::io, "cannot open for writing: " + path);
  out << make_manifest(dataset, provenance).dump(2) << '\n';
}

}  // namespace spff
