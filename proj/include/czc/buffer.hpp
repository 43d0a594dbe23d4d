#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "czc/cam.hpp"
#include "czc/codec.hpp"
#include "czc/common.hpp"
#include "czc/datamodel.hpp"
#include "czc/image.hpp"

namespace czc {

enum class CompressionMode : uint8_t {
  raw = 0,
  full_compression = 1,
  cam_composite = 2,
  blank_background = 3,
  background_removal = 4,
};

inline const char* mode_name(CompressionMode m) {
  switch (m) {
    case CompressionMode::raw: return "raw";
    case CompressionMode::full_compression: return "full_compression";
    case CompressionMode::cam_composite: return "cam_composite";
    case CompressionMode::blank_background: return "blank_background";
    case CompressionMode::background_removal: return "background_removal";
  }
  throw ConfigError("unknown compression mode");
}

inline CompressionMode mode_from_name(const std::string& s) {
  for (auto m : {CompressionMode::raw, CompressionMode::full_compression,
                 CompressionMode::cam_composite, CompressionMode::blank_background,
                 CompressionMode::background_removal})
    if (s == mode_name(m)) return m;
  throw ConfigError("unknown compression mode: " + s);
}

// ---------------------------------------------------------------------------

// iCaRL greedy herding over raw feature vectors (callers normalize first if
// they want cosine geometry). Returns indices best-first; ties break toward
// the lowest index; chosen items never repeat.
inline std::vector<int> herding_select(const Mat& features, int m) {
  const int n = features.rows, d = features.cols;
  if (n == 0) throw DataError("herding_select: empty feature set");
  if (m < 0 || m > n) throw ConfigError("herding_select: m out of range");
  std::vector<double> mu(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mu[static_cast<size_t>(j)] += features.at(i, j);
  for (auto& v : mu) v /= n;

  std::vector<int> picked;
  std::vector<bool> used(static_cast<size_t>(n), false);
  std::vector<double> acc(static_cast<size_t>(d), 0.0);  // sum of chosen features
  for (int k = 1; k <= m; ++k) {
    int best = -1;
    double best_dist = 0;
    for (int i = 0; i < n; ++i) {
      if (used[static_cast<size_t>(i)]) continue;
      double dist = 0;
      for (int j = 0; j < d; ++j) {
        double cand = (acc[static_cast<size_t>(j)] + features.at(i, j)) / k;
        double diff = mu[static_cast<size_t>(j)] - cand;
        dist += diff * diff;
      }
      if (best < 0 || dist < best_dist) {
        best = i;
        best_dist = dist;
      }
    }
    used[static_cast<size_t>(best)] = true;
    picked.push_back(best);
    for (int j = 0; j < d; ++j) acc[static_cast<size_t>(j)] += features.at(best, j);
  }
  return picked;
}

// ---------------------------------------------------------------------------

struct ExemplarRecord {
  int label = -1;
  int phase_created = -1;
  int64_t source_id = -1;
  CompressionMode mode = CompressionMode::raw;
  bool has_foreground = false;
  BoundingBox bbox;            // meaningful only when has_foreground
  int orig_h = 0, orig_w = 0;  // duplicated from the container header
  std::vector<uint8_t> fg;     // row-major RGB crop at bbox dims
  std::vector<uint8_t> container;  // serialized Bitstream (always present)

  // container bits + foreground pixels at 24 bpp + bbox (4 x u16) +
  // label/flags word.
  uint64_t cost_bits() const {
    uint64_t fg_bits = has_foreground
                           ? raw_image_bits(bbox.height(), bbox.width())
                           : 0;
    return static_cast<uint64_t>(container.size()) * 8 + fg_bits + 64 + 32;
  }
};

inline uint64_t exemplar_cost_bits(const ExemplarRecord& r) { return r.cost_bits(); }

struct MemoryBudget {
  uint64_t total_bits = 0;
  BudgetMode mode = BudgetMode::fixed_total;
  int per_class_images = 0;  // growing mode only
  uint64_t raw_reference_bits = 0;
};

inline MemoryBudget budget_for(const ProtocolConfig& protocol, int classes_seen) {
  MemoryBudget b;
  b.mode = protocol.budget_mode;
  b.raw_reference_bits = raw_image_bits(protocol.raw_reference_h, protocol.raw_reference_w);
  if (protocol.budget_mode == BudgetMode::fixed_total) {
    b.total_bits = static_cast<uint64_t>(protocol.budget_images) * b.raw_reference_bits;
  } else {
    b.per_class_images = protocol.budget_images;
    b.total_bits = static_cast<uint64_t>(protocol.budget_images) *
                   static_cast<uint64_t>(classes_seen) * b.raw_reference_bits;
  }
  return b;
}

struct ExemplarStore {
  std::map<int, std::vector<ExemplarRecord>> by_class;  // rank order per class
  MemoryBudget budget;

  uint64_t used_bits() const {
    uint64_t s = 0;
    for (const auto& [cls, recs] : by_class)
      for (const auto& r : recs) s += r.cost_bits();
    return s;
  }
  size_t count() const {
    size_t n = 0;
    for (const auto& [cls, recs] : by_class) n += recs.size();
    return n;
  }
  // Aggregate stored bits over original pixels.
  double mean_record_bpp() const {
    uint64_t bits = 0, pixels = 0;
    for (const auto& [cls, recs] : by_class)
      for (const auto& r : recs) {
        bits += r.cost_bits();
        pixels += static_cast<uint64_t>(r.orig_h) * static_cast<uint64_t>(r.orig_w);
      }
    return pixels == 0 ? 0.0 : static_cast<double>(bits) / static_cast<double>(pixels);
  }
};

// Round-robin admission over ranked per-class candidate lists, ascending
// class id. A class whose next-ranked record does not fit is retired for
// good (no lower-ranked substitution); the result never exceeds the budget
// on top of `base_bits` already in the store.
namespace buffer_detail {

inline void admit_round_robin(ExemplarStore& store,
                              std::map<int, std::vector<ExemplarRecord>>&& candidates) {
  uint64_t used = store.used_bits();
  struct Lane {
    int cls;
    std::vector<ExemplarRecord>* recs;
    size_t cursor = 0;
    bool active = true;
  };
  std::vector<Lane> lanes;
  for (auto& [cls, recs] : candidates) lanes.push_back({cls, &recs});
  bool any = true;
  while (any) {
    any = false;
    for (auto& lane : lanes) {
      if (!lane.active) continue;
      if (lane.cursor >= lane.recs->size()) {
        lane.active = false;
        continue;
      }
      ExemplarRecord& rec = (*lane.recs)[lane.cursor];
      uint64_t cost = rec.cost_bits();
      if (used + cost > store.budget.total_bits) {
        lane.active = false;  // budget-unfit: retire the class permanently
        continue;
      }
      used += cost;
      store.by_class[lane.cls].push_back(std::move(rec));
      ++lane.cursor;
      any = true;
    }
  }
}

}  // namespace buffer_detail

inline void admit(ExemplarStore& store, std::map<int, std::vector<ExemplarRecord>> candidates) {
  buffer_detail::admit_round_robin(store, std::move(candidates));
}

// Re-admits the store's own records (best rank first) under a new budget;
// whatever does not fit is dropped permanently.
inline ExemplarStore rebalance(ExemplarStore&& store, const MemoryBudget& new_budget) {
  ExemplarStore out;
  out.budget = new_budget;
  buffer_detail::admit_round_robin(out, std::move(store.by_class));
  return out;
}

// ---------------------------------------------------------------------------

namespace buffer_detail {

inline void paste_foreground(Image& canvas, const ExemplarRecord& r) {
  if (!r.has_foreground) return;
  const int fw = r.bbox.width();
  for (int y = 0; y < r.bbox.height(); ++y) {
    const uint8_t* src = r.fg.data() + static_cast<size_t>(y) * fw * 3;
    uint8_t* dst = canvas.pixel(r.bbox.y_min + y, r.bbox.x_min);
    std::copy(src, src + static_cast<size_t>(fw) * 3, dst);
  }
}

}  // namespace buffer_detail

// Decodes / reconstitutes every record, class id ascending then rank order.
// `codec` may be null when no record carries a compressed background.
inline std::vector<LabeledImage> materialize(const ExemplarStore& store, CodecModel* codec) {
  std::vector<LabeledImage> out;
  for (const auto& [cls, recs] : store.by_class) {
    for (size_t rank = 0; rank < recs.size(); ++rank) {
      const ExemplarRecord& r = recs[rank];
      Image img;
      switch (r.mode) {
        case CompressionMode::raw: {
          img = Image(r.orig_h, r.orig_w);
          std::memcpy(img.px.data(), r.fg.data(), r.fg.size());
          break;
        }
        case CompressionMode::full_compression:
        case CompressionMode::cam_composite: {
          if (!codec)
            throw ContractError("materialize: record needs a codec but none was supplied");
          Bitstream bs = Bitstream::deserialize(r.container);
          try {
            img = decode(*codec, bs);
          } catch (const IncompatibleModelError& e) {
            throw IncompatibleModelError("class " + std::to_string(cls) + " rank " +
                                         std::to_string(rank) + ": " + e.what());
          }
          buffer_detail::paste_foreground(img, r);
          break;
        }
        case CompressionMode::blank_background:
        case CompressionMode::background_removal: {
          uint8_t fill = r.mode == CompressionMode::blank_background ? 128 : 0;
          img = Image(r.orig_h, r.orig_w);
          std::fill(img.px.begin(), img.px.end(), fill);
          buffer_detail::paste_foreground(img, r);
          break;
        }
      }
      LabeledImage li;
      li.image = std::move(img);
      li.label = r.label;
      li.id = r.source_id;
      out.push_back(std::move(li));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence. Directory layout: `manifest` with one line per record
// ("<file> <class> <phase> <cost_bits> <mode>") plus one binary file per
// record: bbox (4 x u16 LE) | mode u8 (bit 0x80 = no foreground) |
// foreground RGB | embedded Bitstream container.

inline std::vector<uint8_t> serialize_record(const ExemplarRecord& r) {
  ByteWriter w;
  w.u16(static_cast<uint16_t>(r.bbox.x_min));
  w.u16(static_cast<uint16_t>(r.bbox.y_min));
  w.u16(static_cast<uint16_t>(r.bbox.x_max));
  w.u16(static_cast<uint16_t>(r.bbox.y_max));
  w.u8(static_cast<uint8_t>(r.mode) | (r.has_foreground ? 0 : 0x80));
  w.bytes(r.fg.data(), r.fg.size());
  w.bytes(r.container.data(), r.container.size());
  return std::move(w.buf);
}

inline ExemplarRecord deserialize_record(const uint8_t* data, size_t size, int label, int phase) {
  ByteReader rd(data, size);
  ExemplarRecord r;
  r.label = label;
  r.phase_created = phase;
  r.bbox.x_min = rd.u16();
  r.bbox.y_min = rd.u16();
  r.bbox.x_max = rd.u16();
  r.bbox.y_max = rd.u16();
  uint8_t mode_byte = rd.u8();
  r.has_foreground = (mode_byte & 0x80) == 0;
  uint8_t mode_bits = mode_byte & 0x7F;
  if (mode_bits > 4) throw CorruptStreamError("record has unknown mode byte");
  r.mode = static_cast<CompressionMode>(mode_bits);
  if (r.has_foreground) {
    size_t fg_len = static_cast<size_t>(r.bbox.height()) * r.bbox.width() * 3;
    r.fg.resize(fg_len);
    rd.bytes(r.fg.data(), fg_len);
  }
  size_t remaining = size - rd.pos;
  r.container.assign(data + rd.pos, data + size);
  Bitstream bs = Bitstream::deserialize(r.container.data(), remaining);
  r.orig_h = bs.orig_h;
  r.orig_w = bs.orig_w;
  return r;
}

inline void save_store(const ExemplarStore& store, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest");
  if (!manifest) throw IoError("cannot write store manifest in " + dir);
  for (const auto& [cls, recs] : store.by_class) {
    for (size_t rank = 0; rank < recs.size(); ++rank) {
      const ExemplarRecord& r = recs[rank];
      char name[48];
      std::snprintf(name, sizeof(name), "r%04d_%04zu.bin", cls, rank);
      auto bytes = serialize_record(r);
      std::ofstream out(fs::path(dir) / name, std::ios::binary);
      if (!out) throw IoError(std::string("cannot write record file ") + name);
      out.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
      manifest << name << ' ' << cls << ' ' << r.phase_created << ' ' << r.cost_bits() << ' '
               << mode_name(r.mode) << '\n';
    }
  }
}

inline ExemplarStore load_store(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest");
  if (!manifest) throw IoError("no store manifest under " + dir);
  ExemplarStore store;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string file, mode;
    int cls, phase;
    uint64_t cost;
    if (!(ss >> file >> cls >> phase >> cost >> mode))
      throw CorruptStreamError("malformed store manifest line: " + line);
    std::ifstream in(fs::path(dir) / file, std::ios::binary);
    if (!in) throw IoError("missing record file: " + file);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    ExemplarRecord r = deserialize_record(bytes.data(), bytes.size(), cls, phase);
    if (r.mode != mode_from_name(mode))
      throw CorruptStreamError("manifest/record mode mismatch for " + file);
    if (r.cost_bits() != cost)
      throw CorruptStreamError("manifest cost disagrees with record bytes for " + file);
    store.by_class[cls].push_back(std::move(r));
  }
  store.budget.total_bits = store.used_bits();
  store.budget.raw_reference_bits = 1;
  return store;
}

}  // namespace czc
