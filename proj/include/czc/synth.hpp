#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "czc/common.hpp"
#include "czc/datamodel.hpp"
#include "czc/image.hpp"

// Deterministic synthetic "desk" corpus: 10 classes on 32x32 tiles. Each
// class is named by its glyph shape; the background hue ramps with the class
// id but with heavy jitter, so neighbouring classes' hue ranges overlap. The
// background is therefore a real class cue (discarding it via the blank or
// removal ablations costs accuracy) yet never sufficient on its own, which
// keeps classifiers from leaning on it exclusively. Shapes that look alike
// are assigned hue-distant class ids. Backgrounds are smooth gradients to
// keep the corpus highly compressible.

namespace czc::synth {

inline void hsv_to_rgb(float h, float s, float v, float rgb[3]) {
  h = h - std::floor(h / 360.0f) * 360.0f;
  float c = v * s;
  float hp = h / 60.0f;
  float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  float m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

namespace detail {

// Glyph membership in glyph-local coordinates (dx, dy from center, radius r).
inline bool glyph_inside(int shape, float dx, float dy, float r) {
  float ax = std::fabs(dx), ay = std::fabs(dy);
  switch (shape) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // upright cross
      return (ax <= 0.35f * r && ay <= r) || (ay <= 0.35f * r && ax <= r);
    case 2:  // upward triangle
      return dy <= 0.75f * r && dy >= -r && ax <= 0.6f * (dy + r);
    case 3: {  // ring
      float d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3f * r * r;
    }
    case 4:  // two vertical bars
      return ay <= r && std::fabs(ax - 0.62f * r) <= 0.26f * r;
    case 5:  // filled square
      return std::max(ax, ay) <= 0.82f * r;
    case 6:  // diagonal cross (saltire)
      return std::max(ax, ay) <= r && std::fabs(ax - ay) <= 0.4f * r;
    case 7:  // diamond
      return ax + ay <= r;
    case 8:  // thick horizontal bar
      return ay <= 0.45f * r && ax <= r;
    default: {  // square frame
      float m = std::max(ax, ay);
      return m <= r && m >= 0.55f * r;
    }
  }
}

}  // namespace detail

inline Image desk_tile(int class_id, Rng& rng, int size = 32) {
  Image img(size, size);
  // The glyph shape names the class; the background hue ramps with the class
  // id under heavy jitter, so hue narrows the candidates without deciding
  // them. Destroying the background costs accuracy; relying on it alone
  // cannot work.
  float hue = 18.0f + 16.0f * static_cast<float>(class_id) +
              static_cast<float>(rng.real01() * 48.0 - 24.0);
  float sat = 0.32f + static_cast<float>(rng.real01()) * 0.13f;
  float v_lo = 0.52f + static_cast<float>(rng.real01()) * 0.08f;
  float v_hi = 0.74f + static_cast<float>(rng.real01()) * 0.10f;
  float angle = static_cast<float>(rng.real01() * 2.0 * 3.14159265358979);
  float gx = std::cos(angle), gy = std::sin(angle);
  float wob_fx = 1.0f + static_cast<float>(rng.real01());  // cycles across tile
  float wob_ph = static_cast<float>(rng.real01() * 6.2831853);
  float wob_amp = 0.02f + static_cast<float>(rng.real01()) * 0.02f;

  float cx = size / 2.0f + static_cast<float>(rng.real01() * 8.0 - 4.0);
  float cy = size / 2.0f + static_cast<float>(rng.real01() * 8.0 - 4.0);
  float radius = 5.5f + static_cast<float>(rng.real01()) * 2.0f;
  float glyph_gray = 0.12f + static_cast<float>(rng.real01()) * 0.18f;
  float glyph_rgb[3] = {glyph_gray, glyph_gray, glyph_gray};
  int shape = class_id;

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float u = (x + 0.5f) / size - 0.5f, w = (y + 0.5f) / size - 0.5f;
      float t = 0.5f + (u * gx + w * gy);  // 0..1 along gradient axis
      float v = v_lo + (v_hi - v_lo) * t +
                wob_amp * std::sin(6.2831853f * wob_fx * u + wob_ph) *
                    std::cos(6.2831853f * wob_fx * w - wob_ph);
      // Soft vignette: tile borders sit slightly dimmer than the centre.
      v *= 1.0f - 0.22f * 2.0f * (u * u + w * w);
      v = std::min(std::max(v, 0.0f), 1.0f);
      float bg[3];
      hsv_to_rgb(hue, sat, v, bg);
      // 2x2 supersampled glyph coverage for soft (compressible) edges.
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx)
          if (detail::glyph_inside(shape, x + 0.25f + 0.5f * sx - cx,
                                   y + 0.25f + 0.5f * sy - cy, radius))
            ++hits;
      float a = hits / 4.0f;
      uint8_t* px = img.pixel(y, x);
      for (int ch = 0; ch < 3; ++ch) {
        float val = bg[ch] * (1 - a) + glyph_rgb[ch] * a;
        px[ch] = static_cast<uint8_t>(std::lround(std::min(std::max(val, 0.0f), 1.0f) * 255.0f));
      }
    }
  }
  return img;
}

inline Dataset generate_desk_dataset(int classes, int per_class_train, int per_class_test,
                                     uint64_t seed, int size = 32) {
  if (classes < 1 || classes > 10) throw ConfigError("desk corpus supports 1..10 classes");
  Dataset ds;
  for (int c = 0; c < classes; ++c) ds.class_names.push_back("c" + std::to_string(c));
  int64_t next_id = 0;
  for (int split = 0; split < 2; ++split) {
    int count = split == 0 ? per_class_train : per_class_test;
    for (int c = 0; c < classes; ++c) {
      for (int i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, (static_cast<uint64_t>(split) << 40) |
                                   (static_cast<uint64_t>(c) << 20) |
                                   static_cast<uint64_t>(i)));
        LabeledImage li;
        li.image = desk_tile(c, rng, size);
        li.label = c;
        li.id = next_id++;
        (split == 0 ? ds.train : ds.test).push_back(std::move(li));
      }
    }
  }
  return ds;
}

// Writes the corpus as a train//test/ directory tree of PNGs (the layout
// load_dataset infers), for CLI runs against an on-disk dataset.
inline void write_desk_dataset(const std::string& root, int classes, int per_class_train,
                               int per_class_test, uint64_t seed, int size = 32) {
  namespace fs = std::filesystem;
  Dataset ds = generate_desk_dataset(classes, per_class_train, per_class_test, seed, size);
  auto dump = [&](const std::vector<LabeledImage>& pool, const std::string& split) {
    std::vector<int> counter(static_cast<size_t>(classes), 0);
    for (const auto& li : pool) {
      fs::path dir = fs::path(root) / split / ds.class_names[static_cast<size_t>(li.label)];
      fs::create_directories(dir);
      char name[16];
      std::snprintf(name, sizeof(name), "%05d.png", counter[static_cast<size_t>(li.label)]++);
      write_png((dir / name).string(), li.image);
    }
  };
  dump(ds.train, "train");
  dump(ds.test, "test");
}

}  // namespace czc::synth
