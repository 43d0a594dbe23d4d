#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "czc/common.hpp"
#include "czc/image.hpp"
#include "czc/tensor.hpp"

namespace czc {

struct ActivationMap {
  Mat values;  // rows = feature h, cols = feature w
  int class_id = -1;
};

struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // 0/1 per pixel
  float threshold_used = 0;

  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

struct BoundingBox {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // inclusive

  int width() const { return x_max - x_min + 1; }
  int height() const { return y_max - y_min + 1; }
  bool valid_for(int img_h, int img_w) const {
    return 0 <= x_min && x_min <= x_max && x_max < img_w && 0 <= y_min && y_min <= y_max &&
           y_max < img_h;
  }
  bool contains(int y, int x) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  bool operator==(const BoundingBox& o) const {
    return x_min == o.x_min && y_min == o.y_min && x_max == o.x_max && y_max == o.y_max;
  }
};

// CAM_c = sum_k w_{k,c} * F_k over the final conv feature map. `features`
// holds the batched map; `bi` picks the image; `head_row` is the class's
// weight row (length features.ch).
inline ActivationMap cam_from_features(const Fmap& features, int bi, const float* head_row,
                                       int class_id) {
  ActivationMap cam;
  cam.class_id = class_id;
  cam.values = Mat(features.h, features.w);
  const int hw = features.h * features.w;
  for (int k = 0; k < features.ch; ++k) {
    const float* img = features.row(k) + static_cast<size_t>(bi) * hw;
    float wk = head_row[k];
    for (int i = 0; i < hw; ++i) cam.values.v[static_cast<size_t>(i)] += wk * img[i];
  }
  return cam;
}

// Min-max normalize (constant maps become all-zero), bilinear upsample with
// half-pixel centers, then threshold strictly: value > threshold -> 1.
inline BinaryMask mask_from_cam(const ActivationMap& cam, float threshold, int target_h,
                                int target_w) {
  if (!(threshold > 0.0f && threshold < 1.0f))
    throw ConfigError("mask threshold must lie in (0, 1)");
  BinaryMask mask;
  mask.h = target_h;
  mask.w = target_w;
  mask.threshold_used = threshold;
  mask.v.assign(static_cast<size_t>(target_h) * target_w, 0);

  const int sh = cam.values.rows, sw = cam.values.cols;
  float mn = cam.values.v[0], mx = cam.values.v[0];
  for (float x : cam.values.v) {
    mn = std::min(mn, x);
    mx = std::max(mx, x);
  }
  if (!(mx > mn)) return mask;  // constant map -> all zero
  const float inv = 1.0f / (mx - mn);

  for (int y = 0; y < target_h; ++y) {
    float sy = (y + 0.5f) * static_cast<float>(sh) / static_cast<float>(target_h) - 0.5f;
    sy = std::min(std::max(sy, 0.0f), static_cast<float>(sh - 1));
    int y0 = static_cast<int>(sy);
    int y1 = std::min(y0 + 1, sh - 1);
    float fy = sy - static_cast<float>(y0);
    for (int x = 0; x < target_w; ++x) {
      float sx = (x + 0.5f) * static_cast<float>(sw) / static_cast<float>(target_w) - 0.5f;
      sx = std::min(std::max(sx, 0.0f), static_cast<float>(sw - 1));
      int x0 = static_cast<int>(sx);
      int x1 = std::min(x0 + 1, sw - 1);
      float fx = sx - static_cast<float>(x0);
      float v00 = cam.values.at(y0, x0), v01 = cam.values.at(y0, x1);
      float v10 = cam.values.at(y1, x0), v11 = cam.values.at(y1, x1);
      float val = v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx + v10 * fy * (1 - fx) +
                  v11 * fy * fx;
      val = (val - mn) * inv;
      if (val > threshold) mask.v[static_cast<size_t>(y) * target_w + x] = 1;
    }
  }
  return mask;
}

// Tightest box around the 1-pixels; empty foreground -> nullopt (caller
// falls back to a degenerate record).
inline std::optional<BoundingBox> mask_to_bbox(const BinaryMask& mask) {
  int x_min = mask.w, y_min = mask.h, x_max = -1, y_max = -1;
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x)
      if (mask.at(y, x)) {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
      }
  if (x_max < 0) return std::nullopt;
  return BoundingBox{x_min, y_min, x_max, y_max};
}

// Rectangular-mask composite: pixels inside bbox from `original`, outside
// from `reconstructed`.
inline Image composite(const Image& original, const Image& reconstructed, const BoundingBox& bbox) {
  if (original.h != reconstructed.h || original.w != reconstructed.w)
    throw DataError("composite: image dims differ");
  if (!bbox.valid_for(original.h, original.w)) throw DataError("composite: bbox out of range");
  Image out = reconstructed;
  for (int y = bbox.y_min; y <= bbox.y_max; ++y) {
    const uint8_t* src = original.pixel(y, bbox.x_min);
    uint8_t* dst = out.pixel(y, bbox.x_min);
    std::copy(src, src + static_cast<size_t>(bbox.width()) * 3, dst);
  }
  return out;
}

}  // namespace czc
