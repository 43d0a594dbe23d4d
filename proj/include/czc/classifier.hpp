#pragma once

#include <string>
#include <vector>

#include "czc/cam.hpp"
#include "czc/common.hpp"
#include "czc/image.hpp"
#include "czc/nn.hpp"
#include "czc/tensor.hpp"

namespace czc {

// Residual basic block: conv-bn-relu-conv-bn + (projected) shortcut, relu.
struct BasicBlock {
  int cin = 0, cout = 0, stride = 1;
  nn::Conv2d c1, c2;
  nn::BatchNorm2d b1, b2;
  nn::Relu r1, r2;
  bool proj = false;
  nn::Conv2d cp;
  nn::BatchNorm2d bp;
  Fmap x_cache_;

  void init(const std::string& name, int cin_, int cout_, int stride_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    stride = stride_;
    c1.init(name + ".c1", cin, cout, 3, stride, rng);
    b1.init(name + ".b1", cout);
    c2.init(name + ".c2", cout, cout, 3, 1, rng);
    b2.init(name + ".b2", cout);
    proj = stride != 1 || cin != cout;
    if (proj) {
      cp.init(name + ".cp", cin, cout, 1, stride, rng);
      bp.init(name + ".bp", cout);
    }
  }

  Fmap forward(const Fmap& x, bool train) {
    x_cache_ = x;
    Fmap main = b2.forward(c2.forward(r1.forward(b1.forward(c1.forward(x), train))), train);
    Fmap sc = proj ? bp.forward(cp.forward(x), train) : x;
    for (size_t i = 0; i < main.v.size(); ++i) main.v[i] += sc.v[i];
    return r2.forward(main);
  }

  Fmap backward(const Fmap& dy) {
    Fmap d = r2.backward(dy);
    Fmap dx_main = c1.backward(b1.backward(r1.backward(c2.backward(b2.backward(d)))));
    Fmap dx_sc = proj ? cp.backward(bp.backward(d)) : d;
    for (size_t i = 0; i < dx_main.v.size(); ++i) dx_main.v[i] += dx_sc.v[i];
    return dx_main;
  }

  void params(std::vector<nn::Param*>& out) {
    c1.params(out);
    b1.params(out);
    c2.params(out);
    b2.params(out);
    if (proj) {
      cp.params(out);
      bp.params(out);
    }
  }
};

// Small residual backbone: stem + 3 blocks (16/32/64), GAP, linear head.
// The final conv map feeds both the head (via GAP) and CAM extraction, so
// the model is CAM-compatible by construction.
struct ClassifierModel {
  static constexpr int kFeatDim = 64;

  nn::Conv2d stem;
  nn::BatchNorm2d bn0;
  nn::Relu r0;
  BasicBlock blk1, blk2, blk3;
  nn::Linear head;
  int num_classes = 0;
  uint64_t rng_state_ = 0;  // continues head-init draws across expansions

  // caches
  Fmap feat_cache_;
  int in_h_ = 0, in_w_ = 0;

  void init(uint64_t seed, int classes) {
    Rng rng(mix_seed(seed, 0xC1A55ULL));
    stem.init("stem", 3, 16, 3, 1, rng);
    bn0.init("bn0", 16);
    blk1.init("blk1", 16, 16, 1, rng);
    blk2.init("blk2", 16, 32, 2, rng);
    blk3.init("blk3", 32, 64, 2, rng);
    head.init("head", kFeatDim, classes, rng);
    num_classes = classes;
    rng_state_ = rng.next_u64();
  }

  // Final conv feature map (post-ReLU), batched.
  Fmap features(const Fmap& x, bool train) {
    in_h_ = x.h;
    in_w_ = x.w;
    Fmap f = blk3.forward(
        blk2.forward(blk1.forward(r0.forward(bn0.forward(stem.forward(x), train)), train), train),
        train);
    feat_cache_ = f;
    return f;
  }

  Mat forward(const Fmap& x, bool train) {
    Fmap f = features(x, train);
    return head.forward(nn::global_avg_pool(f));
  }

  Fmap backward_from_logits(const Mat& dlogits) {
    Mat dpool = head.backward(dlogits);
    Fmap df = nn::global_avg_pool_backward(dpool, feat_cache_.ch, feat_cache_.b, feat_cache_.h,
                                           feat_cache_.w);
    return backward_from_features(df);
  }

  Fmap backward_from_features(const Fmap& df) {
    return stem.backward(bn0.backward(r0.backward(blk1.backward(blk2.backward(blk3.backward(df))))));
  }

  void params(std::vector<nn::Param*>& out) {
    stem.params(out);
    bn0.params(out);
    blk1.params(out);
    blk2.params(out);
    blk3.params(out);
    head.params(out);
  }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> ps;
    params(ps);
    return ps;
  }

  // Grow the head for newly seen classes; old rows keep their weights.
  void expand_head(int new_classes) {
    if (new_classes < num_classes) throw ContractError("head cannot shrink");
    if (new_classes == num_classes) return;
    nn::Linear grown;
    Rng rng(rng_state_);
    grown.init("head", kFeatDim, new_classes, rng);
    rng_state_ = rng.next_u64();
    for (int r = 0; r < num_classes; ++r) {
      std::copy(head.w.w.begin() + static_cast<size_t>(r) * kFeatDim,
                head.w.w.begin() + static_cast<size_t>(r + 1) * kFeatDim,
                grown.w.w.begin() + static_cast<size_t>(r) * kFeatDim);
      grown.b.w[static_cast<size_t>(r)] = head.b.w[static_cast<size_t>(r)];
    }
    head = std::move(grown);
    num_classes = new_classes;
  }
};

// Classifier input normalization: [0,255] -> [-1, 1].
inline void fill_classifier_input(const Image& img, Fmap& batch, int bi) {
  const int hw = img.h * img.w;
  for (int c = 0; c < 3; ++c) {
    float* row = batch.row(c) + static_cast<size_t>(bi) * hw;
    for (int i = 0; i < hw; ++i)
      row[i] = (img.px[static_cast<size_t>(i) * 3 + static_cast<size_t>(c)] / 255.0f - 0.5f) * 2.0f;
  }
}

// CAM for one image under the classifier's class index `class_slot`.
inline ActivationMap compute_cam(ClassifierModel& model, const Image& img, int class_slot) {
  if (model.head.in != ClassifierModel::kFeatDim)
    throw ContractError("classifier head is not CAM-compatible");
  if (class_slot < 0 || class_slot >= model.num_classes)
    throw ContractError("CAM class index out of range");
  Fmap x(3, 1, img.h, img.w);
  fill_classifier_input(img, x, 0);
  Fmap f = model.features(x, false);
  const float* head_row =
      model.head.w.w.data() + static_cast<size_t>(class_slot) * ClassifierModel::kFeatDim;
  return cam_from_features(f, 0, head_row, class_slot);
}

}  // namespace czc
