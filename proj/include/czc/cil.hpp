#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "czc/buffer.hpp"
#include "czc/cam.hpp"
#include "czc/classifier.hpp"
#include "czc/codec.hpp"
#include "czc/common.hpp"
#include "czc/datamodel.hpp"

namespace czc {

struct TrainConfig {
  int initial_epochs = 30;
  int incremental_epochs = 20;
  float base_lr = 0.1f;
  float momentum = 0.9f;
  std::vector<int> lr_decay_epochs = {80, 120};
  float lr_decay_factor = 0.1f;
  int batch_size = 64;
  // Scales the per-phase distillation weight classes_old / classes_total;
  // 0 disables distillation entirely.
  float distill_weight = 1.0f;
  double distill_temp = 2.0;
  bool augment = false;
  uint64_t seed = 1993;

  void validate() const {
    if (initial_epochs < 1 || incremental_epochs < 1)
      throw ConfigError("epoch counts must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(lr_decay_factor > 0.0f && lr_decay_factor < 1.0f))
      throw ConfigError("lr_decay_factor must lie in (0, 1)");
    if (distill_weight < 0) throw ConfigError("distill_weight must be >= 0");
  }
};

struct PhaseResult {
  int phase = 0;
  int classes_seen = 0;
  double top1 = 0;
  size_t exemplar_count = 0;
  double mean_record_bpp = 0;
  uint64_t buffer_bits_used = 0;
  uint64_t buffer_bits_total = 0;
};

inline std::pair<double, double> summarize(const std::vector<PhaseResult>& results) {
  if (results.empty()) throw DataError("summarize: no phase results");
  double sum = 0;
  for (const auto& r : results) sum += r.top1;
  return {sum / static_cast<double>(results.size()), results.back().top1};
}

// ---------------------------------------------------------------------------

namespace cil_detail {

struct Sample {
  const Image* image;
  int slot;
};

inline void fill_batch(const std::vector<Sample>& samples, const std::vector<int>& order,
                       size_t start, int bs, bool augment, Rng& rng, Fmap& x,
                       std::vector<int>& labels) {
  const Image& first = *samples[static_cast<size_t>(order[start])].image;
  x = Fmap(3, bs, first.h, first.w);
  labels.resize(static_cast<size_t>(bs));
  for (int i = 0; i < bs; ++i) {
    const Sample& s = samples[static_cast<size_t>(order[start + static_cast<size_t>(i)])];
    if (s.image->h != first.h || s.image->w != first.w)
      throw DataError("training pool mixes image dims");
    labels[static_cast<size_t>(i)] = s.slot;
    if (!augment) {
      fill_classifier_input(*s.image, x, i);
      continue;
    }
    // pad-4 random crop + horizontal flip
    int dy = rng.range_int(-4, 4), dx = rng.range_int(-4, 4);
    bool flip = rng.below(2) == 1;
    const int hw = first.h * first.w;
    for (int c = 0; c < 3; ++c) {
      float* row = x.row(c) + static_cast<size_t>(i) * hw;
      for (int y = 0; y < first.h; ++y)
        for (int xx = 0; xx < first.w; ++xx) {
          int sy = y + dy;
          int sx = (flip ? first.w - 1 - xx : xx) + dx;
          float v = 0.0f;
          if (sy >= 0 && sy < first.h && sx >= 0 && sx < first.w)
            v = (s.image->pixel(sy, sx)[c] / 255.0f - 0.5f) * 2.0f;
          row[static_cast<size_t>(y) * first.w + xx] = v;
        }
    }
  }
}

}  // namespace cil_detail

// One phase of supervised training over new data plus replayed exemplars.
// `old_classes` head slots belong to earlier phases; when `teacher` is given
// and distillation is on, a KD term over those slots is added.
inline std::vector<double> train_phase(ClassifierModel& model,
                                       const std::vector<cil_detail::Sample>& new_data,
                                       const std::vector<cil_detail::Sample>& replay,
                                       const TrainConfig& config, int epochs, int old_classes,
                                       ClassifierModel* teacher, uint64_t seed) {
  config.validate();
  for (const auto& s : replay)
    if (s.slot >= old_classes)
      throw ContractError("replay contains a current-phase class sample");

  std::vector<cil_detail::Sample> pool = new_data;
  pool.insert(pool.end(), replay.begin(), replay.end());
  if (pool.empty()) throw DataError("train_phase: empty training pool");

  nn::Sgd opt;
  opt.momentum = config.momentum;
  auto params = model.params();
  Rng rng(mix_seed(seed, 0x7068617365ULL));
  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const double kd_weight =
      teacher && old_classes > 0
          ? static_cast<double>(config.distill_weight) * old_classes / model.num_classes
          : 0.0;

  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    float lr = config.base_lr;
    for (int de : config.lr_decay_epochs)
      if (epoch >= de) lr *= config.lr_decay_factor;
    opt.lr = lr;

    rng.shuffle(order);
    double ep_loss = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      int bs = static_cast<int>(
          std::min(static_cast<size_t>(config.batch_size), order.size() - start));
      Fmap x;
      std::vector<int> labels;
      cil_detail::fill_batch(pool, order, start, bs, config.augment, rng, x, labels);
      Mat logits = model.forward(x, true);
      Mat dlogits;
      double loss = nn::softmax_ce(logits, labels, dlogits);
      if (kd_weight > 0) {
        Mat tlogits = teacher->forward(x, false);
        loss += nn::distill_kl(logits, tlogits, config.distill_temp, kd_weight, dlogits);
      }
      model.backward_from_logits(dlogits);
      opt.step(params);
      ep_loss += loss;
      ++batches;
    }
    epoch_losses.push_back(ep_loss / std::max(batches, 1));
  }
  return epoch_losses;
}

// Top-1 accuracy, argmax over every seen-class logit.
inline double evaluate(ClassifierModel& model, const std::vector<cil_detail::Sample>& pool) {
  if (pool.empty()) throw DataError("evaluate: empty test pool");
  size_t correct = 0;
  const int bs_max = 128;
  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (size_t start = 0; start < pool.size(); start += bs_max) {
    int bs = static_cast<int>(std::min(static_cast<size_t>(bs_max), pool.size() - start));
    const Image& first = *pool[start].image;
    Fmap x(3, bs, first.h, first.w);
    for (int i = 0; i < bs; ++i)
      fill_classifier_input(*pool[start + static_cast<size_t>(i)].image, x, i);
    Mat logits = model.forward(x, false);
    for (int i = 0; i < bs; ++i) {
      const float* row = logits.row(i);
      int arg = 0;
      for (int k = 1; k < logits.cols; ++k)
        if (row[k] > row[arg]) arg = k;
      if (arg == pool[start + static_cast<size_t>(i)].slot) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(pool.size());
}

// ---------------------------------------------------------------------------

struct RunOptions {
  float codec_lambda = 16384.0f;
  int codec_initial_epochs = 30;
  int codec_finetune_epochs = 8;
  int candidates_per_class = 80;
  float cam_threshold = 0.6f;
  std::function<void(const PhaseResult&)> on_phase;
  std::function<void(const std::string&)> log;
};

namespace cil_detail {

inline Bitstream empty_container(int h, int w) {
  Bitstream bs;
  bs.frozen_digest = 0;
  bs.orig_h = static_cast<uint16_t>(h);
  bs.orig_w = static_cast<uint16_t>(w);
  bs.pad_h = static_cast<uint16_t>(codec_detail::ceil_multiple(h, CodecModel::kFactor));
  bs.pad_w = static_cast<uint16_t>(codec_detail::ceil_multiple(w, CodecModel::kFactor));
  return bs;
}

inline std::vector<uint8_t> crop_pixels(const Image& img, const BoundingBox& box) {
  std::vector<uint8_t> out(static_cast<size_t>(box.height()) * box.width() * 3);
  for (int y = 0; y < box.height(); ++y) {
    const uint8_t* src = img.pixel(box.y_min + y, box.x_min);
    std::copy(src, src + static_cast<size_t>(box.width()) * 3,
              out.begin() + static_cast<size_t>(y) * box.width() * 3);
  }
  return out;
}

// Builds one exemplar record for `img` under the given mode. The CAM modes
// fall back to a degenerate no-foreground record when the mask is empty.
inline ExemplarRecord build_record(const LabeledImage& li, CompressionMode mode,
                                   ClassifierModel& classifier, int class_slot,
                                   CodecModel* codec, float cam_threshold, int phase) {
  const Image& img = li.image;
  ExemplarRecord r;
  r.label = li.label;
  r.phase_created = phase;
  r.source_id = li.id;
  r.mode = mode;
  r.orig_h = img.h;
  r.orig_w = img.w;

  auto cam_bbox = [&]() -> std::optional<BoundingBox> {
    ActivationMap cam = compute_cam(classifier, img, class_slot);
    BinaryMask mask = mask_from_cam(cam, cam_threshold, img.h, img.w);
    return mask_to_bbox(mask);
  };

  switch (mode) {
    case CompressionMode::raw: {
      r.has_foreground = true;
      r.bbox = {0, 0, img.w - 1, img.h - 1};
      r.fg = img.px;
      r.container = empty_container(img.h, img.w).serialize();
      break;
    }
    case CompressionMode::full_compression: {
      if (!codec) throw ContractError("full_compression mode requires a codec");
      r.has_foreground = false;
      r.container = encode(*codec, img).serialize();
      break;
    }
    case CompressionMode::cam_composite: {
      if (!codec) throw ContractError("cam_composite mode requires a codec");
      auto box = cam_bbox();
      if (box) {
        r.has_foreground = true;
        r.bbox = *box;
        r.fg = crop_pixels(img, *box);
      }
      r.container = encode(*codec, img).serialize();
      break;
    }
    case CompressionMode::blank_background:
    case CompressionMode::background_removal: {
      auto box = cam_bbox();
      if (box) {
        r.has_foreground = true;
        r.bbox = *box;
        r.fg = crop_pixels(img, *box);
      }
      r.container = empty_container(img.h, img.w).serialize();
      break;
    }
  }
  return r;
}

}  // namespace cil_detail

struct RunArtifacts {
  std::vector<PhaseResult> results;
  ExemplarStore store;
  std::optional<CodecModel> codec;
};

// The full incremental pipeline. Per phase: codec train/fine-tune (modes
// that store bitstreams only), classifier training on new data + replay,
// herding selection + record building, budget admission, evaluation.
inline RunArtifacts run_incremental(const TaskSequence& seq, const ProtocolConfig& protocol,
                                    const TrainConfig& tcfg, CompressionMode mode,
                                    const RunOptions& opts = {}) {
  tcfg.validate();
  if (seq.tasks.empty() || !seq.dataset) throw ConfigError("empty task sequence");
  const Dataset& ds = *seq.dataset;
  const bool needs_codec =
      mode == CompressionMode::cam_composite || mode == CompressionMode::full_compression;

  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };

  RunArtifacts art;
  std::vector<int> class_to_slot(static_cast<size_t>(ds.num_classes()), -1);
  int slots = 0;

  ClassifierModel model;
  std::unique_ptr<ClassifierModel> teacher;
  ExemplarStore store;

  for (size_t phase = 0; phase < seq.tasks.size(); ++phase) {
    const Task& task = seq.tasks[phase];
    const int old_classes = slots;
    for (int c : task.classes) class_to_slot[static_cast<size_t>(c)] = slots++;
    if (phase == 0)
      model.init(tcfg.seed, slots);
    else
      model.expand_head(slots);

    // Current-phase originals, used for codec adaptation and training.
    std::vector<LabeledImage> phase_images;
    phase_images.reserve(task.sample_idx.size());
    for (int idx : task.sample_idx) phase_images.push_back(ds.train[static_cast<size_t>(idx)]);

    if (needs_codec) {
      uint64_t cseed = mix_seed(tcfg.seed, 0xC0DEC000ULL + phase);
      if (phase == 0) {
        log("phase 0: training codec (" + std::to_string(opts.codec_initial_epochs) + " epochs)");
        art.codec = train_initial(phase_images, opts.codec_lambda, opts.codec_initial_epochs,
                                  cseed);
        freeze_decoder_side(*art.codec);
      } else {
        log("phase " + std::to_string(phase) + ": fine-tuning encoder (" +
            std::to_string(opts.codec_finetune_epochs) + " epochs)");
        finetune_encoder(*art.codec, phase_images, opts.codec_finetune_epochs, cseed);
      }
    }

    std::vector<LabeledImage> replay_images =
        store.count() ? materialize(store, art.codec ? &*art.codec : nullptr)
                      : std::vector<LabeledImage>{};
    std::vector<cil_detail::Sample> new_samples, replay_samples;
    for (const auto& li : phase_images)
      new_samples.push_back({&li.image, class_to_slot[static_cast<size_t>(li.label)]});
    for (const auto& li : replay_images)
      replay_samples.push_back({&li.image, class_to_slot[static_cast<size_t>(li.label)]});

    int epochs = phase == 0 ? tcfg.initial_epochs : tcfg.incremental_epochs;
    log("phase " + std::to_string(phase) + ": training classifier on " +
        std::to_string(new_samples.size()) + " new + " + std::to_string(replay_samples.size()) +
        " replayed samples");
    train_phase(model, new_samples, replay_samples, tcfg, epochs, old_classes,
                teacher.get(), mix_seed(tcfg.seed, 0x747261696EULL + phase));

    // Exemplar selection for the classes introduced this phase.
    std::map<int, std::vector<ExemplarRecord>> candidates;
    for (int c : task.classes) {
      std::vector<const LabeledImage*> members;
      for (const auto& li : phase_images)
        if (li.label == c) members.push_back(&li);
      if (members.empty()) continue;
      Mat feats(static_cast<int>(members.size()), ClassifierModel::kFeatDim);
      const int fb = 128;
      for (size_t start = 0; start < members.size(); start += fb) {
        int bs = static_cast<int>(std::min(static_cast<size_t>(fb), members.size() - start));
        Fmap x(3, bs, members[start]->image.h, members[start]->image.w);
        for (int i = 0; i < bs; ++i)
          fill_classifier_input(members[start + static_cast<size_t>(i)]->image, x, i);
        Mat pooled = nn::global_avg_pool(model.features(x, false));
        for (int i = 0; i < bs; ++i)
          std::copy(pooled.row(i), pooled.row(i) + ClassifierModel::kFeatDim,
                    feats.row(static_cast<int>(start) + i));
      }
      for (int i = 0; i < feats.rows; ++i) {
        double norm = 0;
        for (int j = 0; j < feats.cols; ++j)
          norm += static_cast<double>(feats.at(i, j)) * feats.at(i, j);
        float inv = norm > 0 ? static_cast<float>(1.0 / std::sqrt(norm)) : 0.0f;
        for (int j = 0; j < feats.cols; ++j) feats.at(i, j) *= inv;
      }
      int take = std::min(opts.candidates_per_class, feats.rows);
      std::vector<int> ranked = herding_select(feats, take);
      std::vector<ExemplarRecord> recs;
      recs.reserve(ranked.size());
      for (int idx : ranked)
        recs.push_back(cil_detail::build_record(*members[static_cast<size_t>(idx)], mode, model,
                                                class_to_slot[static_cast<size_t>(c)],
                                                art.codec ? &*art.codec : nullptr,
                                                opts.cam_threshold, static_cast<int>(phase)));
      candidates.emplace(c, std::move(recs));
    }

    // Admission: every class re-admitted round-robin under the phase budget,
    // existing records rank-first (fixed mode thereby shrinks old quotas).
    MemoryBudget budget = budget_for(protocol, slots);
    for (auto& [cls, recs] : store.by_class) {
      auto [it, fresh] = candidates.emplace(cls, std::move(recs));
      if (!fresh) throw ContractError("class re-selected in a later phase");
    }
    store = ExemplarStore{};
    store.budget = budget;
    admit(store, std::move(candidates));

    std::vector<cil_detail::Sample> test_pool;
    for (int idx : seq.test_idx) {
      const LabeledImage& li = ds.test[static_cast<size_t>(idx)];
      int slot = class_to_slot[static_cast<size_t>(li.label)];
      if (slot >= 0) test_pool.push_back({&li.image, slot});
    }
    PhaseResult pr;
    pr.phase = static_cast<int>(phase);
    pr.classes_seen = slots;
    pr.top1 = evaluate(model, test_pool);
    pr.exemplar_count = store.count();
    pr.mean_record_bpp = store.mean_record_bpp();
    pr.buffer_bits_used = store.used_bits();
    pr.buffer_bits_total = budget.total_bits;
    art.results.push_back(pr);
    if (opts.on_phase) opts.on_phase(pr);

    if (phase + 1 < seq.tasks.size() && tcfg.distill_weight > 0)
      teacher = std::make_unique<ClassifierModel>(model);
  }
  art.store = std::move(store);
  return art;
}

}  // namespace czc
