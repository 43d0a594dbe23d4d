#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "czc/cil.hpp"
#include "czc/synth.hpp"

using namespace czc;
using Catch::Matchers::ContainsSubstring;

namespace {

// Small desk pool at a reduced tile size to keep training cheap: `per`
// images for each of `classes` classes, slots equal to labels.
struct Pool {
  std::vector<LabeledImage> images;
  std::vector<cil_detail::Sample> samples;
};

Pool desk_pool(int classes, int per, uint64_t seed, int size = 16) {
  Pool p;
  Dataset ds = synth::generate_desk_dataset(classes, per, 0, seed, size);
  p.images = std::move(ds.train);
  for (const auto& li : p.images)
    p.samples.push_back({&li.image, li.label});
  return p;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.initial_epochs = 4;
  cfg.incremental_epochs = 3;
  cfg.lr_decay_epochs = {1000};  // effectively constant lr at test scale
  return cfg;
}

}  // namespace

TEST_CASE("summarize reports incremental average and last accuracy") {
  std::vector<PhaseResult> rs(3);
  rs[0].top1 = 0.8;
  rs[1].top1 = 0.7;
  rs[2].top1 = 0.6;
  auto [avg, last] = summarize(rs);
  CHECK(avg == Catch::Approx(0.70).margin(1e-12));
  CHECK(last == Catch::Approx(0.60).margin(1e-12));
}

TEST_CASE("summarize of a single phase returns that accuracy twice") {
  std::vector<PhaseResult> rs(1);
  rs[0].top1 = 0.42;
  auto [avg, last] = summarize(rs);
  CHECK(avg == 0.42);
  CHECK(last == 0.42);
}

TEST_CASE("summarize rejects an empty result list") {
  CHECK_THROWS_AS(summarize({}), DataError);
}

TEST_CASE("train config validation rejects out-of-range fields") {
  TrainConfig ok;
  CHECK_NOTHROW(ok.validate());

  TrainConfig c = ok;
  c.initial_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = ok;
  c.incremental_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = ok;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = ok;
  c.lr_decay_factor = 0.0f;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = ok;
  c.lr_decay_factor = 1.0f;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = ok;
  c.distill_weight = -0.1f;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("expand_head keeps old class rows and their logits") {
  ClassifierModel model;
  model.init(1993, 2);

  Pool pool = desk_pool(1, 1, 11);
  Fmap x(3, 1, pool.images[0].image.h, pool.images[0].image.w);
  fill_classifier_input(pool.images[0].image, x, 0);
  Mat before = model.forward(x, false);
  REQUIRE(before.cols == 2);

  model.expand_head(5);
  REQUIRE(model.num_classes == 5);
  Mat after = model.forward(x, false);
  REQUIRE(after.cols == 5);
  // Old rows are copied verbatim; the logits can still move by a few ulps
  // because the wider head changes the BLAS accumulation order.
  for (int k = 0; k < 2; ++k)
    CHECK(after.at(0, k) == Catch::Approx(before.at(0, k)).epsilon(1e-5).margin(1e-6));

  SECTION("expanding to the current size is a no-op") {
    std::vector<float> w = model.head.w.w;
    model.expand_head(5);
    CHECK(model.head.w.w == w);
  }

  SECTION("the head never shrinks") {
    CHECK_THROWS_AS(model.expand_head(3), ContractError);
  }

  SECTION("growth draws are consumed from the model's own stream") {
    // Two equal models expanded by different routes end at different
    // weights for the new rows, but an identical route stays identical.
    ClassifierModel a, b;
    a.init(5, 2);
    b.init(5, 2);
    a.expand_head(4);
    b.expand_head(4);
    CHECK(a.head.w.w == b.head.w.w);
  }
}

TEST_CASE("train_phase rejects replay drawn from current-phase classes") {
  ClassifierModel model;
  model.init(3, 3);
  Pool pool = desk_pool(3, 1, 21);
  std::vector<cil_detail::Sample> fresh = {pool.samples[2]};
  std::vector<cil_detail::Sample> replay = {pool.samples[2]};  // slot 2 >= old 2
  TrainConfig cfg = tiny_config();
  CHECK_THROWS_WITH(train_phase(model, fresh, replay, cfg, 1, 2, nullptr, 9),
                    ContainsSubstring("current-phase"));
}

TEST_CASE("train_phase rejects an empty training pool") {
  ClassifierModel model;
  model.init(3, 2);
  TrainConfig cfg = tiny_config();
  CHECK_THROWS_AS(train_phase(model, {}, {}, cfg, 1, 0, nullptr, 9), DataError);
}

TEST_CASE("supervised training reduces loss and memorizes a small pool") {
  Pool pool = desk_pool(2, 6, 1993);
  ClassifierModel model;
  model.init(1993, 2);
  TrainConfig cfg = tiny_config();
  std::vector<double> losses =
      train_phase(model, pool.samples, {}, cfg, 16, 0, nullptr, cfg.seed);

  REQUIRE(losses.size() == 16);
  for (double l : losses) CHECK(std::isfinite(l));
  CHECK(losses.back() < losses.front());

  // The two desk classes differ in hue family and glyph, so a trained
  // model should score its own training pool perfectly.
  CHECK(evaluate(model, pool.samples) == 1.0);

  SECTION("evaluation is deterministic") {
    CHECK(evaluate(model, pool.samples) == evaluate(model, pool.samples));
  }
}

TEST_CASE("evaluate scores argmax top-1 with first-index tie break") {
  ClassifierModel model;
  model.init(3, 2);
  std::fill(model.head.w.w.begin(), model.head.w.w.end(), 0.0f);
  std::fill(model.head.b.w.begin(), model.head.b.w.end(), 0.0f);

  // All logits equal, so every prediction lands on slot 0: accuracy is
  // the share of slot-0 samples in the pool.
  Pool pool = desk_pool(2, 3, 77);
  CHECK(evaluate(model, pool.samples) == 0.5);
}

TEST_CASE("evaluate rejects an empty pool") {
  ClassifierModel model;
  model.init(3, 2);
  CHECK_THROWS_AS(evaluate(model, {}), DataError);
}

TEST_CASE("distillation against a frozen teacher trains to finite losses") {
  Pool old_pool = desk_pool(2, 4, 31);
  ClassifierModel model;
  model.init(1993, 2);
  TrainConfig cfg = tiny_config();
  train_phase(model, old_pool.samples, {}, cfg, 3, 0, nullptr, 4);

  auto teacher = std::make_unique<ClassifierModel>(model);
  model.expand_head(4);

  Pool all = desk_pool(4, 4, 31);
  std::vector<cil_detail::Sample> fresh, replay;
  for (const auto& s : all.samples)
    (s.slot >= 2 ? fresh : replay).push_back(s);
  REQUIRE(fresh.size() == 8);
  REQUIRE(replay.size() == 8);

  std::vector<double> losses =
      train_phase(model, fresh, replay, cfg, 2, 2, teacher.get(), 5);
  REQUIRE(losses.size() == 2);
  for (double l : losses) CHECK(std::isfinite(l));

  // The teacher itself must be untouched by the student's phase.
  Fmap x(3, 1, old_pool.images[0].image.h, old_pool.images[0].image.w);
  fill_classifier_input(old_pool.images[0].image, x, 0);
  Mat tl = teacher->forward(x, false);
  CHECK(tl.cols == 2);
}

TEST_CASE("run_incremental on raw mode walks the full two-phase protocol") {
  Dataset ds = synth::generate_desk_dataset(4, 6, 3, 1993, 16);
  ProtocolConfig protocol;
  protocol.kind = ProtocolKind::LFS;
  protocol.base_classes = 2;
  protocol.step_classes = 2;
  protocol.budget_mode = BudgetMode::fixed_total;
  protocol.budget_images = 4;
  protocol.raw_reference_h = 16;
  protocol.raw_reference_w = 16;

  ClassOrder order;
  order.permutation = {0, 1, 2, 3};
  TaskSequence seq = build_task_sequence(ds, order, protocol);

  TrainConfig tcfg = tiny_config();
  RunOptions opts;
  opts.candidates_per_class = 3;

  RunArtifacts art = run_incremental(seq, protocol, tcfg, CompressionMode::raw, opts);

  REQUIRE(art.results.size() == 2);
  CHECK(art.results[0].phase == 0);
  CHECK(art.results[1].phase == 1);
  CHECK(art.results[0].classes_seen == 2);
  CHECK(art.results[1].classes_seen == 4);
  CHECK_FALSE(art.codec.has_value());

  for (const PhaseResult& pr : art.results) {
    CHECK(pr.top1 >= 0.0);
    CHECK(pr.top1 <= 1.0);
    CHECK(pr.exemplar_count > 0);
    CHECK(pr.buffer_bits_used <= pr.buffer_bits_total);
    CHECK(pr.buffer_bits_total == 4u * raw_image_bits(16, 16));
  }

  // Raw records carry the full tile plus container header and id fields.
  uint64_t expect_cost = 16 * 16 * 24 + Bitstream::kHeaderBytes * 8 + 64 + 32;
  for (const auto& [cls, recs] : art.store.by_class)
    for (const ExemplarRecord& r : recs) {
      CHECK(r.mode == CompressionMode::raw);
      CHECK(r.label == cls);
      CHECK(r.cost_bits() == expect_cost);
    }
  CHECK(art.results[1].buffer_bits_used == art.store.used_bits());

  SECTION("a repeated run reproduces every phase metric exactly") {
    RunArtifacts again = run_incremental(seq, protocol, tcfg, CompressionMode::raw, opts);
    REQUIRE(again.results.size() == art.results.size());
    for (size_t i = 0; i < art.results.size(); ++i) {
      CHECK(again.results[i].top1 == art.results[i].top1);
      CHECK(again.results[i].exemplar_count == art.results[i].exemplar_count);
      CHECK(again.results[i].buffer_bits_used == art.results[i].buffer_bits_used);
    }
  }
}

TEST_CASE("run_incremental on a single-task sequence yields one result") {
  Dataset ds = synth::generate_desk_dataset(2, 4, 2, 7, 16);
  ProtocolConfig protocol;
  protocol.base_classes = 2;
  protocol.step_classes = 1;
  protocol.budget_mode = BudgetMode::per_class_growing;
  protocol.budget_images = 2;
  protocol.raw_reference_h = 16;
  protocol.raw_reference_w = 16;

  ClassOrder order;
  order.permutation = {0, 1};
  TaskSequence seq = build_task_sequence(ds, order, protocol);

  TrainConfig tcfg = tiny_config();
  tcfg.initial_epochs = 2;
  RunOptions opts;
  opts.candidates_per_class = 2;

  RunArtifacts art = run_incremental(seq, protocol, tcfg, CompressionMode::raw, opts);
  REQUIRE(art.results.size() == 1);
  CHECK(art.results[0].phase == 0);
  CHECK(art.results[0].classes_seen == 2);
  CHECK(art.results[0].buffer_bits_total == 2u * 2u * raw_image_bits(16, 16));
}

TEST_CASE("run_incremental with cam composites trains and reuses the codec") {
  Dataset ds = synth::generate_desk_dataset(4, 4, 2, 11, 16);
  ProtocolConfig protocol;
  protocol.base_classes = 2;
  protocol.step_classes = 2;
  protocol.budget_mode = BudgetMode::fixed_total;
  protocol.budget_images = 40;  // roomy: admission should keep everything
  protocol.raw_reference_h = 16;
  protocol.raw_reference_w = 16;

  ClassOrder order;
  order.permutation = {0, 1, 2, 3};
  TaskSequence seq = build_task_sequence(ds, order, protocol);

  TrainConfig tcfg = tiny_config();
  tcfg.initial_epochs = 2;
  tcfg.incremental_epochs = 2;
  RunOptions opts;
  opts.codec_initial_epochs = 1;
  opts.codec_finetune_epochs = 1;
  opts.candidates_per_class = 2;

  RunArtifacts art =
      run_incremental(seq, protocol, tcfg, CompressionMode::cam_composite, opts);

  REQUIRE(art.results.size() == 2);
  REQUIRE(art.codec.has_value());
  CHECK(art.codec->frozen);

  // Phase 1 materialized phase-0 records through the fine-tuned encoder's
  // frozen decoder, so every stored stream must still decode here.
  std::vector<LabeledImage> replayed = materialize(art.store, &*art.codec);
  CHECK(replayed.size() == static_cast<size_t>(art.store.count()));

  for (const auto& [cls, recs] : art.store.by_class)
    for (const ExemplarRecord& r : recs) {
      CHECK(r.mode == CompressionMode::cam_composite);
      CHECK(r.label == cls);
      CHECK(r.container.size() > Bitstream::kHeaderBytes);
    }
  CHECK(art.results[1].mean_record_bpp > 0.0);
  CHECK(art.results[1].exemplar_count == art.store.count());
}
