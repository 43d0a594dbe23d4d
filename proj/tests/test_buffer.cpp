#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unistd.h>
#include <vector>

#include "czc/buffer.hpp"
#include "czc/synth.hpp"

using namespace czc;

namespace {

// Valid serialized container with the given payload size on top of the
// fixed header (decode would fail; byte-level plumbing does not care).
std::vector<uint8_t> stub_container(int orig_h, int orig_w, size_t payload_bytes) {
  Bitstream bs;
  bs.orig_h = static_cast<uint16_t>(orig_h);
  bs.orig_w = static_cast<uint16_t>(orig_w);
  bs.pad_h = static_cast<uint16_t>(codec_detail::ceil_multiple(orig_h, 32));
  bs.pad_w = static_cast<uint16_t>(codec_detail::ceil_multiple(orig_w, 32));
  bs.hyper.assign(payload_bytes, 0xAB);
  return bs.serialize();
}

// Record without foreground whose total cost is exactly `bits` (bits must
// be 96 + a positive multiple of 8 covering the 29-byte header).
ExemplarRecord stub_record(int label, uint64_t bits, int64_t source_id) {
  ExemplarRecord r;
  r.label = label;
  r.mode = CompressionMode::full_compression;
  r.has_foreground = false;
  r.orig_h = 32;
  r.orig_w = 32;
  r.source_id = source_id;
  r.container = stub_container(32, 32, (bits - 96) / 8 - Bitstream::kHeaderBytes);
  return r;
}

// Independent re-simulation of the round-robin admission policy.
std::map<int, std::vector<int64_t>> oracle_admit(
    const std::map<int, std::vector<ExemplarRecord>>& candidates, uint64_t budget) {
  std::map<int, std::vector<int64_t>> out;
  std::map<int, size_t> cursor;
  std::map<int, bool> retired;
  uint64_t used = 0;
  bool progress = true;
  while (progress) {
    progress = false;
    for (const auto& [cls, recs] : candidates) {
      if (retired[cls] || cursor[cls] >= recs.size()) continue;
      const ExemplarRecord& r = recs[cursor[cls]];
      if (used + r.cost_bits() > budget) {
        retired[cls] = true;
        continue;
      }
      used += r.cost_bits();
      out[cls].push_back(r.source_id);
      ++cursor[cls];
      progress = true;
    }
  }
  return out;
}

std::map<int, std::vector<int64_t>> ids_of(const ExemplarStore& store) {
  std::map<int, std::vector<int64_t>> out;
  for (const auto& [cls, recs] : store.by_class)
    for (const auto& r : recs) out[cls].push_back(r.source_id);
  return out;
}

struct TempDir {
  std::filesystem::path root;
  explicit TempDir(const std::string& tag) {
    root = std::filesystem::temp_directory_path() /
           ("czc_buf_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
  }
  ~TempDir() { std::filesystem::remove_all(root); }
};

}  // namespace

TEST_CASE("compression mode names roundtrip") {
  for (auto m : {CompressionMode::raw, CompressionMode::full_compression,
                 CompressionMode::cam_composite, CompressionMode::blank_background,
                 CompressionMode::background_removal})
    CHECK(mode_from_name(mode_name(m)) == m);
  CHECK_THROWS_AS(mode_from_name("zipped"), ConfigError);
}

TEST_CASE("herding selects the mean-nearest prefix greedily") {
  SECTION("the hand example picks the mean feature first") {
    Mat f(3, 2);
    f.at(0, 0) = 0;
    f.at(1, 0) = 2;
    f.at(2, 0) = 1;  // equals the mean (1, 0)
    CHECK(herding_select(f, 1) == std::vector<int>{2});
    // m = n is a permutation
    auto all = herding_select(f, 3);
    std::vector<int> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2});
  }

  SECTION("ties break toward the lowest index") {
    Mat f(2, 2);
    f.at(0, 0) = 0;
    f.at(1, 0) = 2;  // both equidistant from the mean (1, 0)
    CHECK(herding_select(f, 1) == std::vector<int>{0});
  }

  SECTION("matches a brute-force greedy oracle on random sets") {
    Rng rng(55);
    for (int trial = 0; trial < 25; ++trial) {
      int n = 2 + static_cast<int>(rng.below(7));
      int d = 1 + static_cast<int>(rng.below(3));
      Mat f(n, d);
      for (auto& v : f.v) v = static_cast<float>(rng.normal());
      int m = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(n)));

      // independent step-by-step oracle
      std::vector<double> mu(static_cast<size_t>(d), 0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mu[static_cast<size_t>(j)] += f.at(i, j) / n;
      std::vector<int> expect;
      std::vector<double> sum(static_cast<size_t>(d), 0);
      std::vector<bool> taken(static_cast<size_t>(n), false);
      for (int k = 1; k <= m; ++k) {
        double best = 1e300;
        int arg = -1;
        for (int i = 0; i < n; ++i) {
          if (taken[static_cast<size_t>(i)]) continue;
          double dist = 0;
          for (int j = 0; j < d; ++j) {
            double diff = mu[static_cast<size_t>(j)] - (sum[static_cast<size_t>(j)] + f.at(i, j)) / k;
            dist += diff * diff;
          }
          if (dist < best) {
            best = dist;
            arg = i;
          }
        }
        taken[static_cast<size_t>(arg)] = true;
        for (int j = 0; j < d; ++j) sum[static_cast<size_t>(j)] += f.at(arg, j);
        expect.push_back(arg);
      }
      CHECK(herding_select(f, m) == expect);
    }
  }

  SECTION("input validation") {
    Mat empty(0, 3);
    CHECK_THROWS_AS(herding_select(empty, 0), DataError);
    Mat one(1, 1);
    CHECK_THROWS_AS(herding_select(one, 2), ConfigError);
    CHECK_THROWS_AS(herding_select(one, -1), ConfigError);
    CHECK(herding_select(one, 0).empty());
  }
}

TEST_CASE("record cost follows the container + foreground + metadata formula") {
  ExemplarRecord r;
  r.mode = CompressionMode::cam_composite;
  r.has_foreground = true;
  r.bbox = BoundingBox{0, 0, 9, 9};  // 10x10 foreground
  r.fg.assign(10 * 10 * 3, 0);
  r.container.assign(150, 0);  // 1200 bits
  r.orig_h = r.orig_w = 32;
  CHECK(r.cost_bits() == 1200 + 2400 + 96);
  CHECK(exemplar_cost_bits(r) == 3696);

  ExemplarRecord bare;
  bare.has_foreground = false;
  bare.container.assign(150, 0);
  CHECK(bare.cost_bits() == 1200 + 96);

  // a raw 32x32 record costs the pixels plus the empty container + metadata
  ExemplarRecord raw;
  raw.mode = CompressionMode::raw;
  raw.has_foreground = true;
  raw.bbox = BoundingBox{0, 0, 31, 31};
  raw.fg.assign(32 * 32 * 3, 0);
  raw.container = stub_container(32, 32, 0);
  CHECK(raw.cost_bits() == 24576 + 29 * 8 + 96);
}

TEST_CASE("budgets derive from the protocol's mode") {
  ProtocolConfig p;
  p.budget_mode = BudgetMode::fixed_total;
  p.budget_images = 2000;
  p.raw_reference_h = p.raw_reference_w = 32;
  MemoryBudget fixed = budget_for(p, 4);
  CHECK(fixed.total_bits == 2000ULL * 24576);
  CHECK(fixed.raw_reference_bits == 24576);

  p.budget_mode = BudgetMode::per_class_growing;
  p.budget_images = 20;
  CHECK(budget_for(p, 4).total_bits == 20ULL * 4 * 24576);
  CHECK(budget_for(p, 10).total_bits == 20ULL * 10 * 24576);
}

TEST_CASE("admission is round-robin by ascending class id") {
  SECTION("zero budget admits nothing") {
    ExemplarStore store;
    store.budget.total_bits = 0;
    std::map<int, std::vector<ExemplarRecord>> cands;
    cands[0].push_back(stub_record(0, 1000, 1));
    admit(store, std::move(cands));
    CHECK(store.count() == 0);
    CHECK(store.used_bits() == 0);
  }

  SECTION("uniform 1000-bit records under a 5000-bit budget split (3, 2)") {
    ExemplarStore store;
    store.budget.total_bits = 5000;
    std::map<int, std::vector<ExemplarRecord>> cands;
    for (int64_t i = 0; i < 4; ++i) cands[0].push_back(stub_record(0, 1000, i));
    for (int64_t i = 0; i < 4; ++i) cands[1].push_back(stub_record(1, 1000, 10 + i));
    admit(store, std::move(cands));
    REQUIRE(store.by_class[0].size() == 3);
    REQUIRE(store.by_class[1].size() == 2);
    CHECK(store.used_bits() == 5000);
    // herding order preserved
    CHECK(store.by_class[0][0].source_id == 0);
    CHECK(store.by_class[0][2].source_id == 2);
  }

  SECTION("a class whose next record does not fit is retired, not substituted") {
    ExemplarStore store;
    store.budget.total_bits = 4000;
    std::map<int, std::vector<ExemplarRecord>> cands;
    cands[0].push_back(stub_record(0, 1000, 0));
    cands[0].push_back(stub_record(0, 3000, 1));  // would overflow after c1 takes 1000
    cands[0].push_back(stub_record(0, 328, 2));   // cheaper, but never considered
    cands[1].push_back(stub_record(1, 1000, 10));
    cands[1].push_back(stub_record(1, 1000, 11));
    admit(store, std::move(cands));
    auto got = ids_of(store);
    CHECK(got[0] == std::vector<int64_t>{0});
    CHECK(got[1] == std::vector<int64_t>{10, 11});
    CHECK(store.used_bits() <= 4000);
  }

  SECTION("random candidate sets match the oracle and respect the budget") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
      std::map<int, std::vector<ExemplarRecord>> cands;
      int classes = 1 + static_cast<int>(rng.below(5));
      int64_t id = 0;
      for (int c = 0; c < classes; ++c) {
        int n = static_cast<int>(rng.below(6));
        for (int i = 0; i < n; ++i) {
          uint64_t bits = 96 + 8 * (Bitstream::kHeaderBytes + rng.below(400));
          cands[c].push_back(stub_record(c, bits, id++));
        }
      }
      uint64_t budget = rng.below(12000);
      auto expect = oracle_admit(cands, budget);

      ExemplarStore store;
      store.budget.total_bits = budget;
      admit(store, std::move(cands));
      CHECK(ids_of(store) == expect);
      CHECK(store.used_bits() <= budget);
    }
  }
}

TEST_CASE("rebalance keeps best-rank records under the new budget") {
  auto build = [] {
    ExemplarStore store;
    store.budget.total_bits = 40 * 1000;
    std::map<int, std::vector<ExemplarRecord>> cands;
    int64_t id = 0;
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 10; ++i) cands[c].push_back(stub_record(c, 1000, id++));
    admit(store, std::move(cands));
    return store;
  };

  SECTION("same budget is a no-op") {
    ExemplarStore store = build();
    auto before = ids_of(store);
    MemoryBudget same = store.budget;
    ExemplarStore after = rebalance(std::move(store), same);
    CHECK(ids_of(after) == before);
    CHECK(after.used_bits() == 40000);
  }

  SECTION("halving a uniform store keeps 5 of 10 per class") {
    ExemplarStore store = build();
    MemoryBudget half = store.budget;
    half.total_bits = 20000;
    ExemplarStore after = rebalance(std::move(store), half);
    for (int c = 0; c < 4; ++c) {
      REQUIRE(after.by_class[c].size() == 5);
      // the five survivors are the best-ranked prefix
      for (int i = 0; i < 5; ++i)
        CHECK(after.by_class[c][static_cast<size_t>(i)].source_id == c * 10 + i);
    }
  }

  SECTION("mixed costs match the oracle") {
    Rng rng(88);
    ExemplarStore store;
    store.budget.total_bits = 1ULL << 40;
    std::map<int, std::vector<ExemplarRecord>> cands;
    int64_t id = 0;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 6; ++i)
        cands[c].push_back(stub_record(c, 96 + 8 * (Bitstream::kHeaderBytes + rng.below(300)), id++));
    admit(store, std::move(cands));

    std::map<int, std::vector<ExemplarRecord>> copy;
    for (const auto& [cls, recs] : store.by_class) copy[cls] = recs;
    MemoryBudget tight;
    tight.total_bits = store.used_bits() / 2;
    auto expect = oracle_admit(copy, tight.total_bits);
    ExemplarStore after = rebalance(std::move(store), tight);
    CHECK(ids_of(after) == expect);
    CHECK(after.used_bits() <= tight.total_bits);
  }
}

TEST_CASE("mean record bpp aggregates stored bits over source pixels") {
  ExemplarStore store;
  store.budget.total_bits = 1 << 20;
  ExemplarRecord a = stub_record(0, 96 + 8 * 229, 0);  // 1928 bits total
  ExemplarRecord b = stub_record(0, 96 + 8 * 429, 1);  // 3528 bits total
  uint64_t bits = a.cost_bits() + b.cost_bits();
  store.by_class[0].push_back(a);
  store.by_class[0].push_back(b);
  CHECK(store.mean_record_bpp() ==
        Catch::Approx(static_cast<double>(bits) / (2.0 * 32 * 32)));
  ExemplarStore empty;
  CHECK(empty.mean_record_bpp() == 0.0);
}

TEST_CASE("materialization reconstitutes every mode") {
  CodecModel codec;
  codec.init(4, 16384.0f);
  Rng rng(91);
  Image orig = synth::desk_tile(3, rng);

  Bitstream bs = encode(codec, orig);
  Image recon = decode(codec, bs);
  BoundingBox bb{8, 10, 23, 27};

  auto crop = [&](const Image& img) {
    std::vector<uint8_t> out;
    for (int y = bb.y_min; y <= bb.y_max; ++y) {
      const uint8_t* row = img.pixel(y, bb.x_min);
      out.insert(out.end(), row, row + static_cast<size_t>(bb.width()) * 3);
    }
    return out;
  };

  ExemplarStore store;
  store.budget.total_bits = 1ULL << 32;

  ExemplarRecord raw;
  raw.label = 0;
  raw.mode = CompressionMode::raw;
  raw.has_foreground = true;
  raw.bbox = BoundingBox{0, 0, 31, 31};
  raw.orig_h = raw.orig_w = 32;
  raw.fg = orig.px;
  raw.container = stub_container(32, 32, 0);
  raw.source_id = 100;
  store.by_class[0].push_back(raw);

  ExemplarRecord cam;
  cam.label = 1;
  cam.mode = CompressionMode::cam_composite;
  cam.has_foreground = true;
  cam.bbox = bb;
  cam.orig_h = cam.orig_w = 32;
  cam.fg = crop(orig);
  cam.container = bs.serialize();
  cam.source_id = 101;
  store.by_class[1].push_back(cam);

  ExemplarRecord full;
  full.label = 2;
  full.mode = CompressionMode::full_compression;
  full.has_foreground = false;
  full.orig_h = full.orig_w = 32;
  full.container = bs.serialize();
  full.source_id = 102;
  store.by_class[2].push_back(full);

  ExemplarRecord blank = cam;
  blank.label = 3;
  blank.mode = CompressionMode::blank_background;
  blank.container = stub_container(32, 32, 0);
  blank.source_id = 103;
  store.by_class[3].push_back(blank);

  ExemplarRecord removal = blank;
  removal.label = 4;
  removal.mode = CompressionMode::background_removal;
  removal.source_id = 104;
  store.by_class[4].push_back(removal);

  std::vector<LabeledImage> out = materialize(store, &codec);
  REQUIRE(out.size() == 5);

  // raw: exact original
  CHECK(out[0].label == 0);
  CHECK(out[0].id == 100);
  CHECK(out[0].image.px == orig.px);

  // cam composite: original inside the box, reconstruction outside
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const uint8_t* expect = bb.contains(y, x) ? orig.pixel(y, x) : recon.pixel(y, x);
      REQUIRE(std::memcmp(out[1].image.pixel(y, x), expect, 3) == 0);
    }

  // full compression: the reconstruction alone
  CHECK(out[2].image.px == recon.px);

  // blank background: mid-gray outside the preserved crop
  CHECK(out[3].image.pixel(0, 0)[0] == 128);
  CHECK(std::memcmp(out[3].image.pixel(bb.y_min, bb.x_min), orig.pixel(bb.y_min, bb.x_min), 3) == 0);

  // background removal: black outside
  CHECK(out[4].image.pixel(0, 0)[0] == 0);
  CHECK(std::memcmp(out[4].image.pixel(bb.y_max, bb.x_max), orig.pixel(bb.y_max, bb.x_max), 3) == 0);

  // deterministic across repeated calls
  std::vector<LabeledImage> again = materialize(store, &codec);
  for (size_t i = 0; i < out.size(); ++i) CHECK(again[i].image.px == out[i].image.px);

  // a full-image bbox composite is the identity
  ExemplarRecord ident = cam;
  ident.bbox = BoundingBox{0, 0, 31, 31};
  ident.fg = orig.px;
  ExemplarStore solo;
  solo.budget.total_bits = 1ULL << 32;
  solo.by_class[0].push_back(ident);
  CHECK(materialize(solo, &codec)[0].image.px == orig.px);

  // empty store, missing codec, and foreign digests fail loudly
  ExemplarStore none;
  CHECK(materialize(none, &codec).empty());
  ExemplarStore needs;
  needs.budget.total_bits = 1ULL << 32;
  needs.by_class[3].push_back(cam);
  CHECK_THROWS_AS(materialize(needs, nullptr), ContractError);
  CodecModel other;
  other.init(5, 16384.0f);
  try {
    materialize(needs, &other);
    FAIL("expected IncompatibleModelError");
  } catch (const IncompatibleModelError& e) {
    CHECK(std::string(e.what()).find("class 3 rank 0") != std::string::npos);
  }
}

TEST_CASE("stores persist to a manifest directory and back") {
  CodecModel codec;
  codec.init(4, 16384.0f);
  Rng rng(92);
  Image orig = synth::desk_tile(2, rng);
  Bitstream bs = encode(codec, orig);

  ExemplarStore store;
  store.budget.total_bits = 1ULL << 32;
  ExemplarRecord cam;
  cam.label = 2;
  cam.phase_created = 1;
  cam.mode = CompressionMode::cam_composite;
  cam.has_foreground = true;
  cam.bbox = BoundingBox{4, 6, 19, 21};
  cam.orig_h = cam.orig_w = 32;
  cam.fg.assign(static_cast<size_t>(cam.bbox.height()) * cam.bbox.width() * 3, 7);
  cam.container = bs.serialize();
  store.by_class[2].push_back(cam);

  ExemplarRecord bare;
  bare.label = 5;
  bare.phase_created = 0;
  bare.mode = CompressionMode::full_compression;
  bare.has_foreground = false;
  bare.orig_h = bare.orig_w = 32;
  bare.container = bs.serialize();
  store.by_class[5].push_back(bare);

  TempDir dir("persist");
  save_store(store, dir.root.string());

  // record files are reproducible byte-for-byte
  TempDir dir2("persist2");
  save_store(store, dir2.root.string());
  for (const char* name : {"r0002_0000.bin", "r0005_0000.bin"}) {
    std::ifstream a(dir.root / name, std::ios::binary);
    std::ifstream b(dir2.root / name, std::ios::binary);
    REQUIRE(a);
    REQUIRE(b);
    std::vector<char> ab((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::vector<char> bb2((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ab == bb2);
  }

  ExemplarStore back = load_store(dir.root.string());
  REQUIRE(back.count() == 2);
  const ExemplarRecord& rc = back.by_class[2][0];
  CHECK(rc.label == 2);
  CHECK(rc.phase_created == 1);
  CHECK(rc.mode == CompressionMode::cam_composite);
  CHECK(rc.has_foreground);
  CHECK(rc.bbox == cam.bbox);
  CHECK(rc.fg == cam.fg);
  CHECK(rc.container == cam.container);
  CHECK(rc.orig_h == 32);
  const ExemplarRecord& rb = back.by_class[5][0];
  CHECK_FALSE(rb.has_foreground);
  CHECK(rb.cost_bits() == bare.cost_bits());
  CHECK(back.used_bits() == store.used_bits());

  // loaded records materialize identically to the originals
  std::vector<LabeledImage> a = materialize(store, &codec);
  std::vector<LabeledImage> b = materialize(back, &codec);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].image.px == b[i].image.px);

  SECTION("manifest cost tampering is caught") {
    std::ifstream m(dir.root / "manifest");
    std::string all((std::istreambuf_iterator<char>(m)), std::istreambuf_iterator<char>());
    m.close();
    size_t sp = all.rfind(" cam_composite");
    REQUIRE(sp != std::string::npos);
    all[sp - 1] = all[sp - 1] == '0' ? '1' : '0';
    std::ofstream out(dir.root / "manifest");
    out << all;
    out.close();
    CHECK_THROWS_AS(load_store(dir.root.string()), CorruptStreamError);
  }

  SECTION("truncated record files are caught") {
    auto file = dir.root / "r0002_0000.bin";
    std::ifstream in(file, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), 10);
    out.close();
    CHECK_THROWS_AS(load_store(dir.root.string()), CorruptStreamError);
  }

  SECTION("a missing manifest is an io error") {
    CHECK_THROWS_AS(load_store("/nonexistent/czc/store"), IoError);
  }
}
