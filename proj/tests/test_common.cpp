#include <catch2/catch_amalgamated.hpp>

#include "czc/common.hpp"

using namespace czc;

TEST_CASE("splitmix64 emits the pinned sequence") {
  SplitMix64 sm(1993);
  CHECK(sm.next() == 0x2cdccb82e5b86a14ULL);
  CHECK(sm.next() == 0x45a8297db73ea649ULL);
  CHECK(sm.next() == 0x7ac4ae8c6e93de7eULL);
  CHECK(sm.next() == 0x75535a582870b09bULL);
}

TEST_CASE("rng below stays in range and is deterministic") {
  Rng a(7), b(7);
  for (int i = 0; i < 1000; ++i) {
    uint64_t va = a.below(17);
    CHECK(va < 17);
    CHECK(va == b.below(17));
  }
}

TEST_CASE("rng real01 lies in the unit interval") {
  Rng r(42);
  for (int i = 0; i < 1000; ++i) {
    double v = r.real01();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("fisher-yates shuffle is a bijection") {
  Rng r(123);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<size_t>(i)] = i;
  r.shuffle(v);
  std::vector<bool> seen(50, false);
  for (int x : v) {
    REQUIRE(x >= 0);
    REQUIRE(x < 50);
    CHECK(!seen[static_cast<size_t>(x)]);
    seen[static_cast<size_t>(x)] = true;
  }
}

TEST_CASE("mix_seed separates salts") {
  CHECK(mix_seed(1993, 0) != mix_seed(1993, 1));
  CHECK(mix_seed(1993, 5) == mix_seed(1993, 5));
}

TEST_CASE("fnv1a64 matches reference vectors") {
  // Offset basis for empty input; "a" and "foobar" from the published
  // FNV-1a test suite.
  CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ULL);
}

TEST_CASE("hex64 renders fixed width") {
  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
  CHECK(hex64(0xcbf29ce484222325ULL) == "cbf29ce484222325");
}

TEST_CASE("byte writer/reader round-trips all widths") {
  ByteWriter w;
  w.u8(0xAB);
  w.u16(0x1234);
  w.u32(0xDEADBEEF);
  w.u64(0x0123456789ABCDEFULL);
  w.f32(3.25f);
  w.f64(-1.5);
  w.bytes("xyz", 3);

  ByteReader r(w.buf.data(), w.buf.size());
  CHECK(r.u8() == 0xAB);
  CHECK(r.u16() == 0x1234);
  CHECK(r.u32() == 0xDEADBEEF);
  CHECK(r.u64() == 0x0123456789ABCDEFULL);
  CHECK(r.f32() == 3.25f);
  CHECK(r.f64() == -1.5);
  char buf[3];
  r.bytes(buf, 3);
  CHECK(std::string(buf, 3) == "xyz");
  CHECK(r.remaining() == 0);
}

TEST_CASE("byte reader rejects truncated streams") {
  ByteWriter w;
  w.u16(99);
  ByteReader r(w.buf.data(), w.buf.size());
  CHECK(r.u8() == 99);
  CHECK_THROWS_AS(r.u32(), CorruptStreamError);
}

TEST_CASE("little-endian layout is pinned") {
  ByteWriter w;
  w.u32(0x01020304);
  REQUIRE(w.buf.size() == 4);
  CHECK(w.buf[0] == 0x04);
  CHECK(w.buf[1] == 0x03);
  CHECK(w.buf[2] == 0x02);
  CHECK(w.buf[3] == 0x01);
}
