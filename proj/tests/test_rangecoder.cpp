#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "czc/common.hpp"
#include "czc/rangecoder.hpp"

using namespace czc;

namespace {

// Brute-force linear scan used to cross-check the binary search in
// QuantizedCdf::decode_symbol.
int32_t decode_linear(const rc::QuantizedCdf& q, rc::RangeDecoder& dec) {
  uint32_t t = dec.decode_target();
  int idx = 0;
  while (idx + 1 < q.size() && q.cum[static_cast<size_t>(idx) + 1] <= t) ++idx;
  dec.consume(q.cum[static_cast<size_t>(idx)], q.cum[static_cast<size_t>(idx) + 1]);
  return q.lo + idx;
}

}  // namespace

TEST_CASE("an empty stream is just the two flush bytes") {
  rc::RangeEncoder enc;
  std::vector<uint8_t> out = enc.finish();
  CHECK(out.size() == 2);
}

TEST_CASE("quantized cdf frequencies sum to the probability total") {
  std::vector<double> mass = {0.1, 7.0, 2.5, 0.0, 1.2};
  rc::QuantizedCdf q = rc::QuantizedCdf::from_masses(-2, mass);
  REQUIRE(q.size() == 5);
  CHECK(q.lo == -2);
  CHECK(q.cum.front() == 0);
  CHECK(q.cum.back() == rc::kProbTotal);
  for (int i = 0; i < q.size(); ++i) {
    // every bin keeps at least one count so any symbol stays encodable
    CHECK(q.cum[static_cast<size_t>(i) + 1] > q.cum[static_cast<size_t>(i)]);
  }
}

TEST_CASE("all-zero masses degrade to a uniform table") {
  rc::QuantizedCdf q = rc::QuantizedCdf::from_masses(0, {0.0, 0.0, 0.0, 0.0});
  REQUIRE(q.size() == 4);
  CHECK(q.cum.back() == rc::kProbTotal);
  for (int i = 0; i < 4; ++i) {
    uint32_t f = q.cum[static_cast<size_t>(i) + 1] - q.cum[static_cast<size_t>(i)];
    CHECK(f == rc::kProbTotal / 4);
  }
}

TEST_CASE("a single-bin table spans the whole interval") {
  rc::QuantizedCdf q = rc::QuantizedCdf::from_masses(7, {3.0});
  REQUIRE(q.size() == 1);
  CHECK(q.cum[0] == 0);
  CHECK(q.cum[1] == rc::kProbTotal);

  rc::RangeEncoder enc;
  for (int i = 0; i < 100; ++i) q.encode_symbol(enc, 7);
  std::vector<uint8_t> out = enc.finish();
  // a certain symbol carries no information beyond the flush
  CHECK(out.size() == 2);

  rc::RangeDecoder dec(out.data(), out.size());
  for (int i = 0; i < 100; ++i) CHECK(q.decode_symbol(dec) == 7);
}

TEST_CASE("fixed-table roundtrip restores every symbol") {
  rc::QuantizedCdf q = rc::QuantizedCdf::from_masses(-1, {1.0, 5.0, 2.0});
  std::vector<int32_t> symbols = {0, -1, 1, 0, 0, 1, -1, -1, 0, 1, 1, 0};

  rc::RangeEncoder enc;
  for (int32_t s : symbols) q.encode_symbol(enc, s);
  std::vector<uint8_t> out = enc.finish();

  rc::RangeDecoder dec(out.data(), out.size());
  for (int32_t s : symbols) CHECK(q.decode_symbol(dec) == s);
}

TEST_CASE("out-of-support values clamp to the nearest end bin") {
  rc::QuantizedCdf q = rc::QuantizedCdf::from_masses(0, {1.0, 1.0, 1.0});
  rc::RangeEncoder enc;
  q.encode_symbol(enc, -50);
  q.encode_symbol(enc, 50);
  q.encode_symbol(enc, 1);
  std::vector<uint8_t> out = enc.finish();

  rc::RangeDecoder dec(out.data(), out.size());
  CHECK(q.decode_symbol(dec) == 0);
  CHECK(q.decode_symbol(dec) == 2);
  CHECK(q.decode_symbol(dec) == 1);
}

TEST_CASE("randomized streams roundtrip under per-position tables") {
  Rng rng(20260822);
  for (int trial = 0; trial < 40; ++trial) {
    int len = 1 + static_cast<int>(rng.below(300));
    // one table per position, sizes and shapes vary
    std::vector<rc::QuantizedCdf> tables;
    std::vector<int32_t> symbols;
    tables.reserve(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) {
      int n = 1 + static_cast<int>(rng.below(33));
      std::vector<double> mass(static_cast<size_t>(n));
      for (double& m : mass) {
        m = rng.real01();
        if (rng.below(4) == 0) m = 0.0;          // occasional empty bin
        if (rng.below(16) == 0) m *= 1e6;        // occasional spike
      }
      int32_t lo = static_cast<int32_t>(rng.below(41)) - 20;
      tables.push_back(rc::QuantizedCdf::from_masses(lo, mass));
      symbols.push_back(lo + static_cast<int32_t>(rng.below(static_cast<uint64_t>(n))));
    }

    rc::RangeEncoder enc;
    for (int i = 0; i < len; ++i) tables[static_cast<size_t>(i)].encode_symbol(enc, symbols[static_cast<size_t>(i)]);
    std::vector<uint8_t> out = enc.finish();

    rc::RangeDecoder dec(out.data(), out.size());
    for (int i = 0; i < len; ++i) {
      REQUIRE(tables[static_cast<size_t>(i)].decode_symbol(dec) == symbols[static_cast<size_t>(i)]);
    }
  }
}

TEST_CASE("binary search decode matches a linear scan") {
  Rng rng(77);
  std::vector<double> mass(257);
  for (double& m : mass) m = rng.real01() * rng.real01();
  rc::QuantizedCdf q = rc::QuantizedCdf::from_masses(-128, mass);

  std::vector<int32_t> symbols;
  for (int i = 0; i < 500; ++i)
    symbols.push_back(-128 + static_cast<int32_t>(rng.below(257)));

  rc::RangeEncoder enc;
  for (int32_t s : symbols) q.encode_symbol(enc, s);
  std::vector<uint8_t> out = enc.finish();

  rc::RangeDecoder dec_a(out.data(), out.size());
  rc::RangeDecoder dec_b(out.data(), out.size());
  for (int32_t s : symbols) {
    CHECK(q.decode_symbol(dec_a) == s);
    CHECK(decode_linear(q, dec_b) == s);
  }
}

TEST_CASE("coded size tracks the entropy of a skewed source") {
  // p(0) = 63/64: entropy is about 0.116 bits/symbol
  std::vector<double> mass = {63.0, 1.0};
  rc::QuantizedCdf q = rc::QuantizedCdf::from_masses(0, mass);

  Rng rng(5);
  const int kCount = 20000;
  std::vector<int32_t> symbols;
  int ones = 0;
  for (int i = 0; i < kCount; ++i) {
    int32_t s = rng.below(64) == 0 ? 1 : 0;
    ones += s;
    symbols.push_back(s);
  }

  rc::RangeEncoder enc;
  for (int32_t s : symbols) q.encode_symbol(enc, s);
  std::vector<uint8_t> out = enc.finish();

  double p1 = static_cast<double>(ones) / kCount;
  double entropy_bits =
      kCount * (-(1 - p1) * std::log2(1 - p1) - p1 * std::log2(p1));
  double coded_bits = 8.0 * static_cast<double>(out.size());
  CHECK(coded_bits >= entropy_bits);               // no free lunch
  CHECK(coded_bits <= entropy_bits * 1.05 + 64.0); // near-optimal plus flush
}

TEST_CASE("the decoder survives running past the end of the payload") {
  rc::QuantizedCdf q = rc::QuantizedCdf::from_masses(0, {4.0, 3.0, 2.0, 1.0});
  rc::RangeEncoder enc;
  q.encode_symbol(enc, 3);
  std::vector<uint8_t> out = enc.finish();

  rc::RangeDecoder dec(out.data(), out.size());
  CHECK(q.decode_symbol(dec) == 3);
  // reads past the end see zero bytes; symbols stay in support
  for (int i = 0; i < 64; ++i) {
    int32_t v = q.decode_symbol(dec);
    CHECK(v >= 0);
    CHECK(v <= 3);
  }
}
