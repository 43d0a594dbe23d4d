#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "czc/common.hpp"

namespace czc {

// Carryless renormalizing range coder on 64-bit registers with 16-bit
// probability precision. Cumulative frequencies live on a 1<<16 total;
// when an interval straddles a byte boundary the range is truncated to
// the next 48-bit boundary instead of propagating carries, so encoder
// and decoder stay in byte lockstep. Streams end with a 2-byte flush.
//
// This coder is part of the bitstream format: both sides must use this
// exact scheme for payloads to be portable.

namespace rc {

constexpr uint64_t kTop = 1ULL << 56;
constexpr uint64_t kBot = 1ULL << 48;
constexpr uint32_t kProbBits = 16;
constexpr uint32_t kProbTotal = 1u << kProbBits;

class RangeEncoder {
 public:
  // cum_lo/cum_hi are cumulative frequencies in [0, 65536], cum_lo < cum_hi.
  void encode(uint32_t cum_lo, uint32_t cum_hi) {
    uint64_t r = range_ >> rc::kProbBits;
    low_ += r * cum_lo;
    if (cum_hi == rc::kProbTotal) {
      range_ -= r * cum_lo;
    } else {
      range_ = r * (cum_hi - cum_lo);
    }
    normalize();
  }

  // Terminates the stream. The encoder is spent afterwards.
  std::vector<uint8_t> finish() {
    uint64_t v = (low_ + (rc::kBot - 1)) & ~(rc::kBot - 1);
    out_.push_back(static_cast<uint8_t>(v >> 56));
    out_.push_back(static_cast<uint8_t>(v >> 48));
    return std::move(out_);
  }

  size_t byte_count() const { return out_.size(); }

 private:
  void normalize() {
    for (;;) {
      if ((low_ ^ (low_ + range_)) < rc::kTop) {
        // top byte settled
      } else if (range_ < rc::kBot) {
        range_ = (0 - low_) & (rc::kBot - 1);
      } else {
        return;
      }
      out_.push_back(static_cast<uint8_t>(low_ >> 56));
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  uint64_t low_ = 0;
  uint64_t range_ = ~0ULL;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> payload) : data_(payload) {
    for (int i = 0; i < 8; ++i) code_ = (code_ << 8) | next_byte();
  }

  RangeDecoder(const uint8_t* p, size_t n) : RangeDecoder(std::span<const uint8_t>(p, n)) {}

  // Cumulative target of the next symbol; caller searches its CDF and then
  // calls consume() with the located interval.
  uint32_t decode_target() const {
    uint64_t r = range_ >> rc::kProbBits;
    uint64_t t = (code_ - low_) / r;
    return t >= rc::kProbTotal ? rc::kProbTotal - 1 : static_cast<uint32_t>(t);
  }

  void consume(uint32_t cum_lo, uint32_t cum_hi) {
    uint64_t r = range_ >> rc::kProbBits;
    low_ += r * cum_lo;
    if (cum_hi == rc::kProbTotal) {
      range_ -= r * cum_lo;
    } else {
      range_ = r * (cum_hi - cum_lo);
    }
    normalize();
  }

 private:
  uint8_t next_byte() { return pos_ < data_.size() ? data_[pos_++] : 0; }

  void normalize() {
    for (;;) {
      if ((low_ ^ (low_ + range_)) < rc::kTop) {
        // top byte settled
      } else if (range_ < rc::kBot) {
        range_ = (0 - low_) & (rc::kBot - 1);
      } else {
        return;
      }
      code_ = (code_ << 8) | next_byte();
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
  uint64_t low_ = 0;
  uint64_t range_ = ~0ULL;
  uint64_t code_ = 0;
};

// Quantized cumulative distribution over a contiguous integer support
// [lo, lo + n). Frequencies sum to exactly 1<<16 with every bin >= 1.
struct QuantizedCdf {
  int32_t lo = 0;
  std::vector<uint32_t> cum;  // size n + 1, cum[0] = 0, cum[n] = 65536

  int size() const { return static_cast<int>(cum.size()) - 1; }

  // Builds from unnormalized bin masses (doubles, nonnegative, not all zero).
  static QuantizedCdf from_masses(int32_t lo, const std::vector<double>& mass) {
    QuantizedCdf q;
    q.lo = lo;
    size_t n = mass.size();
    double total = 0;
    for (double m : mass) total += m;
    std::vector<uint32_t> freq(n, 1);
    uint32_t assigned = static_cast<uint32_t>(n);
    // floor-scale with a floor of 1 per bin, then settle the remainder on
    // the largest bin so the total is exact
    size_t argmax = 0;
    for (size_t i = 0; i < n; ++i) {
      double share = total > 0 ? mass[i] / total : 1.0 / static_cast<double>(n);
      uint32_t f = static_cast<uint32_t>(share * (rc::kProbTotal - n));
      freq[i] += f;
      assigned += f;
      if (mass[i] > mass[argmax]) argmax = i;
    }
    if (assigned <= rc::kProbTotal) {
      freq[argmax] += rc::kProbTotal - assigned;
    } else {
      // float slack in the shares can overshoot by a few units at most
      uint32_t overshoot = assigned - rc::kProbTotal;
      for (size_t i = argmax; overshoot > 0; i = (i + 1) % n) {
        uint32_t take = std::min(overshoot, freq[i] - 1);
        freq[i] -= take;
        overshoot -= take;
      }
    }
    q.cum.resize(n + 1, 0);
    for (size_t i = 0; i < n; ++i) q.cum[i + 1] = q.cum[i] + freq[i];
    return q;
  }

  void encode_symbol(RangeEncoder& enc, int32_t value) const {
    int idx = static_cast<int>(value - lo);
    if (idx < 0) idx = 0;
    if (idx >= size()) idx = size() - 1;
    enc.encode(cum[static_cast<size_t>(idx)], cum[static_cast<size_t>(idx) + 1]);
  }

  int32_t decode_symbol(RangeDecoder& dec) const {
    uint32_t t = dec.decode_target();
    // binary search: largest idx with cum[idx] <= t
    int left = 0, right = size();
    while (left + 1 < right) {
      int mid = (left + right) / 2;
      if (cum[static_cast<size_t>(mid)] <= t)
        left = mid;
      else
        right = mid;
    }
    dec.consume(cum[static_cast<size_t>(left)], cum[static_cast<size_t>(left) + 1]);
    return lo + left;
  }
};

}  // namespace rc

}  // namespace czc
