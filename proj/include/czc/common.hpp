#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace czc {

// ---------------------------------------------------------------------------
// Errors

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class ContractError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class CorruptStreamError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class IncompatibleModelError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class DivergenceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// PRNG. splitmix64 is the pinned generator for everything reproducible:
// class shuffles, weight init, batch shuffling, synthetic data.

struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

class Rng {
 public:
  explicit Rng(uint64_t seed) : sm_(seed) {}

  uint64_t next_u64() { return sm_.next(); }

  // Draw in [0, n). Modulo draw, pinned so permutations are portable.
  uint64_t below(uint64_t n) { return sm_.next() % n; }

  int range_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  double real01() { return static_cast<double>(sm_.next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = real01();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = real01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  SplitMix64 sm_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic sub-seed derivation (seed trees for phases/epochs/modules).
inline uint64_t mix_seed(uint64_t base, uint64_t salt) {
  SplitMix64 s(base ^ (0x9E3779B97F4A7C15ULL * (salt + 1)));
  s.next();
  return s.next();
}

// ---------------------------------------------------------------------------
// FNV-1a 64, used for parameter digests and config digests.

inline uint64_t fnv1a64(const void* data, size_t n,
                        uint64_t h = 14695981039346656037ULL) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Little-endian byte IO for the pinned file formats.

struct ByteWriter {
  std::vector<uint8_t> buf;

  void u8(uint8_t v) { buf.push_back(v); }
  void u16(uint16_t v) {
    buf.push_back(static_cast<uint8_t>(v));
    buf.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
};

struct ByteReader {
  std::span<const uint8_t> data;
  size_t pos = 0;

  explicit ByteReader(std::span<const uint8_t> d) : data(d) {}
  ByteReader(const void* p, size_t n)
      : data(static_cast<const uint8_t*>(p), n) {}

  void need(size_t n) const {
    if (pos + n > data.size()) throw CorruptStreamError("truncated stream");
  }
  uint8_t u8() {
    need(1);
    return data[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> out(data.begin() + static_cast<ptrdiff_t>(pos),
                             data.begin() + static_cast<ptrdiff_t>(pos + n));
    pos += n;
    return out;
  }
  void bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, data.data() + pos, n);
    pos += n;
  }
  size_t remaining() const { return data.size() - pos; }
};

}  // namespace czc
