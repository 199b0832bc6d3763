#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tf {

// ---------------------------------------------------------------------------
// errors

enum class Errc {
  invalid_arg,
  not_found,
  exists,
  range,
  corrupt,
  io,
  state,
  busy,
  parse,
  empty,
  numeric,
  callback,
  env_failure,
  unsupported,
  internal,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

// ---------------------------------------------------------------------------
// logging (level comes from TF_LOG_LEVEL: error|warn|info|debug)

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

LogLevel log_level();
void log(LogLevel level, const std::string& msg);

inline void log_error(const std::string& msg) { log(LogLevel::error, msg); }
inline void log_warn(const std::string& msg) { log(LogLevel::warn, msg); }
inline void log_info(const std::string& msg) { log(LogLevel::info, msg); }
inline void log_debug(const std::string& msg) { log(LogLevel::debug, msg); }

// ---------------------------------------------------------------------------
// big-endian packing

inline void put_u16be(uint8_t* p, uint16_t v) {
  p[0] = uint8_t(v >> 8);
  p[1] = uint8_t(v);
}
inline void put_u32be(uint8_t* p, uint32_t v) {
  p[0] = uint8_t(v >> 24);
  p[1] = uint8_t(v >> 16);
  p[2] = uint8_t(v >> 8);
  p[3] = uint8_t(v);
}
inline void put_u64be(uint8_t* p, uint64_t v) {
  put_u32be(p, uint32_t(v >> 32));
  put_u32be(p + 4, uint32_t(v));
}
inline uint16_t get_u16be(const uint8_t* p) { return uint16_t(p[0]) << 8 | p[1]; }
inline uint32_t get_u32be(const uint8_t* p) {
  return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | uint32_t(p[3]);
}
inline uint64_t get_u64be(const uint8_t* p) {
  return uint64_t(get_u32be(p)) << 32 | get_u32be(p + 4);
}
inline void put_f64be(uint8_t* p, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64be(p, bits);
}
inline double get_f64be(const uint8_t* p) {
  uint64_t bits = get_u64be(p);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

// ---------------------------------------------------------------------------
// 16-byte identifiers

using EpisodeId = std::array<uint8_t, 16>;

std::string id_to_hex(const EpisodeId& id);
EpisodeId id_from_hex(std::string_view hex);  // throws Errc::parse

// Deterministic id from a name and a seed (used for generated episodes).
EpisodeId derive_id(std::string_view name, uint64_t seed);

// ---------------------------------------------------------------------------
// deterministic rng
//
// xorshift64* with the constants (12, 25, 27, 0x2545F4914F6CDD1D). A zero
// seed is replaced by 0x9E3779B97F4A7C15 so the state never sticks at zero.

struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed ? seed : 0x9E3779B97F4A7C15ull) {}

  uint64_t next() {
    uint64_t x = state;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state = x;
    return x * 0x2545F4914F6CDD1Dull;
  }

  // uniform in [0, 1) with 53 bits
  double uniform01() { return double(next() >> 11) * 0x1.0p-53; }

  // uniform in [0, n)
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }
};

// splitmix64, used to mix seeds into independent streams
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return splitmix64(splitmix64(a) ^ b); }
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return splitmix64(mix_seed(a, b) ^ c);
}

// FNV-1a over arbitrary bytes; used for sharding and content hashes
inline uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001B3ull;
  }
  return h;
}
inline uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(reinterpret_cast<const uint8_t*>(s.data()), s.size());
}
inline uint64_t fnv1a64(std::string_view s, uint64_t h) {
  return fnv1a64(reinterpret_cast<const uint8_t*>(s.data()), s.size(), h);
}

// ---------------------------------------------------------------------------
// number formatting (shortest round-trip, deterministic)

std::string format_double(double v);
std::string to_hex64(uint64_t v);

}  // namespace tf
