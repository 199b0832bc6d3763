#include "common.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <mutex>

namespace tf {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_arg: return "invalid_arg";
    case Errc::not_found: return "not_found";
    case Errc::exists: return "exists";
    case Errc::range: return "range";
    case Errc::corrupt: return "corrupt";
    case Errc::io: return "io";
    case Errc::state: return "state";
    case Errc::busy: return "busy";
    case Errc::parse: return "parse";
    case Errc::empty: return "empty";
    case Errc::numeric: return "numeric";
    case Errc::callback: return "callback";
    case Errc::env_failure: return "env_failure";
    case Errc::unsupported: return "unsupported";
    case Errc::internal: return "internal";
  }
  return "unknown";
}

LogLevel log_level() {
  static LogLevel level = [] {
    const char* v = std::getenv("TF_LOG_LEVEL");
    if (!v) return LogLevel::warn;
    std::string_view s(v);
    if (s == "error") return LogLevel::error;
    if (s == "warn") return LogLevel::warn;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

void log(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  static std::mutex mu;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lock(mu);
  std::fprintf(stderr, "[tf:%s] %s\n", names[int(level)], msg.c_str());
}

static const char kHexDigits[] = "0123456789abcdef";

std::string id_to_hex(const EpisodeId& id) {
  std::string out(32, '0');
  for (size_t i = 0; i < 16; ++i) {
    out[2 * i] = kHexDigits[id[i] >> 4];
    out[2 * i + 1] = kHexDigits[id[i] & 0xF];
  }
  return out;
}

static int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

EpisodeId id_from_hex(std::string_view hex) {
  if (hex.size() != 32) fail(Errc::parse, "episode id must be 32 hex chars, got '" + std::string(hex) + "'");
  EpisodeId id{};
  for (size_t i = 0; i < 16; ++i) {
    int hi = hex_nibble(hex[2 * i]);
    int lo = hex_nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) fail(Errc::parse, "bad hex in episode id: '" + std::string(hex) + "'");
    id[i] = uint8_t(hi << 4 | lo);
  }
  return id;
}

EpisodeId derive_id(std::string_view name, uint64_t seed) {
  uint64_t a = fnv1a64(name);
  uint64_t hi = mix_seed(a, seed, 0x7261'6A66'6F72'6765ull);
  uint64_t lo = mix_seed(seed, a, 0x6469'6873'7466'6C65ull);
  EpisodeId id;
  put_u64be(id.data(), hi);
  put_u64be(id.data() + 8, lo);
  return id;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string to_hex64(uint64_t v) {
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[size_t(i)] = kHexDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace tf
