#pragma once

/**
 * common.hpp - shared plumbing for the mgd library.
 *
 * Error hierarchy, stable hashing (FNV-1a and splitmix64), byte-offset to
 * line/character conversion (LSP-style, UTF-16 columns), file helpers and a
 * tiny env-controlled logger. Everything here is deliberately boring; the
 * interesting machinery lives in vocab.hpp / monitor.hpp / decode.hpp.
 */

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mgd {

using TokenId = std::int32_t;

// ============================================================================
// Errors
// ============================================================================

/** Base class for everything thrown by this library. */
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/** A sampled token escaped the active mask, or the mask itself is unusable. */
class MaskViolation : public Error {
 public:
  using Error::Error;
};

/** Suggestion provider failure: transport, timeout, malformed reply. */
class ProviderError : public Error {
 public:
  using Error::Error;
};

/** Language-model backend failure: transport, shape mismatch, bad payload. */
class BackendError : public Error {
 public:
  using Error::Error;
};

/** Dataset or record file rejected during validation. */
class DatasetError : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Hashing
// ============================================================================

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

/** Incremental FNV-1a over raw bytes; used for mask digests and config hashes. */
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      state_ ^= p[i];
      state_ *= kFnvPrime;
    }
    return *this;
  }

  Fnv1a& update(std::string_view s) { return update(s.data(), s.size()); }

  Fnv1a& update(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return update(b, sizeof b);
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = kFnvOffset;
};

inline std::uint64_t fnv1a(std::string_view s) { return Fnv1a{}.update(s).digest(); }

/** splitmix64 finalizer; bijective, so distinct inputs stay distinct. */
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/**
 * Per-trial RNG seed: a stable function of (base seed, case id, trial index)
 * so resumed and re-ordered runs reproduce each trial bit-for-bit.
 */
inline std::uint64_t derive_seed(std::uint64_t base_seed, std::string_view case_id,
                                 int trial_index) {
  Fnv1a h;
  h.update(base_seed);
  h.update(case_id);
  h.update(static_cast<std::uint64_t>(trial_index));
  return splitmix64(h.digest());
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// ============================================================================
// Text positions (LSP convention: 0-based line, UTF-16 code-unit character)
// ============================================================================

struct TextPosition {
  int line = 0;
  int character = 0;

  friend bool operator==(const TextPosition& a, const TextPosition& b) {
    return a.line == b.line && a.character == b.character;
  }
};

namespace detail {

/** Number of UTF-16 code units for the UTF-8 sequence starting at text[i];
 *  also advances i past the sequence. Invalid bytes count as one unit each. */
inline int utf16_units_at(std::string_view text, std::size_t& i) {
  unsigned char c = static_cast<unsigned char>(text[i]);
  if (c < 0x80) {
    i += 1;
    return 1;
  }
  std::size_t len = (c >= 0xF0) ? 4 : (c >= 0xE0) ? 3 : (c >= 0xC0) ? 2 : 1;
  if (i + len > text.size()) len = 1;
  i += len;
  return len == 4 ? 2 : 1;  // astral plane needs a surrogate pair
}

}  // namespace detail

/**
 * Convert a byte offset into an LSP position. Offsets inside a multi-byte
 * sequence snap to the character's start. offset may equal text.size().
 */
inline TextPosition position_at(std::string_view text, std::size_t byte_offset) {
  if (byte_offset > text.size())
    throw Error("position_at: offset " + std::to_string(byte_offset) +
                " past end of text (" + std::to_string(text.size()) + " bytes)");
  TextPosition pos;
  std::size_t i = 0;
  while (i < byte_offset) {
    if (text[i] == '\n') {
      ++pos.line;
      pos.character = 0;
      ++i;
      continue;
    }
    std::size_t start = i;
    int units = detail::utf16_units_at(text, i);
    if (i > byte_offset) {
      i = start;  // snap: caller pointed inside this character
      break;
    }
    pos.character += units;
  }
  return pos;
}

/** Inverse of position_at; clamps character to line end, as LSP servers do. */
inline std::size_t byte_offset_at(std::string_view text, TextPosition pos) {
  if (pos.line < 0 || pos.character < 0) throw Error("byte_offset_at: negative position");
  std::size_t i = 0;
  for (int line = 0; line < pos.line; ++line) {
    std::size_t nl = text.find('\n', i);
    if (nl == std::string_view::npos)
      throw Error("byte_offset_at: line " + std::to_string(pos.line) + " out of range");
    i = nl + 1;
  }
  int units = 0;
  while (i < text.size() && text[i] != '\n' && units < pos.character) {
    units += detail::utf16_units_at(text, i);
  }
  return i;
}

// ============================================================================
// Files
// ============================================================================

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("short write: " + path.string());
}

// ============================================================================
// Logging (MGD_LOG=error|warn|info|debug, default warn)
// ============================================================================

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_threshold() {
  static LogLevel level = [] {
    const char* env = std::getenv("MGD_LOG");
    if (!env) return LogLevel::warn;
    std::string_view v(env);
    if (v == "error") return LogLevel::error;
    if (v == "warn") return LogLevel::warn;
    if (v == "info") return LogLevel::info;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

inline void log(LogLevel level, std::string_view msg) {
  if (level > log_threshold()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[mgd:%s] %.*s\n", names[static_cast<int>(level)],
               static_cast<int>(msg.size()), msg.data());
}

}  // namespace mgd
