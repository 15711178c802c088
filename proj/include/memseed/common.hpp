// Shared plumbing for the memseed toolkit: error taxonomy, deterministic RNG,
// hashing, file I/O and number formatting helpers.
#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace memseed {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Errors. One exception family; the category maps onto CLI exit codes
// (validation/config/parse/sizing -> 2, io/format -> 3, transport -> 4).
// ---------------------------------------------------------------------------

enum class ErrorKind {
  validation,
  config,
  parse,
  sizing,
  extraction,
  io,
  format,
  transport,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& m) : Error(ErrorKind::validation, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(ErrorKind::parse, m) {}
};
struct SizingError : Error {
  explicit SizingError(const std::string& m) : Error(ErrorKind::sizing, m) {}
};
struct ExtractionError : Error {
  ExtractionError(const std::string& category, const std::string& m)
      : Error(ErrorKind::extraction, "extraction failed for category '" + category + "': " + m),
        category_(category) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error(ErrorKind::format, m) {}
};
struct TransportError : Error {
  explicit TransportError(const std::string& m) : Error(ErrorKind::transport, m) {}
};

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::io:
    case ErrorKind::format:
      return 3;
    case ErrorKind::transport:
      return 4;
    default:
      return 2;
  }
}

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the toolkit flows through this wrapper
// so results do not depend on the standard library's distribution internals.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  // splitmix64 core: tiny, well mixed, and identical everywhere.
  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free multiply-shift; bias is < 2^-64 * n, irrelevant at desk scale.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller (cached second draw).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    if (v.empty()) throw ValidationError("pick from empty vector");
    return v[static_cast<std::size_t>(below(v.size()))];
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derive a child seed from a parent seed and a label (stable across runs).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull ^ seed;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  h ^= seed >> 32;
  h *= 0x100000001b3ull;
  return h;
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit hashing (non-cryptographic; manifests, frame lookup keys).
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf, 16);
}

// ---------------------------------------------------------------------------
// File I/O.
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline bool file_exists(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return static_cast<bool>(in);
}

inline std::string file_digest(const std::string& path) {
  return hex64(fnv1a64(read_file(path)));
}

// ---------------------------------------------------------------------------
// Number formatting: shortest round-trip representation, locale-free.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Whole-valued reals render as bare integers ("30", not "30.0").
inline std::string format_duration(double v) {
  if (v == static_cast<double>(static_cast<long long>(v))) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, static_cast<long long>(v));
    return std::string(buf, res.ptr);
  }
  return format_double(v);
}

// ---------------------------------------------------------------------------
// String helpers.
// ---------------------------------------------------------------------------

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '\n') {
      std::string_view line = text.substr(start, i - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.emplace_back(line);
      start = i + 1;
    }
  }
  if (!lines.empty() && lines.back().empty() && !text.empty() && text.back() == '\n') lines.pop_back();
  return lines;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Lowercased alphabetic words of a text (digits and punctuation are separators).
inline std::vector<std::string> alpha_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

// ---------------------------------------------------------------------------
// UTF-8 validation and a compact NFC composer for the Latin range.
// Canonical strings keep round-trips byte-identical even when inputs mix
// decomposed and precomposed Latin accents. Full Unicode normalization is
// deliberately out of scope; unknown combining sequences pass through.
// ---------------------------------------------------------------------------

namespace detail {

// (base char, combining mark) -> precomposed codepoint, for the Latin-1 /
// Latin Extended-A letters that actually occur in ad copy.
inline const std::map<std::pair<char32_t, char32_t>, char32_t>& nfc_table() {
  static const std::map<std::pair<char32_t, char32_t>, char32_t> table = {
      {{U'A', 0x300}, 0xC0}, {{U'A', 0x301}, 0xC1}, {{U'A', 0x302}, 0xC2}, {{U'A', 0x303}, 0xC3},
      {{U'A', 0x308}, 0xC4}, {{U'A', 0x30A}, 0xC5}, {{U'C', 0x327}, 0xC7}, {{U'E', 0x300}, 0xC8},
      {{U'E', 0x301}, 0xC9}, {{U'E', 0x302}, 0xCA}, {{U'E', 0x308}, 0xCB}, {{U'I', 0x300}, 0xCC},
      {{U'I', 0x301}, 0xCD}, {{U'I', 0x302}, 0xCE}, {{U'I', 0x308}, 0xCF}, {{U'N', 0x303}, 0xD1},
      {{U'O', 0x300}, 0xD2}, {{U'O', 0x301}, 0xD3}, {{U'O', 0x302}, 0xD4}, {{U'O', 0x303}, 0xD5},
      {{U'O', 0x308}, 0xD6}, {{U'U', 0x300}, 0xD9}, {{U'U', 0x301}, 0xDA}, {{U'U', 0x302}, 0xDB},
      {{U'U', 0x308}, 0xDC}, {{U'Y', 0x301}, 0xDD}, {{U'a', 0x300}, 0xE0}, {{U'a', 0x301}, 0xE1},
      {{U'a', 0x302}, 0xE2}, {{U'a', 0x303}, 0xE3}, {{U'a', 0x308}, 0xE4}, {{U'a', 0x30A}, 0xE5},
      {{U'c', 0x327}, 0xE7}, {{U'e', 0x300}, 0xE8}, {{U'e', 0x301}, 0xE9}, {{U'e', 0x302}, 0xEA},
      {{U'e', 0x308}, 0xEB}, {{U'i', 0x300}, 0xEC}, {{U'i', 0x301}, 0xED}, {{U'i', 0x302}, 0xEE},
      {{U'i', 0x308}, 0xEF}, {{U'n', 0x303}, 0xF1}, {{U'o', 0x300}, 0xF2}, {{U'o', 0x301}, 0xF3},
      {{U'o', 0x302}, 0xF4}, {{U'o', 0x303}, 0xF5}, {{U'o', 0x308}, 0xF6}, {{U'u', 0x300}, 0xF9},
      {{U'u', 0x301}, 0xFA}, {{U'u', 0x302}, 0xFB}, {{U'u', 0x308}, 0xFC}, {{U'y', 0x301}, 0xFD},
      {{U'y', 0x308}, 0xFF},
  };
  return table;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

}  // namespace detail

// Decode UTF-8 to codepoints; throws ValidationError on malformed input.
inline std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> cps;
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    int extra;
    char32_t cp;
    if (c < 0x80) {
      extra = 0;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      throw ValidationError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (extra > 0 && i + extra >= s.size())
      throw ValidationError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (int k = 1; k <= extra; ++k) {
      unsigned char cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80)
        throw ValidationError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Reject overlong encodings and surrogates.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF)
      throw ValidationError("invalid UTF-8 codepoint at offset " + std::to_string(i));
    cps.push_back(cp);
    i += extra + 1;
  }
  return cps;
}

// Canonicalize a UTF-8 string: validate, and compose Latin base+combining
// pairs into their precomposed forms (compact NFC for the Latin range).
inline std::string canonical_utf8(std::string_view s) {
  // Fast path: pure ASCII needs no work beyond validation-by-inspection.
  bool ascii = true;
  for (unsigned char c : s)
    if (c >= 0x80) {
      ascii = false;
      break;
    }
  if (ascii) return std::string(s);

  std::vector<char32_t> cps = decode_utf8(s);
  std::string out;
  out.reserve(s.size());
  const auto& table = detail::nfc_table();
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (i + 1 < cps.size()) {
      auto it = table.find({cps[i], cps[i + 1]});
      if (it != table.end()) {
        detail::append_utf8(out, it->second);
        ++i;
        continue;
      }
    }
    detail::append_utf8(out, cps[i]);
  }
  return out;
}

}  // namespace memseed
