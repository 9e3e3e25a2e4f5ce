#pragma once

/**
 * vocab.hpp - token vocabulary and mask generation.
 *
 * The heart of monitor-guided decoding is maskgen: given the set of residual
 * identifier suffixes that static analysis still permits, compute the subset
 * of the LM vocabulary whose tokens keep the generation consistent. A token
 * t is admitted iff
 *
 *   (a) t is a non-empty prefix of some residual w (t == w included), or
 *   (b) t spells a residual w completely, immediately followed by a
 *       delimiter byte, followed by anything (w may be the empty residual,
 *       so a token that *starts* with a delimiter ends the identifier).
 *
 * Rule (b) is what lets one token close an identifier and keep going:
 * "withIp(" both finishes `withIp` and opens the call. The admitted set is
 * computed with a byte trie over the residuals, one walk per vocabulary
 * token, so a 50k vocabulary masks in well under a millisecond.
 *
 * Delimiters are bytes, not characters: the set is the complement of the
 * Java identifier-continue class [A-Za-z0-9_$], which makes every UTF-8
 * continuation byte a delimiter too. That is the conservative choice; a
 * token may only extend an identifier if every byte of the extension could
 * appear in a Java identifier.
 */

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgd/common.hpp"
#include "mgd/javalex.hpp"

namespace mgd {

// ============================================================================
// DelimiterSet
// ============================================================================

/** A set of bytes that terminate an identifier. */
class DelimiterSet {
 public:
  /** Complement of [A-Za-z0-9_$]: whitespace, operators, brackets, quotes,
   *  control bytes and all non-ASCII bytes. */
  static DelimiterSet java() {
    DelimiterSet d;
    for (int c = 0; c < 256; ++c)
      d.bits_[c] = !javalex::is_ident_part(static_cast<unsigned char>(c));
    return d;
  }

  /** An explicit set, mainly for tests. Must be non-empty and must not
   *  contain identifier-continue bytes. */
  static DelimiterSet from_chars(std::string_view chars) {
    if (chars.empty()) throw Error("DelimiterSet: empty delimiter set");
    DelimiterSet d;
    for (unsigned char c : chars) {
      if (javalex::is_ident_part(c))
        throw Error(std::string("DelimiterSet: '") + static_cast<char>(c) +
                    "' is an identifier character");
      d.bits_[c] = true;
    }
    return d;
  }

  bool contains(unsigned char c) const { return bits_[c]; }

  /** True when any byte of `s` is a delimiter. */
  bool intersects(std::string_view s) const {
    return std::any_of(s.begin(), s.end(),
                       [&](char c) { return bits_[static_cast<unsigned char>(c)]; });
  }

  std::size_t size() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true));
  }

 private:
  DelimiterSet() = default;
  std::array<bool, 256> bits_{};
};

// ============================================================================
// SuggestionSet
// ============================================================================

/**
 * An ordered, duplicate-free set of identifier residuals. Fresh analysis
 * results never contain the empty string; it can only appear after prefix
 * stripping, meaning "the identifier may end here".
 */
class SuggestionSet {
 public:
  SuggestionSet() = default;

  /** From raw analysis output: drops empty names, sorts, dedups. */
  static SuggestionSet from_analysis(std::vector<std::string> names) {
    names.erase(std::remove_if(names.begin(), names.end(),
                               [](const std::string& s) { return s.empty(); }),
                names.end());
    return SuggestionSet(std::move(names));
  }

  /** From prefix stripping: the empty residual is meaningful and kept. */
  static SuggestionSet of_residuals(std::vector<std::string> residuals) {
    return SuggestionSet(std::move(residuals));
  }

  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }

  bool contains(std::string_view s) const {
    return std::binary_search(items_.begin(), items_.end(), s);
  }

  /** Sorted, unique. */
  const std::vector<std::string>& items() const { return items_; }

  friend bool operator==(const SuggestionSet& a, const SuggestionSet& b) {
    return a.items_ == b.items_;
  }

 private:
  explicit SuggestionSet(std::vector<std::string> items) : items_(std::move(items)) {
    std::sort(items_.begin(), items_.end());
    items_.erase(std::unique(items_.begin(), items_.end()), items_.end());
  }

  std::vector<std::string> items_;
};

// ============================================================================
// Vocabulary
// ============================================================================

struct FimMarkers {
  TokenId prefix = -1;
  TokenId suffix = -1;
  TokenId middle = -1;
};

/**
 * An immutable token table with dense ids 0..size-1. Loaded from JSON:
 *
 *   {"tokens": ["a", "bc", ...], "eos_id": 5,
 *    "fim": {"prefix_id": 1, "suffix_id": 2, "middle_id": 3}}
 *
 * eos_id and fim are optional. Token strings are raw bytes (JSON escapes
 * decode to UTF-8); every string must be non-empty.
 */
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens,
                      std::optional<TokenId> eos_id = std::nullopt,
                      std::optional<FimMarkers> fim = std::nullopt)
      : tokens_(std::move(tokens)), eos_(eos_id), fim_(fim) {
    if (tokens_.empty()) throw Error("Vocabulary: empty token list");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty())
        throw Error("Vocabulary: empty token string at id " + std::to_string(i));
      max_len_ = std::max(max_len_, tokens_[i].size());
      // Duplicate strings keep the smallest id so greedy tokenization is stable.
      index_.emplace(tokens_[i], static_cast<TokenId>(i));
    }
    check_id(eos_, "eos_id");
    if (fim_) {
      check_id(fim_->prefix, "fim.prefix_id");
      check_id(fim_->suffix, "fim.suffix_id");
      check_id(fim_->middle, "fim.middle_id");
    }
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array())
      throw Error("Vocabulary: expected object with a \"tokens\" array");
    std::vector<std::string> tokens;
    tokens.reserve(j["tokens"].size());
    for (auto& t : j["tokens"]) {
      if (!t.is_string()) throw Error("Vocabulary: non-string entry in \"tokens\"");
      tokens.push_back(t.get<std::string>());
    }
    std::optional<TokenId> eos;
    if (j.contains("eos_id")) eos = j["eos_id"].get<TokenId>();
    std::optional<FimMarkers> fim;
    if (j.contains("fim")) {
      const auto& f = j["fim"];
      fim = FimMarkers{f.at("prefix_id").get<TokenId>(), f.at("suffix_id").get<TokenId>(),
                       f.at("middle_id").get<TokenId>()};
    }
    return Vocabulary(std::move(tokens), eos, fim);
  }

  static Vocabulary load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw Error("Vocabulary: " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t max_token_length() const { return max_len_; }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw Error("Vocabulary: token id " + std::to_string(id) + " out of range (size " +
                  std::to_string(tokens_.size()) + ")");
    return tokens_[static_cast<std::size_t>(id)];
  }

  /** Smallest id whose string equals `s`, if any. */
  std::optional<TokenId> find(std::string_view s) const {
    auto it = index_.find(std::string(s));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<TokenId> eos() const { return eos_; }
  const std::optional<FimMarkers>& fim() const { return fim_; }

 private:
  void check_id(std::optional<TokenId> id, const char* what) const {
    if (id && (*id < 0 || static_cast<std::size_t>(*id) >= tokens_.size()))
      throw Error(std::string("Vocabulary: ") + what + " out of range");
  }
  void check_id(TokenId id, const char* what) const { check_id(std::optional<TokenId>(id), what); }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t max_len_ = 0;
  std::optional<TokenId> eos_;
  std::optional<FimMarkers> fim_;
};

// ============================================================================
// Mask
// ============================================================================

/** One bit per vocabulary token; bit set means the token stays sampleable. */
class Mask {
 public:
  explicit Mask(std::size_t size) : bits_(size, false) {}

  std::size_t size() const { return bits_.size(); }
  bool test(std::size_t i) const { return bits_.at(i); }
  void set(std::size_t i, bool v = true) { bits_.at(i) = v; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true));
  }
  bool any() const { return std::find(bits_.begin(), bits_.end(), true) != bits_.end(); }

  std::vector<TokenId> ones() const {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) out.push_back(static_cast<TokenId>(i));
    return out;
  }

  /** Order-sensitive digest of the bit string; logged per decode step so a
   *  replay can detect a mask that drifted. */
  std::uint64_t digest() const {
    Fnv1a h;
    h.update(static_cast<std::uint64_t>(bits_.size()));
    unsigned char acc = 0;
    int nbits = 0;
    for (bool b : bits_) {
      acc = static_cast<unsigned char>((acc << 1) | (b ? 1 : 0));
      if (++nbits == 8) {
        h.update(&acc, 1);
        acc = 0;
        nbits = 0;
      }
    }
    if (nbits > 0) {
      acc = static_cast<unsigned char>(acc << (8 - nbits));
      h.update(&acc, 1);
    }
    return h.digest();
  }

  friend bool operator==(const Mask& a, const Mask& b) { return a.bits_ == b.bits_; }

 private:
  std::vector<bool> bits_;
};

// ============================================================================
// maskgen
// ============================================================================

namespace detail {

/** Byte trie over the residuals; terminal nodes mark complete residuals. */
class ResidualTrie {
 public:
  explicit ResidualTrie(const SuggestionSet& state) {
    nodes_.emplace_back();
    for (const std::string& w : state.items()) {
      std::size_t node = 0;
      for (unsigned char c : w) {
        std::size_t next = child(node, c);
        if (next == npos) {
          nodes_.emplace_back();
          nodes_[node].kids.emplace_back(c, nodes_.size() - 1);
          next = nodes_.size() - 1;
        }
        node = next;
      }
      nodes_[node].terminal = true;
    }
  }

  /** Admission test for one token, walking at most token.size() edges. */
  bool admits(std::string_view token, const DelimiterSet& delims) const {
    if (token.empty()) return false;
    std::size_t node = 0;
    for (std::size_t i = 0; i < token.size(); ++i) {
      unsigned char c = static_cast<unsigned char>(token[i]);
      if (nodes_[node].terminal && delims.contains(c)) return true;  // rule (b)
      std::size_t next = child(node, c);
      if (next == npos) return false;
      node = next;
    }
    return true;  // rule (a): the whole token is a path in the trie
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  struct Node {
    bool terminal = false;
    std::vector<std::pair<unsigned char, std::size_t>> kids;
  };

  std::size_t child(std::size_t node, unsigned char c) const {
    for (auto& [ch, idx] : nodes_[node].kids)
      if (ch == c) return idx;
    return npos;
  }

  std::vector<Node> nodes_;
};

}  // namespace detail

/**
 * Compute the admission mask for an active monitor state. Throws when the
 * state is empty; an empty state means the suggestion set was exhausted and
 * the caller should have abandoned instead of masking.
 */
inline Mask maskgen(const SuggestionSet& state, const Vocabulary& vocab,
                    const DelimiterSet& delims) {
  if (state.empty()) throw MaskViolation("maskgen: exhausted suggestions (empty state)");
  detail::ResidualTrie trie(state);
  Mask mask(vocab.size());
  for (std::size_t id = 0; id < vocab.size(); ++id)
    if (trie.admits(vocab.token(static_cast<TokenId>(id)), delims))
      mask.set(id);
  return mask;
}

/** Which rule admitted a token, for diagnostics. Checked directly against the
 *  two-rule definition rather than through the trie. */
enum class AdmitRule { none, prefix, completes_identifier };

inline AdmitRule classify_admission(std::string_view token, const SuggestionSet& state,
                                    const DelimiterSet& delims) {
  if (token.empty()) return AdmitRule::none;
  for (const std::string& w : state.items()) {
    if (!w.empty() && w.size() >= token.size() &&
        std::string_view(w).substr(0, token.size()) == token)
      return AdmitRule::prefix;
  }
  for (const std::string& w : state.items()) {
    if (token.size() > w.size() && token.substr(0, w.size()) == w &&
        delims.contains(static_cast<unsigned char>(token[w.size()])))
      return AdmitRule::completes_identifier;
  }
  return AdmitRule::none;
}

// ============================================================================
// Tokenization
// ============================================================================

/**
 * Greedy leftmost-longest tokenization: at each position take the longest
 * vocabulary token that matches (smallest id among duplicates). Throws when
 * no token covers the next byte, naming the offset. Not the training
 * tokenizer's segmentation in general, but deterministic, which is what the
 * mock and prompt-budget paths need.
 */
inline std::vector<TokenId> tokenize_greedy(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t probe = std::min(vocab.max_token_length(), text.size() - i);
    std::optional<TokenId> hit;
    for (std::size_t len = probe; len >= 1; --len) {
      hit = vocab.find(text.substr(i, len));
      if (hit) {
        out.push_back(*hit);
        i += len;
        break;
      }
    }
    if (!hit)
      throw Error("tokenize_greedy: no vocabulary token covers byte at offset " +
                  std::to_string(i));
  }
  return out;
}

inline std::string detokenize(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) out += vocab.token(id);
  return out;
}

}  // namespace mgd
