#pragma once

/**
 * javalex.hpp - a small, total Java lexer.
 *
 * Tokenizes arbitrary byte strings into identifiers, keywords, literals,
 * operators and punctuators. It never throws on malformed input: unknown
 * bytes become single-byte punctuators, unterminated string/char literals
 * run to end of input with an `unterminated` flag. Comments and whitespace
 * are skipped, so concatenating token texts does not reproduce the source,
 * but every token's offset points into it.
 *
 * Scope is deliberately narrow: enough fidelity to find dereference sites
 * (a trailing '.' after a primary expression), to split generated code into
 * comparable token streams, and to count braces to the end of a method body.
 * It is not a conformance lexer; in particular identifiers are ASCII-only
 * and numeric literals are matched permissively.
 */

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mgd/common.hpp"

namespace mgd::javalex {

// ============================================================================
// Token model
// ============================================================================

enum class Kind {
  identifier,
  keyword,
  int_literal,
  float_literal,
  string_literal,
  char_literal,
  op,
  punct,
};

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::identifier: return "identifier";
    case Kind::keyword: return "keyword";
    case Kind::int_literal: return "int_literal";
    case Kind::float_literal: return "float_literal";
    case Kind::string_literal: return "string_literal";
    case Kind::char_literal: return "char_literal";
    case Kind::op: return "op";
    case Kind::punct: return "punct";
  }
  return "?";
}

struct Token {
  Kind kind;
  std::string text;
  std::size_t offset = 0;     // byte offset of the first character in the source
  bool unterminated = false;  // string/char literal ran into end of input

  bool is(Kind k, std::string_view t) const { return kind == k && text == t; }

  friend bool operator==(const Token& a, const Token& b) {
    return a.kind == b.kind && a.text == b.text;
  }
};

// ============================================================================
// Character classes and keyword table
// ============================================================================

inline bool is_ident_start(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == '$';
}

inline bool is_ident_part(unsigned char c) {
  return is_ident_start(c) || (c >= '0' && c <= '9');
}

inline bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

inline bool is_hex_digit(unsigned char c) {
  return is_digit(c) || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
}

/** Java SE 17 reserved words, the reserved literals and the reserved `_`.
 *  Contextual keywords (var, record, sealed, yield, ...) lex as identifiers. */
inline bool is_keyword(std::string_view word) {
  static const std::unordered_set<std::string_view> kw = {
      "abstract", "assert",   "boolean",    "break",     "byte",      "case",
      "catch",    "char",     "class",      "const",     "continue",  "default",
      "do",       "double",   "else",       "enum",      "extends",   "final",
      "finally",  "float",    "for",        "goto",      "if",        "implements",
      "import",   "instanceof", "int",      "interface", "long",      "native",
      "new",      "package",  "private",    "protected", "public",    "return",
      "short",    "static",   "strictfp",   "super",     "switch",    "synchronized",
      "this",     "throw",    "throws",     "transient", "try",       "void",
      "volatile", "while",    "_",          "true",      "false",     "null",
  };
  return kw.count(word) != 0;
}

// ============================================================================
// Lexer
// ============================================================================

namespace detail {

inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == 0x0b;
}

// Multi-character operators, longest first so maximal munch is a linear probe.
inline const std::vector<std::string_view>& multi_ops() {
  static const std::vector<std::string_view> ops = {
      ">>>=",
      ">>>", "<<=", ">>=", "...",
      "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=",
      "&=", "|=", "^=", "%=", "<<", ">>", "->", "::",
  };
  return ops;
}

inline bool is_single_op(unsigned char c) {
  static constexpr std::string_view singles = "+-*/%=<>!~&|^?:.";
  return singles.find(static_cast<char>(c)) != std::string_view::npos;
}

inline bool is_punct_char(unsigned char c) {
  static constexpr std::string_view puncts = "(){}[];,@";
  return puncts.find(static_cast<char>(c)) != std::string_view::npos;
}

// True when src[i..] starts an exponent: [eE][+-]?digit (decimal) or
// [pP][+-]?digit (hex float). Anything else leaves the letter to the
// next token, so `3.equals` keeps `equals` intact.
inline bool starts_exponent(std::string_view src, std::size_t i, char lo, char hi) {
  if (i >= src.size() || (src[i] != lo && src[i] != hi)) return false;
  std::size_t j = i + 1;
  if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
  return j < src.size() && is_digit(static_cast<unsigned char>(src[j]));
}

}  // namespace detail

/**
 * Lex the whole input. Total: any byte sequence yields a token list, and each
 * token's [offset, offset+text.size()) slice reproduces its source bytes.
 */
inline std::vector<Token> lex(std::string_view src) {
  using namespace detail;
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = src.size();

  auto emit = [&](Kind kind, std::size_t start, std::size_t end, bool unterminated = false) {
    out.push_back(Token{kind, std::string(src.substr(start, end - start)), start, unterminated});
  };

  while (i < n) {
    unsigned char c = static_cast<unsigned char>(src[i]);

    if (is_space(c)) {
      ++i;
      continue;
    }

    // ---- comments ----------------------------------------------------------
    if (c == '/' && i + 1 < n && src[i + 1] == '/') {
      std::size_t nl = src.find('\n', i + 2);
      i = (nl == std::string_view::npos) ? n : nl + 1;
      continue;
    }
    if (c == '/' && i + 1 < n && src[i + 1] == '*') {
      std::size_t close = src.find("*/", i + 2);
      i = (close == std::string_view::npos) ? n : close + 2;
      continue;
    }

    // ---- identifiers and keywords ------------------------------------------
    if (is_ident_start(c)) {
      std::size_t start = i;
      while (i < n && is_ident_part(static_cast<unsigned char>(src[i]))) ++i;
      std::string_view word = src.substr(start, i - start);
      emit(is_keyword(word) ? Kind::keyword : Kind::identifier, start, i);
      continue;
    }

    // ---- numeric literals ---------------------------------------------------
    if (is_digit(c) || (c == '.' && i + 1 < n && is_digit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t start = i;
      bool is_float = false;
      if (c == '0' && i + 1 < n && (src[i + 1] == 'x' || src[i + 1] == 'X')) {
        i += 2;
        while (i < n && (is_hex_digit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
        if (i < n && src[i] == '.') {
          is_float = true;
          ++i;
          while (i < n && (is_hex_digit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
        }
        if (starts_exponent(src, i, 'p', 'P')) {
          is_float = true;
          ++i;
          if (src[i] == '+' || src[i] == '-') ++i;
          while (i < n && is_digit(static_cast<unsigned char>(src[i]))) ++i;
        }
      } else if (c == '0' && i + 1 < n && (src[i + 1] == 'b' || src[i + 1] == 'B')) {
        i += 2;
        while (i < n && (src[i] == '0' || src[i] == '1' || src[i] == '_')) ++i;
      } else {
        if (c == '.') {
          is_float = true;
          ++i;
        }
        while (i < n && (is_digit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
        // A trailing '.' is absorbed into the literal, so "3." and "3.14"
        // are single float tokens and never expose a dereference dot.
        if (!is_float && i < n && src[i] == '.') {
          is_float = true;
          ++i;
          while (i < n && (is_digit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
        }
        if (starts_exponent(src, i, 'e', 'E')) {
          is_float = true;
          ++i;
          if (src[i] == '+' || src[i] == '-') ++i;
          while (i < n && (is_digit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
        }
      }
      if (i < n && (src[i] == 'f' || src[i] == 'F' || src[i] == 'd' || src[i] == 'D')) {
        is_float = true;
        ++i;
      } else if (i < n && (src[i] == 'l' || src[i] == 'L') && !is_float) {
        ++i;
      }
      emit(is_float ? Kind::float_literal : Kind::int_literal, start, i);
      continue;
    }

    // ---- string literals (including text blocks) ----------------------------
    if (c == '"') {
      std::size_t start = i;
      if (src.substr(i, 3) == "\"\"\"") {
        i += 3;
        bool closed = false;
        while (i < n) {
          if (src[i] == '\\') {
            i = std::min(n, i + 2);
          } else if (src.substr(i, 3) == "\"\"\"") {
            i += 3;
            closed = true;
            break;
          } else {
            ++i;
          }
        }
        emit(Kind::string_literal, start, i, !closed);
      } else {
        ++i;
        bool closed = false;
        while (i < n) {
          if (src[i] == '\\') {
            i = std::min(n, i + 2);
          } else if (src[i] == '"') {
            ++i;
            closed = true;
            break;
          } else {
            ++i;
          }
        }
        emit(Kind::string_literal, start, i, !closed);
      }
      continue;
    }

    // ---- char literals -------------------------------------------------------
    if (c == '\'') {
      std::size_t start = i;
      ++i;
      bool closed = false;
      while (i < n) {
        if (src[i] == '\\') {
          i = std::min(n, i + 2);
        } else if (src[i] == '\'') {
          ++i;
          closed = true;
          break;
        } else {
          ++i;
        }
      }
      emit(Kind::char_literal, start, i, !closed);
      continue;
    }

    // ---- punctuators ----------------------------------------------------------
    if (is_punct_char(c)) {
      emit(Kind::punct, i, i + 1);
      ++i;
      continue;
    }

    // ---- operators, maximal munch ----------------------------------------------
    {
      bool matched = false;
      for (std::string_view op : multi_ops()) {
        if (src.substr(i, op.size()) == op) {
          emit(Kind::op, i, i + op.size());
          i += op.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (is_single_op(c)) {
      emit(Kind::op, i, i + 1);
      ++i;
      continue;
    }

    // Anything else (stray unicode bytes, backslashes, '#', ...) degrades to a
    // single-byte punctuator instead of failing.
    emit(Kind::punct, i, i + 1);
    ++i;
  }

  return out;
}

/** The identifier texts of `src`, in order. Keywords and literals excluded. */
inline std::vector<std::string> identifiers(std::string_view src) {
  std::vector<std::string> out;
  for (auto& t : lex(src))
    if (t.kind == Kind::identifier) out.push_back(t.text);
  return out;
}

/**
 * Byte offset one past the '}' that brings `open_depth` to zero, counting
 * only braces that lex as punctuators (braces inside strings, chars and
 * comments are invisible). nullopt when the close is never reached.
 */
inline std::optional<std::size_t> method_close_offset(std::string_view continuation,
                                                      int open_depth) {
  if (open_depth <= 0) throw Error("method_close_offset: open_depth must be positive");
  int depth = open_depth;
  for (auto& t : lex(continuation)) {
    if (t.kind != Kind::punct) continue;
    if (t.text == "{") ++depth;
    if (t.text == "}" && --depth == 0) return t.offset + 1;
  }
  return std::nullopt;
}

}  // namespace mgd::javalex
