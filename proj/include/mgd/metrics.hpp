#pragma once

/**
 * metrics.hpp - how a generated method body is scored.
 *
 * Four per-trial metrics against the ground-truth method remainder:
 *
 *   NIM  next-identifier match: the first lexed token agrees in kind and
 *        text (0/1).
 *   ISM  identifier-sequence match: longest common prefix of the identifier
 *        sequences, normalized by the ground truth's identifier count.
 *   PM   prefix match: same, over the full token streams.
 *   CR   compilation rate: splice the generation over the ground-truth span
 *        and run the repository's build command (0/1; absent without one).
 *
 * Plus score@k,n - the expected best-of-k over n trials, computed in closed
 * form - and identifier complexity, the mean subtoken count of a name under
 * a set of tokenizers, which buckets the per-difficulty breakdown.
 *
 * Everything here is a pure function of strings except compilation_rate,
 * which mutates a working copy of the repository (splice, build, restore)
 * and serializes per workspace.
 */

#include <algorithm>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mgd/common.hpp"
#include "mgd/javalex.hpp"
#include "mgd/subprocess.hpp"
#include "mgd/testcase.hpp"
#include "mgd/vocab.hpp"

namespace mgd::metrics {

// ============================================================================
// Match metrics
// ============================================================================

/** 1 when the first generated Java token equals the first ground-truth token
 *  in kind and text; 0 otherwise, including when nothing was generated. */
inline int nim(std::string_view ground_truth, std::string_view generated) {
  auto g = javalex::lex(ground_truth);
  auto h = javalex::lex(generated);
  if (g.empty() || h.empty()) return 0;
  return g.front() == h.front() ? 1 : 0;
}

namespace detail {

template <typename T>
inline std::size_t common_prefix(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t n = std::min(a.size(), b.size());
  std::size_t i = 0;
  while (i < n && a[i] == b[i]) ++i;
  return i;
}

}  // namespace detail

/** Longest common prefix of the identifier sequences over the ground truth's
 *  identifier count. Vacuously 1 when the ground truth has no identifiers. */
inline double ism(std::string_view ground_truth, std::string_view generated) {
  auto g = javalex::identifiers(ground_truth);
  if (g.empty()) return 1.0;
  auto h = javalex::identifiers(generated);
  return static_cast<double>(detail::common_prefix(g, h)) / static_cast<double>(g.size());
}

/** As ism, over the full token streams (kind and text). */
inline double pm(std::string_view ground_truth, std::string_view generated) {
  auto g = javalex::lex(ground_truth);
  if (g.empty()) return 1.0;
  auto h = javalex::lex(generated);
  return static_cast<double>(detail::common_prefix(g, h)) / static_cast<double>(g.size());
}

/** Cut the generation at the method close so trailing babble past the '}'
 *  never influences a score. Total text passes through when the close is
 *  never reached. */
inline std::string truncate_at_method_close(std::string_view generated, int open_depth) {
  if (open_depth < 1) return std::string(generated);
  auto off = javalex::method_close_offset(generated, open_depth);
  return std::string(off ? generated.substr(0, *off) : generated);
}

// ============================================================================
// Compilation rate
// ============================================================================

struct CrOptions {
  std::string build_command;
  double timeout_s = 600.0;
};

struct CrOutcome {
  std::optional<int> score;  // absent when the check could not run at all
  std::string note;          // why it is absent, or "timeout"-style flags
};

namespace detail {

inline std::mutex& workspace_mutex(const std::filesystem::path& root) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::mutex> registry;
  std::lock_guard<std::mutex> lock(registry_mutex);
  return registry[root.string()];
}

}  // namespace detail

/**
 * Splice `generated` over the ground-truth span of the case's file, run the
 * build command in the workspace and restore the original bytes. Returns 1
 * on a zero exit, 0 otherwise; a timeout kills the build and scores 0 with a
 * note. The result is absent (with a note) when no build command is
 * configured or the workspace/file is missing.
 */
inline CrOutcome compilation_rate(const TestCase& c, std::string_view generated,
                                  const std::optional<CrOptions>& options) {
  if (!options || options->build_command.empty())
    return {std::nullopt, "no build command configured"};
  if (c.workspace_root.empty()) return {std::nullopt, "case has no workspace_root"};
  std::filesystem::path file = c.workspace_root / c.file;
  if (!std::filesystem::exists(file)) return {std::nullopt, "file missing: " + file.string()};

  std::lock_guard<std::mutex> lock(detail::workspace_mutex(c.workspace_root));
  std::string original = read_file(file);
  std::string spliced = c.prefix;
  spliced += generated;
  if (c.suffix) spliced += *c.suffix;

  subprocess::CommandResult result;
  try {
    write_file(file, spliced);
    result = subprocess::run_command(options->build_command, c.workspace_root,
                                     options->timeout_s);
  } catch (...) {
    write_file(file, original);
    throw;
  }
  write_file(file, original);

  if (result.timed_out)
    return {0, "build timed out after " + std::to_string(options->timeout_s) + "s"};
  return {result.exit_code == 0 ? 1 : 0, ""};
}

// ============================================================================
// score@k,n
// ============================================================================

/** Exact C(n, k); zero outside 0 <= k <= n. Additive Pascal evaluation, so
 *  nothing overflows for n <= 64 even though C(64, 32) is near 2^61. */
inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n || n < 0) return 0;
  if (n > 64) throw Error("binomial: n > 64 would overflow exact arithmetic");
  std::vector<std::uint64_t> row(static_cast<std::size_t>(n) + 1, 0);
  row[0] = 1;
  for (int i = 1; i <= n; ++i)
    for (int j = i; j >= 1; --j) row[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j) - 1];
  return row[static_cast<std::size_t>(k)];
}

/**
 * Expected maximum score over a uniformly random k-subset of the n trial
 * scores, in closed form: sort descending, then
 *
 *   score@k = sum_{i=1}^{n-k+1} C(n-i, k-1) * s_(i) / C(n, k)
 *
 * k=1 is the mean, k=n the max. For 0/1 scores this equals
 * 1 - C(n-c, k)/C(n, k) with c successes, and that path is taken verbatim so
 * the discrete case is bit-exact.
 */
inline double score_at_k(std::vector<double> scores, int k) {
  const int n = static_cast<int>(scores.size());
  if (n == 0) throw Error("score_at_k: no scores");
  if (k < 1 || k > n)
    throw Error("score_at_k: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) +
                "]");
  if (n > 64) throw Error("score_at_k: n > 64 not supported by exact binomials");

  const bool binary = std::all_of(scores.begin(), scores.end(),
                                  [](double s) { return s == 0.0 || s == 1.0; });
  if (binary) {
    const int c = static_cast<int>(std::count(scores.begin(), scores.end(), 1.0));
    return 1.0 - static_cast<double>(binomial(n - c, k)) / static_cast<double>(binomial(n, k));
  }

  std::sort(scores.begin(), scores.end(), std::greater<>());
  long double acc = 0.0L;
  for (int i = 1; i <= n - k + 1; ++i)
    acc += static_cast<long double>(binomial(n - i, k - 1)) *
           static_cast<long double>(scores[static_cast<std::size_t>(i) - 1]);
  return static_cast<double>(acc / static_cast<long double>(binomial(n, k)));
}

// ============================================================================
// Identifier complexity
// ============================================================================

/** Mean subtoken count of `name` across the given tokenizer vocabularies. */
inline double identifier_complexity(std::string_view name,
                                    const std::vector<const Vocabulary*>& tokenizers) {
  if (name.empty()) throw Error("identifier_complexity: empty identifier");
  if (tokenizers.empty()) throw Error("identifier_complexity: no tokenizers");
  double total = 0.0;
  for (const Vocabulary* v : tokenizers)
    total += static_cast<double>(tokenize_greedy(name, *v).size());
  return total / static_cast<double>(tokenizers.size());
}

/** Bucket index for the per-difficulty breakdown, or -1 when outside the
 *  partition (complexities of 18+ are reported unbucketed, not clamped). */
inline int complexity_bucket(double complexity) {
  if (complexity >= 1.0 && complexity < 2.0) return 0;
  if (complexity >= 2.0 && complexity < 3.0) return 1;
  if (complexity >= 3.0 && complexity < 4.0) return 2;
  if (complexity >= 4.0 && complexity < 18.0) return 3;
  return -1;
}

inline const char* bucket_label(int bucket) {
  switch (bucket) {
    case 0: return "[1,2)";
    case 1: return "[2,3)";
    case 2: return "[3,4)";
    case 3: return "[4,18)";
  }
  return "unbucketed";
}

/** The ground truth's first identifier, whose complexity places a case in a
 *  difficulty bucket. Ground truths that open with something other than an
 *  identifier have no bucket. */
inline std::optional<std::string> next_identifier(std::string_view ground_truth) {
  auto toks = javalex::lex(ground_truth);
  if (toks.empty() || toks.front().kind != javalex::Kind::identifier) return std::nullopt;
  return toks.front().text;
}

}  // namespace mgd::metrics
