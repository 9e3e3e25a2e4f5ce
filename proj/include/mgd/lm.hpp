#pragma once

/**
 * lm.hpp - language-model backends and prompt assembly.
 *
 * Backend is the narrow waist between the decoder and whatever produces
 * logits: the deterministic mock used by tests and desk evaluation lives
 * here, the HTTP client in remote.hpp. Prompt assembly implements four
 * layouts over a shared token budget:
 *
 *   standard            prefix only, left-truncated
 *   classExprTypes      20% of the budget for type-definition files,
 *                       remainder for the prefix
 *   fim                 prefix-suffix-middle sentinels, 50% for the suffix
 *                       (right-truncated), remainder minus sentinels for
 *                       the prefix
 *   fim_classExprTypes  20% aux + 40% suffix + remainder prefix
 *
 * Budget arithmetic is exact: quotas are floors, the three FIM sentinels
 * count against the budget, and any slack from flooring goes to the prefix,
 * which is always the left-truncated segment closest to the cursor.
 */

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgd/common.hpp"
#include "mgd/testcase.hpp"
#include "mgd/vocab.hpp"

namespace mgd::lm {

using LogitVector = std::vector<float>;

// ============================================================================
// Backend interface
// ============================================================================

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const Vocabulary& vocab() const = 0;

  /** Text to token ids, by whatever segmentation the backend uses. */
  virtual std::vector<TokenId> encode(std::string_view text) = 0;

  /** Next-token logits for the given context; length == vocab().size(). */
  virtual LogitVector logits(const std::vector<TokenId>& context) = 0;

  /** Variant with an admission hint: ids outside `allowed` may come back as
   *  an arbitrarily low value. Backends without a sparse path ignore it. */
  virtual LogitVector logits(const std::vector<TokenId>& context,
                             const std::vector<TokenId>& allowed) {
    (void)allowed;
    return logits(context);
  }
};

// ============================================================================
// Mock backend
// ============================================================================

/**
 * A deterministic, table-driven stand-in for a code LM. Logits start at zero
 * for every token; each rule whose context_suffix is a suffix of the decoded
 * context adds its weights. Rules marked `hallucination` have their weights
 * scaled by hallucination_bias, so a test can turn a plausible-but-wrong
 * continuation on and off with one knob.
 *
 * Table format:
 *   {"rules": [{"context_suffix": "b.",
 *               "weights": {"host": 30.0},
 *               "hallucination": true}, ...]}
 */
class MockBackend : public Backend {
 public:
  struct Rule {
    std::string context_suffix;  // empty matches every context
    std::vector<std::pair<TokenId, float>> weights;
    bool hallucination = false;
  };

  MockBackend(Vocabulary vocab, const nlohmann::json& table, double hallucination_bias = 1.0)
      : vocab_(std::move(vocab)), bias_(hallucination_bias) {
    if (!table.is_object() || !table.contains("rules") || !table["rules"].is_array())
      throw BackendError("mock table: expected object with a \"rules\" array");
    for (const auto& r : table["rules"]) {
      Rule rule;
      rule.context_suffix = r.value("context_suffix", std::string());
      rule.hallucination = r.value("hallucination", false);
      if (!r.contains("weights") || !r["weights"].is_object())
        throw BackendError("mock table: rule without a \"weights\" object");
      for (auto it = r["weights"].begin(); it != r["weights"].end(); ++it) {
        auto id = vocab_.find(it.key());
        if (!id)
          throw BackendError("mock table: weight for \"" + it.key() +
                             "\" which is not in the vocabulary");
        rule.weights.emplace_back(*id, it.value().get<float>());
      }
      rules_.push_back(std::move(rule));
    }
  }

  static MockBackend load(const std::filesystem::path& vocab_path,
                          const std::filesystem::path& table_path,
                          double hallucination_bias = 1.0) {
    nlohmann::json table;
    try {
      table = nlohmann::json::parse(read_file(table_path));
    } catch (const nlohmann::json::exception& e) {
      throw BackendError("mock table: " + table_path.string() + ": " + e.what());
    }
    return MockBackend(Vocabulary::load(vocab_path), table, hallucination_bias);
  }

  const Vocabulary& vocab() const override { return vocab_; }

  std::vector<TokenId> encode(std::string_view text) override {
    return tokenize_greedy(text, vocab_);
  }

  LogitVector logits(const std::vector<TokenId>& context) override {
    std::string text = detokenize(context, vocab_);
    LogitVector l(vocab_.size(), 0.0f);
    for (const Rule& rule : rules_) {
      if (!text.ends_with(rule.context_suffix)) continue;
      double scale = rule.hallucination ? bias_ : 1.0;
      for (auto [id, w] : rule.weights)
        l[static_cast<std::size_t>(id)] += static_cast<float>(scale * w);
    }
    return l;
  }

 private:
  Vocabulary vocab_;
  double bias_;
  std::vector<Rule> rules_;
};

// ============================================================================
// Prompt plans
// ============================================================================

enum class PromptStrategy { standard, class_expr_types, fim, fim_class_expr_types };

inline const char* strategy_name(PromptStrategy s) {
  switch (s) {
    case PromptStrategy::standard: return "standard";
    case PromptStrategy::class_expr_types: return "classExprTypes";
    case PromptStrategy::fim: return "fim";
    case PromptStrategy::fim_class_expr_types: return "fim_classExprTypes";
  }
  return "?";
}

inline PromptStrategy parse_strategy(std::string_view name) {
  if (name == "standard") return PromptStrategy::standard;
  if (name == "classExprTypes") return PromptStrategy::class_expr_types;
  if (name == "fim") return PromptStrategy::fim;
  if (name == "fim_classExprTypes") return PromptStrategy::fim_class_expr_types;
  throw Error("unknown prompt strategy: \"" + std::string(name) + "\"");
}

struct PromptPlan {
  PromptStrategy strategy = PromptStrategy::standard;
  int total_context = 2048;
  int generation_budget = 512;
  double aux_fraction = 0.20;
  /** Unset means the strategy default: 0.50 for fim, 0.40 for fim_classExprTypes. */
  std::optional<double> suffix_fraction;

  int prompt_budget() const {
    int b = total_context - generation_budget;
    if (b <= 0)
      throw Error("prompt budget is not positive: total_context " +
                  std::to_string(total_context) + " - generation_budget " +
                  std::to_string(generation_budget));
    return b;
  }

  double effective_suffix_fraction() const {
    if (suffix_fraction) return *suffix_fraction;
    return strategy == PromptStrategy::fim_class_expr_types ? 0.40 : 0.50;
  }

  void validate() const {
    prompt_budget();
    if (generation_budget <= 0) throw Error("generation_budget must be positive");
    if (aux_fraction < 0.0 || aux_fraction >= 1.0)
      throw Error("aux_fraction must be in [0, 1)");
    double sf = effective_suffix_fraction();
    if (sf <= 0.0 || sf >= 1.0) throw Error("suffix_fraction must be in (0, 1)");
  }
};

/** The assembled prompt plus the accounting tests and reports care about. */
struct PromptLayout {
  std::vector<TokenId> ids;
  std::size_t prefix_count = 0;
  std::size_t suffix_count = 0;
  std::size_t aux_count = 0;
  std::size_t sentinel_count = 0;
  std::size_t aux_quota = 0;
  std::size_t suffix_quota = 0;
  std::size_t prefix_quota = 0;

  std::size_t total() const { return aux_count + prefix_count + suffix_count + sentinel_count; }
};

namespace detail {

/** Keep the last `quota` ids (left truncation, for prefix-like segments). */
inline std::vector<TokenId> keep_tail(std::vector<TokenId> ids, std::size_t quota) {
  if (ids.size() > quota) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(quota));
  return ids;
}

/** Keep the first `quota` ids (right truncation, for the FIM suffix). */
inline std::vector<TokenId> keep_head(std::vector<TokenId> ids, std::size_t quota) {
  if (ids.size() > quota) ids.resize(quota);
  return ids;
}

inline std::string aux_text_for(const TestCase& c) {
  std::string text;
  for (const std::string& rel : c.class_expr_type_files) {
    std::filesystem::path p = c.workspace_root / rel;
    text += read_file(p);
    text += '\n';
  }
  return text;
}

}  // namespace detail

/**
 * Assemble the prompt for a case under a plan. Throws when a required input
 * is missing (suffix for FIM, class_expr_type_files for classExprTypes, FIM
 * sentinel ids in the vocabulary) and guarantees ids.size() <= prompt budget.
 */
inline PromptLayout build_prompt(const PromptPlan& plan, const TestCase& c, Backend& backend) {
  plan.validate();
  const std::size_t budget = static_cast<std::size_t>(plan.prompt_budget());
  const bool wants_aux = plan.strategy == PromptStrategy::class_expr_types ||
                         plan.strategy == PromptStrategy::fim_class_expr_types;
  const bool wants_fim = plan.strategy == PromptStrategy::fim ||
                         plan.strategy == PromptStrategy::fim_class_expr_types;

  PromptLayout out;

  std::vector<TokenId> aux_ids;
  if (wants_aux) {
    if (c.class_expr_type_files.empty())
      throw Error(std::string(strategy_name(plan.strategy)) + ": case \"" + c.case_id +
                  "\" has no class_expr_type_files");
    aux_ids = backend.encode(detail::aux_text_for(c));
    out.aux_quota =
        static_cast<std::size_t>(std::floor(plan.aux_fraction * static_cast<double>(budget)));
    aux_ids = detail::keep_tail(std::move(aux_ids), out.aux_quota);
    out.aux_count = aux_ids.size();
  }

  std::vector<TokenId> suffix_ids;
  std::optional<FimMarkers> fim;
  if (wants_fim) {
    fim = backend.vocab().fim();
    if (!fim)
      throw Error(std::string(strategy_name(plan.strategy)) +
                  ": vocabulary has no FIM sentinel ids");
    if (!c.suffix)
      throw Error(std::string(strategy_name(plan.strategy)) + ": case \"" + c.case_id +
                  "\" has no suffix");
    suffix_ids = backend.encode(*c.suffix);
    out.suffix_quota = static_cast<std::size_t>(
        std::floor(plan.effective_suffix_fraction() * static_cast<double>(budget)));
    suffix_ids = detail::keep_head(std::move(suffix_ids), out.suffix_quota);
    out.suffix_count = suffix_ids.size();
    out.sentinel_count = 3;
  }

  const std::size_t reserved = out.aux_count + out.suffix_count + out.sentinel_count;
  if (reserved >= budget)
    throw Error(std::string(strategy_name(plan.strategy)) +
                ": budget too small, nothing left for the prefix (budget " +
                std::to_string(budget) + ", reserved " + std::to_string(reserved) + ")");
  out.prefix_quota = budget - reserved;

  std::vector<TokenId> prefix_ids =
      detail::keep_tail(backend.encode(c.prefix), out.prefix_quota);
  out.prefix_count = prefix_ids.size();

  if (wants_fim) {
    out.ids.push_back(fim->prefix);
    out.ids.insert(out.ids.end(), aux_ids.begin(), aux_ids.end());
    out.ids.insert(out.ids.end(), prefix_ids.begin(), prefix_ids.end());
    out.ids.push_back(fim->suffix);
    out.ids.insert(out.ids.end(), suffix_ids.begin(), suffix_ids.end());
    out.ids.push_back(fim->middle);
  } else {
    out.ids = std::move(aux_ids);
    out.ids.insert(out.ids.end(), prefix_ids.begin(), prefix_ids.end());
  }

  if (out.ids.size() != out.total() || out.total() > budget)
    throw Error("build_prompt: budget accounting failed");  // unreachable by construction
  return out;
}

}  // namespace mgd::lm
