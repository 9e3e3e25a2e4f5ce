#pragma once

/**
 * monitor.hpp - the decoding-time type-consistency monitor.
 *
 * A three-mode state machine that rides along with the decoder:
 *
 *   wait      - watching the token stream for a dereference site.
 *   active    - a '.' was generated after a qualifying expression; static
 *               analysis produced the legal member names, and the monitor
 *               tracks the residual suffixes still consistent with what has
 *               been generated since. While active, maskgen narrows the
 *               vocabulary before every sampling step.
 *   abandoned - analysis returned nothing and the policy says stop rather
 *               than hallucinate.
 *
 * The cycle per decode step: step() inspects the frontier text *before*
 * sampling, possibly triggers analysis and returns a mask; the decoder
 * samples; update() folds the sampled token into the state. A token carrying
 * any delimiter byte ends the identifier and returns to wait; otherwise the
 * token must be a prefix of some residual, which gets stripped. A sampled
 * token that fits neither is a MaskViolation, which a correctly applied mask
 * makes unreachable.
 */

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mgd/common.hpp"
#include "mgd/javalex.hpp"
#include "mgd/vocab.hpp"

namespace mgd::monitor {

// ============================================================================
// State
// ============================================================================

enum class Mode { wait, active, abandoned };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::wait: return "wait";
    case Mode::active: return "active";
    case Mode::abandoned: return "abandoned";
  }
  return "?";
}

class MonitorState {
 public:
  MonitorState() : mode_(Mode::wait) {}

  static MonitorState wait() { return MonitorState(); }
  static MonitorState abandoned() {
    MonitorState s;
    s.mode_ = Mode::abandoned;
    return s;
  }
  /** Active states are never empty; an exhausted set must abandon instead. */
  static MonitorState active(SuggestionSet residuals) {
    if (residuals.empty()) throw Error("MonitorState: active state needs residuals");
    MonitorState s;
    s.mode_ = Mode::active;
    s.residuals_ = std::move(residuals);
    return s;
  }

  Mode mode() const { return mode_; }

  const SuggestionSet& residuals() const {
    if (mode_ != Mode::active) throw Error("MonitorState: residuals of a non-active state");
    return residuals_;
  }

  friend bool operator==(const MonitorState& a, const MonitorState& b) {
    return a.mode_ == b.mode_ && a.residuals_ == b.residuals_;
  }

 private:
  Mode mode_;
  SuggestionSet residuals_;
};

// ============================================================================
// Trigger detection
// ============================================================================

/** The decoder's view of the document frontier: all text generated so far
 *  appended to the prompt prefix. cursor is a byte offset, usually text.size(). */
struct TriggerContext {
  std::string_view text;
  std::size_t cursor = 0;

  std::string_view upto_cursor() const { return text.substr(0, cursor); }
};

/**
 * True when the next sampled token would complete a member access: the text
 * up to the cursor lexes so that its final token is a '.' operator ending
 * exactly at the cursor, preceded by something a Java expression can end
 * with (identifier, `this`/`super`/`class`, a closing ')' or ']', or a
 * string literal). Dots inside float literals, comments and strings never
 * qualify because the lexer never surfaces them as '.' operators.
 */
inline bool pre_trigger(const TriggerContext& ctx) {
  std::string_view text = ctx.upto_cursor();
  if (text.empty() || text.back() != '.') return false;
  auto toks = javalex::lex(text);
  if (toks.size() < 2) return false;
  const javalex::Token& dot = toks.back();
  if (!dot.is(javalex::Kind::op, ".")) return false;
  if (dot.offset + 1 != ctx.cursor) return false;
  const javalex::Token& prev = toks[toks.size() - 2];
  switch (prev.kind) {
    case javalex::Kind::identifier:
      return true;
    case javalex::Kind::keyword:
      return prev.text == "this" || prev.text == "super" || prev.text == "class";
    case javalex::Kind::punct:
      return prev.text == ")" || prev.text == "]";
    case javalex::Kind::string_literal:
      return !prev.unterminated;
    default:
      return false;
  }
}

// ============================================================================
// Transitions
// ============================================================================

/** What to do when analysis has no suggestions at a trigger point. */
enum class OnEmpty {
  abandon,        // stop the generation; scoring treats it as a miss
  unconstrained,  // fall back to plain decoding for this site
};

struct MonitorConfig {
  OnEmpty on_empty = OnEmpty::abandon;
  /** Provider exceptions normally degrade to the empty-suggestion policy;
   *  set this to surface them instead. */
  bool propagate_provider_errors = false;
};

/** Trigger transition: fresh analysis results enter the state machine. */
inline MonitorState on_trigger(const SuggestionSet& suggestions, OnEmpty on_empty) {
  if (!suggestions.empty()) return MonitorState::active(suggestions);
  return on_empty == OnEmpty::abandon ? MonitorState::abandoned() : MonitorState::wait();
}

/**
 * Fold one sampled token into an active state. A token containing any
 * delimiter byte closes the identifier (rule (b) admitted it), so the
 * monitor returns to wait. Otherwise the token must extend some residual,
 * and the survivors are stripped by it; the empty residual surviving means
 * the identifier may end at the next delimiter.
 */
inline MonitorState update(const MonitorState& state, std::string_view sampled_token,
                           const DelimiterSet& delims) {
  if (state.mode() != Mode::active) throw Error("monitor::update: state is not active");
  if (delims.intersects(sampled_token)) return MonitorState::wait();
  std::vector<std::string> next;
  for (const std::string& w : state.residuals().items()) {
    if (w.size() >= sampled_token.size() &&
        std::string_view(w).substr(0, sampled_token.size()) == sampled_token)
      next.push_back(w.substr(sampled_token.size()));
  }
  if (next.empty())
    throw MaskViolation("monitor::update: token \"" + std::string(sampled_token) +
                        "\" does not extend any residual");
  return MonitorState::active(SuggestionSet::of_residuals(std::move(next)));
}

// ============================================================================
// step
// ============================================================================

/** Where suggestions come from at a trigger point; implemented by the
 *  fixture provider and the LSP client (see suggest.hpp). */
class SuggestionSource {
 public:
  virtual ~SuggestionSource() = default;
  virtual SuggestionSet suggestions_at(const TriggerContext& ctx) = 0;
};

struct StepResult {
  MonitorState state;
  std::optional<Mask> mask;  // present iff state is active
  bool triggered = false;
  std::optional<std::vector<std::string>> suggestions;  // as returned at the trigger
};

/**
 * Pre-sampling step. In wait mode, fire the trigger check and possibly query
 * the source; in active mode, emit the mask for the current residuals. The
 * abandoned mode is absorbing and the caller is expected to stop.
 *
 * At most one source query happens per step, and a mask is returned iff the
 * resulting state is active.
 */
inline StepResult step(const MonitorState& state, const TriggerContext& ctx,
                       SuggestionSource& source, const Vocabulary& vocab,
                       const DelimiterSet& delims, const MonitorConfig& config = {}) {
  switch (state.mode()) {
    case Mode::abandoned:
      return StepResult{state, std::nullopt, false, std::nullopt};

    case Mode::active:
      return StepResult{state, maskgen(state.residuals(), vocab, delims), false, std::nullopt};

    case Mode::wait: {
      if (!pre_trigger(ctx)) return StepResult{state, std::nullopt, false, std::nullopt};
      SuggestionSet suggestions;
      try {
        suggestions = source.suggestions_at(ctx);
      } catch (const std::exception& e) {
        if (config.propagate_provider_errors) throw;
        log(LogLevel::warn, std::string("suggestion source failed at trigger: ") + e.what());
        suggestions = SuggestionSet();
      }
      MonitorState next = on_trigger(suggestions, config.on_empty);
      StepResult r{next, std::nullopt, true, suggestions.items()};
      if (next.mode() == Mode::active) r.mask = maskgen(next.residuals(), vocab, delims);
      return r;
    }
  }
  throw Error("monitor::step: corrupt state");
}

}  // namespace mgd::monitor
