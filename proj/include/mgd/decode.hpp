#pragma once

/**
 * decode.hpp - nucleus sampling and the monitor-guided decode loop.
 *
 * generate() owns the step cycle: consult the monitor before sampling, mask
 * the logits while an identifier is being constrained, sample, feed the
 * token back into the monitor, stop on method close / budget / eos /
 * abandonment. Every consequential moment is appended to an event log
 * (trigger offsets, suggestion sets, mask digests, tokens, state
 * transitions) so that replay() can re-derive the state trajectory from the
 * record alone and verify both determinism and soundness after the fact.
 *
 * Sampling is deterministic across platforms: softmax in double precision,
 * ties broken by ascending token id, randomness drawn from std::mt19937_64
 * through an explicit 53-bit uniform. Records with equal seeds are
 * bit-identical wherever the backend is.
 */

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgd/common.hpp"
#include "mgd/javalex.hpp"
#include "mgd/lm.hpp"
#include "mgd/monitor.hpp"
#include "mgd/suggest.hpp"
#include "mgd/testcase.hpp"
#include "mgd/vocab.hpp"

namespace mgd::decode {

// ============================================================================
// Sampling
// ============================================================================

struct SamplerConfig {
  double top_p = 0.95;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  /** Logit value subtracted from masked-out tokens; the default is the most
   *  negative finite float, which zeroes them after softmax. */
  float mask_penalty = std::numeric_limits<float>::max();
};

/** Masked-out logits drop to -penalty; admitted logits pass through unchanged. */
inline lm::LogitVector apply_mask(const lm::LogitVector& logits, const Mask& mask,
                                  float penalty = std::numeric_limits<float>::max()) {
  if (logits.size() != mask.size())
    throw MaskViolation("apply_mask: logits length " + std::to_string(logits.size()) +
                        " != mask length " + std::to_string(mask.size()));
  if (!mask.any()) throw MaskViolation("apply_mask: empty mask");
  lm::LogitVector out = logits;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask.test(i)) out[i] = -penalty;
  return out;
}

namespace detail {

inline std::vector<double> softmax(const lm::LogitVector& logits, double temperature) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float l : logits) mx = std::max(mx, static_cast<double>(l));
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/** Uniform double in [0, 1) with 53 random bits; identical on every platform
 *  because mt19937_64's output sequence is pinned by the standard. */
inline double uniform53(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

/**
 * Top-p (nucleus) sampling. Probabilities are sorted descending with ties
 * broken by ascending id; the support is the smallest prefix whose
 * cumulative probability reaches top_p (with 1e-12 slack so a boundary
 * landing exactly on top_p is stable); the support is renormalized and
 * sampled. temperature -> 0 degenerates to argmax.
 */
inline TokenId nucleus_sample(const lm::LogitVector& logits, const SamplerConfig& config,
                              std::mt19937_64& rng) {
  if (logits.empty()) throw Error("nucleus_sample: empty logits");
  if (!(config.temperature > 0.0)) throw Error("nucleus_sample: temperature must be positive");
  if (!(config.top_p > 0.0) || config.top_p > 1.0)
    throw Error("nucleus_sample: top_p must be in (0, 1]");
  for (float l : logits)
    if (!std::isfinite(l)) throw Error("nucleus_sample: non-finite logit");

  std::vector<double> p = detail::softmax(logits, config.temperature);

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });

  std::size_t support = 0;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    cumulative += p[order[i]];
    support = i + 1;
    if (cumulative >= config.top_p - 1e-12) break;
  }

  double u = detail::uniform53(rng) * cumulative;
  double acc = 0.0;
  for (std::size_t i = 0; i < support; ++i) {
    acc += p[order[i]];
    if (u < acc) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[support - 1]);
}

// ============================================================================
// Event log
// ============================================================================

struct TriggerEvent {
  std::size_t offset;  // byte offset of the '.' within prefix + generated text
};
struct SuggestionsEvent {
  std::vector<std::string> items;
};
struct MaskEvent {
  std::uint64_t digest;
  std::size_t ones;
};
struct TokenEvent {
  TokenId id;
  std::string text;
};
struct StateEvent {
  monitor::Mode mode;
  std::vector<std::string> residuals;
};

using Event = std::variant<TriggerEvent, SuggestionsEvent, MaskEvent, TokenEvent, StateEvent>;

inline void to_json(nlohmann::json& j, const Event& e) {
  std::visit(
      [&](auto&& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, TriggerEvent>) {
          j = {{"type", "trigger"}, {"offset", ev.offset}};
        } else if constexpr (std::is_same_v<T, SuggestionsEvent>) {
          j = {{"type", "suggestions"}, {"items", ev.items}};
        } else if constexpr (std::is_same_v<T, MaskEvent>) {
          j = {{"type", "mask"}, {"digest", hex64(ev.digest)}, {"ones", ev.ones}};
        } else if constexpr (std::is_same_v<T, TokenEvent>) {
          j = {{"type", "token"}, {"id", ev.id}, {"text", ev.text}};
        } else {
          j = {{"type", "state"}, {"mode", monitor::mode_name(ev.mode)}};
          if (ev.mode == monitor::Mode::active) j["residuals"] = ev.residuals;
        }
      },
      e);
}

inline void from_json(const nlohmann::json& j, Event& e) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "trigger") {
    e = TriggerEvent{j.at("offset").get<std::size_t>()};
  } else if (type == "suggestions") {
    e = SuggestionsEvent{j.at("items").get<std::vector<std::string>>()};
  } else if (type == "mask") {
    e = MaskEvent{std::stoull(j.at("digest").get<std::string>(), nullptr, 16),
                  j.at("ones").get<std::size_t>()};
  } else if (type == "token") {
    e = TokenEvent{j.at("id").get<TokenId>(), j.at("text").get<std::string>()};
  } else if (type == "state") {
    const std::string mode = j.at("mode").get<std::string>();
    StateEvent ev;
    if (mode == "wait") ev.mode = monitor::Mode::wait;
    else if (mode == "active") ev.mode = monitor::Mode::active;
    else if (mode == "abandoned") ev.mode = monitor::Mode::abandoned;
    else throw Error("unknown state mode in event log: " + mode);
    ev.residuals = j.value("residuals", std::vector<std::string>{});
    e = ev;
  } else {
    throw Error("unknown event type in record: " + type);
  }
}

// ============================================================================
// Generation records
// ============================================================================

enum class StopReason { method_close, budget, eos, abandoned, error };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::method_close: return "method_close";
    case StopReason::budget: return "budget";
    case StopReason::eos: return "eos";
    case StopReason::abandoned: return "abandoned";
    case StopReason::error: return "error";
  }
  return "?";
}

inline StopReason parse_stop_reason(std::string_view name) {
  if (name == "method_close") return StopReason::method_close;
  if (name == "budget") return StopReason::budget;
  if (name == "eos") return StopReason::eos;
  if (name == "abandoned") return StopReason::abandoned;
  if (name == "error") return StopReason::error;
  throw Error("unknown stop reason: " + std::string(name));
}

struct GenerationRecord {
  std::string case_id;
  int trial_index = 0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool monitor_enabled = true;
  std::string config_hash;
  std::vector<TokenId> token_ids;
  std::string text;
  StopReason stop = StopReason::budget;
  std::string error;  // non-empty iff stop == error
  double wall_time_ms = 0.0;
  std::vector<Event> events;
};

inline void to_json(nlohmann::json& j, const GenerationRecord& r) {
  j = nlohmann::json{{"case_id", r.case_id},
                     {"trial_index", r.trial_index},
                     {"temperature", r.temperature},
                     {"seed", r.seed},
                     {"monitor_enabled", r.monitor_enabled},
                     {"config_hash", r.config_hash},
                     {"token_ids", r.token_ids},
                     {"text", r.text},
                     {"stop_reason", stop_reason_name(r.stop)},
                     {"wall_time_ms", r.wall_time_ms},
                     {"events", r.events}};
  if (!r.error.empty()) j["error"] = r.error;
}

inline void from_json(const nlohmann::json& j, GenerationRecord& r) {
  r.case_id = j.at("case_id").get<std::string>();
  r.trial_index = j.at("trial_index").get<int>();
  r.temperature = j.at("temperature").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.monitor_enabled = j.at("monitor_enabled").get<bool>();
  r.config_hash = j.value("config_hash", std::string());
  r.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
  r.text = j.at("text").get<std::string>();
  r.stop = parse_stop_reason(j.at("stop_reason").get<std::string>());
  r.error = j.value("error", std::string());
  r.wall_time_ms = j.value("wall_time_ms", 0.0);
  r.events = j.value("events", std::vector<Event>{});
}

// ============================================================================
// generate
// ============================================================================

struct GenerateOptions {
  lm::PromptPlan plan;
  SamplerConfig sampler;
  monitor::MonitorConfig monitor;
  bool monitor_enabled = true;
  DelimiterSet delims = DelimiterSet::java();
  std::string config_hash;
};

namespace detail {

/** Adapts the monitor's trigger callback to a suggestion provider: splices
 *  the document the analysis should see (prefix + generation so far +
 *  original suffix) and converts the cursor to a position. */
class CaseSource final : public monitor::SuggestionSource {
 public:
  CaseSource(const TestCase& c, suggest::SuggestionProvider* provider)
      : case_(c), provider_(provider) {}

  SuggestionSet suggestions_at(const monitor::TriggerContext& ctx) override {
    if (!provider_) throw ProviderError("monitor is enabled but no suggestion provider is configured");
    suggest::SuggestionQuery q;
    q.file = case_.file;
    q.content = std::string(ctx.upto_cursor());
    if (case_.suffix) q.content += *case_.suffix;
    q.position = position_at(q.content, ctx.cursor);
    provider_->open_document(q.file, q.content);
    return provider_->query(q);
  }

 private:
  const TestCase& case_;
  suggest::SuggestionProvider* provider_;
};

}  // namespace detail

/**
 * Run one monitored (or plain) generation for a case. Never throws for
 * per-case failures; any error is folded into the returned record with
 * stop == error, so batch callers stay alive.
 */
inline GenerationRecord generate(const TestCase& c, lm::Backend& backend,
                                 suggest::SuggestionProvider* provider,
                                 const GenerateOptions& options) {
  GenerationRecord record;
  record.case_id = c.case_id;
  record.temperature = options.sampler.temperature;
  record.seed = options.sampler.seed;
  record.monitor_enabled = options.monitor_enabled;
  record.config_hash = options.config_hash;

  const auto started = std::chrono::steady_clock::now();
  const Vocabulary& vocab = backend.vocab();

  try {
    lm::PromptLayout prompt = lm::build_prompt(options.plan, c, backend);
    detail::CaseSource source(c, provider);
    std::mt19937_64 rng(options.sampler.seed);

    std::vector<TokenId> context = prompt.ids;
    std::string generated;
    monitor::MonitorState state = monitor::MonitorState::wait();
    std::string frontier = c.prefix;  // prefix + generated so far

    record.stop = StopReason::budget;
    while (static_cast<int>(record.token_ids.size()) < options.plan.generation_budget) {
      std::optional<Mask> mask;
      if (options.monitor_enabled) {
        monitor::TriggerContext ctx{frontier, frontier.size()};
        monitor::StepResult step =
            monitor::step(state, ctx, source, vocab, options.delims, options.monitor);
        if (step.triggered) {
          record.events.push_back(TriggerEvent{frontier.size() - 1});
          record.events.push_back(SuggestionsEvent{*step.suggestions});
          record.events.push_back(StateEvent{
              step.state.mode(), step.state.mode() == monitor::Mode::active
                                     ? step.state.residuals().items()
                                     : std::vector<std::string>{}});
        }
        state = step.state;
        if (state.mode() == monitor::Mode::abandoned) {
          record.stop = StopReason::abandoned;
          break;
        }
        mask = std::move(step.mask);
      }

      lm::LogitVector logits =
          mask ? backend.logits(context, mask->ones()) : backend.logits(context);
      if (mask) {
        logits = apply_mask(logits, *mask, options.sampler.mask_penalty);
        record.events.push_back(MaskEvent{mask->digest(), mask->count()});
      }

      TokenId next = nucleus_sample(logits, options.sampler, rng);
      if (vocab.eos() && next == *vocab.eos()) {
        record.stop = StopReason::eos;
        break;
      }

      const std::string& token_text = vocab.token(next);
      record.events.push_back(TokenEvent{next, token_text});

      if (options.monitor_enabled && state.mode() == monitor::Mode::active) {
        state = monitor::update(state, token_text, options.delims);
        record.events.push_back(StateEvent{
            state.mode(), state.mode() == monitor::Mode::active ? state.residuals().items()
                                                                : std::vector<std::string>{}});
      }

      record.token_ids.push_back(next);
      context.push_back(next);
      generated += token_text;
      frontier += token_text;

      if (javalex::method_close_offset(generated, c.open_depth)) {
        record.stop = StopReason::method_close;
        break;
      }
    }

    record.text = generated;
  } catch (const std::exception& e) {
    record.stop = StopReason::error;
    record.error = e.what();
    record.text = detokenize(record.token_ids, vocab);
  }

  record.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
          .count();
  return record;
}

/**
 * The fixed temperature schedule, one generation per entry. Each trial gets
 * a seed derived from (base_seed, case_id, trial index) so any subset of
 * trials can be re-run independently and reproduce the full run.
 */
inline std::vector<GenerationRecord> run_trials(const TestCase& c, lm::Backend& backend,
                                                suggest::SuggestionProvider* provider,
                                                GenerateOptions options,
                                                const std::vector<double>& schedule,
                                                std::uint64_t base_seed) {
  std::vector<GenerationRecord> records;
  records.reserve(schedule.size());
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    options.sampler.temperature = schedule[i];
    options.sampler.seed = derive_seed(base_seed, c.case_id, static_cast<int>(i));
    GenerationRecord r = generate(c, backend, provider, options);
    r.trial_index = static_cast<int>(i);
    records.push_back(std::move(r));
  }
  return records;
}

// ============================================================================
// Replay
// ============================================================================

struct ReplayResult {
  bool ok = true;
  std::vector<std::string> issues;
  int triggers = 0;
  /** Identifiers completed under an active monitor, one per constrained site. */
  std::vector<std::string> completed_identifiers;
  /** Parallel to completed_identifiers: was it in the logged suggestion set? */
  std::vector<bool> sound;

  bool all_sound() const {
    return std::all_of(sound.begin(), sound.end(), [](bool b) { return b; });
  }
};

/**
 * Re-derive the monitor trajectory from a record's event log and check it
 * against what was logged: every state transition must re-derive, every mask
 * digest must match a freshly computed mask, every token sampled under an
 * active state must have its mask bit set, and every identifier completed
 * after a trigger must be a member of the suggestion set logged at that
 * trigger. Works entirely from the record, the vocabulary and the delimiter
 * set; no backend, provider or randomness involved.
 */
inline ReplayResult replay(const GenerationRecord& record, const Vocabulary& vocab,
                           const DelimiterSet& delims) {
  ReplayResult result;
  auto issue = [&](std::string msg) {
    result.ok = false;
    result.issues.push_back(std::move(msg));
  };

  monitor::MonitorState state = monitor::MonitorState::wait();
  std::optional<SuggestionsEvent> pending_suggestions;
  std::optional<std::vector<std::string>> trigger_items;  // suggestion set of the open site
  std::optional<Mask> current_mask;
  std::string partial_identifier;
  bool identifier_open = false;

  auto complete_identifier = [&](const std::string& name) {
    result.completed_identifiers.push_back(name);
    bool member = trigger_items && std::find(trigger_items->begin(), trigger_items->end(),
                                             name) != trigger_items->end();
    result.sound.push_back(member);
    identifier_open = false;
    partial_identifier.clear();
  };

  for (const Event& event : record.events) {
    if (const auto* trig = std::get_if<TriggerEvent>(&event)) {
      (void)trig;
      ++result.triggers;
      pending_suggestions.reset();
    } else if (const auto* sugg = std::get_if<SuggestionsEvent>(&event)) {
      pending_suggestions = *sugg;
    } else if (const auto* st = std::get_if<StateEvent>(&event)) {
      if (pending_suggestions) {
        // Trigger transition: the logged state must agree with on_trigger.
        SuggestionSet set = SuggestionSet::from_analysis(pending_suggestions->items);
        if (!set.empty()) {
          if (st->mode != monitor::Mode::active || st->residuals != set.items())
            issue("trigger with suggestions did not enter the expected active state");
          state = monitor::MonitorState::active(set);
          trigger_items = pending_suggestions->items;
          identifier_open = true;
          partial_identifier.clear();
        } else {
          if (st->mode == monitor::Mode::active)
            issue("trigger with no suggestions logged an active state");
          state = st->mode == monitor::Mode::abandoned ? monitor::MonitorState::abandoned()
                                                       : monitor::MonitorState::wait();
        }
        pending_suggestions.reset();
      } else {
        // Update transition: reconstruction already advanced at the token.
        bool match = st->mode == state.mode() &&
                     (st->mode != monitor::Mode::active ||
                      st->residuals == state.residuals().items());
        if (!match) issue("logged state diverges from replayed update");
      }
    } else if (const auto* mask_ev = std::get_if<MaskEvent>(&event)) {
      if (state.mode() != monitor::Mode::active) {
        issue("mask logged while monitor not active");
        current_mask.reset();
        continue;
      }
      Mask fresh = maskgen(state.residuals(), vocab, delims);
      if (fresh.digest() != mask_ev->digest || fresh.count() != mask_ev->ones)
        issue("mask digest mismatch at trigger " + std::to_string(result.triggers));
      current_mask = std::move(fresh);
    } else if (const auto* tok = std::get_if<TokenEvent>(&event)) {
      if (state.mode() == monitor::Mode::active) {
        if (!current_mask) {
          issue("token sampled under active state without a logged mask");
        } else if (tok->id < 0 || static_cast<std::size_t>(tok->id) >= current_mask->size() ||
                   !current_mask->test(static_cast<std::size_t>(tok->id))) {
          issue("token \"" + tok->text + "\" sampled outside the active mask");
        }
        if (delims.intersects(tok->text)) {
          std::size_t cut = 0;
          while (cut < tok->text.size() &&
                 !delims.contains(static_cast<unsigned char>(tok->text[cut])))
            ++cut;
          complete_identifier(partial_identifier + tok->text.substr(0, cut));
          state = monitor::MonitorState::wait();
        } else {
          partial_identifier += tok->text;
          try {
            state = monitor::update(state, tok->text, delims);
          } catch (const MaskViolation& e) {
            issue(std::string("replayed update rejected a logged token: ") + e.what());
            state = monitor::MonitorState::wait();
            identifier_open = false;
          }
        }
      }
      current_mask.reset();
    }
  }

  // A site still open at the end of the record produced no complete
  // identifier (budget ran out mid-name); that is not a soundness failure.
  (void)identifier_open;
  return result;
}

}  // namespace mgd::decode
