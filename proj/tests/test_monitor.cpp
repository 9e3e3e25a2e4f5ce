#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <string>
#include <vector>

#include "mgd/monitor.hpp"
#include "support/testutil.hpp"

using namespace mgd::monitor;
using mgd::DelimiterSet;
using mgd::Mask;
using mgd::SuggestionSet;
using mgd::Vocabulary;

namespace {

bool triggers_on(std::string_view text) {
  return pre_trigger(TriggerContext{text, text.size()});
}

/** Scripted source that counts queries and returns a fixed set. */
class ScriptedSource : public SuggestionSource {
 public:
  explicit ScriptedSource(std::vector<std::string> items) : items_(std::move(items)) {}

  SuggestionSet suggestions_at(const TriggerContext&) override {
    ++queries;
    if (throw_next) {
      throw_next = false;
      throw mgd::ProviderError("scripted failure");
    }
    return SuggestionSet::from_analysis(items_);
  }

  int queries = 0;
  bool throw_next = false;

 private:
  std::vector<std::string> items_;
};

}  // namespace

TEST_CASE("pre_trigger fires only on a genuine dereference dot", "[monitor]") {
  SECTION("qualifying receivers") {
    REQUIRE(triggers_on("builder."));
    REQUIRE(triggers_on("x = ServerNode.Builder.newServerNode()."));
    REQUIRE(triggers_on("a[0]."));
    REQUIRE(triggers_on("this."));
    REQUIRE(triggers_on("super."));
    REQUIRE(triggers_on("String.class."));
    REQUIRE(triggers_on("\"text\"."));
  }

  SECTION("non-triggering dots") {
    REQUIRE_FALSE(triggers_on("double x = 3."));
    REQUIRE_FALSE(triggers_on("// builder."));
    REQUIRE_FALSE(triggers_on("s = \"builder."));
    REQUIRE_FALSE(triggers_on("/* x. */"));
    REQUIRE_FALSE(triggers_on("return ."));
    REQUIRE_FALSE(triggers_on("if."));
    REQUIRE_FALSE(triggers_on("."));
    REQUIRE_FALSE(triggers_on(""));
    REQUIRE_FALSE(triggers_on("builder"));
  }

  SECTION("the dot must end exactly at the cursor") {
    std::string text = "builder.x";
    REQUIRE_FALSE(pre_trigger(TriggerContext{text, text.size()}));
    REQUIRE(pre_trigger(TriggerContext{text, 8}));
  }

  SECTION("range operator is not a dereference") {
    // "a..b" lexes ".." as "." "." with the last dot preceded by an op.
    REQUIRE_FALSE(triggers_on("a.."));
  }
}

TEST_CASE("on_trigger maps suggestion sets to states", "[monitor]") {
  auto full = SuggestionSet::from_analysis({"withIp", "withPort", "newServerNode"});
  MonitorState active = on_trigger(full, OnEmpty::abandon);
  REQUIRE(active.mode() == Mode::active);
  REQUIRE(active.residuals() == full);

  REQUIRE(on_trigger(SuggestionSet(), OnEmpty::abandon).mode() == Mode::abandoned);
  REQUIRE(on_trigger(SuggestionSet(), OnEmpty::unconstrained).mode() == Mode::wait);
}

TEST_CASE("update strips prefixes and returns to wait on delimiters", "[monitor]") {
  DelimiterSet delims = DelimiterSet::java();
  MonitorState s =
      MonitorState::active(SuggestionSet::from_analysis({"withIp", "withPort", "newServerNode"}));

  SECTION("the Appendix-A walk") {
    MonitorState after_with = update(s, "with", delims);
    REQUIRE(after_with.mode() == Mode::active);
    REQUIRE(after_with.residuals().items() == std::vector<std::string>{"Ip", "Port"});

    MonitorState after_ip = update(after_with, "Ip", delims);
    REQUIRE(after_ip.mode() == Mode::active);
    REQUIRE(after_ip.residuals().items() == std::vector<std::string>{""});

    MonitorState after_paren = update(after_ip, "(", delims);
    REQUIRE(after_paren.mode() == Mode::wait);
  }

  SECTION("consuming a whole residual leaves the empty residual") {
    MonitorState after = update(s, "withIp", delims);
    REQUIRE(after.residuals().items() == std::vector<std::string>{""});
  }

  SECTION("mask violations are loud") {
    REQUIRE_THROWS_AS(update(s, "host", delims), mgd::MaskViolation);
    MonitorState eps = MonitorState::active(SuggestionSet::of_residuals({""}));
    REQUIRE_THROWS_AS(update(eps, "x", delims), mgd::MaskViolation);
  }

  SECTION("any delimiter byte anywhere in the token ends the identifier") {
    REQUIRE(update(s, "withIp(", delims).mode() == Mode::wait);
    REQUIRE(update(s, " ", delims).mode() == Mode::wait);
  }

  SECTION("update requires an active state") {
    REQUIRE_THROWS_AS(update(MonitorState::wait(), "x", delims), mgd::Error);
  }
}

TEST_CASE("active states cannot be empty", "[monitor]") {
  REQUIRE_THROWS_AS(MonitorState::active(SuggestionSet()), mgd::Error);
  REQUIRE_THROWS_AS(MonitorState::wait().residuals(), mgd::Error);
}

TEST_CASE("step queries the source only at a trigger", "[monitor]") {
  DelimiterSet delims = DelimiterSet::java();
  Vocabulary vocab({"with", "Ip", "Port", "host", "(", "withIp", "new"});
  ScriptedSource source({"withIp", "withPort"});

  SECTION("wait state passes through without a query") {
    StepResult r = step(MonitorState::wait(), {"int x = 1;", 10}, source, vocab, delims);
    REQUIRE(r.state.mode() == Mode::wait);
    REQUIRE_FALSE(r.mask.has_value());
    REQUIRE_FALSE(r.triggered);
    REQUIRE(source.queries == 0);
  }

  SECTION("a trigger queries once and masks") {
    std::string text = "return b.";
    StepResult r = step(MonitorState::wait(), {text, text.size()}, source, vocab, delims);
    REQUIRE(r.triggered);
    REQUIRE(source.queries == 1);
    REQUIRE(r.state.mode() == Mode::active);
    REQUIRE(r.mask.has_value());
    REQUIRE(r.suggestions == std::vector<std::string>{"withIp", "withPort"});
    // The mask admits exactly the tokens consistent with the residuals.
    REQUIRE(r.mask->test(static_cast<std::size_t>(*vocab.find("with"))));
    REQUIRE_FALSE(r.mask->test(static_cast<std::size_t>(*vocab.find("host"))));
  }

  SECTION("an active state masks without re-querying") {
    MonitorState active = MonitorState::active(SuggestionSet::of_residuals({"Ip"}));
    StepResult r = step(active, {"return b.with", 13}, source, vocab, delims);
    REQUIRE(r.state.mode() == Mode::active);
    REQUIRE(r.mask.has_value());
    REQUIRE_FALSE(r.triggered);
    REQUIRE(source.queries == 0);
  }

  SECTION("abandoned is absorbing") {
    StepResult r = step(MonitorState::abandoned(), {"b.", 2}, source, vocab, delims);
    REQUIRE(r.state.mode() == Mode::abandoned);
    REQUIRE_FALSE(r.mask.has_value());
    REQUIRE(source.queries == 0);
  }

  SECTION("empty suggestions follow the policy") {
    ScriptedSource empty({});
    MonitorConfig abandon;
    StepResult r = step(MonitorState::wait(), {"b.", 2}, empty, vocab, delims, abandon);
    REQUIRE(r.state.mode() == Mode::abandoned);
    REQUIRE(r.triggered);
    REQUIRE_FALSE(r.mask.has_value());

    MonitorConfig fall;
    fall.on_empty = OnEmpty::unconstrained;
    r = step(MonitorState::wait(), {"b.", 2}, empty, vocab, delims, fall);
    REQUIRE(r.state.mode() == Mode::wait);
    REQUIRE_FALSE(r.mask.has_value());
  }

  SECTION("source failures degrade to the empty policy by default") {
    source.throw_next = true;
    StepResult r = step(MonitorState::wait(), {"b.", 2}, source, vocab, delims);
    REQUIRE(r.state.mode() == Mode::abandoned);

    source.throw_next = true;
    MonitorConfig strict;
    strict.propagate_provider_errors = true;
    REQUIRE_THROWS_AS(step(MonitorState::wait(), {"b.", 2}, source, vocab, delims, strict),
                      mgd::ProviderError);
  }
}

TEST_CASE("random masked walks never dead-end or violate", "[monitor][property]") {
  DelimiterSet delims = DelimiterSet::java();
  Vocabulary vocab = testutil::coverage_vocab(testutil::printable_ascii(),
                                              {"with", "Ip", "Port", "withIp", "new", "xY"});
  std::mt19937 rng(5150);
  const std::string name_chars = "abxYw_2";

  for (int iter = 0; iter < 150; ++iter) {
    std::vector<std::string> names;
    int n = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      std::string name;
      int len = 1 + static_cast<int>(rng() % 7);
      for (int j = 0; j < len; ++j) name.push_back(name_chars[rng() % name_chars.size()]);
      names.push_back(std::move(name));
    }

    MonitorState state = on_trigger(SuggestionSet::from_analysis(names), OnEmpty::abandon);
    REQUIRE(state.mode() == Mode::active);

    // Sample admitted tokens until a delimiter sends us back to wait.
    int guard = 0;
    while (state.mode() == Mode::active && ++guard < 64) {
      Mask mask = mgd::maskgen(state.residuals(), vocab, delims);
      auto ones = mask.ones();
      REQUIRE_FALSE(ones.empty());
      const std::string& tok = vocab.token(ones[rng() % ones.size()]);
      // Legal by the mask, so update must never throw.
      state = update(state, tok, delims);
      if (state.mode() == Mode::active) REQUIRE_FALSE(state.residuals().items().empty());
    }
    REQUIRE(guard < 64);
    REQUIRE(state.mode() == Mode::wait);
  }
}

TEST_CASE("identical inputs replay to identical trajectories", "[monitor]") {
  DelimiterSet delims = DelimiterSet::java();
  auto run_walk = [&]() {
    std::vector<Mode> modes;
    MonitorState s =
        MonitorState::active(SuggestionSet::from_analysis({"withIp", "withPort"}));
    for (const char* tok : {"with", "Ip", "("}) {
      s = update(s, tok, delims);
      modes.push_back(s.mode());
    }
    return modes;
  };
  REQUIRE(run_walk() == run_walk());
}
