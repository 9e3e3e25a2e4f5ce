#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mgd/vocab.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using mgd::AdmitRule;
using mgd::DelimiterSet;
using mgd::Mask;
using mgd::SuggestionSet;
using mgd::TokenId;
using mgd::Vocabulary;

namespace {

std::vector<std::string> allowed_tokens(const Mask& mask, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId id : mask.ones()) out.push_back(vocab.token(id));
  return out;
}

/** Random identifier-ish string over a tiny alphabet so prefixes collide often. */
std::string random_name(std::mt19937& rng, int max_len) {
  static const std::string alphabet = "abAB_1";
  std::uniform_int_distribution<int> len(1, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  int n = len(rng);
  for (int i = 0; i < n; ++i) s.push_back(alphabet[pick(rng)]);
  return s;
}

std::string random_token(std::mt19937& rng, int max_len) {
  static const std::string alphabet = "abAB_1.({; )";
  std::uniform_int_distribution<int> len(1, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  int n = len(rng);
  for (int i = 0; i < n; ++i) s.push_back(alphabet[pick(rng)]);
  return s;
}

}  // namespace

TEST_CASE("the Java delimiter set is the complement of identifier bytes", "[vocab]") {
  DelimiterSet d = DelimiterSet::java();
  for (char c : std::string("(){}[].;,+-*/ \t\n\"'<>@")) {
    REQUIRE(d.contains(static_cast<unsigned char>(c)));
  }
  for (char c : std::string("azAZ09_$")) {
    REQUIRE_FALSE(d.contains(static_cast<unsigned char>(c)));
  }
  // Non-ASCII bytes terminate identifiers too.
  REQUIRE(d.contains(0x80));
  REQUIRE(d.contains(0xff));
  REQUIRE(d.size() == 256 - 64);

  REQUIRE(d.intersects("withIp("));
  REQUIRE_FALSE(d.intersects("withIp"));
}

TEST_CASE("explicit delimiter sets are validated", "[vocab]") {
  DelimiterSet d = DelimiterSet::from_chars("(.");
  REQUIRE(d.contains('('));
  REQUIRE_FALSE(d.contains(' '));
  REQUIRE_THROWS_AS(DelimiterSet::from_chars(""), mgd::Error);
  REQUIRE_THROWS_AS(DelimiterSet::from_chars("a"), mgd::Error);
}

TEST_CASE("SuggestionSet normalizes analysis output", "[vocab]") {
  auto s = SuggestionSet::from_analysis({"withPort", "withIp", "", "withIp"});
  REQUIRE(s.items() == std::vector<std::string>{"withIp", "withPort"});
  REQUIRE(s.contains("withIp"));
  REQUIRE_FALSE(s.contains(""));

  // Residual sets keep the empty string: it means "may end here".
  auto r = SuggestionSet::of_residuals({"Ip", ""});
  REQUIRE(r.size() == 2);
  REQUIRE(r.contains(""));
}

TEST_CASE("Vocabulary loads from JSON and validates ids", "[vocab]") {
  Vocabulary v = Vocabulary::load(testutil::fixtures_dir() / "vocab_fig3.json");
  REQUIRE(v.size() > 100);
  REQUIRE(v.find("withIp").has_value());
  REQUIRE(v.token(*v.find("withIp")) == "withIp");
  REQUIRE(v.eos().has_value());
  REQUIRE(v.token(*v.eos()) == "<eos>");
  REQUIRE(v.fim().has_value());

  REQUIRE_THROWS_AS(v.token(static_cast<TokenId>(v.size())), mgd::Error);
  REQUIRE_THROWS_AS(v.token(-1), mgd::Error);
  REQUIRE_THROWS_AS(Vocabulary({}), mgd::Error);
  REQUIRE_THROWS_AS(Vocabulary({"a", ""}), mgd::Error);
  REQUIRE_THROWS_AS(Vocabulary({"a"}, TokenId{5}), mgd::Error);
}

TEST_CASE("duplicate token strings resolve to the smallest id", "[vocab]") {
  Vocabulary v({"x", "dup", "dup", "y"});
  REQUIRE(v.find("dup") == TokenId{1});
  REQUIRE(v.token(2) == "dup");
}

TEST_CASE("maskgen admits prefixes and delimiter-led continuations", "[vocab]") {
  DelimiterSet delims = DelimiterSet::java();

  SECTION("fresh suggestion set") {
    Vocabulary vocab({"with", "Ip", "Port", "host", "(", "withIp", "new"});
    auto state = SuggestionSet::from_analysis({"withIp", "withPort", "newServerNode"});
    Mask mask = mgd::maskgen(state, vocab, delims);
    REQUIRE(allowed_tokens(mask, vocab) == std::vector<std::string>{"with", "withIp", "new"});
  }

  SECTION("after consuming a shared prefix") {
    Vocabulary vocab({"with", "Ip", "Port", "host", "(", "withIp", "new"});
    auto state = SuggestionSet::of_residuals({"Ip", "Port"});
    Mask mask = mgd::maskgen(state, vocab, delims);
    REQUIRE(allowed_tokens(mask, vocab) == std::vector<std::string>{"Ip", "Port"});
  }

  SECTION("only the empty residual remains: next byte must be a delimiter") {
    Vocabulary vocab({"with", "Ip", "Port", "host", "(", "withIp", "new"});
    auto state = SuggestionSet::of_residuals({""});
    Mask mask = mgd::maskgen(state, vocab, delims);
    REQUIRE(allowed_tokens(mask, vocab) == std::vector<std::string>{"("});
  }

  SECTION("a token can finish the identifier and keep going") {
    Vocabulary vocab({"withIp(x)", "withIp", "withIpX", "with(", "("});
    auto state = SuggestionSet::from_analysis({"withIp"});
    Mask mask = mgd::maskgen(state, vocab, delims);
    // "withIp(x)" completes the name then continues past the delimiter;
    // "withIpX" extends the identifier beyond the suggestion, so it is out,
    // and "with(" closes the name too early.
    REQUIRE(allowed_tokens(mask, vocab) == std::vector<std::string>{"withIp(x)", "withIp"});
  }

  SECTION("empty state is a contract violation") {
    Vocabulary vocab({"a"});
    REQUIRE_THROWS_AS(mgd::maskgen(SuggestionSet(), vocab, delims), mgd::MaskViolation);
  }
}

TEST_CASE("classify_admission names the admitting rule", "[vocab]") {
  DelimiterSet delims = DelimiterSet::java();
  auto state = SuggestionSet::from_analysis({"withIp", "withPort"});
  REQUIRE(mgd::classify_admission("with", state, delims) == AdmitRule::prefix);
  REQUIRE(mgd::classify_admission("withIp", state, delims) == AdmitRule::prefix);
  REQUIRE(mgd::classify_admission("withIp(", state, delims) ==
          AdmitRule::completes_identifier);
  REQUIRE(mgd::classify_admission("host", state, delims) == AdmitRule::none);
  REQUIRE(mgd::classify_admission("", state, delims) == AdmitRule::none);

  auto epsilon = SuggestionSet::of_residuals({""});
  REQUIRE(mgd::classify_admission("(", epsilon, delims) == AdmitRule::completes_identifier);
}

TEST_CASE("maskgen agrees with the two-rule oracle", "[vocab][property]") {
  DelimiterSet delims = DelimiterSet::java();
  std::mt19937 rng(7041);
  std::uniform_int_distribution<int> vocab_size(1, 60);
  std::uniform_int_distribution<int> state_size(1, 12);

  for (int iter = 0; iter < 300; ++iter) {
    std::set<std::string> tokens;
    int vs = vocab_size(rng);
    while (static_cast<int>(tokens.size()) < vs) tokens.insert(random_token(rng, 6));
    std::vector<std::string> token_list(tokens.begin(), tokens.end());
    std::shuffle(token_list.begin(), token_list.end(), rng);
    Vocabulary vocab(token_list);

    std::vector<std::string> names;
    int ss = state_size(rng);
    for (int i = 0; i < ss; ++i) names.push_back(random_name(rng, 5));
    auto state = SuggestionSet::from_analysis(names);
    if (state.empty()) continue;

    Mask mask = mgd::maskgen(state, vocab, delims);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      bool expected = oracle::admits(vocab.token(static_cast<TokenId>(id)),
                                     state.items(), delims);
      INFO("token \"" << vocab.token(static_cast<TokenId>(id)) << "\"");
      REQUIRE(mask.test(id) == expected);
    }

    // classify_admission must agree with the mask bit on admissibility.
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      auto rule = mgd::classify_admission(vocab.token(static_cast<TokenId>(id)), state, delims);
      REQUIRE((rule != AdmitRule::none) == mask.test(id));
    }
  }
}

TEST_CASE("maskgen is monotone in the residual set", "[vocab][property]") {
  DelimiterSet delims = DelimiterSet::java();
  std::mt19937 rng(90210);

  for (int iter = 0; iter < 100; ++iter) {
    std::set<std::string> tokens;
    while (tokens.size() < 40) tokens.insert(random_token(rng, 5));
    Vocabulary vocab(std::vector<std::string>(tokens.begin(), tokens.end()));

    std::vector<std::string> big;
    for (int i = 0; i < 10; ++i) big.push_back(random_name(rng, 5));
    auto big_set = SuggestionSet::from_analysis(big);
    if (big_set.size() < 2) continue;

    // A random non-empty subset.
    std::vector<std::string> small;
    for (const auto& w : big_set.items())
      if (rng() % 2 == 0) small.push_back(w);
    if (small.empty()) small.push_back(big_set.items().front());
    auto small_set = SuggestionSet::from_analysis(small);

    Mask big_mask = mgd::maskgen(big_set, vocab, delims);
    Mask small_mask = mgd::maskgen(small_set, vocab, delims);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      if (small_mask.test(id)) REQUIRE(big_mask.test(id));
    }
  }
}

TEST_CASE("a byte-complete vocabulary never dead-ends an active state", "[vocab][property]") {
  DelimiterSet delims = DelimiterSet::java();
  Vocabulary vocab = testutil::coverage_vocab(testutil::printable_ascii());
  std::mt19937 rng(3003);

  for (int iter = 0; iter < 200; ++iter) {
    std::vector<std::string> names;
    int n = 1 + static_cast<int>(rng() % 8);
    for (int i = 0; i < n; ++i) names.push_back(random_name(rng, 6));
    auto state = SuggestionSet::from_analysis(names);
    // Strip a random prefix off one residual to also exercise epsilon states.
    if (iter % 3 == 0) {
      std::string w = state.items().front();
      state = SuggestionSet::of_residuals({w.substr(w.size() / 2), std::string()});
    }
    if (state.empty()) continue;
    REQUIRE(mgd::maskgen(state, vocab, delims).any());
  }
}

TEST_CASE("mask digests distinguish bit strings", "[vocab]") {
  Mask a(16), b(16);
  a.set(3);
  b.set(4);
  REQUIRE(a.digest() != b.digest());
  Mask c(16);
  c.set(3);
  REQUIRE(a.digest() == c.digest());
  REQUIRE(a.count() == 1);
  REQUIRE(a.ones() == std::vector<TokenId>{3});

  // Same bits, different lengths must not collide via padding.
  Mask d(8), e(9);
  d.set(0);
  e.set(0);
  REQUIRE(d.digest() != e.digest());
}

TEST_CASE("tokenize_greedy takes the longest match", "[vocab]") {
  Vocabulary vocab({"with", "Ip", "Port", "host", "(", "withIp", "new"});
  REQUIRE(mgd::tokenize_greedy("withIp(", vocab) ==
          std::vector<TokenId>{*vocab.find("withIp"), *vocab.find("(")});
  REQUIRE(mgd::tokenize_greedy("", vocab).empty());
  REQUIRE(mgd::tokenize_greedy("hostIp", vocab) ==
          std::vector<TokenId>{*vocab.find("host"), *vocab.find("Ip")});

  REQUIRE_THROWS_WITH(mgd::tokenize_greedy("withX", vocab),
                      Catch::Matchers::ContainsSubstring("offset 4"));
}

TEST_CASE("tokenize/detokenize round-trips any coverable text", "[vocab][property]") {
  Vocabulary vocab = testutil::coverage_vocab(testutil::printable_ascii(),
                                              {"with", "Ip", "withIp", "return "});
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> len(0, 120);
  const std::string alphabet = testutil::printable_ascii();
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);

  for (int iter = 0; iter < 200; ++iter) {
    std::string text;
    int n = len(rng);
    for (int i = 0; i < n; ++i) text.push_back(alphabet[pick(rng)]);
    REQUIRE(mgd::detokenize(mgd::tokenize_greedy(text, vocab), vocab) == text);
  }
}
