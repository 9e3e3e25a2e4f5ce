#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <string>
#include <vector>

#include "mgd/metrics.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace mgd::metrics;
using mgd::TestCase;
using mgd::Vocabulary;

TEST_CASE("nim compares the first token in kind and text", "[metrics]") {
  REQUIRE(nim("withIp();", "withIp(0)") == 1);
  REQUIRE(nim("withIp();", "withPort();") == 0);
  REQUIRE(nim("size()", "size  ()") == 1);  // layout is invisible to the lexer
  REQUIRE(nim("42;", "42)") == 1);

  SECTION("kind matters, not just spelling") {
    REQUIRE(nim("foo()", "\"foo\"") == 0);
    REQUIRE(nim("class x", "class y") == 1);  // both lead with the keyword
  }

  SECTION("an empty side never matches") {
    REQUIRE(nim("withIp();", "") == 0);
    REQUIRE(nim("", "withIp();") == 0);
    REQUIRE(nim("  \n ", "withIp();") == 0);  // whitespace lexes to nothing
  }
}

TEST_CASE("ism is the normalized identifier-sequence prefix", "[metrics]") {
  REQUIRE(ism("a + b + c", "a + b + x") == 2.0 / 3.0);
  REQUIRE(ism("a + b + c", "a + b + c") == 1.0);
  REQUIRE(ism("a + b + c", "") == 0.0);
  REQUIRE(ism("a + b + c", "x") == 0.0);

  SECTION("layout and operators between identifiers are ignored") {
    REQUIRE(ism("x.foo(y);", "x\n  .foo  (y)") == 1.0);
  }

  SECTION("extra generated identifiers past the ground truth cost nothing") {
    REQUIRE(ism("a + b", "a + b + c + d") == 1.0);
  }

  SECTION("vacuously perfect when the ground truth has no identifiers") {
    REQUIRE(ism("1 + 2;", "completely unrelated") == 1.0);
    REQUIRE(ism("", "") == 1.0);
  }
}

TEST_CASE("pm is the normalized token-stream prefix", "[metrics]") {
  // 10 ground-truth tokens, the first 4 shared.
  REQUIRE(pm("x.foo(1, 2);}", "x.foo(9);") == 0.4);
  REQUIRE(pm("a.b();", "a . b () ; // done") == 1.0);
  REQUIRE(pm("a.b();", "") == 0.0);
  REQUIRE(pm("", "anything") == 1.0);
  REQUIRE(pm("   \n", "anything") == 1.0);
}

TEST_CASE("match metrics satisfy their identity laws", "[metrics][property]") {
  const std::vector<std::string> fragments = {
      "x",  "foo", "(",  ")",  "{",  "}",      ";",   "+",    "42",
      ",",  ".",   " ",  "\n", "if", "return", "bar", "\"s\"", "3.5"};
  std::mt19937 rng(424242);

  auto snippet = [&] {
    std::string s;
    std::size_t n = rng() % 12;
    for (std::size_t i = 0; i < n; ++i) s += fragments[rng() % fragments.size()];
    return s;
  };

  for (int iter = 0; iter < 200; ++iter) {
    std::string g = snippet();
    std::string h = snippet();

    REQUIRE(ism(g, g) == 1.0);
    REQUIRE(pm(g, g) == 1.0);
    REQUIRE(nim(g, g) == (mgd::javalex::lex(g).empty() ? 0 : 1));

    double i = ism(g, h), p = pm(g, h);
    REQUIRE((i >= 0.0 && i <= 1.0));
    REQUIRE((p >= 0.0 && p <= 1.0));

    // Appending after a separating space never disturbs the shared prefix.
    REQUIRE(pm(g, g + " ;") == 1.0);
  }
}

TEST_CASE("truncate_at_method_close cuts trailing babble", "[metrics]") {
  REQUIRE(truncate_at_method_close("withIp();}\nvoid q() {}", 1) == "withIp();}");
  REQUIRE(truncate_at_method_close("withIp();", 1) == "withIp();");
  REQUIRE(truncate_at_method_close("a(); } } extra", 2) == "a(); } }");
  REQUIRE(truncate_at_method_close("s = \"}\";", 1) == "s = \"}\";");
  REQUIRE(truncate_at_method_close("s = \"}\";} x", 1) == "s = \"}\";}");
  REQUIRE(truncate_at_method_close("anything } goes", 0) == "anything } goes");
}

TEST_CASE("binomial is exact across the supported range", "[metrics]") {
  REQUIRE(binomial(6, 2) == 15);
  REQUIRE(binomial(0, 0) == 1);
  REQUIRE(binomial(5, 0) == 1);
  REQUIRE(binomial(5, 5) == 1);
  REQUIRE(binomial(3, 5) == 0);
  REQUIRE(binomial(-1, 0) == 0);
  REQUIRE(binomial(64, 32) == 1832624140942590534ull);
  REQUIRE_THROWS_AS(binomial(65, 1), mgd::Error);

  SECTION("matches the recurrence oracle everywhere") {
    for (int n = 0; n <= 20; ++n)
      for (int k = 0; k <= n; ++k) REQUIRE(binomial(n, k) == oracle::binom(n, k));
  }
}

TEST_CASE("score_at_k has exact anchors", "[metrics]") {
  SECTION("binary scores take the closed subset-count path") {
    std::vector<double> s = {1, 1, 1, 0, 0, 0};
    REQUIRE(score_at_k(s, 2) == 1.0 - 3.0 / 15.0);
    REQUIRE(score_at_k(s, 2) == Catch::Approx(0.8).margin(1e-15));
    REQUIRE(score_at_k(s, 6) == 1.0);   // some subset always includes a success
    REQUIRE(score_at_k({0, 0, 0}, 2) == 0.0);
    REQUIRE(score_at_k({1, 1}, 1) == 1.0);
  }

  SECTION("k = 1 is the mean and k = n the max") {
    std::vector<double> s = {0.2, 0.4, 0.9};
    REQUIRE(score_at_k(s, 1) == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(score_at_k(s, 3) == 0.9);
  }

  SECTION("out-of-range arguments are rejected") {
    REQUIRE_THROWS_AS(score_at_k({}, 1), mgd::Error);
    REQUIRE_THROWS_AS(score_at_k({0.5}, 0), mgd::Error);
    REQUIRE_THROWS_AS(score_at_k({0.5}, 2), mgd::Error);
    REQUIRE_THROWS_AS(score_at_k(std::vector<double>(65, 1.0), 1), mgd::Error);
  }
}

TEST_CASE("score_at_k agrees with subset enumeration", "[metrics][property]") {
  std::mt19937 rng(777);
  const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::uniform_real_distribution<double> cont(0.0, 1.0);

  for (int iter = 0; iter < 200; ++iter) {
    std::size_t n = 1 + rng() % 8;
    std::vector<double> scores;
    bool discrete = iter % 2 == 0;
    for (std::size_t i = 0; i < n; ++i)
      scores.push_back(discrete ? grid[rng() % grid.size()] : cont(rng));

    for (int k = 1; k <= static_cast<int>(n); ++k) {
      double closed = score_at_k(scores, k);
      double brute = oracle::score_at_k_enum(scores, k);
      REQUIRE(closed == Catch::Approx(brute).margin(1e-12));
    }
  }
}

TEST_CASE("compilation_rate splices, builds and restores", "[metrics]") {
  testutil::TempDir tmp;
  for (const char* name : {"main.cc", "node.hh"})
    mgd::write_file(tmp / name, mgd::read_file(testutil::fixtures_dir() / "cr_repo" / name));

  const std::string content = mgd::read_file(tmp / "main.cc");
  const std::string gt = "withIp(7).ip;\n}";
  const std::size_t cut = content.find("withIp(7)");
  REQUIRE(cut != std::string::npos);

  TestCase c;
  c.case_id = "cr";
  c.workspace_root = tmp.path();
  c.file = "main.cc";
  c.prefix = content.substr(0, cut);
  c.ground_truth = gt;
  c.suffix = content.substr(cut + gt.size());
  REQUIRE(c.prefix + c.ground_truth + *c.suffix == content);

  CrOptions opts{"c++ -fsyntax-only main.cc", 60.0};

  SECTION("the ground truth itself compiles") {
    CrOutcome out = compilation_rate(c, gt, opts);
    REQUIRE(out.score == 1);
    REQUIRE(out.note.empty());
    REQUIRE(mgd::read_file(tmp / "main.cc") == content);
  }

  SECTION("garbage does not, and the file still comes back intact") {
    CrOutcome out = compilation_rate(c, "@@@", opts);
    REQUIRE(out.score == 0);
    REQUIRE(mgd::read_file(tmp / "main.cc") == content);
  }

  SECTION("a wrong member name is caught by the type checker") {
    CrOutcome out = compilation_rate(c, "withPort(7).ip;\n}", opts);
    REQUIRE(out.score == 0);
    REQUIRE(mgd::read_file(tmp / "main.cc") == content);
  }

  SECTION("timeouts score zero with an explanatory note") {
    CrOptions slow{"sleep 5", 0.25};
    CrOutcome out = compilation_rate(c, gt, slow);
    REQUIRE(out.score == 0);
    REQUIRE_THAT(out.note, Catch::Matchers::ContainsSubstring("timed out"));
    REQUIRE(mgd::read_file(tmp / "main.cc") == content);
  }

  SECTION("missing configuration yields an absent score, not a zero") {
    REQUIRE_FALSE(compilation_rate(c, gt, std::nullopt).score.has_value());
    REQUIRE_FALSE(compilation_rate(c, gt, CrOptions{"", 1.0}).score.has_value());

    TestCase orphan = c;
    orphan.file = "nope.cc";
    CrOutcome out = compilation_rate(orphan, gt, opts);
    REQUIRE_FALSE(out.score.has_value());
    REQUIRE_THAT(out.note, Catch::Matchers::ContainsSubstring("missing"));
  }
}

TEST_CASE("identifier complexity averages subtoken counts", "[metrics]") {
  Vocabulary coarse({"ab", "cd", "e"});
  Vocabulary fine({"a", "b", "c", "d", "e"});

  SECTION("counts of 3 and 5 average to 4, landing in [4,18)") {
    double cx = identifier_complexity("abcde", {&coarse, &fine});
    REQUIRE(cx == 4.0);
    REQUIRE(complexity_bucket(cx) == 3);
    REQUIRE(std::string(bucket_label(3)) == "[4,18)");
  }

  SECTION("a single tokenizer is just its count") {
    Vocabulary v = testutil::vocab_of({"with", "Ip", "w", "i", "t", "h", "I", "p"});
    REQUIRE(identifier_complexity("withIp", {&v}) == 2.0);
  }

  SECTION("bucket edges follow half-open intervals") {
    REQUIRE(complexity_bucket(1.0) == 0);
    REQUIRE(complexity_bucket(1.99) == 0);
    REQUIRE(complexity_bucket(2.0) == 1);
    REQUIRE(complexity_bucket(3.0) == 2);
    REQUIRE(complexity_bucket(4.0) == 3);
    REQUIRE(complexity_bucket(17.99) == 3);
    REQUIRE(complexity_bucket(18.0) == -1);
    REQUIRE(complexity_bucket(0.5) == -1);
    REQUIRE(std::string(bucket_label(-1)) == "unbucketed");
  }

  SECTION("unusable input is rejected") {
    REQUIRE_THROWS_AS(identifier_complexity("", {&coarse}), mgd::Error);
    REQUIRE_THROWS_AS(identifier_complexity("abcde", {}), mgd::Error);
    REQUIRE_THROWS_AS(identifier_complexity("xyz", {&coarse}), mgd::Error);
  }
}

TEST_CASE("next_identifier picks the bucket-defining name", "[metrics]") {
  REQUIRE(next_identifier("withIp();") == std::optional<std::string>("withIp"));
  REQUIRE(next_identifier("  equals(other)") == std::optional<std::string>("equals"));
  REQUIRE_FALSE(next_identifier("3 + x").has_value());
  REQUIRE_FALSE(next_identifier("this.x").has_value());
  REQUIRE_FALSE(next_identifier("").has_value());
}
