#pragma once

/**
 * harness.hpp - batch evaluation over a JSONL dataset.
 *
 * The pipeline: load and validate cases, run the temperature schedule per
 * case (monitor on, and optionally a monitor-off baseline of the same
 * seeds), score each trial, append one JSON line per trial to a records
 * file, then fold the records into a report. The report is a pure function
 * of the records file: resuming an interrupted run, reordering workers or
 * recomputing aggregates offline all produce byte-identical numbers.
 *
 * Work is keyed by (config hash, case id, trial index). The config hash
 * covers every semantic knob (prompt plan, backend, provider, sampler,
 * schedule, seed, monitor policy), so stale records can never silently mix
 * into a differently-configured run.
 */

#include <atomic>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgd/common.hpp"
#include "mgd/decode.hpp"
#include "mgd/lm.hpp"
#include "mgd/metrics.hpp"
#include "mgd/monitor.hpp"
#include "mgd/remote.hpp"
#include "mgd/suggest.hpp"
#include "mgd/testcase.hpp"

namespace mgd::harness {

// ============================================================================
// Configuration
// ============================================================================

struct BackendConfig {
  enum class Kind { mock, remote };
  Kind kind = Kind::mock;
  std::filesystem::path vocab_path;
  std::filesystem::path mock_table;  // mock only
  double hallucination_bias = 1.0;   // mock only
  std::string endpoint;              // remote only
  double timeout_s = 30.0;           // remote only
};

struct RunConfig {
  lm::PromptPlan plan;
  BackendConfig backend;
  suggest::ProviderConfig provider;
  decode::SamplerConfig sampler;  // temperature and seed are per-trial, see schedule
  monitor::MonitorConfig monitor;
  bool monitor_enabled = true;
  std::vector<double> schedule = {0.2, 0.4, 0.6, 0.6, 0.8, 0.8};
  std::uint64_t seed = 0;
  int workers = 1;
  std::optional<metrics::CrOptions> cr;
  bool compare_baseline = false;
  /** Tokenizers for identifier complexity; the backend vocabulary when empty. */
  std::vector<std::filesystem::path> complexity_vocabs;

  void validate() const {
    plan.validate();
    if (schedule.empty()) throw Error("config: empty temperature schedule");
    if (schedule.size() > 64) throw Error("config: schedule longer than 64 trials");
    for (double t : schedule)
      if (!(t > 0.0)) throw Error("config: schedule temperatures must be positive");
    if (workers < 1) throw Error("config: workers must be >= 1");
    if (backend.vocab_path.empty()) throw Error("config: backend.vocab is required");
    if (backend.kind == BackendConfig::Kind::mock && backend.mock_table.empty())
      throw Error("config: backend.mock_table is required for the mock backend");
    if (backend.kind == BackendConfig::Kind::remote && backend.endpoint.empty())
      throw Error("config: backend.endpoint is required for the remote backend");
  }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, std::string rel) {
  if (rel.empty()) return {};
  std::filesystem::path p(std::move(rel));
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace detail

/** Parse a config object; relative paths resolve against `base_dir` (the
 *  config file's directory) so a config travels with its fixtures. */
inline RunConfig run_config_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  if (j.contains("prompt")) {
    const auto& p = j["prompt"];
    c.plan.strategy = lm::parse_strategy(p.value("strategy", "standard"));
    c.plan.total_context = p.value("total_context", c.plan.total_context);
    c.plan.generation_budget = p.value("generation_budget", c.plan.generation_budget);
    c.plan.aux_fraction = p.value("aux_fraction", c.plan.aux_fraction);
    if (p.contains("suffix_fraction")) c.plan.suffix_fraction = p["suffix_fraction"].get<double>();
  }
  if (j.contains("backend")) {
    const auto& b = j["backend"];
    std::string kind = b.value("kind", "mock");
    if (kind == "mock")
      c.backend.kind = BackendConfig::Kind::mock;
    else if (kind == "remote")
      c.backend.kind = BackendConfig::Kind::remote;
    else
      throw Error("config: unknown backend kind \"" + kind + "\"");
    c.backend.vocab_path = detail::resolve(base_dir, b.value("vocab", ""));
    c.backend.mock_table = detail::resolve(base_dir, b.value("mock_table", ""));
    c.backend.hallucination_bias = b.value("hallucination_bias", 1.0);
    c.backend.endpoint = b.value("endpoint", "");
    c.backend.timeout_s = b.value("timeout_s", 30.0);
  }
  if (j.contains("provider")) {
    const auto& p = j["provider"];
    std::string kind = p.value("kind", "none");
    if (kind == "none")
      c.provider.kind = suggest::ProviderConfig::Kind::none;
    else if (kind == "fixture")
      c.provider.kind = suggest::ProviderConfig::Kind::fixture;
    else if (kind == "lsp")
      c.provider.kind = suggest::ProviderConfig::Kind::lsp;
    else
      throw Error("config: unknown provider kind \"" + kind + "\"");
    c.provider.fixture_path = detail::resolve(base_dir, p.value("fixture", ""));
    c.provider.server_command = p.value("server_command", "");
    c.provider.workspace_root = detail::resolve(base_dir, p.value("workspace_root", ""));
    c.provider.timeout_ms = p.value("timeout_ms", 10000);
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    c.sampler.top_p = s.value("top_p", c.sampler.top_p);
    if (s.contains("mask_penalty")) c.sampler.mask_penalty = s["mask_penalty"].get<float>();
  }
  if (j.contains("monitor")) {
    const auto& m = j["monitor"];
    c.monitor_enabled = m.value("enabled", true);
    std::string on_empty = m.value("on_empty", "abandon");
    if (on_empty == "abandon")
      c.monitor.on_empty = monitor::OnEmpty::abandon;
    else if (on_empty == "unconstrained")
      c.monitor.on_empty = monitor::OnEmpty::unconstrained;
    else
      throw Error("config: unknown on_empty policy \"" + on_empty + "\"");
  }
  if (j.contains("schedule")) c.schedule = j["schedule"].get<std::vector<double>>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.workers = j.value("workers", 1);
  if (j.contains("cr")) {
    metrics::CrOptions cr;
    cr.build_command = j["cr"].value("build_command", "");
    cr.timeout_s = j["cr"].value("timeout_s", 600.0);
    if (!cr.build_command.empty()) c.cr = cr;
  }
  c.compare_baseline = j.value("compare_baseline", false);
  for (const auto& v : j.value("complexity_vocabs", std::vector<std::string>{}))
    c.complexity_vocabs.push_back(detail::resolve(base_dir, v));
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("config: " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

/** Hash of every field that can change a record's content. Monitor on/off is
 *  included, so a baseline run hashes differently from its mirror. */
inline std::string config_hash(const RunConfig& c) {
  Fnv1a h;
  h.update(lm::strategy_name(c.plan.strategy));
  h.update(static_cast<std::uint64_t>(c.plan.total_context));
  h.update(static_cast<std::uint64_t>(c.plan.generation_budget));
  h.update(std::to_string(c.plan.aux_fraction));
  h.update(std::to_string(c.plan.effective_suffix_fraction()));
  h.update(c.backend.kind == BackendConfig::Kind::mock ? "mock" : "remote");
  h.update(c.backend.vocab_path.string());
  h.update(c.backend.mock_table.string());
  h.update(std::to_string(c.backend.hallucination_bias));
  h.update(c.backend.endpoint);
  h.update(static_cast<std::uint64_t>(c.provider.kind));
  h.update(c.provider.fixture_path.string());
  h.update(c.provider.server_command);
  h.update(c.provider.workspace_root.string());
  h.update(static_cast<std::uint64_t>(c.provider.timeout_ms));
  h.update(std::to_string(c.sampler.top_p));
  h.update(std::to_string(c.sampler.mask_penalty));
  h.update(c.monitor.on_empty == monitor::OnEmpty::abandon ? "abandon" : "unconstrained");
  h.update(c.monitor_enabled ? "on" : "off");
  for (double t : c.schedule) h.update(std::to_string(t));
  h.update(c.seed);
  if (c.cr) {
    h.update(c.cr->build_command);
    h.update(std::to_string(c.cr->timeout_s));
  }
  for (const auto& v : c.complexity_vocabs) h.update(v.string());
  return hex64(splitmix64(h.digest()));
}

inline std::unique_ptr<lm::Backend> make_backend(const BackendConfig& b) {
  Vocabulary vocab = Vocabulary::load(b.vocab_path);
  if (b.kind == BackendConfig::Kind::mock) {
    nlohmann::json table;
    try {
      table = nlohmann::json::parse(read_file(b.mock_table));
    } catch (const nlohmann::json::exception& e) {
      throw BackendError("mock table: " + b.mock_table.string() + ": " + e.what());
    }
    return std::make_unique<lm::MockBackend>(std::move(vocab), table, b.hallucination_bias);
  }
  return std::make_unique<lm::RemoteBackend>(b.endpoint, std::move(vocab), b.timeout_s);
}

// ============================================================================
// Dataset
// ============================================================================

/**
 * Load a JSONL dataset, validating shape and cross-field consistency. All
 * problems are collected and thrown together as one DatasetError listing
 * offending line numbers, so a bad file is fixed in one pass.
 */
inline std::vector<TestCase> load_dataset(const std::filesystem::path& path) {
  std::string content = read_file(path);
  std::vector<TestCase> cases;
  std::vector<std::string> problems;
  std::set<std::string> seen_ids;

  std::istringstream in(content);
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& msg) {
      problems.push_back("line " + std::to_string(line_no) + ": " + msg);
    };
    TestCase c;
    try {
      c = nlohmann::json::parse(line).get<TestCase>();
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
      continue;
    }
    if (c.case_id.empty()) {
      fail("empty case_id");
      continue;
    }
    if (!seen_ids.insert(c.case_id).second)
      fail("duplicate case_id \"" + c.case_id + "\"");
    if (c.prefix.empty() || c.prefix.back() != '.')
      fail("prefix must be non-empty and end with '.'");
    else if (c.dot_offset != c.prefix.size() - 1)
      fail("dot_offset " + std::to_string(c.dot_offset) + " != prefix length - 1 (" +
           std::to_string(c.prefix.size() - 1) + ")");
    if (c.open_depth < 1)
      fail("open_depth must be >= 1");
    else if (!javalex::method_close_offset(c.ground_truth, c.open_depth))
      fail("ground_truth never reaches the method close at depth " +
           std::to_string(c.open_depth));
    cases.push_back(std::move(c));
  }

  if (!problems.empty()) {
    std::string msg = path.string() + ": " + std::to_string(problems.size()) + " problem(s)";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DatasetError(msg);
  }
  return cases;
}

/**
 * Derive cases from a source file: every dereference site the trigger
 * detector would fire on whose method close is reachable becomes a
 * candidate; at most max_cases survive, picked by uniform index striding so
 * the kept sites spread over the file instead of clustering at the top.
 */
inline std::vector<TestCase> derive_cases(std::string_view source, const std::string& file,
                                          const std::filesystem::path& workspace_root,
                                          int max_cases) {
  if (max_cases < 1) throw Error("derive_cases: max_cases must be >= 1");

  struct Site {
    std::size_t dot_offset;
    int open_depth;
    std::size_t close_offset;  // absolute, one past the '}'
  };
  std::vector<Site> sites;

  auto tokens = javalex::lex(source);
  int depth = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (t.kind == javalex::Kind::punct) {
      if (t.text == "{") ++depth;
      if (t.text == "}") --depth;
      continue;
    }
    if (!t.is(javalex::Kind::op, ".") || i == 0 || depth < 1) continue;
    monitor::TriggerContext ctx{source, t.offset + 1};
    if (!monitor::pre_trigger(ctx)) continue;
    auto close = javalex::method_close_offset(source.substr(t.offset + 1), depth);
    if (!close) continue;
    sites.push_back(Site{t.offset, depth, t.offset + 1 + *close});
  }

  std::vector<std::size_t> picks;
  const std::size_t n = sites.size();
  if (static_cast<int>(n) <= max_cases) {
    picks.resize(n);
    std::iota(picks.begin(), picks.end(), 0);
  } else {
    for (int i = 0; i < max_cases; ++i)
      picks.push_back(static_cast<std::size_t>(i) * n / static_cast<std::size_t>(max_cases));
    picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
  }

  std::vector<TestCase> cases;
  for (std::size_t idx : picks) {
    const Site& s = sites[idx];
    TestCase c;
    c.case_id = file + "#" + std::to_string(s.dot_offset);
    c.workspace_root = workspace_root;
    c.file = file;
    c.prefix = std::string(source.substr(0, s.dot_offset + 1));
    c.ground_truth = std::string(source.substr(s.dot_offset + 1, s.close_offset - s.dot_offset - 1));
    c.suffix = std::string(source.substr(s.close_offset));
    c.dot_offset = s.dot_offset;
    c.open_depth = s.open_depth;
    cases.push_back(std::move(c));
  }
  return cases;
}

// ============================================================================
// Scoring records
// ============================================================================

struct TrialScores {
  int nim = 0;
  double ism = 0.0;
  double pm = 0.0;
  std::optional<int> cr;
  std::string cr_note;
};

/** One records-file line: the generation plus its scores and the case's
 *  next-identifier complexity (so reports need nothing but this file). */
struct ScoredRecord {
  decode::GenerationRecord record;
  TrialScores scores;
  std::optional<double> next_id_complexity;
};

inline void to_json(nlohmann::json& j, const ScoredRecord& s) {
  to_json(j, s.record);
  nlohmann::json sc{{"nim", s.scores.nim}, {"ism", s.scores.ism}, {"pm", s.scores.pm}};
  sc["cr"] = s.scores.cr ? nlohmann::json(*s.scores.cr) : nlohmann::json();
  if (!s.scores.cr_note.empty()) sc["cr_note"] = s.scores.cr_note;
  j["scores"] = std::move(sc);
  j["next_id_complexity"] =
      s.next_id_complexity ? nlohmann::json(*s.next_id_complexity) : nlohmann::json();
}

inline void from_json(const nlohmann::json& j, ScoredRecord& s) {
  from_json(j, s.record);
  const auto& sc = j.at("scores");
  s.scores.nim = sc.at("nim").get<int>();
  s.scores.ism = sc.at("ism").get<double>();
  s.scores.pm = sc.at("pm").get<double>();
  if (sc.contains("cr") && !sc["cr"].is_null()) s.scores.cr = sc["cr"].get<int>();
  s.scores.cr_note = sc.value("cr_note", std::string());
  if (j.contains("next_id_complexity") && !j["next_id_complexity"].is_null())
    s.next_id_complexity = j["next_id_complexity"].get<double>();
}

/**
 * Score one trial. Abandoned generations count as empty (NIM 0, zero-length
 * prefixes, CR 0 without running a build); everything else is scored on the
 * text truncated at the method close.
 */
inline TrialScores score_trial(const TestCase& c, const decode::GenerationRecord& r,
                               const std::optional<metrics::CrOptions>& cr_options) {
  TrialScores s;
  const bool abandoned = r.stop == decode::StopReason::abandoned;
  std::string gen = abandoned ? std::string() : metrics::truncate_at_method_close(r.text, c.open_depth);
  s.nim = metrics::nim(c.ground_truth, gen);
  s.ism = metrics::ism(c.ground_truth, gen);
  s.pm = metrics::pm(c.ground_truth, gen);
  if (abandoned) {
    if (cr_options && !cr_options->build_command.empty()) {
      s.cr = 0;
      s.cr_note = "abandoned";
    } else {
      s.cr_note = "no build command configured";
    }
    return s;
  }
  try {
    auto outcome = metrics::compilation_rate(c, gen, cr_options);
    s.cr = outcome.score;
    s.cr_note = outcome.note;
  } catch (const std::exception& e) {
    s.cr_note = std::string("cr failed: ") + e.what();
  }
  return s;
}

// ============================================================================
// Report
// ============================================================================

struct RunReport {
  std::string config_hash;
  int case_count = 0;
  int trials_per_case = 0;
  std::vector<int> ks;
  /** metric name -> k -> mean score@k over cases. Metrics: nim, ism, pm, cr. */
  std::map<std::string, std::map<int, double>> scores;
  int cr_case_count = 0;  // cases where every trial produced a CR value

  struct Bucket {
    int case_count = 0;
    std::map<std::string, std::map<int, double>> scores;
  };
  std::map<std::string, Bucket> buckets;
  int unbucketed_case_count = 0;

  double mean_wall_ms = 0.0;
  double mean_triggers_per_trial = 0.0;
  int abandoned_trials = 0;
  int error_trials = 0;

  std::optional<std::string> baseline_hash;
  std::map<std::string, std::map<int, double>> baseline_scores;
  double mean_slowdown_pct = 0.0;  // meaningful only when baseline_hash is set
};

inline void to_json(nlohmann::json& j, const RunReport& r) {
  j = nlohmann::json{{"config_hash", r.config_hash},
                     {"case_count", r.case_count},
                     {"trials_per_case", r.trials_per_case},
                     {"ks", r.ks},
                     {"scores", r.scores},
                     {"cr_case_count", r.cr_case_count},
                     {"unbucketed_case_count", r.unbucketed_case_count},
                     {"mean_wall_ms", r.mean_wall_ms},
                     {"mean_triggers_per_trial", r.mean_triggers_per_trial},
                     {"abandoned_trials", r.abandoned_trials},
                     {"error_trials", r.error_trials}};
  nlohmann::json buckets = nlohmann::json::object();
  for (const auto& [label, b] : r.buckets)
    buckets[label] = {{"case_count", b.case_count}, {"scores", b.scores}};
  j["complexity_buckets"] = std::move(buckets);
  if (r.baseline_hash) {
    j["baseline"] = {{"config_hash", *r.baseline_hash},
                     {"scores", r.baseline_scores},
                     {"mean_slowdown_pct", r.mean_slowdown_pct}};
  }
}

namespace detail {

struct CaseTrials {
  std::vector<const ScoredRecord*> trials;  // indexed by trial_index
};

inline std::map<int, double> score_curve(const std::vector<double>& per_trial,
                                         const std::vector<int>& ks) {
  std::map<int, double> out;
  for (int k : ks) out[k] = metrics::score_at_k(per_trial, k);
  return out;
}

inline void accumulate(std::map<std::string, std::map<int, double>>& sums,
                       const std::string& metric, const std::map<int, double>& curve) {
  for (auto [k, v] : curve) sums[metric][k] += v;
}

inline void average(std::map<std::string, std::map<int, double>>& sums,
                    const std::string& metric, int denominator) {
  if (denominator == 0) {
    sums.erase(metric);
    return;
  }
  for (auto& [k, v] : sums[metric]) v /= static_cast<double>(denominator);
}

}  // namespace detail

/**
 * Fold scored records into aggregates. The records may mix one monitor-on
 * and one monitor-off configuration (a compare_baseline run); the monitor-on
 * lines are the report subject, the others feed the baseline block and the
 * slowdown figure. ks defaults to 1..n.
 */
inline RunReport build_report(const std::vector<ScoredRecord>& lines, std::vector<int> ks = {}) {
  if (lines.empty()) throw Error("build_report: no records");

  std::map<std::string, std::map<std::string, detail::CaseTrials>> by_config;  // hash -> case -> trials
  std::map<std::string, bool> config_monitored;
  for (const ScoredRecord& line : lines) {
    by_config[line.record.config_hash][line.record.case_id].trials.push_back(&line);
    auto [it, inserted] = config_monitored.emplace(line.record.config_hash,
                                                   line.record.monitor_enabled);
    if (!inserted && it->second != line.record.monitor_enabled)
      throw Error("build_report: config hash " + line.record.config_hash +
                  " mixes monitor on and off records");
  }

  std::vector<std::string> monitored, plain;
  for (auto& [hash, is_on] : config_monitored) (is_on ? monitored : plain).push_back(hash);
  if (monitored.size() > 1)
    throw Error("build_report: records mix " + std::to_string(monitored.size()) +
                " monitor-on configurations");
  if (monitored.empty() && plain.size() > 1)
    throw Error("build_report: records mix multiple configurations");
  const std::string primary = monitored.empty() ? plain.front() : monitored.front();
  std::optional<std::string> baseline;
  if (!monitored.empty() && !plain.empty()) {
    if (plain.size() > 1) throw Error("build_report: multiple baseline configurations");
    baseline = plain.front();
  }

  auto trials_of = [](const detail::CaseTrials& ct) {
    std::vector<const ScoredRecord*> ordered = ct.trials;
    std::sort(ordered.begin(), ordered.end(),
              [](const ScoredRecord* a, const ScoredRecord* b) {
                return a->record.trial_index < b->record.trial_index;
              });
    return ordered;
  };

  RunReport report;
  report.config_hash = primary;

  // Every case must carry the same trial count; ragged records mean an
  // interrupted run was aggregated without resuming it first.
  int n = -1;
  for (auto& [case_id, ct] : by_config[primary]) {
    if (n < 0)
      n = static_cast<int>(ct.trials.size());
    else if (static_cast<int>(ct.trials.size()) != n)
      throw Error("build_report: case \"" + case_id + "\" has " +
                  std::to_string(ct.trials.size()) + " trials, expected " + std::to_string(n));
  }
  report.trials_per_case = n;
  if (ks.empty())
    for (int k = 1; k <= n; ++k) ks.push_back(k);
  for (int k : ks)
    if (k < 1 || k > n)
      throw Error("build_report: k = " + std::to_string(k) + " outside [1, " +
                  std::to_string(n) + "]");
  report.ks = ks;

  auto aggregate_config =
      [&](const std::string& hash,
          std::map<std::string, std::map<int, double>>& out) -> std::pair<int, int> {
    int cases = 0, cr_cases = 0;
    for (auto& [case_id, ct] : by_config[hash]) {
      auto ordered = trials_of(ct);
      ++cases;
      std::vector<double> nim_v, ism_v, pm_v, cr_v;
      bool cr_complete = true;
      for (const ScoredRecord* s : ordered) {
        nim_v.push_back(s->scores.nim);
        ism_v.push_back(s->scores.ism);
        pm_v.push_back(s->scores.pm);
        if (s->scores.cr)
          cr_v.push_back(*s->scores.cr);
        else
          cr_complete = false;
      }
      detail::accumulate(out, "nim", detail::score_curve(nim_v, ks));
      detail::accumulate(out, "ism", detail::score_curve(ism_v, ks));
      detail::accumulate(out, "pm", detail::score_curve(pm_v, ks));
      if (cr_complete) {
        detail::accumulate(out, "cr", detail::score_curve(cr_v, ks));
        ++cr_cases;
      }
    }
    detail::average(out, "nim", cases);
    detail::average(out, "ism", cases);
    detail::average(out, "pm", cases);
    detail::average(out, "cr", cr_cases);
    return {cases, cr_cases};
  };

  auto [cases, cr_cases] = aggregate_config(primary, report.scores);
  report.case_count = cases;
  report.cr_case_count = cr_cases;

  // Complexity buckets over the primary records.
  std::map<std::string, std::map<std::string, detail::CaseTrials>> bucket_cases;
  for (auto& [case_id, ct] : by_config[primary]) {
    auto c = ct.trials.front()->next_id_complexity;
    if (!c || metrics::complexity_bucket(*c) < 0) {
      ++report.unbucketed_case_count;
      continue;
    }
    bucket_cases[metrics::bucket_label(metrics::complexity_bucket(*c))][case_id] = ct;
  }
  for (auto& [label, cmap] : bucket_cases) {
    RunReport::Bucket b;
    b.case_count = static_cast<int>(cmap.size());
    for (auto& [case_id, ct] : cmap) {
      auto ordered = trials_of(ct);
      std::vector<double> nim_v, ism_v, pm_v;
      for (const ScoredRecord* s : ordered) {
        nim_v.push_back(s->scores.nim);
        ism_v.push_back(s->scores.ism);
        pm_v.push_back(s->scores.pm);
      }
      detail::accumulate(b.scores, "nim", detail::score_curve(nim_v, ks));
      detail::accumulate(b.scores, "ism", detail::score_curve(ism_v, ks));
      detail::accumulate(b.scores, "pm", detail::score_curve(pm_v, ks));
    }
    detail::average(b.scores, "nim", b.case_count);
    detail::average(b.scores, "ism", b.case_count);
    detail::average(b.scores, "pm", b.case_count);
    report.buckets[label] = std::move(b);
  }

  // Timing and stop-reason tallies over primary records.
  double wall = 0.0, triggers = 0.0;
  int trial_count = 0;
  for (auto& [case_id, ct] : by_config[primary]) {
    for (const ScoredRecord* s : ct.trials) {
      ++trial_count;
      wall += s->record.wall_time_ms;
      for (const auto& e : s->record.events)
        if (std::holds_alternative<decode::TriggerEvent>(e)) triggers += 1.0;
      if (s->record.stop == decode::StopReason::abandoned) ++report.abandoned_trials;
      if (s->record.stop == decode::StopReason::error) ++report.error_trials;
    }
  }
  if (trial_count > 0) {
    report.mean_wall_ms = wall / trial_count;
    report.mean_triggers_per_trial = triggers / trial_count;
  }

  if (baseline) {
    report.baseline_hash = baseline;
    aggregate_config(*baseline, report.baseline_scores);
    // Per-case slowdown: mean monitored wall time over mean plain wall time.
    double slowdown_sum = 0.0;
    int slowdown_cases = 0;
    for (auto& [case_id, ct] : by_config[primary]) {
      auto base_it = by_config[*baseline].find(case_id);
      if (base_it == by_config[*baseline].end()) continue;
      auto mean_wall = [](const detail::CaseTrials& t) {
        double sum = 0.0;
        for (const ScoredRecord* s : t.trials) sum += s->record.wall_time_ms;
        return t.trials.empty() ? 0.0 : sum / static_cast<double>(t.trials.size());
      };
      double on = mean_wall(ct), off = mean_wall(base_it->second);
      if (off > 0.0) {
        slowdown_sum += (on / off - 1.0) * 100.0;
        ++slowdown_cases;
      }
    }
    if (slowdown_cases > 0) report.mean_slowdown_pct = slowdown_sum / slowdown_cases;
  }

  return report;
}

/** Long-form CSV: config,metric,k,value; one row per aggregate cell. */
inline std::string report_csv(const RunReport& report) {
  std::ostringstream out;
  out << "config,metric,k,value\n";
  auto rows = [&](const std::string& config,
                  const std::map<std::string, std::map<int, double>>& scores) {
    for (const auto& [metric, curve] : scores)
      for (const auto& [k, v] : curve)
        out << config << "," << metric << "," << k << "," << v << "\n";
  };
  rows("monitored", report.scores);
  if (report.baseline_hash) rows("baseline", report.baseline_scores);
  return out.str();
}

// ============================================================================
// Records file
// ============================================================================

inline std::vector<ScoredRecord> load_records(const std::filesystem::path& path) {
  std::string content = read_file(path);
  std::vector<ScoredRecord> out;
  std::istringstream in(content);
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<ScoredRecord>());
    } catch (const std::exception& e) {
      throw DatasetError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ============================================================================
// run
// ============================================================================

struct RunResult {
  RunReport report;
  std::filesystem::path records_path;
  int generated_trials = 0;
  int skipped_trials = 0;
};

/**
 * Evaluate `cases` under `config`, appending scored records to
 * out_dir/records.jsonl and writing report.json / report.csv. With resume,
 * trials already present in the records file (same config hash, case id and
 * trial index) are not re-run. compare_baseline additionally runs every case
 * with the monitor off under the same per-trial seeds.
 */
inline RunResult run(const RunConfig& config, const std::vector<TestCase>& cases,
                     const std::filesystem::path& out_dir, bool resume = false) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  RunResult result;
  result.records_path = out_dir / "records.jsonl";

  struct Variant {
    RunConfig config;
    std::string hash;
  };
  std::vector<Variant> variants;
  variants.push_back({config, config_hash(config)});
  if (config.compare_baseline && config.monitor_enabled) {
    RunConfig off = config;
    off.monitor_enabled = false;
    variants.push_back({off, config_hash(off)});
  }

  std::set<std::tuple<std::string, std::string, int>> done;
  if (resume && std::filesystem::exists(result.records_path)) {
    for (const ScoredRecord& s : load_records(result.records_path))
      done.insert({s.record.config_hash, s.record.case_id, s.record.trial_index});
  } else {
    write_file(result.records_path, "");
  }

  // Complexity tokenizers: explicit list, or the backend vocabulary.
  std::vector<Vocabulary> complexity_vocabs;
  if (config.complexity_vocabs.empty()) {
    complexity_vocabs.push_back(Vocabulary::load(config.backend.vocab_path));
  } else {
    for (const auto& p : config.complexity_vocabs) complexity_vocabs.push_back(Vocabulary::load(p));
  }
  std::vector<const Vocabulary*> tokenizer_ptrs;
  for (const auto& v : complexity_vocabs) tokenizer_ptrs.push_back(&v);

  std::shared_ptr<suggest::SuggestionProvider> provider;
  if (config.monitor_enabled && config.provider.kind != suggest::ProviderConfig::Kind::none)
    provider = suggest::make_provider(config.provider);

  struct Job {
    const Variant* variant;
    const TestCase* testcase;
  };
  std::vector<Job> jobs;
  for (const Variant& v : variants)
    for (const TestCase& c : cases) jobs.push_back({&v, &c});

  std::ofstream records_out(result.records_path, std::ios::app | std::ios::binary);
  if (!records_out) throw Error("cannot open records file: " + result.records_path.string());

  std::mutex write_mutex;
  std::atomic<std::size_t> next_job{0};
  std::atomic<int> generated{0}, skipped{0};
  std::vector<std::string> fatal;
  std::mutex fatal_mutex;

  auto worker = [&]() {
    std::unique_ptr<lm::Backend> backend;
    try {
      backend = make_backend(config.backend);
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(fatal_mutex);
      fatal.push_back(e.what());
      return;
    }
    for (;;) {
      std::size_t i = next_job.fetch_add(1);
      if (i >= jobs.size()) break;
      const Job& job = jobs[i];
      const TestCase& c = *job.testcase;

      std::optional<double> complexity;
      try {
        if (auto name = metrics::next_identifier(c.ground_truth))
          complexity = metrics::identifier_complexity(*name, tokenizer_ptrs);
      } catch (const std::exception& e) {
        log(LogLevel::warn, "complexity for case " + c.case_id + ": " + e.what());
      }

      decode::GenerateOptions options;
      options.plan = job.variant->config.plan;
      options.sampler = job.variant->config.sampler;
      options.monitor = job.variant->config.monitor;
      options.monitor_enabled = job.variant->config.monitor_enabled;
      options.config_hash = job.variant->hash;

      for (std::size_t trial = 0; trial < job.variant->config.schedule.size(); ++trial) {
        if (done.count({job.variant->hash, c.case_id, static_cast<int>(trial)})) {
          skipped.fetch_add(1);
          continue;
        }
        options.sampler.temperature = job.variant->config.schedule[trial];
        options.sampler.seed = derive_seed(job.variant->config.seed, c.case_id,
                                           static_cast<int>(trial));
        decode::GenerationRecord record = decode::generate(
            c, *backend, options.monitor_enabled ? provider.get() : nullptr, options);
        record.trial_index = static_cast<int>(trial);

        ScoredRecord scored;
        scored.scores = score_trial(c, record, job.variant->config.cr);
        scored.record = std::move(record);
        scored.next_id_complexity = complexity;

        nlohmann::json line;
        to_json(line, scored);
        {
          std::lock_guard<std::mutex> lock(write_mutex);
          records_out << line.dump() << "\n";
          records_out.flush();
        }
        generated.fetch_add(1);
        log(LogLevel::info, "case " + c.case_id + " trial " + std::to_string(trial) +
                                " [" + job.variant->hash.substr(0, 8) + "] done");
      }
    }
  };

  std::vector<std::thread> threads;
  int worker_count = std::max(1, config.workers);
  for (int i = 0; i < worker_count; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  records_out.close();

  if (!fatal.empty()) throw Error("run: worker failed: " + fatal.front());

  result.generated_trials = generated.load();
  result.skipped_trials = skipped.load();

  std::set<std::string> wanted;
  for (const Variant& v : variants) wanted.insert(v.hash);
  std::vector<ScoredRecord> lines;
  for (ScoredRecord& s : load_records(result.records_path))
    if (wanted.count(s.record.config_hash)) lines.push_back(std::move(s));
  result.report = build_report(lines);

  nlohmann::json report_json;
  to_json(report_json, result.report);
  write_file(out_dir / "report.json", report_json.dump(2) + "\n");
  write_file(out_dir / "report.csv", report_csv(result.report));
  return result;
}

}  // namespace mgd::harness
