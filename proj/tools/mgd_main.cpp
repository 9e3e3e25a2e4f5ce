/**
 * mgd - command-line front end for monitor-guided decoding.
 *
 * Subcommands:
 *   complete    one generation for a single case, completion on stdout
 *   eval        batch evaluation over a JSONL dataset
 *   score       recompute aggregates from a records file
 *   derive      mine dereference-site cases from a source file
 *   mask-debug  inspect the admission mask for a suggestion set
 *
 * Exit codes: 0 success, 1 runtime failure, 2 usage error.
 */

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mgd/mgd.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string monitor_override;  // "", "on", "off"
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

mgd::harness::RunConfig load_config(const CommonFlags& flags) {
  mgd::harness::RunConfig config = mgd::harness::load_run_config(flags.config_path);
  if (flags.monitor_override == "on") config.monitor_enabled = true;
  if (flags.monitor_override == "off") config.monitor_enabled = false;
  if (flags.seed) config.seed = *flags.seed;
  if (flags.workers) config.workers = *flags.workers;
  return config;
}

/** Build a case on the fly from a workspace file and a dot offset. */
mgd::TestCase case_from_file(const std::filesystem::path& workspace, const std::string& file,
                             std::size_t offset) {
  std::string content = mgd::read_file(workspace / file);
  if (offset >= content.size() || content[offset] != '.')
    throw mgd::Error("no '.' at byte offset " + std::to_string(offset) + " of " + file);
  mgd::TestCase c;
  c.case_id = file + "#" + std::to_string(offset);
  c.workspace_root = workspace;
  c.file = file;
  c.prefix = content.substr(0, offset + 1);
  c.dot_offset = offset;
  int depth = 0;
  for (const auto& t : mgd::javalex::lex(c.prefix)) {
    if (t.kind != mgd::javalex::Kind::punct) continue;
    if (t.text == "{") ++depth;
    if (t.text == "}") --depth;
  }
  c.open_depth = depth;
  std::string continuation = content.substr(offset + 1);
  if (depth >= 1) {
    if (auto close = mgd::javalex::method_close_offset(continuation, depth)) {
      c.ground_truth = continuation.substr(0, *close);
      c.suffix = continuation.substr(*close);
      return c;
    }
  }
  c.ground_truth = continuation;
  c.suffix = std::string();
  return c;
}

int cmd_complete(const CommonFlags& flags, const std::string& case_path,
                 const std::string& workspace, const std::string& file, long long offset,
                 double temperature, const std::string& out_path) {
  mgd::harness::RunConfig config = load_config(flags);

  mgd::TestCase testcase;
  if (!case_path.empty()) {
    testcase = nlohmann::json::parse(mgd::read_file(case_path)).get<mgd::TestCase>();
  } else {
    testcase = case_from_file(workspace, file, static_cast<std::size_t>(offset));
  }

  if (config.monitor_enabled &&
      config.provider.kind == mgd::suggest::ProviderConfig::Kind::none)
    throw mgd::Error(
        "monitor is enabled but the config has no suggestion provider; "
        "pass --monitor off or configure one");

  auto backend = mgd::harness::make_backend(config.backend);
  std::shared_ptr<mgd::suggest::SuggestionProvider> provider;
  if (config.monitor_enabled) provider = mgd::suggest::make_provider(config.provider);

  mgd::decode::GenerateOptions options;
  options.plan = config.plan;
  options.sampler = config.sampler;
  options.sampler.temperature = temperature;
  options.sampler.seed = mgd::derive_seed(config.seed, testcase.case_id, 0);
  options.monitor = config.monitor;
  options.monitor_enabled = config.monitor_enabled;
  options.config_hash = mgd::harness::config_hash(config);

  mgd::decode::GenerationRecord record =
      mgd::decode::generate(testcase, *backend, provider.get(), options);

  if (!out_path.empty()) {
    nlohmann::json j;
    to_json(j, record);
    mgd::write_file(out_path, j.dump(2) + "\n");
  }
  std::cout << record.text << "\n";
  if (record.stop == mgd::decode::StopReason::error) {
    std::cerr << "mgd: generation error: " << record.error << "\n";
    return 1;
  }
  std::cerr << "mgd: stop=" << mgd::decode::stop_reason_name(record.stop)
            << " tokens=" << record.token_ids.size() << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& dataset_path,
             const std::string& out_dir, bool resume) {
  mgd::harness::RunConfig config = load_config(flags);
  std::vector<mgd::TestCase> cases = mgd::harness::load_dataset(dataset_path);
  mgd::harness::RunResult result = mgd::harness::run(config, cases, out_dir, resume);

  std::cout << "cases: " << result.report.case_count
            << "  trials/case: " << result.report.trials_per_case
            << "  generated: " << result.generated_trials
            << "  skipped: " << result.skipped_trials << "\n";
  for (const auto& [metric, curve] : result.report.scores) {
    std::cout << metric << ":";
    for (const auto& [k, v] : curve) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "  @%d %.4f", k, v);
      std::cout << buf;
    }
    std::cout << "\n";
  }
  if (result.report.baseline_hash) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "mean slowdown vs baseline: %.1f%%\n",
                  result.report.mean_slowdown_pct);
    std::cout << buf;
  }
  std::cout << "records: " << result.records_path.string() << "\n";
  return 0;
}

int cmd_score(const std::string& records_path, const std::string& k_spec,
              const std::string& out_json, const std::string& out_csv) {
  std::vector<mgd::harness::ScoredRecord> records = mgd::harness::load_records(records_path);
  if (records.empty()) throw mgd::Error("no records in " + records_path);

  int n = 0;
  for (const auto& r : records) n = std::max(n, r.record.trial_index + 1);

  std::vector<int> ks;
  if (!k_spec.empty()) {
    std::istringstream in(k_spec);
    std::string part;
    while (std::getline(in, part, ',')) {
      int k = std::stoi(part);
      if (k < 1 || k > n) {
        std::cerr << "mgd: k = " << k << " outside [1, " << n << "]\n";
        return 2;
      }
      ks.push_back(k);
    }
  }

  mgd::harness::RunReport report = mgd::harness::build_report(records, ks);
  for (const auto& [metric, curve] : report.scores) {
    std::cout << metric << ":";
    for (const auto& [k, v] : curve) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "  @%d %.4f", k, v);
      std::cout << buf;
    }
    std::cout << "\n";
  }
  for (const auto& [label, bucket] : report.buckets)
    std::cout << "bucket " << label << ": " << bucket.case_count << " case(s)\n";

  nlohmann::json j;
  to_json(j, report);
  if (!out_json.empty()) mgd::write_file(out_json, j.dump(2) + "\n");
  if (!out_csv.empty()) mgd::write_file(out_csv, mgd::harness::report_csv(report));
  return 0;
}

int cmd_derive(const std::string& source_path, const std::string& file,
               const std::string& workspace, int max_cases, const std::string& out_path) {
  std::string source = mgd::read_file(source_path);
  std::string rel = file.empty() ? source_path : file;
  std::vector<mgd::TestCase> cases =
      mgd::harness::derive_cases(source, rel, workspace, max_cases);

  std::ostringstream out;
  for (const auto& c : cases) {
    nlohmann::json j;
    to_json(j, c);
    out << j.dump() << "\n";
  }
  if (out_path.empty())
    std::cout << out.str();
  else
    mgd::write_file(out_path, out.str());
  std::cerr << "mgd: derived " << cases.size() << " case(s)\n";
  return 0;
}

int cmd_mask_debug(const std::string& vocab_path, const std::string& suggestions_csv,
                   const std::string& consumed, bool as_json) {
  mgd::Vocabulary vocab = mgd::Vocabulary::load(vocab_path);
  mgd::DelimiterSet delims = mgd::DelimiterSet::java();

  std::vector<std::string> names;
  std::istringstream in(suggestions_csv);
  std::string part;
  while (std::getline(in, part, ',')) names.push_back(part);
  mgd::SuggestionSet state = mgd::SuggestionSet::from_analysis(names);
  if (state.empty()) throw mgd::Error("empty suggestion set");

  mgd::monitor::MonitorState mstate = mgd::monitor::MonitorState::active(state);
  if (!consumed.empty())
    mstate = mgd::monitor::update(mstate, consumed, delims);  // MaskViolation exits 1
  if (mstate.mode() != mgd::monitor::Mode::active)
    throw mgd::Error("consumed text \"" + consumed + "\" ends the identifier; no active mask");

  mgd::Mask mask = mgd::maskgen(mstate.residuals(), vocab, delims);

  if (as_json) {
    nlohmann::json j{{"residuals", mstate.residuals().items()},
                     {"mask_ones", mask.count()},
                     {"mask_digest", mgd::hex64(mask.digest())},
                     {"allowed", nlohmann::json::array()}};
    for (mgd::TokenId id : mask.ones()) {
      auto rule = mgd::classify_admission(vocab.token(id), mstate.residuals(), delims);
      j["allowed"].push_back(
          {{"id", id},
           {"token", vocab.token(id)},
           {"rule", rule == mgd::AdmitRule::prefix ? "prefix" : "completes_identifier"}});
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  std::cout << "residuals:";
  for (const auto& w : mstate.residuals().items())
    std::cout << " " << (w.empty() ? "(empty)" : w);
  std::cout << "\nallowed " << mask.count() << " of " << vocab.size() << " tokens:\n";
  for (mgd::TokenId id : mask.ones()) {
    auto rule = mgd::classify_admission(vocab.token(id), mstate.residuals(), delims);
    std::cout << "  " << id << "  " << nlohmann::json(vocab.token(id)).dump() << "  "
              << (rule == mgd::AdmitRule::prefix ? "prefix" : "completes_identifier") << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"monitor-guided decoding toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;

  // complete
  auto* complete = app.add_subcommand("complete", "generate one completion for a case");
  std::string case_path, workspace, file, out_path;
  long long offset = -1;
  double temperature = 0.2;
  complete->add_option("--config", flags.config_path, "run config (JSON)")->required();
  complete->add_option("--case", case_path, "case file (JSON object)");
  complete->add_option("--workspace", workspace, "workspace root (with --file/--offset)");
  complete->add_option("--file", file, "workspace-relative source file");
  complete->add_option("--offset", offset, "byte offset of the '.'");
  complete->add_option("--temperature", temperature, "sampling temperature")
      ->check(CLI::PositiveNumber);
  complete->add_option("--monitor", flags.monitor_override, "override monitor")
      ->check(CLI::IsMember({"on", "off"}));
  complete->add_option("--seed", flags.seed, "base RNG seed");
  complete->add_option("--out", out_path, "write the full generation record here");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a JSONL dataset");
  std::string dataset_path, out_dir = "mgd-out";
  bool resume = false;
  eval->add_option("--dataset", dataset_path, "dataset (JSONL)")->required();
  eval->add_option("--config", flags.config_path, "run config (JSON)")->required();
  eval->add_option("--out-dir", out_dir, "output directory");
  eval->add_flag("--resume", resume, "skip trials already in the records file");
  eval->add_option("--monitor", flags.monitor_override, "override monitor")
      ->check(CLI::IsMember({"on", "off"}));
  eval->add_option("--seed", flags.seed, "base RNG seed");
  eval->add_option("--workers", flags.workers, "worker threads")->check(CLI::PositiveNumber);

  // score
  auto* score = app.add_subcommand("score", "recompute aggregates from records");
  std::string records_path, k_spec, score_json, score_csv;
  score->add_option("--records", records_path, "records file (JSONL)")->required();
  score->add_option("--k", k_spec, "comma-separated k values (default: all)");
  score->add_option("--out", score_json, "write the report JSON here");
  score->add_option("--csv", score_csv, "write the report CSV here");

  // derive
  auto* derive = app.add_subcommand("derive", "mine cases from a source file");
  std::string source_path, derive_file, derive_workspace, derive_out;
  int max_cases = 10;
  derive->add_option("--source", source_path, "source file to mine")->required();
  derive->add_option("--file", derive_file, "workspace-relative path recorded in cases");
  derive->add_option("--workspace", derive_workspace, "workspace root recorded in cases");
  derive->add_option("--max-cases", max_cases, "cap on derived cases")
      ->check(CLI::PositiveNumber);
  derive->add_option("--out", derive_out, "output JSONL (default: stdout)");

  // mask-debug
  auto* mask_debug = app.add_subcommand("mask-debug", "inspect an admission mask");
  std::string vocab_path, suggestions_csv, consumed;
  bool mask_json = false;
  mask_debug->add_option("--vocab", vocab_path, "vocabulary (JSON)")->required();
  mask_debug->add_option("--suggestions", suggestions_csv, "comma-separated suggestion names")
      ->required();
  mask_debug->add_option("--consumed", consumed, "identifier text already generated");
  mask_debug->add_flag("--json", mask_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (complete->parsed()) {
      if (case_path.empty() && (workspace.empty() || file.empty() || offset < 0)) {
        std::cerr << "mgd: complete needs --case or all of --workspace/--file/--offset\n";
        return 2;
      }
      return cmd_complete(flags, case_path, workspace, file, offset, temperature, out_path);
    }
    if (eval->parsed()) return cmd_eval(flags, dataset_path, out_dir, resume);
    if (score->parsed()) return cmd_score(records_path, k_spec, score_json, score_csv);
    if (derive->parsed())
      return cmd_derive(source_path, derive_file, derive_workspace, max_cases, derive_out);
    if (mask_debug->parsed())
      return cmd_mask_debug(vocab_path, suggestions_csv, consumed, mask_json);
  } catch (const mgd::DatasetError& e) {
    std::cerr << "mgd: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mgd: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
