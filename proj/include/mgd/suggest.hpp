#pragma once

/**
 * suggest.hpp - where legal member names come from.
 *
 * Two providers behind one interface: a fixture provider that replays
 * canned analysis results keyed by (file, byte offset of the '.'), and a
 * real LSP client that spawns a language server and asks for completions at
 * the dereference position. The decoder does not care which one it talks
 * to, which is what makes desk-scale evaluation hermetic.
 *
 * Completion lists come back as raw LSP items; extract_completion_names
 * distills them into monitor-usable identifiers: member-like kinds only,
 * insertText over label, truncated at the first delimiter byte so snippets
 * like "withIp(int value)" contribute exactly `withIp`.
 */

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgd/common.hpp"
#include "mgd/subprocess.hpp"
#include "mgd/vocab.hpp"

namespace mgd::suggest {

// ============================================================================
// Interface
// ============================================================================

struct SuggestionQuery {
  std::string file;     // workspace-relative path
  std::string content;  // full document text as the analysis should see it
  TextPosition position;  // cursor, immediately after the '.'
};

class SuggestionProvider {
 public:
  virtual ~SuggestionProvider() = default;

  /** Open `file` with `content`, or refresh it if already open. Must be
   *  called before query() touches the same file. */
  virtual void open_document(const std::string& file, const std::string& content) = 0;

  /** Legal member names at the query position. Empty set means the analysis
   *  has nothing to offer; errors (transport, timeout) throw ProviderError. */
  virtual SuggestionSet query(const SuggestionQuery& query) = 0;
};

// ============================================================================
// Completion item extraction
// ============================================================================

/** LSP CompletionItemKind values that can follow a member-access dot. */
inline bool member_like_kind(int kind) {
  return kind == 2 /*Method*/ || kind == 5 /*Field*/ || kind == 10 /*Property*/ ||
         kind == 20 /*EnumMember*/ || kind == 21 /*Constant*/;
}

/**
 * Completion items to identifier strings. Items with a non-member kind are
 * dropped (kind-less items kept); the text is insertText when present, else
 * label; everything from the first delimiter byte on is cut, so parameter
 * lists, snippets and trailing space never leak into the suggestion set.
 */
inline std::vector<std::string> extract_completion_names(const nlohmann::json& items,
                                                         const DelimiterSet& delims) {
  std::vector<std::string> names;
  for (const auto& item : items) {
    if (!item.is_object()) continue;
    if (item.contains("kind") && item["kind"].is_number_integer() &&
        !member_like_kind(item["kind"].get<int>()))
      continue;
    std::string text;
    if (item.contains("insertText") && item["insertText"].is_string())
      text = item["insertText"].get<std::string>();
    else if (item.contains("label") && item["label"].is_string())
      text = item["label"].get<std::string>();
    std::size_t cut = 0;
    while (cut < text.size() && !delims.contains(static_cast<unsigned char>(text[cut]))) ++cut;
    text.resize(cut);
    if (!text.empty()) names.push_back(std::move(text));
  }
  return names;
}

// ============================================================================
// Fixture provider
// ============================================================================

/**
 * Replays analysis results recorded in a JSON file:
 *
 *   {"suggestions": [{"file": "src/Main.java", "offset": 57,
 *                     "items": ["withIp", "withPort"]}, ...]}
 *
 * offset is the byte offset of the '.' in the document content. A query at
 * a site with no entry returns the empty set, which exercises the same
 * policy path a real analysis with no results would.
 */
class FixtureProvider final : public SuggestionProvider {
 public:
  explicit FixtureProvider(const std::filesystem::path& fixture_path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(fixture_path));
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError("fixture: " + fixture_path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("suggestions") || !j["suggestions"].is_array())
      throw ProviderError("fixture: expected object with a \"suggestions\" array");
    for (const auto& entry : j["suggestions"]) {
      auto file = entry.at("file").get<std::string>();
      auto offset = entry.at("offset").get<std::size_t>();
      table_[{std::move(file), offset}] = entry.at("items").get<std::vector<std::string>>();
    }
  }

  void open_document(const std::string& file, const std::string& content) override {
    std::lock_guard<std::mutex> lock(mutex_);
    open_[file] = content;
  }

  SuggestionSet query(const SuggestionQuery& query) override {
    std::lock_guard<std::mutex> lock(mutex_);
    auto doc = open_.find(query.file);
    if (doc == open_.end())
      throw ProviderError("fixture: document not open: " + query.file);
    std::size_t cursor = byte_offset_at(doc->second, query.position);
    if (cursor == 0) throw ProviderError("fixture: query position before any '.'");
    auto hit = table_.find({query.file, cursor - 1});
    if (hit == table_.end()) {
      log(LogLevel::debug, "fixture: no entry for " + query.file + " @ " +
                               std::to_string(cursor - 1));
      return SuggestionSet();
    }
    return SuggestionSet::from_analysis(hit->second);
  }

 private:
  std::mutex mutex_;
  std::map<std::pair<std::string, std::size_t>, std::vector<std::string>> table_;
  std::map<std::string, std::string> open_;
};

// ============================================================================
// LSP client
// ============================================================================

/**
 * A minimal Language Server Protocol client: spawns the server command under
 * /bin/sh, speaks Content-Length framing over its stdin/stdout, performs the
 * initialize handshake, syncs documents with didOpen/didChange (full text)
 * and asks textDocument/completion at trigger points. All calls are
 * serialized; every read observes the configured timeout and surfaces as
 * ProviderError, which the monitor maps to its empty-suggestion policy.
 */
class LspClient final : public SuggestionProvider {
 public:
  LspClient(const std::string& server_command, const std::filesystem::path& workspace_root,
            int timeout_ms = 10000,
            const DelimiterSet& delims = DelimiterSet::java())
      : workspace_(std::filesystem::absolute(workspace_root)),
        timeout_ms_(timeout_ms),
        delims_(delims),
        child_(subprocess::Child::spawn(server_command)),
        reader_(child_.stdout_fd()) {
    nlohmann::json params = {
        {"processId", static_cast<int>(::getpid())},
        {"rootUri", uri_for("")},
        {"capabilities", nlohmann::json::object()},
    };
    (void)request("initialize", params);
    notify("initialized", nlohmann::json::object());
  }

  ~LspClient() override {
    try {
      (void)request("shutdown", nlohmann::json());
      notify("exit", nlohmann::json());
      child_.wait_until(subprocess::deadline_in_ms(1000));
    } catch (...) {
      // The destructor of child_ kills whatever is left.
    }
  }

  void open_document(const std::string& file, const std::string& content) override {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = versions_.find(file);
    if (it == versions_.end()) {
      versions_[file] = 1;
      notify("textDocument/didOpen",
             {{"textDocument",
               {{"uri", uri_for(file)},
                {"languageId", "java"},
                {"version", 1},
                {"text", content}}}});
    } else {
      int version = ++it->second;
      notify("textDocument/didChange",
             {{"textDocument", {{"uri", uri_for(file)}, {"version", version}}},
              {"contentChanges", nlohmann::json::array({{{"text", content}}})}});
    }
  }

  SuggestionSet query(const SuggestionQuery& query) override {
    std::lock_guard<std::mutex> lock(mutex_);
    if (versions_.find(query.file) == versions_.end())
      throw ProviderError("lsp: document not open: " + query.file);
    nlohmann::json params = {
        {"textDocument", {{"uri", uri_for(query.file)}}},
        {"position", {{"line", query.position.line}, {"character", query.position.character}}},
    };
    nlohmann::json result = request("textDocument/completion", params);
    nlohmann::json items = nlohmann::json::array();
    if (result.is_array())
      items = result;
    else if (result.is_object() && result.contains("items"))
      items = result["items"];
    else if (!result.is_null())
      throw ProviderError("lsp: malformed completion result");
    return SuggestionSet::from_analysis(extract_completion_names(items, delims_));
  }

 private:
  std::string uri_for(const std::string& file) const {
    std::filesystem::path p = file.empty() ? workspace_ : workspace_ / file;
    return "file://" + p.string();
  }

  void send(const nlohmann::json& message) {
    std::string body = message.dump();
    std::string frame = "Content-Length: " + std::to_string(body.size()) + "\r\n\r\n" + body;
    log(LogLevel::debug, "lsp ->: " + body);
    child_.write_all(frame);
  }

  void notify(const std::string& method, const nlohmann::json& params) {
    send({{"jsonrpc", "2.0"}, {"method", method}, {"params", params}});
  }

  nlohmann::json read_message(subprocess::Deadline deadline) {
    std::optional<std::size_t> content_length;
    for (;;) {
      std::string line = reader_.read_line(deadline, "lsp header");
      if (line.empty()) break;
      constexpr std::string_view kHeader = "Content-Length:";
      if (line.size() > kHeader.size() &&
          std::string_view(line).substr(0, kHeader.size()) == kHeader) {
        content_length = static_cast<std::size_t>(
            std::stoull(line.substr(kHeader.size())));
      }
    }
    if (!content_length) throw ProviderError("lsp: frame without Content-Length");
    std::string body = reader_.read_exact(*content_length, deadline, "lsp body");
    log(LogLevel::debug, "lsp <-: " + body);
    try {
      return nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("lsp: malformed message body: ") + e.what());
    }
  }

  nlohmann::json request(const std::string& method, const nlohmann::json& params) {
    int id = next_id_++;
    send({{"jsonrpc", "2.0"}, {"id", id}, {"method", method}, {"params", params}});
    auto deadline = subprocess::deadline_in_ms(timeout_ms_);
    for (;;) {
      nlohmann::json msg;
      try {
        msg = read_message(deadline);
      } catch (const Error& e) {
        throw ProviderError(std::string("lsp: ") + e.what() + " (request \"" + method + "\")");
      }
      if (msg.contains("id") && !msg.contains("method")) {
        if (msg["id"] == id) {
          if (msg.contains("error"))
            throw ProviderError("lsp: server error for \"" + method +
                                "\": " + msg["error"].dump());
          return msg.value("result", nlohmann::json());
        }
        continue;  // response to something stale
      }
      if (msg.contains("id") && msg.contains("method")) {
        // Server-to-client request; acknowledge with a null result so
        // servers that gate on it (registerCapability etc.) keep going.
        send({{"jsonrpc", "2.0"}, {"id", msg["id"]}, {"result", nullptr}});
        continue;
      }
      // Notification (diagnostics, log messages): not ours to handle.
    }
  }

  std::filesystem::path workspace_;
  int timeout_ms_;
  DelimiterSet delims_;
  subprocess::Child child_;
  subprocess::FdReader reader_;
  std::mutex mutex_;
  std::map<std::string, int> versions_;
  int next_id_ = 1;
};

// ============================================================================
// Configuration
// ============================================================================

struct ProviderConfig {
  enum class Kind { none, fixture, lsp };
  Kind kind = Kind::none;
  std::filesystem::path fixture_path;
  std::string server_command;
  std::filesystem::path workspace_root;
  int timeout_ms = 10000;
};

inline std::unique_ptr<SuggestionProvider> make_provider(const ProviderConfig& config) {
  switch (config.kind) {
    case ProviderConfig::Kind::none:
      return nullptr;
    case ProviderConfig::Kind::fixture:
      return std::make_unique<FixtureProvider>(config.fixture_path);
    case ProviderConfig::Kind::lsp:
      return std::make_unique<LspClient>(config.server_command, config.workspace_root,
                                         config.timeout_ms);
  }
  throw Error("make_provider: corrupt provider kind");
}

}  // namespace mgd::suggest
