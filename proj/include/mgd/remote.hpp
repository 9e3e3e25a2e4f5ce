#pragma once

/**
 * remote.hpp - HTTP logit backend.
 *
 * Speaks a two-endpoint JSON protocol to a model server:
 *
 *   POST /v1/tokenize  {"text": "..."}            -> {"tokens": [ids]}
 *   POST /v1/logits    {"tokens": [ids],
 *                       "allowed_ids": [ids]?}    -> {"logits": [floats]}
 *                                                  | {"sparse": [[id, logit], ...]}
 *
 * allowed_ids is a hint carrying the monitor's mask so a server can return a
 * sparse vector instead of 50k floats; ids missing from a sparse reply are
 * filled with the lowest finite float, which the decoder's own masking would
 * do anyway. The client keeps the authoritative vocabulary locally because
 * maskgen needs token strings no matter where logits come from.
 */

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mgd/common.hpp"
#include "mgd/lm.hpp"
#include "mgd/vocab.hpp"

namespace mgd::lm {

class RemoteBackend final : public Backend {
 public:
  /** endpoint: "http://host:port" (or bare "host:port"). */
  RemoteBackend(const std::string& endpoint, Vocabulary vocab, double timeout_s = 30.0)
      : vocab_(std::move(vocab)), client_(normalize(endpoint)) {
    auto seconds = static_cast<time_t>(timeout_s);
    auto micros = static_cast<suseconds_t>((timeout_s - static_cast<double>(seconds)) * 1e6);
    client_.set_connection_timeout(seconds, micros);
    client_.set_read_timeout(seconds, micros);
    client_.set_write_timeout(seconds, micros);
  }

  const Vocabulary& vocab() const override { return vocab_; }

  std::vector<TokenId> encode(std::string_view text) override {
    nlohmann::json reply = post("/v1/tokenize", {{"text", std::string(text)}});
    if (!reply.contains("tokens") || !reply["tokens"].is_array())
      throw BackendError("remote tokenize: reply without a \"tokens\" array");
    return reply["tokens"].get<std::vector<TokenId>>();
  }

  LogitVector logits(const std::vector<TokenId>& context) override {
    return fetch_logits({{"tokens", context}});
  }

  LogitVector logits(const std::vector<TokenId>& context,
                     const std::vector<TokenId>& allowed) override {
    return fetch_logits({{"tokens", context}, {"allowed_ids", allowed}});
  }

 private:
  static std::string normalize(std::string endpoint) {
    if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0)
      endpoint = "http://" + endpoint;
    return endpoint;
  }

  nlohmann::json post(const std::string& path, const nlohmann::json& body) {
    auto res = client_.Post(path, body.dump(), "application/json");
    if (!res)
      throw BackendError("remote backend: no response from " + path + " (" +
                         httplib::to_string(res.error()) + ")");
    if (res->status != 200)
      throw BackendError("remote backend: " + path + " returned status " +
                         std::to_string(res->status));
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("remote backend: malformed JSON reply: ") + e.what());
    }
  }

  LogitVector fetch_logits(const nlohmann::json& body) {
    nlohmann::json reply = post("/v1/logits", body);
    if (reply.contains("logits")) {
      auto logits = reply["logits"].get<LogitVector>();
      if (logits.size() != vocab_.size())
        throw BackendError("remote backend: logits length " + std::to_string(logits.size()) +
                           " != vocabulary size " + std::to_string(vocab_.size()));
      return logits;
    }
    if (reply.contains("sparse")) {
      LogitVector logits(vocab_.size(), std::numeric_limits<float>::lowest());
      for (const auto& pair : reply["sparse"]) {
        if (!pair.is_array() || pair.size() != 2)
          throw BackendError("remote backend: malformed sparse logit entry");
        auto id = pair[0].get<TokenId>();
        if (id < 0 || static_cast<std::size_t>(id) >= logits.size())
          throw BackendError("remote backend: sparse logit id " + std::to_string(id) +
                             " out of range");
        logits[static_cast<std::size_t>(id)] = pair[1].get<float>();
      }
      return logits;
    }
    throw BackendError("remote backend: reply has neither \"logits\" nor \"sparse\"");
  }

  Vocabulary vocab_;
  httplib::Client client_;
};

}  // namespace mgd::lm
