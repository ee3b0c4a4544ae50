// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/remote.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "kdiag/errors.hpp"

namespace kdiag::remote {

namespace {

// POSTs JSON with bounded retries on transport errors, 429, and 5xx.
// A fresh client per attempt keeps this safe under concurrent callers.
nlohmann::json post_json(const RemoteOptions& options, const std::string& path,
                         const nlohmann::json& body) {
  httplib::Headers headers;
  if (!options.auth_env.empty()) {
    if (const char* token = std::getenv(options.auth_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const std::string payload = body.dump();
  std::string last_error = "no attempts made";
  const int attempts = options.max_retries + 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(options.backoff_ms * attempt));
    }
    httplib::Client client(options.endpoint);
    client.set_connection_timeout(options.timeout_ms / 1000,
                                  (options.timeout_ms % 1000) * 1000);
    client.set_read_timeout(options.timeout_ms / 1000,
                            (options.timeout_ms % 1000) * 1000);
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw_backend("HTTP " + std::to_string(res->status) + " from " +
                    options.endpoint + path + ": " + res->body.substr(0, 200));
    }
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) {
      throw_backend("malformed JSON from " + options.endpoint + path);
    }
    return parsed;
  }
  throw_backend("request to " + options.endpoint + path + " failed after " +
                std::to_string(attempts) + " attempts (" + last_error + ")");
}

}  // namespace

HttpEmbeddingProvider::HttpEmbeddingProvider(RemoteOptions options, std::string path)
    : options_(std::move(options)), path_(std::move(path)) {
  if (options_.endpoint.empty()) throw_config("embedding endpoint is empty");
}

std::string HttpEmbeddingProvider::id() const {
  return "http-embed:" + options_.endpoint + path_ + ":" + options_.model;
}

std::vector<std::vector<double>> HttpEmbeddingProvider::embed_batch(
    const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  nlohmann::json body = {{"texts", texts}};
  if (!options_.model.empty()) body["model"] = options_.model;
  auto response = post_json(options_, path_, body);
  if (!response.contains("vectors") || !response["vectors"].is_array()) {
    throw_backend("embedding response lacks a vectors array");
  }
  std::vector<std::vector<double>> out;
  out.reserve(response["vectors"].size());
  for (const auto& vec : response["vectors"]) {
    out.push_back(vec.get<std::vector<double>>());
  }
  return out;
}

HttpScoringBackend::HttpScoringBackend(RemoteOptions options,
                                       std::string completions_path,
                                       std::string chat_path)
    : options_(std::move(options)),
      completions_path_(std::move(completions_path)),
      chat_path_(std::move(chat_path)) {
  if (options_.endpoint.empty()) throw_config("scoring endpoint is empty");
}

std::string HttpScoringBackend::id() const {
  return "http:" + options_.endpoint + ":" + options_.model;
}

scorer::ScoredOption HttpScoringBackend::score(const std::string& prompt,
                                               const std::string& option) {
  nlohmann::json body = {{"model", options_.model},
                         {"prompt", prompt + option},
                         {"max_tokens", 0},
                         {"echo", true},
                         {"logprobs", 0}};
  auto response = post_json(options_, completions_path_, body);
  if (!response.contains("choices") || response["choices"].empty()) {
    throw_backend("completions response has no choices");
  }
  const auto& choice = response["choices"][0];
  if (!choice.contains("logprobs") || choice["logprobs"].is_null()) {
    throw_backend("backend lacks logprob support");
  }
  const auto& lp = choice["logprobs"];
  if (!lp.contains("token_logprobs") || !lp.contains("text_offset")) {
    throw_backend("backend lacks logprob support");
  }
  const auto& logprobs = lp["token_logprobs"];
  const auto& offsets = lp["text_offset"];
  if (logprobs.size() != offsets.size()) {
    throw_backend("logprob/offset length mismatch in completions response");
  }
  // Sum only the tokens belonging to the appended option text.
  double nll = 0.0;
  int tokens = 0;
  for (size_t i = 0; i < logprobs.size(); ++i) {
    if (offsets[i].get<size_t>() < prompt.size()) continue;
    if (logprobs[i].is_null()) {
      throw_backend("missing logprob for an option token");
    }
    nll -= logprobs[i].get<double>();
    ++tokens;
  }
  if (tokens == 0 && !logprobs.empty()) {
    // Tokenizer merged the boundary; attribute the final token to the option.
    if (logprobs.back().is_null()) throw_backend("missing logprob for an option token");
    nll = -logprobs.back().get<double>();
    tokens = 1;
  }
  if (tokens == 0) throw_backend("no option tokens scored");
  return {nll, tokens};
}

scorer::GenerationOutput HttpScoringBackend::generate(const std::string& prompt) {
  nlohmann::json body = {
      {"model", options_.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
  auto response = post_json(options_, chat_path_, body);
  if (!response.contains("choices") || response["choices"].empty()) {
    throw_backend("chat response has no choices");
  }
  const auto& choice = response["choices"][0];
  scorer::GenerationOutput out;
  if (choice.contains("message") && choice["message"].contains("content") &&
      !choice["message"]["content"].is_null()) {
    out.text = choice["message"]["content"].get<std::string>();
  }
  out.finish_reason = choice.value("finish_reason", std::string("stop"));
  return out;
}

}  // namespace kdiag::remote
