// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "kdiag/retrieval.hpp"
#include "kdiag/scorer.hpp"

namespace kdiag::remote {

// Connection settings shared by the HTTP clients. The auth token is read
// from the environment variable named by auth_env, never from config files.
struct RemoteOptions {
  std::string endpoint;  // scheme://host:port
  std::string model;
  std::string auth_env;
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_ms = 250;
};

// POST {texts: [...]} -> {vectors: [[...]]}.
class HttpEmbeddingProvider : public retrieval::EmbeddingProvider {
 public:
  HttpEmbeddingProvider(RemoteOptions options, std::string path = "/embed");
  std::string id() const override;
  std::vector<std::vector<double>> embed_batch(
      const std::vector<std::string>& texts) override;

 private:
  RemoteOptions options_;
  std::string path_;
};

// Scoring via an echoed-logprob completions endpoint; generation via a
// chat endpoint. Both retry transport errors and 429/5xx with backoff.
class HttpScoringBackend : public scorer::Backend {
 public:
  HttpScoringBackend(RemoteOptions options,
                     std::string completions_path = "/v1/completions",
                     std::string chat_path = "/v1/chat/completions");
  std::string id() const override;
  scorer::ScoredOption score(const std::string& prompt,
                             const std::string& option) override;
  scorer::GenerationOutput generate(const std::string& prompt) override;

 private:
  RemoteOptions options_;
  std::string completions_path_;
  std::string chat_path_;
};

}  // namespace kdiag::remote
