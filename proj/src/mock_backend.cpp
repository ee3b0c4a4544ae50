// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdio>
#include <string>

#include "kdiag/errors.hpp"
#include "kdiag/hashing.hpp"
#include "kdiag/scorer.hpp"
#include "kdiag/text.hpp"

namespace kdiag::scorer {

namespace {

bool rule_matches(const std::vector<std::string>& when,
                  const std::vector<std::string>& when_absent,
                  const std::string& prompt) {
  for (const auto& s : when) {
    if (prompt.find(s) == std::string::npos) return false;
  }
  for (const auto& s : when_absent) {
    if (prompt.find(s) != std::string::npos) return false;
  }
  return true;
}

std::string short_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%08llx",
                static_cast<unsigned long long>(h & 0xffffffffull));
  return buf;
}

// Parses the count N out of "You MUST generate N new examples".
std::optional<int> requested_example_count(const std::string& prompt) {
  const std::string lead = "You MUST generate ";
  auto pos = prompt.find(lead);
  if (pos == std::string::npos) return std::nullopt;
  pos += lead.size();
  size_t end = pos;
  while (end < prompt.size() && std::isdigit(static_cast<unsigned char>(prompt[end]))) {
    ++end;
  }
  if (end == pos) return std::nullopt;
  if (prompt.compare(end, 13, " new examples") != 0) return std::nullopt;
  return std::stoi(prompt.substr(pos, end - pos));
}

std::string scaffold_reasoning(std::uint64_t base, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    std::uint64_t h = text::fnv1a64(std::to_string(i), base);
    std::string tag = short_hash(h) + "-" + std::to_string(i + 1);
    int answer = static_cast<int>(h % 3);
    out += "Question: Which statement follows from the stated principle in case " +
           tag + "?\n";
    out += "Options: (A) It points to outcome alpha in case " + tag +
           ". (B) It points to outcome beta in case " + tag +
           ". (C) It points to outcome gamma in case " + tag + ".\n";
    out += "Answer: (" + std::string(1, static_cast<char>('A' + answer)) + ")\n";
    out += "Explanation: Under the principle, only that outcome stays consistent in case " +
           tag + ".\n\n";
  }
  return out;
}

std::string scaffold_math(std::uint64_t base, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    std::uint64_t h = text::fnv1a64(std::to_string(i), base);
    std::string tag = short_hash(h) + "-" + std::to_string(i + 1);
    long value = 10 + static_cast<long>(h % 80);
    int answer = static_cast<int>((h >> 8) % 4);
    long opts[4];
    for (int j = 0; j < 4; ++j) opts[j] = value + (j - answer) * 3;
    out += "Question: Starting from the base quantity, what value results in case " +
           tag + "?\n";
    out += "Solution: Take the base quantity, apply the stated rule, and simplify to " +
           std::to_string(value) + ".\n";
    out += "Options:";
    for (int j = 0; j < 4; ++j) {
      out += " (" + std::string(1, static_cast<char>('A' + j)) + ") " +
             std::to_string(opts[j]);
    }
    out += "\nAnswer: (" + std::string(1, static_cast<char>('A' + answer)) + ") " +
           std::to_string(value) + "\n\n";
  }
  return out;
}

std::string scaffold_preprocess(std::uint64_t base) {
  long answer = 12 + static_cast<long>(base % 88);
  std::string out = "Background Knowledge:\n";
  for (int i = 1; i <= 4; ++i) {
    out += "- Quantities combine additively when the parts do not overlap (note " +
           short_hash(text::fnv1a64(std::to_string(i), base)) + ").\n";
  }
  out += "Explanation: Apply the listed principles to the given quantities and simplify.\n";
  out += "Answer: " + std::to_string(answer) + "\n";
  out += "Distractors: (A) " + std::to_string(answer + 2) + " (B) " +
         std::to_string(answer - 3) + " (C) " + std::to_string(answer + 7) + "\n";
  return out;
}

// Highest option letter present in the prompt, e.g. "(C)" -> 2.
int max_option_index(const std::string& prompt) {
  int best = -1;
  for (size_t i = 0; i + 2 < prompt.size(); ++i) {
    if (prompt[i] == '(' && prompt[i + 2] == ')' && prompt[i + 1] >= 'A' &&
        prompt[i + 1] <= 'Z') {
      best = std::max(best, prompt[i + 1] - 'A');
    }
  }
  return best;
}

}  // namespace

nlohmann::json MockScript::to_json() const {
  nlohmann::json scores_json = nlohmann::json::array();
  for (const auto& rule : scores) {
    scores_json.push_back({{"when", rule.when},
                           {"when_absent", rule.when_absent},
                           {"nll", rule.nll}});
  }
  nlohmann::json gens_json = nlohmann::json::array();
  for (const auto& rule : generations) {
    gens_json.push_back({{"when", rule.when},
                         {"text", rule.text},
                         {"finish_reason", rule.finish_reason}});
  }
  return {{"scores", scores_json}, {"generations", gens_json}};
}

MockScript MockScript::from_json(const nlohmann::json& j) {
  MockScript script;
  for (const auto& rec : j.value("scores", nlohmann::json::array())) {
    MockScoreRule rule;
    rule.when = rec.value("when", std::vector<std::string>{});
    rule.when_absent = rec.value("when_absent", std::vector<std::string>{});
    for (auto it = rec.at("nll").begin(); it != rec.at("nll").end(); ++it) {
      rule.nll[it.key()] = it.value().get<double>();
    }
    script.scores.push_back(std::move(rule));
  }
  for (const auto& rec : j.value("generations", nlohmann::json::array())) {
    MockGenerationRule rule;
    rule.when = rec.value("when", std::vector<std::string>{});
    rule.text = rec.at("text").get<std::string>();
    rule.finish_reason = rec.value("finish_reason", std::string("stop"));
    script.generations.push_back(std::move(rule));
  }
  return script;
}

MockBackend::MockBackend(std::optional<std::uint64_t> seed, MockScript script)
    : seed_(seed), script_(std::move(script)) {
  id_ = "mock:" + (seed_ ? std::to_string(*seed_) : std::string("none")) + ":" +
        hashing::content_id(script_.to_json().dump());
}

std::string MockBackend::id() const { return id_; }

ScoredOption MockBackend::score(const std::string& prompt, const std::string& option) {
  score_calls_.fetch_add(1);
  for (const auto& rule : script_.scores) {
    if (!rule_matches(rule.when, rule.when_absent, prompt)) continue;
    auto it = rule.nll.find(option);
    if (it == rule.nll.end()) continue;
    return {it->second, std::max(1, text::token_count(option))};
  }
  if (!seed_) throw_backend("unscripted request: score for option \"" + option + "\"");
  std::uint64_t h = text::fnv1a64(
      option, text::fnv1a64(prompt, text::fnv1a64(std::to_string(*seed_))));
  return {0.25 + 3.0 * text::unit_double(h), std::max(1, text::token_count(option))};
}

GenerationOutput MockBackend::generate(const std::string& prompt) {
  generation_calls_.fetch_add(1);
  for (const auto& rule : script_.generations) {
    if (rule_matches(rule.when, {}, prompt)) return {rule.text, rule.finish_reason};
  }
  if (!seed_) {
    throw_backend("unscripted request: generation for prompt prefix \"" +
                  prompt.substr(0, std::min<size_t>(40, prompt.size())) + "\"");
  }
  std::uint64_t base = text::fnv1a64(prompt, text::fnv1a64(std::to_string(*seed_)));
  if (auto n = requested_example_count(prompt)) {
    // Synthesis request; the math form asks for a Solution line, reasoning
    // form does not.
    bool math = prompt.find("Solution:") != std::string::npos;
    return {math ? scaffold_math(base, *n) : scaffold_reasoning(base, *n), "stop"};
  }
  if (prompt.find("Background Knowledge") != std::string::npos) {
    return {scaffold_preprocess(base), "stop"};
  }
  int max_idx = max_option_index(prompt);
  if (max_idx >= 0) {
    int pick = static_cast<int>(base % static_cast<std::uint64_t>(max_idx + 1));
    std::string letter(1, static_cast<char>('A' + pick));
    return {"Considering the options step by step, the most consistent choice is (" +
                letter + ").",
            "stop"};
  }
  return {"Mock response " + short_hash(base) + ".", "stop"};
}

}  // namespace kdiag::scorer
