// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kdiag/errors.hpp"
#include "kdiag/scorer.hpp"
#include "test_util.hpp"

using namespace kdiag;

namespace {

scorer::ScoreRequest basic_request() {
  scorer::ScoreRequest req;
  req.query_id = "q1";
  req.question = "Why did the ice melt?";
  req.options = {"It warmed up.", "It froze harder."};
  return req;
}

}  // namespace

TEST_CASE("score_options rejects empty option lists") {
  auto templates = testutil::plain_templates();
  scorer::MockBackend backend(1, {});
  auto req = basic_request();
  req.options.clear();
  CHECK_THROWS_WITH_AS(scorer::score_options(req, backend, templates),
                       "score request needs options", Error);
}

TEST_CASE("scripted rules beat the seeded fallback and match on substrings") {
  auto templates = testutil::plain_templates();
  scorer::MockScript script;
  scorer::MockScoreRule prior_rule;
  prior_rule.when = {"Why did the ice melt?"};
  prior_rule.when_absent = {"Knowledge:"};
  prior_rule.nll = {{"It warmed up.", 0.2}, {"It froze harder.", 2.0}};
  script.scores.push_back(prior_rule);
  scorer::MockScoreRule posterior_rule;
  posterior_rule.when = {"Why did the ice melt?", "Heat melts ice."};
  posterior_rule.nll = {{"It warmed up.", 0.1}, {"It froze harder.", 3.0}};
  script.scores.push_back(posterior_rule);
  scorer::MockBackend backend(1, script);

  auto req = basic_request();
  auto prior = scorer::score_options(req, backend, templates);
  CHECK(prior.nll[0] == doctest::Approx(0.2));
  CHECK(prior.nll[1] == doctest::Approx(2.0));
  CHECK_FALSE(prior.knowledge_id.has_value());

  req.knowledge = "Heat melts ice.";
  req.knowledge_id = "k1";
  auto posterior = scorer::score_options(req, backend, templates);
  CHECK(posterior.nll[0] == doctest::Approx(0.1));
  CHECK(posterior.nll[1] == doctest::Approx(3.0));
  CHECK(posterior.knowledge_id == std::optional<std::string>("k1"));
}

TEST_CASE("unscripted requests without a seed are backend errors") {
  auto templates = testutil::plain_templates();
  scorer::MockBackend backend(std::nullopt, {});
  auto req = basic_request();
  try {
    scorer::score_options(req, backend, templates);
    FAIL("expected a backend error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Backend);
    CHECK(std::string(e.what()).find("unscripted request") != std::string::npos);
  }
}

TEST_CASE("seeded fallback is deterministic and option-sensitive") {
  auto templates = testutil::plain_templates();
  scorer::MockBackend a(9, {}), b(9, {}), c(10, {});
  auto req = basic_request();
  auto sa = scorer::score_options(req, a, templates);
  auto sb = scorer::score_options(req, b, templates);
  auto sc = scorer::score_options(req, c, templates);
  CHECK(sa.nll == sb.nll);
  CHECK(sa.nll != sc.nll);
  CHECK(sa.nll[0] != sa.nll[1]);
  for (double nll : sa.nll) CHECK(nll >= 0.0);
  for (int tokens : sa.token_counts) CHECK(tokens >= 1);
}

TEST_CASE("score cache short-circuits repeat calls and survives reload") {
  testutil::TempDir tmp;
  auto cache_file = tmp.path / "scores.jsonl";
  auto templates = testutil::plain_templates();
  auto req = basic_request();

  scorer::OptionScores first;
  {
    scorer::ScoreCache cache(cache_file);
    scorer::MockBackend backend(3, {});
    first = scorer::score_options(req, backend, templates, &cache);
    CHECK(backend.score_calls() == 2);
    auto second = scorer::score_options(req, backend, templates, &cache);
    CHECK(backend.score_calls() == 2);  // fully cached
    CHECK(second.nll == first.nll);
  }
  scorer::ScoreCache reloaded(cache_file);
  scorer::MockBackend backend(3, {});
  auto third = scorer::score_options(req, backend, templates, &reloaded);
  CHECK(backend.score_calls() == 0);
  CHECK(third.nll == first.nll);
}

TEST_CASE("cache keys separate backends, prompts, and options") {
  auto key = scorer::ScoreCache::score_key("m1", "prompt", "option");
  CHECK(key != scorer::ScoreCache::score_key("m2", "prompt", "option"));
  CHECK(key != scorer::ScoreCache::score_key("m1", "prompt2", "option"));
  CHECK(key != scorer::ScoreCache::score_key("m1", "prompt", "option2"));
  // Field boundaries matter: moving a character across them changes the key.
  CHECK(scorer::ScoreCache::score_key("a", "bc", "d") !=
        scorer::ScoreCache::score_key("ab", "c", "d"));
  CHECK(scorer::ScoreCache::generation_key("m1", "prompt") !=
        scorer::ScoreCache::score_key("m1", "prompt", ""));
}

TEST_CASE("negative NLLs from a backend are rejected") {
  auto templates = testutil::plain_templates();
  scorer::MockScript script;
  scorer::MockScoreRule rule;
  rule.when = {"Why did the ice melt?"};
  rule.nll = {{"It warmed up.", -0.5}, {"It froze harder.", 1.0}};
  script.scores.push_back(rule);
  scorer::MockBackend backend(1, script);
  auto req = basic_request();
  try {
    scorer::score_options(req, backend, templates);
    FAIL("expected a backend error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Backend);
  }
}

TEST_CASE("generation renders the prior template and respects the cache") {
  auto templates = testutil::plain_templates();
  scorer::MockScript script;
  scorer::MockGenerationRule rule;
  rule.when = {"Why did the ice melt?"};
  rule.text = "Thinking it through, the answer is (A).";
  script.generations.push_back(rule);
  scorer::MockBackend backend(std::nullopt, script);

  scorer::ScoreCache cache;
  auto req = basic_request();
  auto result = scorer::generate(req, backend, templates, &cache);
  CHECK(result.text == rule.text);
  CHECK(result.finish_reason == "stop");
  CHECK(backend.generation_calls() == 1);
  scorer::generate(req, backend, templates, &cache);
  CHECK(backend.generation_calls() == 1);

  req.question = "   ";
  CHECK_THROWS_AS(scorer::generate(req, backend, templates, &cache), Error);
}

TEST_CASE("mock identity covers seed and script content") {
  scorer::MockScript script;
  scorer::MockGenerationRule rule;
  rule.when = {"x"};
  rule.text = "y";
  script.generations.push_back(rule);
  scorer::MockBackend a(1, {}), b(2, {}), c(1, script);
  CHECK(a.id() != b.id());
  CHECK(a.id() != c.id());
  CHECK(scorer::MockBackend(1, {}).id() == a.id());
}
