// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "kdiag/errors.hpp"
#include "kdiag/evalkit.hpp"
#include "test_util.hpp"

using namespace kdiag;

namespace {

corpus::Query labeled_query(const std::string& id, const std::string& question,
                            std::vector<std::string> options, int gold) {
  corpus::Query query;
  query.query_id = id;
  query.question = question;
  query.options = std::move(options);
  query.gold_label = gold;
  return query;
}

}  // namespace

TEST_CASE("method names and label-free flags cover every method") {
  using evalkit::Method;
  CHECK(evalkit::method_name(Method::GoldenLabel) == "Golden Label");
  CHECK(evalkit::method_name(Method::Perplexity) == "Perplexity");
  CHECK(evalkit::method_name(Method::Random) == "Random");
  CHECK(evalkit::method_name(Method::RelativeEntropy) == "Relative Entropy");
  CHECK_FALSE(evalkit::method_label_free(Method::GoldenLabel));
  CHECK_FALSE(evalkit::method_label_free(Method::Perplexity));
  CHECK(evalkit::method_label_free(Method::Random));
  CHECK(evalkit::method_label_free(Method::RelativeEntropy));
}

TEST_CASE("golden label detection flags answer mismatches") {
  auto templates = testutil::plain_templates();
  std::vector<corpus::Query> queries = {
      labeled_query("q_right", "Which is wet?", {"water", "sand"}, 0),
      labeled_query("q_wrong", "Which is dry?", {"sand", "water"}, 0),
      labeled_query("q_mumble", "Which is loud?", {"drums", "pillows"}, 0)};

  scorer::MockScript script;
  scorer::MockGenerationRule right;
  right.when = {"Which is wet?"};
  right.text = "Thinking it through, the consistent choice is (A).";
  scorer::MockGenerationRule wrong;
  wrong.when = {"Which is dry?"};
  wrong.text = "Reasoning aloud, I settle on (B).";
  scorer::MockGenerationRule mumble;
  mumble.when = {"Which is loud?"};
  mumble.text = "I cannot commit to any of these.";
  script.generations = {right, wrong, mumble};
  scorer::MockBackend backend(std::nullopt, script);

  auto result = evalkit::golden_label_detect(queries, backend, templates);
  CHECK(result.run.method == evalkit::Method::GoldenLabel);
  CHECK(result.run.flagged == std::vector<std::string>{"q_mumble", "q_wrong"});
  REQUIRE(result.records.size() == 3);
  // Records come back sorted by query id.
  CHECK(result.records[0].query_id == "q_mumble");
  CHECK_FALSE(result.records[0].predicted.has_value());
  CHECK(result.records[0].wrong);
  CHECK(result.records[1].query_id == "q_right");
  CHECK(result.records[1].predicted == std::optional<int>(0));
  CHECK_FALSE(result.records[1].wrong);
  CHECK(result.records[2].predicted == std::optional<int>(1));
  CHECK(result.records[2].wrong);

  // Lenient policy: unparseable output is not counted as a miss.
  scorer::MockBackend backend2(std::nullopt, script);
  evalkit::EvalOptions lenient;
  lenient.flag_unparseable = false;
  auto relaxed = evalkit::golden_label_detect(queries, backend2, templates, lenient);
  CHECK(relaxed.run.flagged == std::vector<std::string>{"q_wrong"});

  corpus::Query unlabeled = queries[0];
  unlabeled.gold_label = std::nullopt;
  unlabeled.query_id = "q_unlabeled";
  scorer::MockBackend backend3(std::nullopt, script);
  try {
    evalkit::golden_label_detect({unlabeled}, backend3, templates);
    FAIL("expected labeled-mode error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("labeled-mode only") != std::string::npos);
    CHECK(std::string(e.what()).find("q_unlabeled") != std::string::npos);
  }
}

TEST_CASE("perplexity detection takes the argmin and honors length normalization") {
  auto templates = testutil::plain_templates();
  // Option 0 has the lower raw NLL; option 1 wins after dividing by tokens.
  std::vector<corpus::Query> queries = {
      labeled_query("q1", "Which holds water?", {"cup", "a sieve of holes"}, 0)};
  scorer::MockScript script;
  scorer::MockScoreRule rule;
  rule.when = {"Which holds water?"};
  rule.nll = {{"cup", 1.2}, {"a sieve of holes", 1.8}};
  script.scores.push_back(rule);

  scorer::MockBackend raw_backend(std::nullopt, script);
  evalkit::EvalOptions raw;
  raw.length_normalize = false;
  auto raw_result = evalkit::perplexity_detect(queries, raw_backend, templates, raw);
  REQUIRE(raw_result.records.size() == 1);
  CHECK(raw_result.records[0].predicted == 0);
  CHECK(raw_result.run.flagged.empty());

  scorer::MockBackend norm_backend(std::nullopt, script);
  auto norm_result = evalkit::perplexity_detect(queries, norm_backend, templates);
  CHECK(norm_result.records[0].predicted == 1);  // 1.8/4 < 1.2/1
  CHECK(norm_result.run.flagged == std::vector<std::string>{"q1"});
  CHECK(norm_result.records[0].nll == std::vector<double>{1.2, 1.8});
  REQUIRE(norm_result.records[0].token_counts.size() == 2);
  CHECK(norm_result.records[0].token_counts[1] == 4);
}

TEST_CASE("perplexity ties go to the lowest index and are counted") {
  auto templates = testutil::plain_templates();
  std::vector<corpus::Query> queries = {
      labeled_query("q1", "Pick one.", {"left", "right"}, 1),
      labeled_query("q2", "Pick another.", {"up", "down"}, 0)};
  scorer::MockScript script;
  scorer::MockScoreRule tie_rule;
  tie_rule.when = {"Pick one."};
  tie_rule.nll = {{"left", 0.5}, {"right", 0.5}};
  script.scores.push_back(tie_rule);
  scorer::MockScoreRule clear_rule;
  clear_rule.when = {"Pick another."};
  clear_rule.nll = {{"up", 0.3}, {"down", 0.9}};
  script.scores.push_back(clear_rule);
  scorer::MockBackend backend(std::nullopt, script);

  auto result = evalkit::perplexity_detect(queries, backend, templates);
  CHECK(result.ties == 1);
  REQUIRE(result.records.size() == 2);
  CHECK(result.records[0].query_id == "q1");
  CHECK(result.records[0].predicted == 0);
  CHECK(result.records[0].tie);
  CHECK_FALSE(result.records[1].tie);
  // q1 predicted 0 vs gold 1 -> flagged; q2 predicted 0 == gold.
  CHECK(result.run.flagged == std::vector<std::string>{"q1"});
}

TEST_CASE("random detection draws a seeded sample without replacement") {
  std::vector<std::string> ids;
  for (int i = 0; i < 40; ++i) ids.push_back("q" + std::to_string(100 + i));

  auto run = evalkit::random_detect(ids, 12, 777);
  CHECK(run.method == evalkit::Method::Random);
  CHECK(run.seed == std::optional<std::uint64_t>(777));
  CHECK(run.sample_size == std::optional<size_t>(12));
  REQUIRE(run.flagged.size() == 12);
  CHECK(std::is_sorted(run.flagged.begin(), run.flagged.end()));
  // No replacement and a subset of the pool.
  std::set<std::string> unique(run.flagged.begin(), run.flagged.end());
  CHECK(unique.size() == 12);
  for (const auto& id : run.flagged) {
    CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());
  }

  // Same seed reproduces the draw even from a shuffled pool.
  std::vector<std::string> reversed(ids.rbegin(), ids.rend());
  auto replay = evalkit::random_detect(reversed, 12, 777);
  CHECK(replay.flagged == run.flagged);
  auto other = evalkit::random_detect(ids, 12, 778);
  CHECK(other.flagged != run.flagged);

  // Duplicates in the pool collapse before sampling.
  auto small = evalkit::random_detect({"a", "b", "b", "c"}, 3, 5);
  CHECK(small.flagged == std::vector<std::string>{"a", "b", "c"});

  CHECK_THROWS_AS(evalkit::random_detect({"a", "b"}, 3, 1), Error);
  CHECK_THROWS_AS(evalkit::random_detect({"a", "b", "b"}, 3, 1), Error);

  auto everything = evalkit::random_detect(ids, ids.size(), 9);
  CHECK(everything.flagged.size() == ids.size());
  auto nothing = evalkit::random_detect(ids, 0, 9);
  CHECK(nothing.flagged.empty());
}

TEST_CASE("relative entropy detection collapses deficiency pairs per query") {
  std::vector<diagnose::Deficiency> deficiencies(4);
  deficiencies[0].query_id = "q2";
  deficiencies[0].knowledge_id = "k1";
  deficiencies[1].query_id = "q1";
  deficiencies[1].knowledge_id = "k1";
  deficiencies[2].query_id = "q2";
  deficiencies[2].knowledge_id = "k9";
  deficiencies[3].query_id = "q1";
  deficiencies[3].knowledge_id = "k2";
  auto run = evalkit::re_detect(deficiencies, 0.1);
  CHECK(run.method == evalkit::Method::RelativeEntropy);
  CHECK(run.tau == std::optional<double>(0.1));
  CHECK(run.flagged == std::vector<std::string>{"q1", "q2"});
  CHECK(evalkit::re_detect({}, 0.1).flagged.empty());
}

TEST_CASE("score_detection computes percent precision, recall, and F1") {
  evalkit::DetectionRun run;
  run.flagged = {"a", "b", "e"};
  std::set<std::string> truth = {"a", "b", "c", "d"};
  auto metrics = evalkit::score_detection(run, truth);
  CHECK(metrics.tp == 2);
  CHECK(metrics.fp == 1);
  CHECK(metrics.fn == 2);
  CHECK(metrics.precision == doctest::Approx(100.0 * 2 / 3));
  CHECK(metrics.recall == doctest::Approx(50.0));
  double p = 100.0 * 2 / 3, r = 50.0;
  CHECK(metrics.f1 == doctest::Approx(2 * p * r / (p + r)));
  CHECK_FALSE(metrics.empty_warning);

  evalkit::DetectionRun perfect;
  perfect.flagged = {"a", "b"};
  auto full = evalkit::score_detection(perfect, {"a", "b"});
  CHECK(full.precision == doctest::Approx(100.0));
  CHECK(full.recall == doctest::Approx(100.0));
  CHECK(full.f1 == doctest::Approx(100.0));

  evalkit::DetectionRun empty;
  auto warned = evalkit::score_detection(empty, {});
  CHECK(warned.empty_warning);
  CHECK(warned.precision == 0.0);
  CHECK(warned.f1 == 0.0);

  evalkit::DetectionRun noisy;
  noisy.flagged = {"x"};
  auto zero = evalkit::score_detection(noisy, {});
  CHECK_FALSE(zero.empty_warning);
  CHECK(zero.precision == 0.0);
  CHECK(zero.recall == 0.0);
}

TEST_CASE("render_report lays out one aligned row per method") {
  std::vector<evalkit::ReportRow> rows(4);
  rows[0].method = evalkit::Method::GoldenLabel;
  rows[1].method = evalkit::Method::Perplexity;
  rows[2].method = evalkit::Method::Random;
  rows[3].method = evalkit::Method::RelativeEntropy;
  for (auto& row : rows) row.label_free = evalkit::method_label_free(row.method);
  rows[2].metrics.precision = 31.25;
  rows[2].metrics.recall = 31.25;
  rows[2].metrics.f1 = 31.25;
  rows[2].params = "seed=7 sample=16";
  rows[3].metrics.precision = 100.0;
  rows[3].metrics.recall = 87.5;
  rows[3].metrics.f1 = 93.33;
  rows[3].metrics.tp = 14;
  rows[3].metrics.fn = 2;
  rows[3].params = "tau=0.1";

  std::string text = evalkit::render_report(rows);
  auto lines = [&] {
    std::vector<std::string> out;
    size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      out.push_back(text.substr(start, end - start));
      start = end + 1;
    }
    return out;
  }();
  REQUIRE(lines.size() == 6);  // header + separator + 4 methods
  CHECK(lines[0].find("Method") == 0);
  CHECK(lines[0].find("Label Free") != std::string::npos);
  CHECK(lines[0].find("Precision") != std::string::npos);
  CHECK(lines[0].find("Recall") != std::string::npos);
  CHECK(lines[0].find("F1") != std::string::npos);
  CHECK(lines[1].find_first_not_of('-') == std::string::npos);
  CHECK(lines[2].find("Golden Label") == 0);
  CHECK(lines[2].find("No") != std::string::npos);
  CHECK(lines[4].find("Random") == 0);
  CHECK(lines[4].find("Yes") != std::string::npos);
  CHECK(lines[5].find("Relative Entropy") == 0);
  CHECK(lines[5].find("tau=0.1") != std::string::npos);
  // Columns align: "Label Free" starts at the same offset everywhere.
  size_t column = lines[0].find("Label Free");
  CHECK(lines[2].substr(0, column).find("No") == std::string::npos);
  for (const auto& line : lines) {
    CHECK((line.empty() || line.back() != ' '));  // no trailing padding
  }
}
