// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "kdiag/errors.hpp"
#include "kdiag/remedy.hpp"
#include "kdiag/text.hpp"
#include "test_util.hpp"

using namespace kdiag;

namespace {

corpus::Query make_query(const std::string& id, const std::string& question,
                         std::vector<std::string> tags = {}) {
  corpus::Query query;
  query.query_id = id;
  query.question = question;
  query.options = {"first choice", "second choice", "third choice"};
  query.gold_label = 0;
  query.tags = std::move(tags);
  return query;
}

corpus::Fact make_fact(const std::string& id, const std::string& body) {
  corpus::Fact fact;
  fact.fact_id = id;
  fact.text = body;
  return fact;
}

diagnose::Deficiency make_deficiency(const std::string& query_id,
                                     const std::string& knowledge_id, double re,
                                     const std::string& group, int budget) {
  diagnose::Deficiency d;
  d.query_id = query_id;
  d.knowledge_id = knowledge_id;
  d.re = re;
  d.group = group;
  d.budget = budget;
  return d;
}

}  // namespace

TEST_CASE("plan_budgets multiplies per-group counts by severity budgets") {
  std::vector<corpus::Query> queries = {make_query("q1", "How many apples?", {"gsm8k"}),
                                        make_query("q2", "Why do leaves fall?"),
                                        make_query("q3", "What floats?", {"ecare"})};
  std::vector<corpus::Fact> facts = {make_fact("k1", "Apples are fruit."),
                                     make_fact("k2", "Autumn shortens days."),
                                     make_fact("k3", "Wood is less dense than water.")};
  std::vector<diagnose::Deficiency> deficiencies = {
      make_deficiency("q1", "k1", 0.45, "Normal", 2),
      make_deficiency("q2", "k2", 0.12, "Easy", 1),
      make_deficiency("q3", "k3", 1.2, "Unfair", 4)};

  auto plan = remedy::plan_budgets(deficiencies, queries, facts,
                                   {{"gsm8k", "math"}, {"math", "math"}});
  REQUIRE(plan.jobs.size() == 3);
  // Jobs keep the deficiency order and carry the budget as n_examples.
  CHECK(plan.jobs[0].query_id == "q1");
  CHECK(plan.jobs[0].n_examples == 2);
  CHECK(plan.jobs[0].style == remedy::SynthStyle::Math);
  CHECK(plan.jobs[1].style == remedy::SynthStyle::Reasoning);
  CHECK(plan.jobs[2].n_examples == 4);
  CHECK(plan.jobs[0].knowledge_text == "Apples are fruit.");
  // The reference example renders the source query without its label.
  CHECK(plan.jobs[1].reference_example ==
        "Question: Why do leaves fall?\nOptions:\n(A) first choice\n(B) second "
        "choice\n(C) third choice");
  CHECK(plan.jobs[1].reference_example.find("(A)") != std::string::npos);
  CHECK(plan.jobs[1].reference_example.find("gold") == std::string::npos);

  CHECK(plan.totals.total_examples == 7);
  REQUIRE(plan.totals.group_deficiencies.size() == 3);
  // Severity order via the nondecreasing budgets.
  CHECK(plan.totals.group_deficiencies[0] == std::pair<std::string, long long>{"Easy", 1});
  CHECK(plan.totals.group_deficiencies[1] ==
        std::pair<std::string, long long>{"Normal", 1});
  CHECK(plan.totals.group_deficiencies[2] ==
        std::pair<std::string, long long>{"Unfair", 1});
  CHECK(plan.totals.group_examples[2] == std::pair<std::string, long long>{"Unfair", 4});
  CHECK_FALSE(plan.totals.expected_total.has_value());
  CHECK(plan.totals.warnings.empty());
}

TEST_CASE("plan_budgets warns when the arithmetic disagrees with expected_total") {
  std::vector<corpus::Query> queries = {make_query("q1", "Why is the sky blue?")};
  std::vector<corpus::Fact> facts = {make_fact("k1", "Air scatters blue light.")};
  std::vector<diagnose::Deficiency> deficiencies = {
      make_deficiency("q1", "k1", 0.5, "Normal", 2)};

  auto exact = remedy::plan_budgets(deficiencies, queries, facts, {}, 2);
  CHECK(exact.totals.warnings.empty());
  CHECK(exact.totals.expected_total == std::optional<long long>(2));

  auto off = remedy::plan_budgets(deficiencies, queries, facts, {}, 1250);
  REQUIRE(off.totals.warnings.size() == 1);
  CHECK(off.totals.warnings[0] ==
        "planned total 2 differs from configured expected total 1250");
}

TEST_CASE("plan_budgets rejects dangling or unusable deficiencies") {
  std::vector<corpus::Query> queries = {make_query("q1", "Why?")};
  std::vector<corpus::Fact> facts = {make_fact("k1", "Because."),
                                     make_fact("k_blank", "   ")};
  CHECK_THROWS_WITH_AS(
      remedy::plan_budgets({make_deficiency("q_missing", "k1", 0.5, "Normal", 2)},
                           queries, facts),
      "deficiency references unknown query q_missing", Error);
  CHECK_THROWS_WITH_AS(
      remedy::plan_budgets({make_deficiency("q1", "k_missing", 0.5, "Normal", 2)},
                           queries, facts),
      "deficiency references unknown fact k_missing", Error);
  CHECK_THROWS_AS(
      remedy::plan_budgets({make_deficiency("q1", "k_blank", 0.5, "Normal", 2)},
                           queries, facts),
      Error);
  corpus::Query tagged = make_query("q1", "Why?", {"mystery"});
  CHECK_THROWS_AS(remedy::plan_budgets({make_deficiency("q1", "k1", 0.5, "Normal", 2)},
                                       {tagged}, facts, {{"mystery", "poetry"}}),
                  Error);
}

TEST_CASE("build_prompt embeds the knowledge, reference, and count verbatim") {
  auto templates = testutil::plain_templates();
  remedy::SynthesisJob job;
  job.query_id = "q1";
  job.knowledge_id = "k1";
  job.n_examples = 3;
  job.style = remedy::SynthStyle::Reasoning;
  job.knowledge_text = "Rainbows need sunlight and raindrops at once.";
  job.reference_example = "Question: When do rainbows appear?\nOptions:\n(A) rain\n(B) fog\n(C) snow";

  std::string prompt = remedy::build_prompt(job, templates);
  CHECK(prompt == job.prompt);
  CHECK(prompt.find(job.knowledge_text) != std::string::npos);
  CHECK(prompt.find(job.reference_example) != std::string::npos);
  CHECK(prompt.find("You MUST generate 3 new examples") != std::string::npos);
  CHECK(prompt.find("{knowledge}") == std::string::npos);
  CHECK(prompt.find("{n}") == std::string::npos);

  remedy::SynthesisJob blank = job;
  blank.knowledge_text = "  ";
  CHECK_THROWS_AS(remedy::build_prompt(blank, templates), Error);
  remedy::SynthesisJob zero = job;
  zero.n_examples = 0;
  CHECK_THROWS_AS(remedy::build_prompt(zero, templates), Error);
}

TEST_CASE("parse_response accepts well-formed blocks of both styles") {
  std::string reasoning =
      "Here are the examples you asked for.\n"
      "Question: Which pot boils first?\n"
      "Options: (A) the covered pot (B) the open pot (C) the empty pot\n"
      "Answer: (A)\n"
      "Explanation: A lid traps heat, so the covered pot reaches boiling sooner.\n"
      "\n"
      "Question: Which melts faster?\n"
      "Options:\n(A) crushed ice\n(B) an ice block\n(C) frozen steel\n"
      "Answer: (B) an ice block\n"
      "Explanation: Wait, actually crushed ice melts faster.\n";
  auto [examples, report] =
      remedy::parse_response(reasoning, 5, remedy::SynthStyle::Reasoning);
  REQUIRE(examples.size() == 2);
  CHECK(report.found == 2);
  CHECK(report.malformed == 0);
  CHECK_FALSE(report.truncated);
  CHECK(examples[0].question == "Which pot boils first?");
  REQUIRE(examples[0].options.size() == 3);
  CHECK(examples[0].options[1] == "the open pot");
  CHECK(examples[0].answer_index == 0);
  CHECK(examples[1].answer_index == 1);
  CHECK(examples[1].explanation == "Wait, actually crushed ice melts faster.");

  std::string math =
      "Question: What is the total?\n"
      "Solution: Add the two parts: 8 + 5 = 13.\n"
      "Options: (A) 11 (B) 13 (C) 15 (D) 17\n"
      "Answer: (B) 13\n";
  auto [math_examples, math_report] =
      remedy::parse_response(math, 1, remedy::SynthStyle::Math);
  REQUIRE(math_examples.size() == 1);
  CHECK(math_examples[0].explanation == "Add the two parts: 8 + 5 = 13.");
  CHECK(math_report.malformed == 0);
  // The same block parsed as reasoning misses its Explanation field.
  auto [as_reasoning, reasoning_report] =
      remedy::parse_response(math, 1, remedy::SynthStyle::Reasoning);
  CHECK(as_reasoning.empty());
  REQUIRE(reasoning_report.issues.size() == 1);
  CHECK(reasoning_report.issues[0].reason == "missing explanation");
}

TEST_CASE("parse_response is total: malformed blocks get reasons, never throws") {
  std::string response =
      "Question: Complete but fine?\n"
      "Options: (A) yes (B) no (C) maybe\n"
      "Answer: (C)\n"
      "Explanation: Fine.\n"
      "Question: \n"
      "Options: (A) x (B) y (C) z\nAnswer: (A)\nExplanation: e\n"
      "Question: Too few options?\n"
      "Options: (A) yes (B) no\nAnswer: (A)\nExplanation: e\n"
      "Question: Duplicates?\n"
      "Options: (A) same (B) Same (C) other\nAnswer: (A)\nExplanation: e\n"
      "Question: No letter?\n"
      "Options: (A) a (B) b (C) c\nAnswer: the first one\nExplanation: e\n"
      "Question: Out of range?\n"
      "Options: (A) a (B) b (C) c\nAnswer: (D)\nExplanation: e\n"
      "Question: No answer at all?\n"
      "Options: (A) a (B) b (C) c\nExplanation: e\n";
  auto [examples, report] =
      remedy::parse_response(response, 10, remedy::SynthStyle::Reasoning);
  CHECK(examples.size() == 1);
  CHECK(report.found == 1);
  CHECK(report.malformed == 6);
  REQUIRE(report.issues.size() == 6);
  CHECK(report.issues[0].block == 2);
  CHECK(report.issues[0].reason == "missing question");
  CHECK(report.issues[1].reason == "too few options");
  CHECK(report.issues[2].reason == "duplicate options");
  CHECK(report.issues[3].reason == "no option letter in answer");
  CHECK(report.issues[4].reason == "answer out of range");
  CHECK(report.issues[5].reason == "missing answer");

  // Total on arbitrary garbage.
  for (const std::string& garbage :
       {std::string(""), std::string("((((((("), std::string("Answer: (A)"),
        std::string(10000, 'Q'), std::string("Question:"),
        std::string("Question: x\nOptions:\nAnswer:\n")}) {
    auto [parsed, r] = remedy::parse_response(garbage, 3, remedy::SynthStyle::Math);
    CHECK(parsed.size() <= 3);
  }
}

TEST_CASE("parse_response drops over-produced blocks and flags truncation") {
  std::string block =
      "Question: Which is heavier, QNUM?\n"
      "Options: (A) a stone (B) a feather (C) a bubble\n"
      "Answer: (A)\nExplanation: Stones are densest of the three.\n";
  std::string response;
  for (int i = 0; i < 4; ++i) {
    std::string copy = block;
    auto pos = copy.find("QNUM");
    copy.replace(pos, 4, std::to_string(i));
    response += copy;
  }
  auto [examples, report] = remedy::parse_response(response, 2, remedy::SynthStyle::Reasoning);
  CHECK(examples.size() == 2);
  CHECK(report.found == 2);
  CHECK(report.truncated);
  REQUIRE(report.issues.size() == 2);
  CHECK(report.issues[0].reason == "beyond requested count");
  CHECK(report.issues[0].block == 3);
}

TEST_CASE("attach_provenance assigns ordinals and stable content ids") {
  remedy::SynthesisJob job;
  job.query_id = "q7";
  job.knowledge_id = "k9";
  job.re = 0.81;
  job.group = "Hard";
  remedy::ParsedExample a;
  a.question = "First question?";
  a.options = {"x", "y", "z"};
  a.answer_index = 2;
  a.explanation = "because";
  remedy::ParsedExample b = a;
  b.question = "Second question?";

  auto out = remedy::attach_provenance(job, {a, b});
  REQUIRE(out.size() == 2);
  CHECK(out[0].ordinal == 0);
  CHECK(out[1].ordinal == 1);
  CHECK(out[0].query_id == "q7");
  CHECK(out[0].knowledge_id == "k9");
  CHECK(out[0].re == 0.81);
  CHECK(out[0].group == "Hard");
  CHECK(out[0].example_id != out[1].example_id);
  CHECK_FALSE(out[0].example_id.empty());
  // Deterministic: same inputs, same ids.
  auto again = remedy::attach_provenance(job, {a, b});
  CHECK(again[0].example_id == out[0].example_id);
  CHECK(again[1].example_id == out[1].example_id);
}

TEST_CASE("synthesize_all parses the generator output per job") {
  auto templates = testutil::plain_templates();
  std::vector<corpus::Query> queries = {make_query("q1", "How many marbles?", {"gsm8k"}),
                                        make_query("q2", "Why do magnets stick?")};
  std::vector<corpus::Fact> facts = {make_fact("k1", "Counting adds one per item."),
                                     make_fact("k2", "Opposite magnetic poles attract.")};
  std::vector<diagnose::Deficiency> deficiencies = {
      make_deficiency("q1", "k1", 0.9, "Hard", 3),
      make_deficiency("q2", "k2", 0.45, "Normal", 2)};
  auto plan = remedy::plan_budgets(deficiencies, queries, facts, {{"gsm8k", "math"}});

  scorer::MockBackend backend(42, {});
  auto outcome = remedy::synthesize_all(plan.jobs, backend, templates);
  REQUIRE(outcome.reports.size() == 2);
  CHECK(outcome.reports[0].attempts == 1);
  CHECK(outcome.reports[0].found == 3);
  CHECK_FALSE(outcome.reports[0].failed);
  CHECK(outcome.reports[1].found == 2);
  CHECK(outcome.examples.size() == 5);
  // Math-style examples carry the solution text as their explanation.
  CHECK(outcome.examples[0].query_id == "q1");
  CHECK(outcome.examples[0].explanation.find("simplify") != std::string::npos);
  REQUIRE(outcome.examples[0].options.size() == 4);
  CHECK(outcome.examples[0].answer_index >= 0);
  CHECK(outcome.examples[0].answer_index < 4);

  // Same seed, fresh backend: byte-identical examples.
  scorer::MockBackend backend2(42, {});
  auto plan2 = remedy::plan_budgets(deficiencies, queries, facts, {{"gsm8k", "math"}});
  auto outcome2 = remedy::synthesize_all(plan2.jobs, backend2, templates);
  REQUIRE(outcome2.examples.size() == outcome.examples.size());
  for (size_t i = 0; i < outcome.examples.size(); ++i) {
    CHECK(outcome2.examples[i].example_id == outcome.examples[i].example_id);
    CHECK(outcome2.examples[i].question == outcome.examples[i].question);
  }
}

TEST_CASE("synthesize_all retries jobs that parse to nothing") {
  auto templates = testutil::plain_templates();
  scorer::MockScript script;
  scorer::MockGenerationRule unusable;
  unusable.when = {"You MUST generate"};
  unusable.text = "I would rather not follow the requested format today.";
  script.generations.push_back(unusable);
  scorer::MockBackend backend(std::nullopt, script);

  std::vector<remedy::SynthesisJob> jobs(1);
  jobs[0].query_id = "q1";
  jobs[0].knowledge_id = "k1";
  jobs[0].n_examples = 2;
  jobs[0].style = remedy::SynthStyle::Reasoning;
  jobs[0].knowledge_text = "Knowledge body.";
  jobs[0].reference_example = "Question: ref?\nOptions:\n(A) a\n(B) b\n(C) c";

  auto outcome = remedy::synthesize_all(jobs, backend, templates, nullptr, 2);
  CHECK(outcome.examples.empty());
  REQUIRE(outcome.reports.size() == 1);
  CHECK(outcome.reports[0].attempts == 3);  // 1 + max_retries
  CHECK(outcome.reports[0].failed);
  CHECK(backend.generation_calls() == 3);
}

TEST_CASE("preprocess_math_query builds a labeled query from the scaffold") {
  auto templates = testutil::plain_templates();
  scorer::MockBackend backend(7, {});
  std::string question =
      "A basket holds 9 pears and loses 4 in transit. How many arrive?";
  auto outcome =
      remedy::preprocess_math_query(question, {"gsm8k"}, backend, templates);
  REQUIRE(outcome.result.has_value());
  CHECK(outcome.skip_reason.empty());
  const auto& upgraded = *outcome.result;
  CHECK(upgraded.query.question == question);
  CHECK(upgraded.query.tags == std::vector<std::string>{"gsm8k"});
  REQUIRE(upgraded.query.options.size() == 4);
  REQUIRE(upgraded.query.gold_label.has_value());
  // Deterministic gold slot derived from the question text.
  size_t expected_gold = text::fnv1a64(text::normalize(question)) % 4;
  CHECK(*upgraded.query.gold_label == static_cast<int>(expected_gold));
  CHECK(upgraded.knowledge.size() == 4);
  CHECK(upgraded.knowledge[0].find("- ") != 0);  // bullet stripped
  CHECK_FALSE(upgraded.query.query_id.empty());

  // Same inputs: identical result.
  scorer::MockBackend backend2(7, {});
  auto outcome2 =
      remedy::preprocess_math_query(question, {"gsm8k"}, backend2, templates);
  REQUIRE(outcome2.result.has_value());
  CHECK(outcome2.result->query.query_id == upgraded.query.query_id);
  CHECK(outcome2.result->query.options == upgraded.query.options);
}

TEST_CASE("preprocess_math_query skips unparseable responses with a reason") {
  auto templates = testutil::plain_templates();
  auto skip_with = [&](const std::string& text) {
    scorer::MockScript script;
    scorer::MockGenerationRule rule;
    rule.text = text;
    script.generations.push_back(rule);
    scorer::MockBackend backend(std::nullopt, script);
    return remedy::preprocess_math_query("How many?", {}, backend, templates);
  };
  auto none = skip_with("Sure! Let me think about this question freely.");
  CHECK_FALSE(none.result.has_value());
  CHECK(none.skip_reason == "no knowledge");
  auto no_answer =
      skip_with("Background Knowledge:\n- Parts add up.\nDistractors: (A) 1 (B) 2\n");
  CHECK(no_answer.skip_reason == "no answer");
  auto thin = skip_with(
      "Background Knowledge:\n- Parts add up.\nAnswer: 5\nDistractors: (A) 7\n");
  CHECK(thin.skip_reason == "too few distractors");
  // Distractors equal to the answer are discarded before the count check.
  auto echoed = skip_with(
      "Background Knowledge:\n- Parts add up.\nAnswer: 5\n"
      "Distractors: (A) 5 (B) 7 (C) 5\n");
  CHECK(echoed.skip_reason == "too few distractors");

  scorer::MockBackend backend(3, {});
  auto blank = remedy::preprocess_math_query("   ", {}, backend, templates);
  CHECK(blank.skip_reason == "empty question");
}

TEST_CASE("order_curriculum sorts ascending by severity and is shuffle-stable") {
  std::vector<diagnose::Deficiency> deficiencies = {
      make_deficiency("q1", "k1", 0.9, "Hard", 3),
      make_deficiency("q1", "k2", 0.15, "Easy", 1),
      make_deficiency("q2", "k1", 0.15, "Easy", 1),
      make_deficiency("q2", "k3", 0.5, "Normal", 2)};
  std::vector<remedy::SynthExample> examples;
  for (const auto& d : deficiencies) {
    for (int ordinal = 0; ordinal < d.budget; ++ordinal) {
      remedy::SynthExample e;
      e.example_id = d.query_id + "-" + d.knowledge_id + "-" + std::to_string(ordinal);
      e.question = "q";
      e.options = {"a", "b", "c"};
      e.answer_index = 0;
      e.explanation = "e";
      e.query_id = d.query_id;
      e.knowledge_id = d.knowledge_id;
      e.ordinal = ordinal;
      // Deliberately wrong here; order_curriculum restores it from the
      // deficiency record.
      e.re = 99.0;
      examples.push_back(e);
    }
  }

  auto manifest = remedy::order_curriculum(examples, deficiencies);
  CHECK(manifest.format_version == "kdiag.manifest.v1");
  REQUIRE(manifest.entries.size() == 7);
  CHECK(std::is_sorted(manifest.entries.begin(), manifest.entries.end(),
                       [](const auto& a, const auto& b) { return a.re < b.re; }));
  // Duplicate REs tie-break on (query_id, knowledge_id, ordinal).
  CHECK(manifest.entries[0].example_id == "q1-k2-0");
  CHECK(manifest.entries[1].example_id == "q2-k1-0");
  CHECK(manifest.entries[2].example_id == "q2-k3-0");
  CHECK(manifest.entries[3].example_id == "q2-k3-1");
  CHECK(manifest.entries[4].example_id == "q1-k1-0");
  CHECK(manifest.entries.back().example_id == "q1-k1-2");
  CHECK(manifest.entries[0].re == 0.15);

  // Any input order produces the identical manifest.
  std::mt19937 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto shuffled = examples;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto again = remedy::order_curriculum(shuffled, deficiencies);
    REQUIRE(again.entries.size() == manifest.entries.size());
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
      CHECK(again.entries[i].example_id == manifest.entries[i].example_id);
    }
  }
}

TEST_CASE("order_curriculum rejects dangling provenance") {
  std::vector<diagnose::Deficiency> deficiencies = {
      make_deficiency("q1", "k1", 0.5, "Normal", 2)};
  remedy::SynthExample orphan;
  orphan.example_id = "e1";
  orphan.query_id = "q1";
  orphan.knowledge_id = "k_gone";
  try {
    remedy::order_curriculum({orphan}, deficiencies);
    FAIL("expected a provenance error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("dangling provenance") != std::string::npos);
    CHECK(std::string(e.what()).find("k_gone") != std::string::npos);
  }
}

TEST_CASE("manifest rendering pairs an instruction input with its answer") {
  remedy::SynthExample example;
  example.question = "Which gas do plants absorb?";
  example.options = {"oxygen", "carbon dioxide", "helium"};
  example.answer_index = 1;
  example.explanation = "Photosynthesis consumes carbon dioxide.";
  CHECK(remedy::manifest_input(example) ==
        "Question: Which gas do plants absorb?\nOptions:\n(A) oxygen\n(B) carbon "
        "dioxide\n(C) helium");
  CHECK(remedy::manifest_output(example) ==
        "Photosynthesis consumes carbon dioxide.\nAnswer: (B) carbon dioxide");
}
