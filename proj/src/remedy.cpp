// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/remedy.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "kdiag/errors.hpp"
#include "kdiag/hashing.hpp"
#include "kdiag/parallel.hpp"
#include "kdiag/templates.hpp"
#include "kdiag/text.hpp"

namespace kdiag::remedy {

namespace {

const char* kLabels[] = {"Question:", "Solution:", "Options:", "Answer:",
                         "Explanation:"};

// Field blocks delimited by "Question:" lines; other labeled lines switch
// the active field and anything else continues it.
struct RawBlock {
  std::map<std::string, std::string> fields;
};

std::optional<std::string> match_label(const std::string& line) {
  for (const char* label : kLabels) {
    if (line.rfind(label, 0) == 0) return std::string(label);
  }
  return std::nullopt;
}

void append_field(RawBlock& block, const std::string& field, const std::string& text) {
  auto& slot = block.fields[field];
  if (!slot.empty()) slot += '\n';
  slot += text;
}

std::vector<RawBlock> split_blocks(const std::string& text) {
  std::vector<RawBlock> blocks;
  std::string current_field;
  for (const auto& raw_line : text::split_lines(text)) {
    std::string line = text::trim(raw_line);
    auto label = match_label(line);
    if (label == "Question:") {
      blocks.emplace_back();
      current_field = *label;
      append_field(blocks.back(), current_field,
                   text::trim(line.substr(label->size())));
      continue;
    }
    if (blocks.empty()) continue;  // preamble before the first block
    if (label) {
      current_field = *label;
      append_field(blocks.back(), current_field,
                   text::trim(line.substr(label->size())));
      continue;
    }
    if (!current_field.empty() && !line.empty()) {
      append_field(blocks.back(), current_field, line);
    }
  }
  return blocks;
}

// Slices "(A) first (B) second" (possibly multi-line) into option texts.
std::vector<std::string> split_options(const std::string& body) {
  std::vector<size_t> starts;
  size_t from = 0;
  for (int i = 0; i < 26; ++i) {
    std::string marker = "(" + std::string(1, static_cast<char>('A' + i)) + ")";
    auto pos = body.find(marker, from);
    if (pos == std::string::npos) break;
    starts.push_back(pos);
    from = pos + marker.size();
  }
  std::vector<std::string> out;
  for (size_t k = 0; k < starts.size(); ++k) {
    size_t begin = starts[k] + 3;
    size_t end = (k + 1 < starts.size()) ? starts[k + 1] : body.size();
    out.push_back(text::trim(body.substr(begin, end - begin)));
  }
  return out;
}

std::string field_of(const RawBlock& block, const std::string& label) {
  auto it = block.fields.find(label);
  return it == block.fields.end() ? std::string() : text::trim(it->second);
}

// Validates one raw block into an example or a rejection reason.
std::optional<std::string> convert_block(const RawBlock& block, SynthStyle style,
                                         ParsedExample& out) {
  out.question = field_of(block, "Question:");
  if (out.question.empty()) return "missing question";

  std::string options_body = field_of(block, "Options:");
  if (options_body.empty()) return "missing options";
  out.options = split_options(options_body);
  if (out.options.empty()) return "missing options";
  if (out.options.size() < 3) return "too few options";
  std::unordered_set<std::string> seen;
  for (const auto& option : out.options) {
    if (option.empty()) return "empty option";
    if (!seen.insert(text::normalize(option)).second) return "duplicate options";
  }

  std::string answer_body = field_of(block, "Answer:");
  if (answer_body.empty()) return "missing answer";
  int answer_idx = text::first_option_marker(answer_body);
  if (answer_idx < 0) return "no option letter in answer";
  if (answer_idx >= static_cast<int>(out.options.size())) return "answer out of range";
  out.answer_index = answer_idx;

  if (style == SynthStyle::Math) {
    out.explanation = field_of(block, "Solution:");
    if (out.explanation.empty()) return "missing solution";
  } else {
    out.explanation = field_of(block, "Explanation:");
    if (out.explanation.empty()) return "missing explanation";
  }
  return std::nullopt;
}

SynthStyle style_for_query(const corpus::Query& query,
                           const std::map<std::string, std::string>& style_map) {
  for (const auto& tag : query.tags) {
    auto it = style_map.find(tag);
    if (it == style_map.end()) continue;
    if (it->second == "math") return SynthStyle::Math;
    if (it->second == "reasoning") return SynthStyle::Reasoning;
    throw_config("unknown style \"" + it->second + "\" for tag \"" + tag + "\"");
  }
  return SynthStyle::Reasoning;
}

std::string render_reference(const corpus::Query& query) {
  return "Question: " + query.question + "\nOptions:\n" +
         templates::render_options(query.options);
}

}  // namespace

std::string style_name(SynthStyle style) {
  return style == SynthStyle::Math ? "math" : "reasoning";
}

PlanResult plan_budgets(const std::vector<diagnose::Deficiency>& deficiencies,
                        const std::vector<corpus::Query>& queries,
                        const std::vector<corpus::Fact>& facts,
                        const std::map<std::string, std::string>& style_map,
                        std::optional<long long> expected_total) {
  std::unordered_map<std::string, const corpus::Query*> query_by_id;
  for (const auto& query : queries) query_by_id[query.query_id] = &query;
  std::unordered_map<std::string, const corpus::Fact*> fact_by_id;
  for (const auto& fact : facts) fact_by_id[fact.fact_id] = &fact;

  PlanResult result;
  // group -> (deficiency count, budget)
  std::map<std::string, std::pair<long long, int>> groups;
  for (const auto& d : deficiencies) {
    auto query_it = query_by_id.find(d.query_id);
    if (query_it == query_by_id.end()) {
      throw_invalid("deficiency references unknown query " + d.query_id);
    }
    auto fact_it = fact_by_id.find(d.knowledge_id);
    if (fact_it == fact_by_id.end()) {
      throw_invalid("deficiency references unknown fact " + d.knowledge_id);
    }
    if (text::trim(fact_it->second->text).empty()) {
      throw_invalid("deficiency " + d.query_id + "/" + d.knowledge_id +
                    " has empty knowledge text");
    }
    SynthesisJob job;
    job.query_id = d.query_id;
    job.knowledge_id = d.knowledge_id;
    job.re = d.re;
    job.group = d.group;
    job.n_examples = d.budget;
    job.style = style_for_query(*query_it->second, style_map);
    job.knowledge_text = fact_it->second->text;
    job.reference_example = render_reference(*query_it->second);
    result.jobs.push_back(std::move(job));

    auto& slot = groups[d.group];
    slot.first += 1;
    slot.second = d.budget;
    result.totals.total_examples += d.budget;
  }

  // Severity order: budgets are nondecreasing with severity, so sort on
  // (budget, name) rather than requiring the table here.
  std::vector<std::pair<std::string, std::pair<long long, int>>> ordered(
      groups.begin(), groups.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second.second != b.second.second) return a.second.second < b.second.second;
    return a.first < b.first;
  });
  for (const auto& [name, slot] : ordered) {
    result.totals.group_deficiencies.emplace_back(name, slot.first);
    result.totals.group_examples.emplace_back(name, slot.first * slot.second);
  }
  result.totals.expected_total = expected_total;
  if (expected_total && *expected_total != result.totals.total_examples) {
    result.totals.warnings.push_back(
        "planned total " + std::to_string(result.totals.total_examples) +
        " differs from configured expected total " + std::to_string(*expected_total));
  }
  return result;
}

std::string build_prompt(SynthesisJob& job, const templates::TemplateSet& templates) {
  if (text::trim(job.knowledge_text).empty()) {
    throw_invalid("synthesis job has empty knowledge text");
  }
  if (job.n_examples < 1) throw_invalid("synthesis job requests no examples");
  const std::string& tmpl = job.style == SynthStyle::Math ? templates.synth_math()
                                                          : templates.synth_reasoning();
  job.prompt = templates::render(tmpl, {{"knowledge", job.knowledge_text},
                                        {"examples", job.reference_example},
                                        {"n", std::to_string(job.n_examples)}});
  if (job.prompt.find(job.knowledge_text) == std::string::npos ||
      job.prompt.find(job.reference_example) == std::string::npos) {
    throw_state("synthesis template dropped the knowledge or reference text");
  }
  return job.prompt;
}

std::pair<std::vector<ParsedExample>, ParseReport> parse_response(
    const std::string& text, int expected_n, SynthStyle style) {
  std::vector<ParsedExample> examples;
  ParseReport report;
  auto blocks = split_blocks(text);
  for (size_t i = 0; i < blocks.size(); ++i) {
    ParsedExample example;
    auto reason = convert_block(blocks[i], style, example);
    if (reason) {
      report.malformed += 1;
      report.issues.push_back({static_cast<int>(i + 1), *reason});
      continue;
    }
    if (expected_n >= 0 && static_cast<int>(examples.size()) >= expected_n) {
      report.truncated = true;
      report.issues.push_back({static_cast<int>(i + 1), "beyond requested count"});
      continue;
    }
    examples.push_back(std::move(example));
  }
  report.found = static_cast<int>(examples.size());
  return {std::move(examples), std::move(report)};
}

std::vector<SynthExample> attach_provenance(const SynthesisJob& job,
                                            const std::vector<ParsedExample>& parsed) {
  std::vector<SynthExample> out;
  out.reserve(parsed.size());
  for (size_t i = 0; i < parsed.size(); ++i) {
    SynthExample example;
    example.question = parsed[i].question;
    example.options = parsed[i].options;
    example.answer_index = parsed[i].answer_index;
    example.explanation = parsed[i].explanation;
    example.query_id = job.query_id;
    example.knowledge_id = job.knowledge_id;
    example.ordinal = static_cast<int>(i);
    example.re = job.re;
    example.group = job.group;
    example.example_id = hashing::content_id(
        job.query_id + "\x1f" + job.knowledge_id + "\x1f" + std::to_string(i) +
        "\x1f" + text::normalize(parsed[i].question));
    out.push_back(std::move(example));
  }
  return out;
}

SynthesisOutcome synthesize_all(std::vector<SynthesisJob>& jobs,
                                scorer::Backend& backend,
                                const templates::TemplateSet& templates,
                                scorer::ScoreCache* cache, int max_retries,
                                size_t in_flight) {
  std::vector<std::vector<SynthExample>> per_job(jobs.size());
  std::vector<JobReport> reports(jobs.size());

  parallel_for(jobs.size(), in_flight, [&](size_t i) {
    SynthesisJob& job = jobs[i];
    if (job.prompt.empty()) build_prompt(job, templates);
    JobReport& report = reports[i];
    report.query_id = job.query_id;
    report.knowledge_id = job.knowledge_id;

    const int attempts_allowed = 1 + std::max(0, max_retries);
    for (int attempt = 0; attempt < attempts_allowed; ++attempt) {
      report.attempts = attempt + 1;
      std::string response;
      try {
        // First attempt may replay the cache; retries force a fresh call.
        response = attempt == 0
                       ? scorer::generate_with_cache(backend, job.prompt, cache).text
                       : backend.generate(job.prompt).text;
      } catch (const std::exception& e) {
        report.issues.push_back({0, std::string("generation failed: ") + e.what()});
        continue;
      }
      auto [parsed, parse_report] = parse_response(response, job.n_examples, job.style);
      report.found = parse_report.found;
      report.malformed = parse_report.malformed;
      for (const auto& issue : parse_report.issues) report.issues.push_back(issue);
      if (!parsed.empty()) {
        per_job[i] = attach_provenance(job, parsed);
        break;
      }
    }
    report.failed = per_job[i].empty();
  });

  SynthesisOutcome outcome;
  outcome.reports = std::move(reports);
  for (auto& examples : per_job) {
    for (auto& example : examples) outcome.examples.push_back(std::move(example));
  }
  return outcome;
}

PreprocessOutcome preprocess_math_query(const std::string& question,
                                        const std::vector<std::string>& tags,
                                        scorer::Backend& backend,
                                        const templates::TemplateSet& templates,
                                        scorer::ScoreCache* cache) {
  if (text::trim(question).empty()) return {std::nullopt, "empty question"};
  const std::string prompt =
      templates::render(templates.preprocess_math(), {{"question", question}});
  const std::string response =
      scorer::generate_with_cache(backend, prompt, cache).text;

  // Section splitter over the Background Knowledge / Explanation / Answer /
  // Distractors scaffold.
  const char* section_labels[] = {"Background Knowledge:", "Explanation:", "Answer:",
                                  "Distractors:"};
  std::map<std::string, std::string> sections;
  std::string current;
  for (const auto& raw_line : text::split_lines(response)) {
    std::string line = text::trim(raw_line);
    bool matched = false;
    for (const char* label : section_labels) {
      if (line.rfind(label, 0) == 0) {
        current = label;
        std::string rest = text::trim(line.substr(std::string(label).size()));
        if (!rest.empty()) {
          auto& slot = sections[current];
          if (!slot.empty()) slot += '\n';
          slot += rest;
        } else {
          sections[current];  // open the section even when the label is bare
        }
        matched = true;
        break;
      }
    }
    if (matched || current.empty() || line.empty()) continue;
    auto& slot = sections[current];
    if (!slot.empty()) slot += '\n';
    slot += line;
  }

  std::vector<std::string> knowledge;
  for (const auto& line : text::split_lines(sections["Background Knowledge:"])) {
    std::string item = text::trim(line);
    if (item.rfind("- ", 0) == 0) item = text::trim(item.substr(2));
    if (!item.empty()) knowledge.push_back(item);
  }
  if (knowledge.empty()) return {std::nullopt, "no knowledge"};

  std::string answer = text::trim(sections["Answer:"]);
  if (answer.empty()) return {std::nullopt, "no answer"};

  std::vector<std::string> distractors = split_options(sections["Distractors:"]);
  if (distractors.empty()) return {std::nullopt, "no distractors"};
  std::erase_if(distractors, [&](const std::string& d) {
    return d.empty() || text::normalize(d) == text::normalize(answer);
  });
  if (distractors.size() < 2) return {std::nullopt, "too few distractors"};

  // Deterministic gold position from the question text.
  size_t gold = text::fnv1a64(text::normalize(question)) % (distractors.size() + 1);
  PreprocessedQuery out;
  out.knowledge = std::move(knowledge);
  out.query.question = question;
  out.query.tags = tags;
  out.query.options = std::move(distractors);
  out.query.options.insert(out.query.options.begin() + static_cast<std::ptrdiff_t>(gold),
                           answer);
  out.query.gold_label = static_cast<int>(gold);
  out.query.query_id =
      corpus::query_id_for(out.query.question, out.query.options, out.query.gold_label);
  return {std::move(out), ""};
}

CurriculumManifest order_curriculum(
    const std::vector<SynthExample>& examples,
    const std::vector<diagnose::Deficiency>& deficiencies) {
  std::unordered_map<std::string, const diagnose::Deficiency*> by_key;
  for (const auto& d : deficiencies) {
    by_key[d.query_id + "\x1f" + d.knowledge_id] = &d;
  }
  CurriculumManifest manifest;
  manifest.entries = examples;
  for (auto& entry : manifest.entries) {
    auto it = by_key.find(entry.query_id + "\x1f" + entry.knowledge_id);
    if (it == by_key.end()) {
      throw_invalid("example " + entry.example_id +
                    " has dangling provenance: " + entry.query_id + "/" +
                    entry.knowledge_id);
    }
    entry.re = it->second->re;  // authoritative ordering key
    entry.group = it->second->group;
  }
  std::stable_sort(manifest.entries.begin(), manifest.entries.end(),
                   [](const SynthExample& a, const SynthExample& b) {
                     if (a.re != b.re) return a.re < b.re;
                     if (a.query_id != b.query_id) return a.query_id < b.query_id;
                     if (a.knowledge_id != b.knowledge_id) {
                       return a.knowledge_id < b.knowledge_id;
                     }
                     return a.ordinal < b.ordinal;
                   });
  return manifest;
}

std::string manifest_input(const SynthExample& example) {
  return "Question: " + example.question + "\nOptions:\n" +
         templates::render_options(example.options);
}

std::string manifest_output(const SynthExample& example) {
  return example.explanation + "\nAnswer: " +
         text::option_letter(example.answer_index) + " " +
         example.options[static_cast<size_t>(example.answer_index)];
}

}  // namespace kdiag::remedy
