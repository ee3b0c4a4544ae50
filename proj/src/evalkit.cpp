// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/evalkit.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <random>

#include "kdiag/errors.hpp"
#include "kdiag/parallel.hpp"
#include "kdiag/text.hpp"

namespace kdiag::evalkit {

namespace {

void require_gold(const corpus::Query& query, const char* method) {
  if (!query.gold_label) {
    throw_invalid(std::string(method) + " is labeled-mode only; query " +
                  query.query_id + " has no gold label");
  }
}

void finalize_flagged(std::vector<std::string>& flagged) {
  std::sort(flagged.begin(), flagged.end());
  flagged.erase(std::unique(flagged.begin(), flagged.end()), flagged.end());
}

// Unbiased bounded draw via rejection; std::uniform_int_distribution is
// implementation-defined and would break cross-platform golden files.
std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t value = rng();
  while (value >= limit) value = rng();
  return value % bound;
}

double percent(long long numerator, long long denominator) {
  if (denominator == 0) return 0.0;
  return 100.0 * static_cast<double>(numerator) / static_cast<double>(denominator);
}

}  // namespace

std::string method_name(Method method) {
  switch (method) {
    case Method::GoldenLabel: return "Golden Label";
    case Method::Perplexity: return "Perplexity";
    case Method::Random: return "Random";
    case Method::RelativeEntropy: return "Relative Entropy";
  }
  return "Unknown";
}

bool method_label_free(Method method) {
  return method == Method::Random || method == Method::RelativeEntropy;
}

GoldenResult golden_label_detect(const std::vector<corpus::Query>& queries,
                                 scorer::Backend& backend,
                                 const templates::TemplateSet& templates,
                                 const EvalOptions& options,
                                 scorer::ScoreCache* cache) {
  for (const auto& query : queries) require_gold(query, "golden_label_detect");

  std::vector<GoldenRecord> records(queries.size());
  parallel_for(queries.size(), options.in_flight, [&](size_t i) {
    const corpus::Query& query = queries[i];
    scorer::ScoreRequest req;
    req.query_id = query.query_id;
    req.question = query.question;
    req.options = query.options;
    req.prompt_template_id = options.template_id;
    auto generation = scorer::generate(req, backend, templates, cache);

    GoldenRecord& record = records[i];
    record.query_id = query.query_id;
    record.gold = *query.gold_label;
    int parsed = text::first_option_marker(generation.text);
    if (parsed >= 0 && parsed < static_cast<int>(query.options.size())) {
      record.predicted = parsed;
      record.wrong = parsed != record.gold;
    } else {
      record.predicted = std::nullopt;
      record.wrong = options.flag_unparseable;
    }
  });

  GoldenResult result;
  result.run.method = Method::GoldenLabel;
  for (const auto& record : records) {
    if (record.wrong) result.run.flagged.push_back(record.query_id);
  }
  finalize_flagged(result.run.flagged);
  result.records = std::move(records);
  std::sort(result.records.begin(), result.records.end(),
            [](const GoldenRecord& a, const GoldenRecord& b) {
              return a.query_id < b.query_id;
            });
  return result;
}

PerplexityResult perplexity_detect(const std::vector<corpus::Query>& queries,
                                   scorer::Backend& backend,
                                   const templates::TemplateSet& templates,
                                   const EvalOptions& options,
                                   scorer::ScoreCache* cache) {
  for (const auto& query : queries) require_gold(query, "perplexity_detect");

  std::vector<PerplexityRecord> records(queries.size());
  parallel_for(queries.size(), options.in_flight, [&](size_t i) {
    const corpus::Query& query = queries[i];
    scorer::ScoreRequest req;
    req.query_id = query.query_id;
    req.question = query.question;
    req.options = query.options;
    req.prompt_template_id = options.template_id;
    auto scores = scorer::score_options(req, backend, templates, cache);

    PerplexityRecord& record = records[i];
    record.query_id = query.query_id;
    record.gold = *query.gold_label;
    record.nll = scores.nll;
    record.token_counts = scores.token_counts;

    // Argmin of (length-normalized) NLL; the lowest index wins ties.
    int best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    bool tie = false;
    for (size_t j = 0; j < scores.nll.size(); ++j) {
      double value = scores.nll[j];
      if (options.length_normalize) {
        value /= static_cast<double>(scores.token_counts[j]);
      }
      if (value < best_value) {
        best = static_cast<int>(j);
        best_value = value;
        tie = false;
      } else if (value == best_value) {
        tie = true;
      }
    }
    record.predicted = best;
    record.tie = tie;
  });

  PerplexityResult result;
  result.run.method = Method::Perplexity;
  for (const auto& record : records) {
    if (record.tie) result.ties += 1;
    if (record.predicted != record.gold) result.run.flagged.push_back(record.query_id);
  }
  finalize_flagged(result.run.flagged);
  result.records = std::move(records);
  std::sort(result.records.begin(), result.records.end(),
            [](const PerplexityRecord& a, const PerplexityRecord& b) {
              return a.query_id < b.query_id;
            });
  return result;
}

DetectionRun random_detect(const std::vector<std::string>& query_ids,
                           size_t truth_size, std::uint64_t seed) {
  if (truth_size > query_ids.size()) {
    throw_invalid("random sample size " + std::to_string(truth_size) +
                  " exceeds query count " + std::to_string(query_ids.size()));
  }
  // Canonical id order first so the draw depends only on (set, seed).
  std::vector<std::string> pool = query_ids;
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  if (truth_size > pool.size()) {
    throw_invalid("random sample size exceeds distinct query count");
  }

  std::mt19937_64 rng(seed);
  for (size_t i = 0; i < truth_size; ++i) {
    size_t j = i + static_cast<size_t>(bounded_draw(rng, pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  DetectionRun run;
  run.method = Method::Random;
  run.seed = seed;
  run.sample_size = truth_size;
  run.flagged.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(truth_size));
  finalize_flagged(run.flagged);
  return run;
}

DetectionRun re_detect(const std::vector<diagnose::Deficiency>& deficiencies,
                       double tau) {
  DetectionRun run;
  run.method = Method::RelativeEntropy;
  run.tau = tau;
  for (const auto& d : deficiencies) run.flagged.push_back(d.query_id);
  finalize_flagged(run.flagged);
  return run;
}

DetectionMetrics score_detection(const DetectionRun& run,
                                 const std::set<std::string>& truth) {
  DetectionMetrics metrics;
  for (const auto& id : run.flagged) {
    if (truth.count(id)) {
      metrics.tp += 1;
    } else {
      metrics.fp += 1;
    }
  }
  metrics.fn = static_cast<long long>(truth.size()) - metrics.tp;
  metrics.precision = percent(metrics.tp, metrics.tp + metrics.fp);
  metrics.recall = percent(metrics.tp, metrics.tp + metrics.fn);
  if (metrics.precision + metrics.recall > 0.0) {
    metrics.f1 = 2.0 * metrics.precision * metrics.recall /
                 (metrics.precision + metrics.recall);
  }
  metrics.empty_warning = truth.empty() && run.flagged.empty();
  return metrics;
}

std::string render_report(const std::vector<ReportRow>& rows) {
  struct Cells {
    std::string method, label_free, precision, recall, f1, tp, fp, fn, params;
  };
  std::vector<Cells> table;
  table.push_back({"Method", "Label Free", "Precision", "Recall", "F1", "TP", "FP",
                   "FN", "Params"});
  for (const auto& row : rows) {
    table.push_back({method_name(row.method), row.label_free ? "Yes" : "No",
                     text::format_percent(row.metrics.precision),
                     text::format_percent(row.metrics.recall),
                     text::format_percent(row.metrics.f1),
                     std::to_string(row.metrics.tp), std::to_string(row.metrics.fp),
                     std::to_string(row.metrics.fn), row.params});
  }
  size_t widths[9] = {0};
  auto columns = [](const Cells& c) {
    return std::array<const std::string*, 9>{&c.method, &c.label_free, &c.precision,
                                             &c.recall, &c.f1, &c.tp, &c.fp, &c.fn,
                                             &c.params};
  };
  for (const auto& row : table) {
    auto cols = columns(row);
    for (size_t i = 0; i < 9; ++i) widths[i] = std::max(widths[i], cols[i]->size());
  }
  std::string out;
  for (size_t r = 0; r < table.size(); ++r) {
    auto cols = columns(table[r]);
    std::string line;
    for (size_t i = 0; i < 9; ++i) {
      if (i > 0) line += "  ";
      line += *cols[i];
      if (i + 1 < 9) line.append(widths[i] - cols[i]->size(), ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line;
    out += '\n';
    if (r == 0) {
      size_t total = 0;
      for (size_t i = 0; i < 9; ++i) total += widths[i] + (i > 0 ? 2 : 0);
      out.append(total, '-');
      out += '\n';
    }
  }
  return out;
}

}  // namespace kdiag::evalkit
