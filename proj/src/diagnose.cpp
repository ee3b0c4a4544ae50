// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/diagnose.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <unordered_map>

#include "kdiag/errors.hpp"
#include "kdiag/parallel.hpp"

namespace kdiag::diagnose {

GroupTable::GroupTable(std::vector<GroupRow> rows, double tau)
    : rows_(std::move(rows)), tau_(tau) {
  auto errors = validate(rows_, tau_);
  if (!errors.empty()) {
    std::string joined;
    for (const auto& e : errors) {
      if (!joined.empty()) joined += "; ";
      joined += e;
    }
    throw_config("invalid group table: " + joined);
  }
}

GroupTable GroupTable::defaults() {
  const double inf = std::numeric_limits<double>::infinity();
  return GroupTable({{0.1, 0.4, "Easy", 1},
                     {0.4, 0.7, "Normal", 2},
                     {0.7, 1.0, "Hard", 3},
                     {1.0, inf, "Unfair", 4}},
                    0.1);
}

std::vector<std::string> GroupTable::validate(const std::vector<GroupRow>& rows,
                                              double tau) {
  std::vector<std::string> errors;
  if (tau < 0.0) errors.push_back("tau must be nonnegative");
  if (rows.empty()) {
    errors.push_back("group table has no rows");
    return errors;
  }
  if (rows.front().lower != tau) {
    errors.push_back("intervals must start at tau");
  }
  for (size_t i = 0; i < rows.size(); ++i) {
    if (!(rows[i].lower < rows[i].upper)) {
      errors.push_back("interval " + std::to_string(i) + " (" + rows[i].name +
                       ") is empty or inverted");
    }
    if (rows[i].name.empty()) {
      errors.push_back("interval " + std::to_string(i) + " has no group name");
    }
    if (rows[i].budget <= 0) {
      errors.push_back("budget for group " + rows[i].name + " must be positive");
    }
    if (i > 0) {
      if (rows[i].lower < rows[i - 1].upper) {
        errors.push_back("intervals overlap at " + rows[i].name);
      } else if (rows[i].lower > rows[i - 1].upper) {
        errors.push_back("intervals not contiguous");
      }
      if (rows[i].budget < rows[i - 1].budget) {
        errors.push_back("budgets must be nondecreasing with severity");
      }
    }
  }
  if (std::isfinite(rows.back().upper)) {
    errors.push_back("last interval must extend to infinity");
  }
  return errors;
}

std::optional<std::pair<std::string, int>> GroupTable::classify(double re) const {
  if (re < tau_) return std::nullopt;
  for (const auto& row : rows_) {
    if (re >= row.lower && re < row.upper) return std::make_pair(row.name, row.budget);
  }
  // Unreachable on a valid table; tau alignment and contiguity are enforced.
  return std::nullopt;
}

OptionDistribution normalize(const scorer::OptionScores& scores,
                             bool length_normalize) {
  if (scores.nll.size() < 2) throw_invalid("degenerate distribution");
  if (length_normalize && scores.token_counts.size() != scores.nll.size()) {
    throw_invalid("token counts missing for length normalization");
  }
  OptionDistribution out;
  out.query_id = scores.query_id;
  out.kind = scores.knowledge_id ? DistributionKind::Posterior : DistributionKind::Prior;
  out.knowledge_id = scores.knowledge_id;
  // Log-likelihoods are the negated NLLs; softmax shifted by the max for
  // stability.
  std::vector<double> loglik(scores.nll.size());
  for (size_t i = 0; i < scores.nll.size(); ++i) {
    double nll = scores.nll[i];
    if (!std::isfinite(nll)) throw_invalid("non-finite NLL in normalize");
    if (length_normalize) nll /= static_cast<double>(scores.token_counts[i]);
    loglik[i] = -nll;
  }
  double max_ll = *std::max_element(loglik.begin(), loglik.end());
  double denom = 0.0;
  out.probs.resize(loglik.size());
  for (size_t i = 0; i < loglik.size(); ++i) {
    out.probs[i] = std::exp(loglik[i] - max_ll);
    denom += out.probs[i];
  }
  for (double& prob : out.probs) prob /= denom;
  return out;
}

double relative_entropy(const std::vector<double>& p, const std::vector<double>& q,
                        double clamp) {
  if (p.size() != q.size()) {
    throw_invalid("relative entropy length mismatch: " + std::to_string(p.size()) +
                  " vs " + std::to_string(q.size()));
  }
  if (p.empty()) throw_invalid("relative entropy over empty distributions");
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    double pi = p[i] < clamp ? clamp : p[i];
    double qi = q[i] < clamp ? clamp : q[i];
    sum += pi * (std::log(pi) - std::log(qi));
  }
  return sum;
}

double relative_entropy(const OptionDistribution& p, const OptionDistribution& q,
                        double clamp) {
  if (!p.query_id.empty() && !q.query_id.empty() && p.query_id != q.query_id) {
    throw_invalid("relative entropy across different queries: " + p.query_id +
                  " vs " + q.query_id);
  }
  return relative_entropy(p.probs, q.probs, clamp);
}

std::string tag_direction(const OptionDistribution& p, const OptionDistribution& q,
                          std::optional<int> gold_label, double delta) {
  if (!gold_label) throw_invalid("labeled-mode only");
  int gold = *gold_label;
  if (gold < 0 || static_cast<size_t>(gold) >= p.probs.size() ||
      p.probs.size() != q.probs.size()) {
    throw_invalid("gold label out of range for direction tagging");
  }
  double shift = q.probs[static_cast<size_t>(gold)] - p.probs[static_cast<size_t>(gold)];
  if (shift > delta) return "Helpful";
  if (shift < -delta) return "Misleading";
  return "Neutral";
}

DiagnoseResult diagnose_all(
    const std::vector<corpus::Query>& queries,
    const std::map<std::string, std::vector<std::string>>& knowledge_sets,
    const std::vector<corpus::Fact>& facts, scorer::Backend& backend,
    const templates::TemplateSet& templates, const GroupTable& table,
    const DiagnoseOptions& options, scorer::ScoreCache* cache) {
  std::unordered_map<std::string, const corpus::Fact*> fact_by_id;
  for (const auto& fact : facts) fact_by_id[fact.fact_id] = &fact;

  DiagnoseResult result;
  std::mutex collect_mutex;
  std::atomic<size_t> prior_count{0};
  std::atomic<size_t> posterior_count{0};

  parallel_for(queries.size(), options.in_flight, [&](size_t qi) {
    const corpus::Query& query = queries[qi];
    auto set_it = knowledge_sets.find(query.query_id);
    if (set_it == knowledge_sets.end() || set_it->second.empty()) return;
    const auto& knowledge_ids = set_it->second;

    scorer::ScoreRequest prior_req;
    prior_req.query_id = query.query_id;
    prior_req.question = query.question;
    prior_req.options = query.options;
    prior_req.prompt_template_id = options.template_id;

    OptionDistribution prior;
    try {
      prior_count.fetch_add(1);
      prior = normalize(scorer::score_options(prior_req, backend, templates, cache),
                        options.length_normalize);
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(collect_mutex);
      // Prior failed: every pair of this query is unprocessable.
      for (const auto& kid : knowledge_ids) {
        result.failures.push_back({query.query_id, kid,
                                   std::string("prior scoring failed: ") + e.what()});
      }
      return;
    }

    for (const auto& knowledge_id : knowledge_ids) {
      auto fact_it = fact_by_id.find(knowledge_id);
      if (fact_it == fact_by_id.end()) {
        std::lock_guard<std::mutex> lock(collect_mutex);
        result.failures.push_back({query.query_id, knowledge_id, "unknown fact id"});
        continue;
      }
      try {
        scorer::ScoreRequest post_req = prior_req;
        post_req.knowledge = fact_it->second->text;
        post_req.knowledge_id = knowledge_id;
        posterior_count.fetch_add(1);
        OptionDistribution posterior =
            normalize(scorer::score_options(post_req, backend, templates, cache),
                      options.length_normalize);
        double re = relative_entropy(prior, posterior, options.clamp);

        PairScore pair;
        pair.query_id = query.query_id;
        pair.knowledge_id = knowledge_id;
        pair.re = re;
        pair.p = prior.probs;
        pair.q = posterior.probs;
        if (query.gold_label) {
          pair.direction =
              tag_direction(prior, posterior, query.gold_label, options.delta);
        }

        std::lock_guard<std::mutex> lock(collect_mutex);
        if (auto hit = table.classify(re)) {
          Deficiency d;
          d.query_id = pair.query_id;
          d.knowledge_id = pair.knowledge_id;
          d.re = re;
          d.group = hit->first;
          d.budget = hit->second;
          d.direction = pair.direction;
          d.p = pair.p;
          d.q = pair.q;
          result.deficiencies.push_back(std::move(d));
        }
        result.pair_scores.push_back(std::move(pair));
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(collect_mutex);
        result.failures.push_back({query.query_id, knowledge_id,
                                   std::string("posterior scoring failed: ") + e.what()});
      }
    }
  });

  // Canonical order regardless of completion order.
  auto pair_order = [](const auto& a, const auto& b) {
    if (a.query_id != b.query_id) return a.query_id < b.query_id;
    return a.knowledge_id < b.knowledge_id;
  };
  std::sort(result.deficiencies.begin(), result.deficiencies.end(), pair_order);
  std::sort(result.pair_scores.begin(), result.pair_scores.end(), pair_order);
  std::sort(result.failures.begin(), result.failures.end(),
            [](const PairFailure& a, const PairFailure& b) {
              if (a.query_id != b.query_id) return a.query_id < b.query_id;
              return a.knowledge_id < b.knowledge_id;
            });
  result.prior_scorings = prior_count.load();
  result.posterior_scorings = posterior_count.load();
  return result;
}

}  // namespace kdiag::diagnose
