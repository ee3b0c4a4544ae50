// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kdiag/corpus.hpp"
#include "kdiag/scorer.hpp"

namespace kdiag::diagnose {

enum class DistributionKind { Prior, Posterior };

// Normalized probability vector over one query's options.
struct OptionDistribution {
  std::string query_id;
  std::vector<double> probs;  // sum to 1 within 1e-9, entries in (0, 1]
  DistributionKind kind = DistributionKind::Prior;
  std::optional<std::string> knowledge_id;  // required for posterior
};

// [lower, upper) severity interval; the last row runs to infinity.
struct GroupRow {
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
  std::string name;
  int budget = 0;
};

// Severity intervals over [tau, inf): disjoint, contiguous, budgets positive
// and nondecreasing. Invalid tables never construct.
class GroupTable {
 public:
  GroupTable(std::vector<GroupRow> rows, double tau);
  static GroupTable defaults();

  // Every violation, one message each; empty means valid.
  static std::vector<std::string> validate(const std::vector<GroupRow>& rows,
                                           double tau);

  double tau() const { return tau_; }
  const std::vector<GroupRow>& rows() const { return rows_; }

  // No value below tau; otherwise the unique containing interval.
  std::optional<std::pair<std::string, int>> classify(double re) const;

 private:
  std::vector<GroupRow> rows_;
  double tau_ = 0.0;
};

// One (query, knowledge) unit whose relative entropy cleared tau.
struct Deficiency {
  std::string query_id;
  std::string knowledge_id;
  double re = 0.0;
  std::string group;
  int budget = 0;
  std::optional<std::string> direction;  // Helpful|Misleading|Neutral, labeled only
  std::vector<double> p;
  std::vector<double> q;
};

// Relative entropy for every scored pair, kept below tau or not, so the
// thresholding step can be audited and recomputed independently.
struct PairScore {
  std::string query_id;
  std::string knowledge_id;
  double re = 0.0;
  std::vector<double> p;
  std::vector<double> q;
  std::optional<std::string> direction;
};

struct PairFailure {
  std::string query_id;
  std::string knowledge_id;  // empty when the prior scoring itself failed
  std::string reason;
};

struct DiagnoseOptions {
  bool length_normalize = false;
  double clamp = 1e-12;
  double delta = 1e-6;  // Neutral band half-width for direction tagging
  std::string template_id = "plain";
  size_t in_flight = 1;
};

struct DiagnoseResult {
  std::vector<Deficiency> deficiencies;  // sorted by (query_id, knowledge_id)
  std::vector<PairScore> pair_scores;    // all pairs, same order
  std::vector<PairFailure> failures;
  size_t prior_scorings = 0;
  size_t posterior_scorings = 0;
};

// Softmax over negated NLLs (length-normalized first when requested).
OptionDistribution normalize(const scorer::OptionScores& scores,
                             bool length_normalize = false);

// KL(P||Q) = sum_i P_i (ln P_i - ln Q_i), natural log, probabilities clamped
// to >= clamp before the logs. May return a tiny negative (>= -1e-9).
double relative_entropy(const std::vector<double>& p, const std::vector<double>& q,
                        double clamp = 1e-12);
double relative_entropy(const OptionDistribution& p, const OptionDistribution& q,
                        double clamp = 1e-12);

// Helpful when the knowledge lifts the gold option's probability by more
// than delta, Misleading when it drops it by more than delta, else Neutral.
std::string tag_direction(const OptionDistribution& p, const OptionDistribution& q,
                          std::optional<int> gold_label, double delta = 1e-6);

// Scores one prior per query and one posterior per (query, knowledge), then
// thresholds the relative entropies into deficiencies. Per-pair failures are
// recorded and the batch continues.
DiagnoseResult diagnose_all(
    const std::vector<corpus::Query>& queries,
    const std::map<std::string, std::vector<std::string>>& knowledge_sets,
    const std::vector<corpus::Fact>& facts, scorer::Backend& backend,
    const templates::TemplateSet& templates, const GroupTable& table,
    const DiagnoseOptions& options = {}, scorer::ScoreCache* cache = nullptr);

}  // namespace kdiag::diagnose
