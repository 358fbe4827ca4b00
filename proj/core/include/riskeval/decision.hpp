#pragma once

#include <optional>

#include "riskeval/record.hpp"
#include "riskeval/types.hpp"

namespace riskeval {

// Decision-theoretic evaluation of one record against the Bayes-optimal
// policy induced by its own reported confidence.
struct ActionOutcome {
  Decision action = Decision::answer;
  // Absent when the record carries no usable grade (abstentions score 0).
  std::optional<double> realized_utility;
  // c * (1 + lambda) - lambda, under the reported confidence.
  double expected_utility_answer = 0.0;
  Decision optimal_action = Decision::answer;
  bool consistent = true;
  double raw_regret = 0.0;
  double normalized_regret = 0.0;
};

struct RegretValue {
  double raw = 0.0;
  double normalized = 0.0;
};

// tau(lambda) = lambda / (1 + lambda). Strictly increasing, tau(0) = 0,
// tau < 1 for every finite penalty.
double optimal_threshold(double penalty);

// Expected utility of answering under belief c: c * (1 + lambda) - lambda.
// Zero exactly when c equals tau(lambda).
double expected_utility_answer(double confidence, double penalty);

// Answer iff confidence >= tau(lambda); the tie at equality answers.
Decision optimal_policy(double confidence, double penalty);

// abstain -> 0; answer and correct -> +1; answer and incorrect -> -lambda.
// Answering with an ungraded record throws GradingError.
double realized_utility(Decision decision, Correctness correctness,
                        double penalty);

// Zero when the decision matches the optimal policy; otherwise
// normalized = |c - tau(lambda)| and raw = (1 + lambda) * normalized.
RegretValue regret(double confidence, double penalty, Decision decision);

// Fills every ActionOutcome field. Requires rec.confidence; throws
// DomainError when absent (callers decide how unscored records are
// counted and reported).
ActionOutcome evaluate_record(const ItemRecord& rec);

}  // namespace riskeval
