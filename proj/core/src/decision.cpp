#include "riskeval/decision.hpp"

#include <fmt/format.h>

#include <cmath>

namespace riskeval {

namespace {

void check_penalty(double penalty) {
  if (!(penalty >= 0.0) || std::isnan(penalty)) {
    throw DomainError(fmt::format("penalty must be >= 0, got {}", penalty));
  }
}

void check_confidence(double confidence) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw DomainError(
        fmt::format("confidence out of [0,1]: {}", confidence));
  }
}

}  // namespace

double optimal_threshold(double penalty) {
  check_penalty(penalty);
  return penalty / (1.0 + penalty);
}

double expected_utility_answer(double confidence, double penalty) {
  check_confidence(confidence);
  check_penalty(penalty);
  return confidence * (1.0 + penalty) - penalty;
}

Decision optimal_policy(double confidence, double penalty) {
  check_confidence(confidence);
  return confidence >= optimal_threshold(penalty) ? Decision::answer
                                                  : Decision::abstain;
}

double realized_utility(Decision decision, Correctness correctness,
                        double penalty) {
  check_penalty(penalty);
  if (decision == Decision::abstain) return 0.0;
  switch (correctness) {
    case Correctness::correct:
      return 1.0;
    case Correctness::incorrect:
      return -penalty;
    default:
      throw GradingError("answered record has no grade");
  }
}

RegretValue regret(double confidence, double penalty, Decision decision) {
  if (decision == optimal_policy(confidence, penalty)) return {0.0, 0.0};
  // Suboptimal either way: the utility gap is (1+lambda)|c - tau|, which
  // normalizes to the distance between confidence and the threshold.
  const double normalized =
      std::abs(confidence - optimal_threshold(penalty));
  return {(1.0 + penalty) * normalized, normalized};
}

ActionOutcome evaluate_record(const ItemRecord& rec) {
  if (!rec.confidence) {
    throw DomainError(
        fmt::format("record {} has no confidence", rec.item_id));
  }
  const double c = *rec.confidence;
  ActionOutcome out;
  out.action = rec.decision;
  out.expected_utility_answer = expected_utility_answer(c, rec.penalty);
  out.optimal_action = optimal_policy(c, rec.penalty);
  out.consistent = out.action == out.optimal_action;
  const RegretValue r = regret(c, rec.penalty, rec.decision);
  out.raw_regret = r.raw;
  out.normalized_regret = r.normalized;
  if (rec.decision == Decision::abstain) {
    out.realized_utility = 0.0;
  } else if (rec.correctness != Correctness::ungraded) {
    out.realized_utility =
        realized_utility(rec.decision, rec.correctness, rec.penalty);
  }
  return out;
}

}  // namespace riskeval
