#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riskeval/record.hpp"

namespace riskeval {

// All calibration and decision metrics for one (model, dataset, strategy,
// penalty) cell. Optional metrics are absent exactly when their population
// is empty:
//   accuracy_answered, auarc, ece10, brier  -> answered, graded, confident
//   policy_consistency, mean_normalized_regret, mean_confidence -> confident
struct MetricsSummary {
  std::string model_id;
  std::string dataset_id;
  Strategy strategy = Strategy::base;
  double penalty = 0.0;
  std::size_t n_total = 0;
  std::size_t n_answered = 0;
  std::size_t n_graded = 0;  // answered records carrying a grade
  std::size_t n_with_confidence = 0;
  double abstention_rate = 0.0;
  std::optional<double> accuracy_answered;
  double avg_utility = 0.0;
  double normalized_utility = 0.0;  // avg_utility / (1 + penalty)
  std::optional<double> policy_consistency;
  std::optional<double> mean_normalized_regret;
  std::optional<double> auarc;
  std::optional<double> ece10;
  std::optional<double> brier;
  std::optional<double> mean_confidence;
  // Per-partition notes (excluded records, unscored counts). Not a CSV
  // column; serialized to JSON only when non-empty.
  std::vector<std::string> diagnostics;
};

// Fraction of records that abstained. Throws DomainError on an empty set.
double abstention_rate(std::span<const ItemRecord> recs);

// Fraction correct among answered-and-graded records; absent if none.
std::optional<double> accuracy_answered(std::span<const ItemRecord> recs);

struct UtilityPair {
  double avg = 0.0;
  double normalized = 0.0;
};

// Mean realized utility and its penalty-normalized form. Every record must
// carry `penalty` (DomainError otherwise) and answered records must be
// graded (GradingError otherwise).
UtilityPair average_utility(std::span<const ItemRecord> recs, double penalty);

// Fraction of confidence-bearing records whose decision matches the optimal
// policy at this penalty; absent when no record carries confidence.
std::optional<double> policy_consistency(std::span<const ItemRecord> recs,
                                         double penalty);

// Mean normalized regret over confidence-bearing records; absent when none.
std::optional<double> mean_normalized_regret(std::span<const ItemRecord> recs,
                                             double penalty);

// Expected calibration error over 10 equal-width bins. Bin edges are
// [0,0.1), [0.1,0.2), ..., [0.9,1.0]; c = 1.0 lands in the top bin.
std::optional<double> ece10(std::span<const ItemRecord> recs);

// Mean squared error between confidence and the 0/1 correctness outcome.
std::optional<double> brier(std::span<const ItemRecord> recs);

// Area under the accuracy-rejection curve: sort the N answered, graded,
// confidence-bearing records by descending confidence (ties by ascending
// item_id), and average the accuracy of the N-k highest-confidence records
// over the discrete rejection levels k = 0..N-1.
std::optional<double> auarc(std::span<const ItemRecord> recs);

// Mean reported confidence over confidence-bearing records; absent if none.
std::optional<double> mean_confidence(std::span<const ItemRecord> recs);

// Partitions by (model_id, dataset_id, strategy, penalty) and computes all
// fields. Output is sorted by that key, so it is independent of input and
// evaluation order. Transport-failed records are excluded from every
// population and reported in diagnostics; so are answered-but-ungraded
// records for the utility mean and confidence-free records for the policy
// metrics.
std::vector<MetricsSummary> summarize(std::span<const ItemRecord> recs);

// CSV columns in the fixed MetricsSummary field order; absent values are
// empty cells. Full precision (shortest round-trip formatting).
std::string summaries_to_csv(std::span<const MetricsSummary> summaries);

// JSON array, one object per partition, absent metrics omitted.
std::string summaries_to_json(std::span<const MetricsSummary> summaries);
std::vector<MetricsSummary> summaries_from_json_text(const std::string& text);

}  // namespace riskeval
