#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "riskeval/record.hpp"

namespace riskeval {

struct ScaffoldOutcome {
  double original_normalized_utility = 0.0;
  double scaffolded_normalized_utility = 0.0;
  double gain = 0.0;  // scaffolded - original
  std::size_t n_overridden_to_abstain = 0;
  // Records the optimal policy could not be applied to: no reported
  // confidence, or an original abstention where the policy would answer
  // (there is no committed answer to grade).
  std::size_t n_unscaffoldable = 0;
};

struct ScaffoldResult {
  std::vector<ItemRecord> records;
  ScaffoldOutcome outcome;
};

// Replaces each answered decision with the optimal one computed from the
// record's own confidence and the shared penalty. Overrides go in one
// direction only (answer -> abstain); original abstentions are never
// converted into answers. Overridden records keep their answer_text and
// grade for audit, which makes the scaffolded sequence an in-memory
// analysis product rather than a valid run file. Idempotent.
ScaffoldResult apply_optimal_policy(std::span<const ItemRecord> recs,
                                    double penalty);

// One gain-table row per (model, dataset, strategy, penalty) cell: the
// normalized utility realized under the model's own decisions, under the
// optimal-policy scaffold, and the signed difference.
struct GainRow {
  std::string model_id;
  std::string dataset_id;
  Strategy strategy = Strategy::base;
  double penalty = 0.0;
  double utility_with_policy = 0.0;
  double utility_with_optimal = 0.0;
  double gain = 0.0;
  std::size_t n_overridden_to_abstain = 0;
  std::size_t n_unscaffoldable = 0;
};

std::vector<GainRow> utility_gain_report(std::span<const ItemRecord> recs);

}  // namespace riskeval
