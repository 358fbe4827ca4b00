#include "riskeval/scaffold.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <tuple>

#include "riskeval/decision.hpp"

namespace riskeval {

namespace {

bool utility_defined(const ItemRecord& rec) {
  return rec.decision == Decision::abstain ||
         rec.correctness != Correctness::ungraded;
}

}  // namespace

ScaffoldResult apply_optimal_policy(std::span<const ItemRecord> recs,
                                    double penalty) {
  if (!(penalty >= 0.0)) {
    throw DomainError(fmt::format("penalty must be >= 0, got {}", penalty));
  }
  ScaffoldResult result;
  result.records.reserve(recs.size());

  // Both utilities are averaged over the records whose original utility is
  // defined, so the before/after means share one denominator.
  double original_total = 0.0;
  double scaffolded_total = 0.0;
  std::size_t utility_n = 0;

  for (const ItemRecord& rec : recs) {
    if (rec.penalty != penalty) {
      throw DomainError(
          fmt::format("mixed penalties: expected {}, item {} has {}", penalty,
                      rec.item_id, rec.penalty));
    }
    ItemRecord out = rec;
    if (!is_transport_failed(rec)) {
      if (!rec.confidence) {
        ++result.outcome.n_unscaffoldable;
      } else if (rec.decision == Decision::answer) {
        if (optimal_policy(*rec.confidence, penalty) == Decision::abstain) {
          // answer_text and the grade stay behind for audit; the scaffolded
          // sequence is an analysis product, not a run file.
          out.decision = Decision::abstain;
          ++result.outcome.n_overridden_to_abstain;
        }
      } else if (optimal_policy(*rec.confidence, penalty) ==
                 Decision::answer) {
        // The policy would answer but no committed answer exists to grade.
        ++result.outcome.n_unscaffoldable;
      }
      if (utility_defined(rec)) {
        ++utility_n;
        original_total +=
            realized_utility(rec.decision, rec.correctness, penalty);
        scaffolded_total +=
            realized_utility(out.decision, out.correctness, penalty);
      }
    }
    result.records.push_back(std::move(out));
  }

  if (utility_n > 0) {
    const double scale = static_cast<double>(utility_n) * (1.0 + penalty);
    result.outcome.original_normalized_utility = original_total / scale;
    result.outcome.scaffolded_normalized_utility = scaffolded_total / scale;
  }
  result.outcome.gain = result.outcome.scaffolded_normalized_utility -
                        result.outcome.original_normalized_utility;
  return result;
}

std::vector<GainRow> utility_gain_report(std::span<const ItemRecord> recs) {
  using Key = std::tuple<std::string, std::string, int, double>;
  std::map<Key, std::vector<ItemRecord>> cells;
  for (const auto& rec : recs) {
    if (is_transport_failed(rec)) continue;
    cells[Key{rec.model_id, rec.dataset_id, static_cast<int>(rec.strategy),
              rec.penalty}]
        .push_back(rec);
  }
  std::vector<GainRow> rows;
  rows.reserve(cells.size());
  for (const auto& [key, cell] : cells) {
    const double penalty = std::get<3>(key);
    const ScaffoldOutcome outcome =
        apply_optimal_policy(cell, penalty).outcome;
    GainRow row;
    row.model_id = std::get<0>(key);
    row.dataset_id = std::get<1>(key);
    row.strategy = static_cast<Strategy>(std::get<2>(key));
    row.penalty = penalty;
    row.utility_with_policy = outcome.original_normalized_utility;
    row.utility_with_optimal = outcome.scaffolded_normalized_utility;
    row.gain = outcome.gain;
    row.n_overridden_to_abstain = outcome.n_overridden_to_abstain;
    row.n_unscaffoldable = outcome.n_unscaffoldable;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace riskeval
