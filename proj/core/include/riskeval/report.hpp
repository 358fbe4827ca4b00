#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riskeval/metrics.hpp"
#include "riskeval/scaffold.hpp"

namespace riskeval {

// high_penalty keeps exactly the grid points with penalty >= 10.
enum class Regime { all, high_penalty };

inline constexpr double kHighPenaltyMin = 10.0;

const char* to_string(Regime regime);
Regime regime_from_string(const std::string& s);

// A metric averaged over penalties, with the contributing-point count
// (absent values are excluded pairwise).
struct Averaged {
  std::optional<double> value;
  std::size_t n = 0;
};

struct RegimeAverage {
  std::string model_id;
  std::string dataset_id;
  Strategy strategy = Strategy::base;
  Regime regime = Regime::all;
  std::vector<double> penalties;  // qualifying grid points, ascending
  Averaged abstention_rate;
  Averaged accuracy_answered;
  Averaged avg_utility;
  Averaged normalized_utility;
  Averaged policy_consistency;
  Averaged mean_normalized_regret;
  Averaged auarc;
  Averaged ece10;
  Averaged brier;
  Averaged mean_confidence;
};

// Unweighted mean of each metric over the qualifying penalties of one cell.
// All summaries must share (model, dataset, strategy); throws DomainError
// when no grid point qualifies for the regime.
RegimeAverage regime_average(std::span<const MetricsSummary> summaries,
                             Regime regime);

// regime_average applied per cell, sorted by cell key.
std::vector<RegimeAverage> regime_averages(
    std::span<const MetricsSummary> summaries, Regime regime);

struct SeriesPoint {
  std::string model_id;
  std::string dataset_id;
  Strategy strategy = Strategy::base;
  double penalty = 0.0;
  std::optional<double> value;
};

// Ascending-penalty series of one MetricsSummary metric per cell, for
// plotting. Unknown metric names throw DomainError listing the valid ones.
std::vector<SeriesPoint> penalty_series(
    std::span<const MetricsSummary> summaries, const std::string& metric_name);

const std::vector<std::string>& series_metric_names();

// CSV with columns model,dataset,strategy,penalty,metric,value.
std::string series_to_csv(std::span<const SeriesPoint> points,
                          const std::string& metric_name);

// Per (model, dataset, penalty): use_confidence minus base.
struct StrategyDelta {
  std::string model_id;
  std::string dataset_id;
  double penalty = 0.0;
  std::optional<double> d_mean_confidence;
  std::optional<double> d_policy_consistency;
  double d_abstention_rate = 0.0;
};

// Requires matching cell keys and penalty grids on both sides; throws
// DomainError listing every unmatched key or grid point.
std::vector<StrategyDelta> strategy_delta(
    std::span<const MetricsSummary> base,
    std::span<const MetricsSummary> use_confidence);

std::string deltas_to_csv(std::span<const StrategyDelta> deltas);

// Display rounding: three decimals, half away from zero. Machine outputs
// keep full precision; only the human-facing table cells round.
double round_display(double value);
std::string format_display(double value);

// "value (+ gain)" cell, e.g. "-0.169 (+ 0.348)" or "0.425 (- 0.009)".
std::string format_value_with_gain(double value, double gain);

// One formatted results-table row per cell: calibration metrics, decision
// metrics, and the normalized utility under the model's own policy next to
// the optimal-policy scaffold with its gain.
struct TableRow {
  std::string model_id;
  std::string dataset_id;
  Strategy strategy = Strategy::base;
  Regime regime = Regime::all;
  Averaged auarc;
  Averaged ece10;
  Averaged brier;
  Averaged mean_confidence;
  Averaged policy_consistency;
  Averaged mean_normalized_regret;
  Averaged utility_with_policy;
  Averaged utility_with_optimal;
  std::optional<double> gain;
};

// Joins regime-averaged summaries with regime-averaged gain rows on the
// cell key. Cells missing gain data keep the metric columns and leave the
// scaffold columns absent.
std::vector<TableRow> build_table(std::span<const MetricsSummary> summaries,
                                  std::span<const GainRow> gains,
                                  Regime regime);

// Display table: rounded cells, last column as "value (+ gain)".
std::string table_to_csv(std::span<const TableRow> rows);
// Full-precision machine output.
std::string table_to_json(std::span<const TableRow> rows);

std::string gains_to_csv(std::span<const GainRow> rows);
std::string gains_to_json(std::span<const GainRow> rows);

}  // namespace riskeval
