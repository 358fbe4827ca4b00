#include "riskeval/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <tuple>

#include <nlohmann/json.hpp>

namespace riskeval {

using nlohmann::json;

namespace {

bool in_regime(double penalty, Regime regime) {
  return regime == Regime::all || penalty >= kHighPenaltyMin;
}

void accumulate(Averaged& avg, const std::optional<double>& value) {
  if (!value) return;
  avg.value = avg.value.value_or(0.0) + *value;
  ++avg.n;
}

void finalize(Averaged& avg) {
  if (avg.n > 0) *avg.value /= static_cast<double>(avg.n);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char ch : field) {
    if (ch == '"') quoted += '"';
    quoted += ch;
  }
  quoted += '"';
  return quoted;
}

std::string csv_optional(const std::optional<double>& v) {
  return v ? fmt::format("{}", *v) : std::string{};
}

std::string csv_display(const Averaged& avg) {
  return avg.value ? format_display(*avg.value) : std::string{};
}

using CellKey = std::tuple<std::string, std::string, int>;

CellKey cell_key(const MetricsSummary& s) {
  return {s.model_id, s.dataset_id, static_cast<int>(s.strategy)};
}

}  // namespace

const char* to_string(Regime regime) {
  return regime == Regime::all ? "all" : "high_penalty";
}

Regime regime_from_string(const std::string& s) {
  if (s == "all") return Regime::all;
  if (s == "high" || s == "high_penalty") return Regime::high_penalty;
  throw ParseError(fmt::format("unknown regime '{}'", s));
}

RegimeAverage regime_average(std::span<const MetricsSummary> summaries,
                             Regime regime) {
  if (summaries.empty()) {
    throw DomainError("regime_average of an empty summary set");
  }
  const CellKey key = cell_key(summaries.front());
  RegimeAverage avg;
  avg.model_id = summaries.front().model_id;
  avg.dataset_id = summaries.front().dataset_id;
  avg.strategy = summaries.front().strategy;
  avg.regime = regime;
  for (const auto& s : summaries) {
    if (cell_key(s) != key) {
      throw DomainError(fmt::format(
          "regime_average expects one cell; found ({}, {}, {}) next to "
          "({}, {}, {})",
          s.model_id, s.dataset_id, to_string(s.strategy), avg.model_id,
          avg.dataset_id, to_string(avg.strategy)));
    }
    if (!in_regime(s.penalty, regime)) continue;
    avg.penalties.push_back(s.penalty);
    accumulate(avg.abstention_rate, s.abstention_rate);
    accumulate(avg.accuracy_answered, s.accuracy_answered);
    accumulate(avg.avg_utility, s.avg_utility);
    accumulate(avg.normalized_utility, s.normalized_utility);
    accumulate(avg.policy_consistency, s.policy_consistency);
    accumulate(avg.mean_normalized_regret, s.mean_normalized_regret);
    accumulate(avg.auarc, s.auarc);
    accumulate(avg.ece10, s.ece10);
    accumulate(avg.brier, s.brier);
    accumulate(avg.mean_confidence, s.mean_confidence);
  }
  if (avg.penalties.empty()) {
    throw DomainError(fmt::format(
        "no penalties qualify for regime '{}' in cell ({}, {}, {})",
        to_string(regime), avg.model_id, avg.dataset_id,
        to_string(avg.strategy)));
  }
  std::sort(avg.penalties.begin(), avg.penalties.end());
  finalize(avg.abstention_rate);
  finalize(avg.accuracy_answered);
  finalize(avg.avg_utility);
  finalize(avg.normalized_utility);
  finalize(avg.policy_consistency);
  finalize(avg.mean_normalized_regret);
  finalize(avg.auarc);
  finalize(avg.ece10);
  finalize(avg.brier);
  finalize(avg.mean_confidence);
  return avg;
}

std::vector<RegimeAverage> regime_averages(
    std::span<const MetricsSummary> summaries, Regime regime) {
  std::map<CellKey, std::vector<MetricsSummary>> cells;
  for (const auto& s : summaries) cells[cell_key(s)].push_back(s);
  std::vector<RegimeAverage> out;
  for (const auto& [key, cell] : cells) {
    const bool any = std::any_of(
        cell.begin(), cell.end(),
        [&](const MetricsSummary& s) { return in_regime(s.penalty, regime); });
    if (any) out.push_back(regime_average(cell, regime));
  }
  if (out.empty() && !summaries.empty()) {
    throw DomainError(fmt::format("no penalties qualify for regime '{}'",
                                  to_string(regime)));
  }
  return out;
}

namespace {

using MetricAccessor =
    std::function<std::optional<double>(const MetricsSummary&)>;

const std::vector<std::pair<std::string, MetricAccessor>>& metric_accessors() {
  static const std::vector<std::pair<std::string, MetricAccessor>> table = {
      {"abstention_rate",
       [](const MetricsSummary& s) -> std::optional<double> {
         return s.abstention_rate;
       }},
      {"accuracy_answered",
       [](const MetricsSummary& s) { return s.accuracy_answered; }},
      {"avg_utility",
       [](const MetricsSummary& s) -> std::optional<double> {
         return s.avg_utility;
       }},
      {"normalized_utility",
       [](const MetricsSummary& s) -> std::optional<double> {
         return s.normalized_utility;
       }},
      {"policy_consistency",
       [](const MetricsSummary& s) { return s.policy_consistency; }},
      {"mean_normalized_regret",
       [](const MetricsSummary& s) { return s.mean_normalized_regret; }},
      {"auarc", [](const MetricsSummary& s) { return s.auarc; }},
      {"ece10", [](const MetricsSummary& s) { return s.ece10; }},
      {"brier", [](const MetricsSummary& s) { return s.brier; }},
      {"mean_confidence",
       [](const MetricsSummary& s) { return s.mean_confidence; }},
      {"n_total",
       [](const MetricsSummary& s) -> std::optional<double> {
         return static_cast<double>(s.n_total);
       }},
      {"n_answered",
       [](const MetricsSummary& s) -> std::optional<double> {
         return static_cast<double>(s.n_answered);
       }},
      {"n_graded",
       [](const MetricsSummary& s) -> std::optional<double> {
         return static_cast<double>(s.n_graded);
       }},
      {"n_with_confidence",
       [](const MetricsSummary& s) -> std::optional<double> {
         return static_cast<double>(s.n_with_confidence);
       }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& series_metric_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, accessor] : metric_accessors())
      out.push_back(name);
    return out;
  }();
  return names;
}

std::vector<SeriesPoint> penalty_series(
    std::span<const MetricsSummary> summaries,
    const std::string& metric_name) {
  const MetricAccessor* accessor = nullptr;
  for (const auto& [name, fn] : metric_accessors()) {
    if (name == metric_name) {
      accessor = &fn;
      break;
    }
  }
  if (!accessor) {
    throw DomainError(fmt::format("unknown metric '{}'; valid metrics: {}",
                                  metric_name,
                                  fmt::join(series_metric_names(), ", ")));
  }
  std::vector<const MetricsSummary*> ordered;
  ordered.reserve(summaries.size());
  for (const auto& s : summaries) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const MetricsSummary* a, const MetricsSummary* b) {
              return std::tie(a->model_id, a->dataset_id, a->strategy,
                              a->penalty) <
                     std::tie(b->model_id, b->dataset_id, b->strategy,
                              b->penalty);
            });
  std::vector<SeriesPoint> points;
  points.reserve(ordered.size());
  for (const MetricsSummary* s : ordered) {
    points.push_back({s->model_id, s->dataset_id, s->strategy, s->penalty,
                      (*accessor)(*s)});
  }
  return points;
}

std::string series_to_csv(std::span<const SeriesPoint> points,
                          const std::string& metric_name) {
  std::string out = "model,dataset,strategy,penalty,metric,value\n";
  for (const auto& p : points) {
    out += fmt::format("{},{},{},{},{},{}\n", csv_escape(p.model_id),
                       csv_escape(p.dataset_id), to_string(p.strategy),
                       p.penalty, metric_name, csv_optional(p.value));
  }
  return out;
}

std::vector<StrategyDelta> strategy_delta(
    std::span<const MetricsSummary> base,
    std::span<const MetricsSummary> use_confidence) {
  using Key = std::tuple<std::string, std::string, double>;
  auto collect = [](std::span<const MetricsSummary> side, Strategy expected) {
    std::map<Key, const MetricsSummary*> out;
    for (const auto& s : side) {
      if (s.strategy != expected) continue;
      out[{s.model_id, s.dataset_id, s.penalty}] = &s;
    }
    return out;
  };
  const auto base_map = collect(base, Strategy::base);
  const auto conf_map = collect(use_confidence, Strategy::use_confidence);

  std::vector<std::string> unmatched;
  for (const auto& [key, s] : base_map) {
    if (!conf_map.contains(key)) {
      unmatched.push_back(fmt::format("({}, {}, penalty={}) only in base",
                                      std::get<0>(key), std::get<1>(key),
                                      std::get<2>(key)));
    }
  }
  for (const auto& [key, s] : conf_map) {
    if (!base_map.contains(key)) {
      unmatched.push_back(
          fmt::format("({}, {}, penalty={}) only in use_confidence",
                      std::get<0>(key), std::get<1>(key), std::get<2>(key)));
    }
  }
  if (!unmatched.empty()) {
    throw DomainError(fmt::format("strategy grids do not match: {}",
                                  fmt::join(unmatched, "; ")));
  }

  std::vector<StrategyDelta> deltas;
  deltas.reserve(base_map.size());
  for (const auto& [key, b] : base_map) {
    const MetricsSummary* u = conf_map.at(key);
    StrategyDelta d;
    d.model_id = std::get<0>(key);
    d.dataset_id = std::get<1>(key);
    d.penalty = std::get<2>(key);
    if (b->mean_confidence && u->mean_confidence)
      d.d_mean_confidence = *u->mean_confidence - *b->mean_confidence;
    if (b->policy_consistency && u->policy_consistency)
      d.d_policy_consistency =
          *u->policy_consistency - *b->policy_consistency;
    d.d_abstention_rate = u->abstention_rate - b->abstention_rate;
    deltas.push_back(std::move(d));
  }
  return deltas;
}

std::string deltas_to_csv(std::span<const StrategyDelta> deltas) {
  std::string out =
      "model_id,dataset_id,penalty,d_mean_confidence,d_policy_consistency,"
      "d_abstention_rate\n";
  for (const auto& d : deltas) {
    out += fmt::format("{},{},{},{},{},{}\n", csv_escape(d.model_id),
                       csv_escape(d.dataset_id), d.penalty,
                       csv_optional(d.d_mean_confidence),
                       csv_optional(d.d_policy_consistency),
                       fmt::format("{}", d.d_abstention_rate));
  }
  return out;
}

double round_display(double value) {
  const double rounded = std::round(value * 1000.0) / 1000.0;
  return rounded == 0.0 ? 0.0 : rounded;  // normalize -0.0
}

std::string format_display(double value) {
  return fmt::format("{:.3f}", round_display(value));
}

std::string format_value_with_gain(double value, double gain) {
  const char sign = round_display(gain) < 0.0 ? '-' : '+';
  return fmt::format("{} ({} {})", format_display(value), sign,
                     format_display(std::abs(gain)));
}

std::vector<TableRow> build_table(std::span<const MetricsSummary> summaries,
                                  std::span<const GainRow> gains,
                                  Regime regime) {
  const std::vector<RegimeAverage> averages =
      regime_averages(summaries, regime);

  struct GainAverage {
    Averaged policy;
    Averaged optimal;
  };
  std::map<CellKey, GainAverage> gain_by_cell;
  for (const auto& g : gains) {
    if (!in_regime(g.penalty, regime)) continue;
    auto& slot = gain_by_cell[{g.model_id, g.dataset_id,
                               static_cast<int>(g.strategy)}];
    accumulate(slot.policy, g.utility_with_policy);
    accumulate(slot.optimal, g.utility_with_optimal);
  }
  for (auto& [key, slot] : gain_by_cell) {
    finalize(slot.policy);
    finalize(slot.optimal);
  }

  std::vector<TableRow> rows;
  rows.reserve(averages.size());
  for (const auto& avg : averages) {
    TableRow row;
    row.model_id = avg.model_id;
    row.dataset_id = avg.dataset_id;
    row.strategy = avg.strategy;
    row.regime = regime;
    row.auarc = avg.auarc;
    row.ece10 = avg.ece10;
    row.brier = avg.brier;
    row.mean_confidence = avg.mean_confidence;
    row.policy_consistency = avg.policy_consistency;
    row.mean_normalized_regret = avg.mean_normalized_regret;
    row.utility_with_policy = avg.normalized_utility;
    const CellKey key{avg.model_id, avg.dataset_id,
                      static_cast<int>(avg.strategy)};
    if (auto it = gain_by_cell.find(key); it != gain_by_cell.end()) {
      // The scaffold side reports both utilities over its own (identical)
      // penalty set; prefer its paired baseline so the gain is exact.
      row.utility_with_policy = it->second.policy;
      row.utility_with_optimal = it->second.optimal;
      if (row.utility_with_policy.value && row.utility_with_optimal.value) {
        row.gain =
            *row.utility_with_optimal.value - *row.utility_with_policy.value;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string table_to_csv(std::span<const TableRow> rows) {
  std::string out =
      "model_id,dataset_id,strategy,regime,auarc,ece10,brier,"
      "mean_confidence,policy_consistency,mean_normalized_regret,"
      "normalized_utility_policy,normalized_utility_optimal\n";
  for (const auto& row : rows) {
    std::string last;
    if (row.utility_with_optimal.value && row.gain) {
      last = format_value_with_gain(*row.utility_with_optimal.value,
                                    *row.gain);
    }
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n",
                       csv_escape(row.model_id), csv_escape(row.dataset_id),
                       to_string(row.strategy), to_string(row.regime),
                       csv_display(row.auarc), csv_display(row.ece10),
                       csv_display(row.brier),
                       csv_display(row.mean_confidence),
                       csv_display(row.policy_consistency),
                       csv_display(row.mean_normalized_regret),
                       csv_display(row.utility_with_policy),
                       csv_escape(last));
  }
  return out;
}

namespace {

json averaged_to_json(const Averaged& avg) {
  json j;
  if (avg.value) j["value"] = *avg.value;
  j["n"] = avg.n;
  return j;
}

}  // namespace

std::string table_to_json(std::span<const TableRow> rows) {
  json arr = json::array();
  for (const auto& row : rows) {
    json j;
    j["model_id"] = row.model_id;
    j["dataset_id"] = row.dataset_id;
    j["strategy"] = to_string(row.strategy);
    j["regime"] = to_string(row.regime);
    j["auarc"] = averaged_to_json(row.auarc);
    j["ece10"] = averaged_to_json(row.ece10);
    j["brier"] = averaged_to_json(row.brier);
    j["mean_confidence"] = averaged_to_json(row.mean_confidence);
    j["policy_consistency"] = averaged_to_json(row.policy_consistency);
    j["mean_normalized_regret"] =
        averaged_to_json(row.mean_normalized_regret);
    j["normalized_utility_policy"] =
        averaged_to_json(row.utility_with_policy);
    j["normalized_utility_optimal"] =
        averaged_to_json(row.utility_with_optimal);
    if (row.gain) j["gain"] = *row.gain;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::string gains_to_csv(std::span<const GainRow> rows) {
  std::string out =
      "model_id,dataset_id,strategy,penalty,normalized_utility_policy,"
      "normalized_utility_optimal,gain,formatted,n_overridden_to_abstain,"
      "n_unscaffoldable\n";
  for (const auto& row : rows) {
    out += fmt::format(
        "{},{},{},{},{},{},{},{},{},{}\n", csv_escape(row.model_id),
        csv_escape(row.dataset_id), to_string(row.strategy), row.penalty,
        row.utility_with_policy, row.utility_with_optimal, row.gain,
        csv_escape(
            format_value_with_gain(row.utility_with_optimal, row.gain)),
        row.n_overridden_to_abstain, row.n_unscaffoldable);
  }
  return out;
}

std::string gains_to_json(std::span<const GainRow> rows) {
  json arr = json::array();
  for (const auto& row : rows) {
    json j;
    j["model_id"] = row.model_id;
    j["dataset_id"] = row.dataset_id;
    j["strategy"] = to_string(row.strategy);
    j["penalty"] = row.penalty;
    j["normalized_utility_policy"] = row.utility_with_policy;
    j["normalized_utility_optimal"] = row.utility_with_optimal;
    j["gain"] = row.gain;
    j["n_overridden_to_abstain"] = row.n_overridden_to_abstain;
    j["n_unscaffoldable"] = row.n_unscaffoldable;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

}  // namespace riskeval
