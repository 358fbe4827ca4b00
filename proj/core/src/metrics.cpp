#include "riskeval/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include <nlohmann/json.hpp>

#include "riskeval/decision.hpp"

namespace riskeval {

using nlohmann::json;

namespace {

bool is_graded_answer(const ItemRecord& rec) {
  return rec.decision == Decision::answer &&
         rec.correctness != Correctness::ungraded;
}

// Calibration metrics are defined over answered, graded, confidence-bearing
// records only.
bool in_calibration_population(const ItemRecord& rec) {
  return is_graded_answer(rec) && rec.confidence.has_value();
}

int ece_bin(double confidence) {
  return std::min(static_cast<int>(confidence * 10.0), 9);
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

std::string csv_number(double v) { return fmt::format("{}", v); }

std::string csv_optional(const std::optional<double>& v) {
  return v ? csv_number(*v) : std::string{};
}

}  // namespace

double abstention_rate(std::span<const ItemRecord> recs) {
  if (recs.empty()) throw DomainError("abstention_rate of an empty set");
  std::size_t abstained = 0;
  for (const auto& rec : recs) {
    if (rec.decision == Decision::abstain) ++abstained;
  }
  return static_cast<double>(abstained) / static_cast<double>(recs.size());
}

std::optional<double> accuracy_answered(std::span<const ItemRecord> recs) {
  std::size_t graded = 0;
  std::size_t correct = 0;
  for (const auto& rec : recs) {
    if (!is_graded_answer(rec)) continue;
    ++graded;
    if (rec.correctness == Correctness::correct) ++correct;
  }
  if (graded == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(graded);
}

UtilityPair average_utility(std::span<const ItemRecord> recs, double penalty) {
  if (!(penalty >= 0.0)) {
    throw DomainError(fmt::format("penalty must be >= 0, got {}", penalty));
  }
  double total = 0.0;
  for (const auto& rec : recs) {
    if (rec.penalty != penalty) {
      throw DomainError(
          fmt::format("mixed penalties: expected {}, item {} has {}", penalty,
                      rec.item_id, rec.penalty));
    }
    total += realized_utility(rec.decision, rec.correctness, rec.penalty);
  }
  const double avg =
      recs.empty() ? 0.0 : total / static_cast<double>(recs.size());
  return {avg, avg / (1.0 + penalty)};
}

std::optional<double> policy_consistency(std::span<const ItemRecord> recs,
                                         double penalty) {
  std::size_t scored = 0;
  std::size_t consistent = 0;
  for (const auto& rec : recs) {
    if (!rec.confidence) continue;
    ++scored;
    if (rec.decision == optimal_policy(*rec.confidence, penalty)) ++consistent;
  }
  if (scored == 0) return std::nullopt;
  return static_cast<double>(consistent) / static_cast<double>(scored);
}

std::optional<double> mean_normalized_regret(std::span<const ItemRecord> recs,
                                             double penalty) {
  std::size_t scored = 0;
  double total = 0.0;
  for (const auto& rec : recs) {
    if (!rec.confidence) continue;
    ++scored;
    total += regret(*rec.confidence, penalty, rec.decision).normalized;
  }
  if (scored == 0) return std::nullopt;
  return total / static_cast<double>(scored);
}

std::optional<double> ece10(std::span<const ItemRecord> recs) {
  std::size_t count[10] = {};
  double conf_sum[10] = {};
  std::size_t correct[10] = {};
  std::size_t n = 0;
  for (const auto& rec : recs) {
    if (!in_calibration_population(rec)) continue;
    const int bin = ece_bin(*rec.confidence);
    ++count[bin];
    conf_sum[bin] += *rec.confidence;
    if (rec.correctness == Correctness::correct) ++correct[bin];
    ++n;
  }
  if (n == 0) return std::nullopt;
  double ece = 0.0;
  for (int bin = 0; bin < 10; ++bin) {
    if (count[bin] == 0) continue;
    const double acc =
        static_cast<double>(correct[bin]) / static_cast<double>(count[bin]);
    const double conf = conf_sum[bin] / static_cast<double>(count[bin]);
    ece += (static_cast<double>(count[bin]) / static_cast<double>(n)) *
           std::abs(acc - conf);
  }
  return ece;
}

std::optional<double> brier(std::span<const ItemRecord> recs) {
  std::size_t n = 0;
  double total = 0.0;
  for (const auto& rec : recs) {
    if (!in_calibration_population(rec)) continue;
    const double outcome = rec.correctness == Correctness::correct ? 1.0 : 0.0;
    const double err = *rec.confidence - outcome;
    total += err * err;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

std::optional<double> auarc(std::span<const ItemRecord> recs) {
  struct Entry {
    double confidence;
    const std::string* item_id;
    bool correct;
  };
  std::vector<Entry> entries;
  for (const auto& rec : recs) {
    if (!in_calibration_population(rec)) continue;
    entries.push_back({*rec.confidence, &rec.item_id,
                       rec.correctness == Correctness::correct});
  }
  if (entries.empty()) return std::nullopt;
  // Descending confidence; ties broken by ascending item_id so the curve is
  // identical regardless of input order.
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return *a.item_id < *b.item_id;
  });
  // Rejection level k retains the m = N - k most confident entries;
  // averaging accuracy over k = 0..N-1 is summing prefix accuracies.
  double sum = 0.0;
  std::size_t prefix_correct = 0;
  for (std::size_t m = 1; m <= entries.size(); ++m) {
    if (entries[m - 1].correct) ++prefix_correct;
    sum += static_cast<double>(prefix_correct) / static_cast<double>(m);
  }
  return sum / static_cast<double>(entries.size());
}

std::optional<double> mean_confidence(std::span<const ItemRecord> recs) {
  std::size_t n = 0;
  double total = 0.0;
  for (const auto& rec : recs) {
    if (!rec.confidence) continue;
    total += *rec.confidence;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

std::vector<MetricsSummary> summarize(std::span<const ItemRecord> recs) {
  using Key = std::tuple<std::string, std::string, int, double>;
  std::map<Key, std::vector<ItemRecord>> partitions;
  std::map<Key, std::size_t> transport_failed;
  for (const auto& rec : recs) {
    Key key{rec.model_id, rec.dataset_id, static_cast<int>(rec.strategy),
            rec.penalty};
    if (is_transport_failed(rec)) {
      ++transport_failed[key];
      continue;
    }
    partitions[key].push_back(rec);
  }

  std::vector<MetricsSummary> summaries;
  summaries.reserve(partitions.size());
  for (auto& [key, part] : partitions) {
    MetricsSummary s;
    s.model_id = std::get<0>(key);
    s.dataset_id = std::get<1>(key);
    s.strategy = static_cast<Strategy>(std::get<2>(key));
    s.penalty = std::get<3>(key);
    s.n_total = part.size();
    for (const auto& rec : part) {
      if (rec.decision == Decision::answer) ++s.n_answered;
      if (is_graded_answer(rec)) ++s.n_graded;
      if (rec.confidence) ++s.n_with_confidence;
    }
    s.abstention_rate = abstention_rate(part);
    s.accuracy_answered = accuracy_answered(part);

    // Utility is undefined for answered records without a grade; score the
    // rest and report the exclusion.
    std::vector<ItemRecord> utility_population;
    utility_population.reserve(part.size());
    for (const auto& rec : part) {
      if (rec.decision == Decision::abstain || is_graded_answer(rec)) {
        utility_population.push_back(rec);
      }
    }
    if (utility_population.size() != part.size()) {
      s.diagnostics.push_back(
          fmt::format("{} answered record(s) without a grade excluded from "
                      "utility",
                      part.size() - utility_population.size()));
    }
    const UtilityPair utility = average_utility(utility_population, s.penalty);
    s.avg_utility = utility.avg;
    s.normalized_utility = utility.normalized;

    s.policy_consistency = policy_consistency(part, s.penalty);
    s.mean_normalized_regret = mean_normalized_regret(part, s.penalty);
    if (s.n_with_confidence < s.n_total) {
      s.diagnostics.push_back(
          fmt::format("{} record(s) without confidence unscored for policy "
                      "consistency and regret",
                      s.n_total - s.n_with_confidence));
    }
    s.auarc = auarc(part);
    s.ece10 = ece10(part);
    s.brier = brier(part);
    s.mean_confidence = mean_confidence(part);
    if (auto it = transport_failed.find(key); it != transport_failed.end()) {
      s.diagnostics.push_back(fmt::format(
          "{} transport-failed record(s) excluded from all metrics",
          it->second));
    }
    summaries.push_back(std::move(s));
  }

  // A partition holding only transport failures still deserves a mention.
  for (const auto& [key, n] : transport_failed) {
    if (partitions.contains(key)) continue;
    MetricsSummary s;
    s.model_id = std::get<0>(key);
    s.dataset_id = std::get<1>(key);
    s.strategy = static_cast<Strategy>(std::get<2>(key));
    s.penalty = std::get<3>(key);
    s.diagnostics.push_back(fmt::format(
        "{} transport-failed record(s) excluded from all metrics", n));
    summaries.push_back(std::move(s));
  }
  std::sort(summaries.begin(), summaries.end(),
            [](const MetricsSummary& a, const MetricsSummary& b) {
              return std::tie(a.model_id, a.dataset_id, a.strategy,
                              a.penalty) < std::tie(b.model_id, b.dataset_id,
                                                    b.strategy, b.penalty);
            });
  return summaries;
}

static const char* kCsvHeader =
    "model_id,dataset_id,strategy,penalty,n_total,n_answered,n_graded,"
    "n_with_confidence,abstention_rate,accuracy_answered,avg_utility,"
    "normalized_utility,policy_consistency,mean_normalized_regret,auarc,"
    "ece10,brier,mean_confidence";

std::string summaries_to_csv(std::span<const MetricsSummary> summaries) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& s : summaries) {
    out += fmt::format(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        csv_escape(s.model_id), csv_escape(s.dataset_id),
        to_string(s.strategy), csv_number(s.penalty), s.n_total, s.n_answered,
        s.n_graded, s.n_with_confidence, csv_number(s.abstention_rate),
        csv_optional(s.accuracy_answered), csv_number(s.avg_utility),
        csv_number(s.normalized_utility), csv_optional(s.policy_consistency),
        csv_optional(s.mean_normalized_regret), csv_optional(s.auarc),
        csv_optional(s.ece10), csv_optional(s.brier),
        csv_optional(s.mean_confidence));
  }
  return out;
}

namespace {

json summary_to_json(const MetricsSummary& s) {
  json j;
  j["model_id"] = s.model_id;
  j["dataset_id"] = s.dataset_id;
  j["strategy"] = to_string(s.strategy);
  j["penalty"] = s.penalty;
  j["n_total"] = s.n_total;
  j["n_answered"] = s.n_answered;
  j["n_graded"] = s.n_graded;
  j["n_with_confidence"] = s.n_with_confidence;
  j["abstention_rate"] = s.abstention_rate;
  if (s.accuracy_answered) j["accuracy_answered"] = *s.accuracy_answered;
  j["avg_utility"] = s.avg_utility;
  j["normalized_utility"] = s.normalized_utility;
  if (s.policy_consistency) j["policy_consistency"] = *s.policy_consistency;
  if (s.mean_normalized_regret)
    j["mean_normalized_regret"] = *s.mean_normalized_regret;
  if (s.auarc) j["auarc"] = *s.auarc;
  if (s.ece10) j["ece10"] = *s.ece10;
  if (s.brier) j["brier"] = *s.brier;
  if (s.mean_confidence) j["mean_confidence"] = *s.mean_confidence;
  if (!s.diagnostics.empty()) j["diagnostics"] = s.diagnostics;
  return j;
}

MetricsSummary summary_from_json(const json& j) {
  MetricsSummary s;
  s.model_id = j.at("model_id").get<std::string>();
  s.dataset_id = j.at("dataset_id").get<std::string>();
  s.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  s.penalty = j.at("penalty").get<double>();
  s.n_total = j.value("n_total", std::size_t{0});
  s.n_answered = j.value("n_answered", std::size_t{0});
  s.n_graded = j.value("n_graded", std::size_t{0});
  s.n_with_confidence = j.value("n_with_confidence", std::size_t{0});
  s.abstention_rate = j.value("abstention_rate", 0.0);
  if (j.contains("accuracy_answered"))
    s.accuracy_answered = j.at("accuracy_answered").get<double>();
  s.avg_utility = j.value("avg_utility", 0.0);
  s.normalized_utility = j.value("normalized_utility", 0.0);
  if (j.contains("policy_consistency"))
    s.policy_consistency = j.at("policy_consistency").get<double>();
  if (j.contains("mean_normalized_regret"))
    s.mean_normalized_regret = j.at("mean_normalized_regret").get<double>();
  if (j.contains("auarc")) s.auarc = j.at("auarc").get<double>();
  if (j.contains("ece10")) s.ece10 = j.at("ece10").get<double>();
  if (j.contains("brier")) s.brier = j.at("brier").get<double>();
  if (j.contains("mean_confidence"))
    s.mean_confidence = j.at("mean_confidence").get<double>();
  if (j.contains("diagnostics"))
    s.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
  return s;
}

}  // namespace

std::string summaries_to_json(std::span<const MetricsSummary> summaries) {
  json arr = json::array();
  for (const auto& s : summaries) arr.push_back(summary_to_json(s));
  return arr.dump(2);
}

std::vector<MetricsSummary> summaries_from_json_text(const std::string& text) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("invalid summaries JSON: {}", e.what()));
  }
  if (!arr.is_array()) throw ParseError("summaries JSON must be an array");
  std::vector<MetricsSummary> out;
  out.reserve(arr.size());
  try {
    for (const auto& j : arr) out.push_back(summary_from_json(j));
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("bad summary field: {}", e.what()));
  }
  return out;
}

}  // namespace riskeval
