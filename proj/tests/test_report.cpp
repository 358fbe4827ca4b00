#include <doctest.h>

#include <cmath>

#include "riskeval/report.hpp"
#include "riskeval/simulator.hpp"

using namespace riskeval;

namespace {

MetricsSummary cell_summary(double penalty, const std::string& model = "m",
                            Strategy strategy = Strategy::base) {
  MetricsSummary s;
  s.model_id = model;
  s.dataset_id = "d";
  s.strategy = strategy;
  s.penalty = penalty;
  s.n_total = 100;
  s.n_answered = 90;
  s.n_graded = 90;
  s.n_with_confidence = 100;
  s.abstention_rate = 0.1;
  s.accuracy_answered = 0.5;
  s.avg_utility = -penalty / 10.0;
  s.normalized_utility = s.avg_utility / (1.0 + penalty);
  s.policy_consistency = 0.8;
  s.mean_normalized_regret = 0.05;
  s.auarc = 0.6;
  s.ece10 = 0.2;
  s.brier = 0.3;
  s.mean_confidence = 0.7;
  return s;
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("high-penalty regime keeps only points at or above ten") {
  std::vector<MetricsSummary> summaries = {
      cell_summary(1.0), cell_summary(10.0), cell_summary(100.0)};
  summaries[0].auarc = 0.9;
  summaries[1].auarc = 0.5;
  summaries[2].auarc = 0.6;

  const RegimeAverage high = regime_average(summaries, Regime::high_penalty);
  CHECK(high.penalties == std::vector<double>{10.0, 100.0});
  CHECK(*high.auarc.value == doctest::Approx(0.55));
  CHECK(high.auarc.n == 2);

  const RegimeAverage all = regime_average(summaries, Regime::all);
  CHECK(all.penalties.size() == 3);
  CHECK(*all.auarc.value == doctest::Approx((0.9 + 0.5 + 0.6) / 3.0));
}

TEST_CASE("single summary averages to itself") {
  std::vector<MetricsSummary> one = {cell_summary(2.0)};
  const RegimeAverage avg = regime_average(one, Regime::all);
  CHECK(*avg.auarc.value == doctest::Approx(0.6));
  CHECK(*avg.policy_consistency.value == doctest::Approx(0.8));
  CHECK(*avg.normalized_utility.value ==
        doctest::Approx(one[0].normalized_utility));
}

TEST_CASE("regime errors") {
  std::vector<MetricsSummary> low = {cell_summary(1.0), cell_summary(5.0)};
  CHECK_THROWS_WITH_AS(regime_average(low, Regime::high_penalty),
                       doctest::Contains("high_penalty"), DomainError);

  std::vector<MetricsSummary> mixed = {cell_summary(1.0, "m1"),
                                       cell_summary(2.0, "m2")};
  CHECK_THROWS_AS(regime_average(mixed, Regime::all), DomainError);
}

TEST_CASE("absent metrics are excluded pairwise with counts") {
  std::vector<MetricsSummary> summaries = {cell_summary(10.0),
                                           cell_summary(20.0)};
  summaries[1].auarc.reset();
  const RegimeAverage avg =
      regime_average(summaries, Regime::high_penalty);
  CHECK(avg.auarc.n == 1);
  CHECK(*avg.auarc.value == doctest::Approx(0.6));
  CHECK(avg.policy_consistency.n == 2);
}

TEST_CASE("regime partition: all equals count-weighted sub-regime means") {
  std::vector<MetricsSummary> summaries = {
      cell_summary(1.0), cell_summary(5.0), cell_summary(10.0),
      cell_summary(100.0)};
  double low_sum = 0, high_sum = 0;
  for (const auto& s : summaries) {
    (s.penalty >= 10.0 ? high_sum : low_sum) += *s.policy_consistency;
  }
  const RegimeAverage all = regime_average(summaries, Regime::all);
  CHECK(*all.policy_consistency.value ==
        doctest::Approx((low_sum + high_sum) / 4.0).epsilon(1e-12));
}

TEST_CASE("penalty series is ordered and complete") {
  std::vector<MetricsSummary> summaries = {
      cell_summary(10.0), cell_summary(0.1), cell_summary(1.0)};
  const auto series = penalty_series(summaries, "normalized_utility");
  REQUIRE(series.size() == 3);
  CHECK(series[0].penalty == 0.1);
  CHECK(series[1].penalty == 1.0);
  CHECK(series[2].penalty == 10.0);
  for (const auto& p : series) {
    CHECK(p.value.has_value());
  }
  const std::string csv = series_to_csv(series, "normalized_utility");
  CHECK(csv.find("model,dataset,strategy,penalty,metric,value") == 0);
  CHECK(csv.find("normalized_utility") != std::string::npos);

  CHECK_THROWS_WITH_AS(penalty_series(summaries, "frobnication"),
                       doctest::Contains("frobnication"), DomainError);
}

TEST_CASE("series for an always-answer agent is identically zero") {
  AgentProfile agent;
  agent.agent_id = "aa";
  agent.skill.kind = SkillDistribution::Kind::uniform;
  agent.policy.kind = AgentPolicy::Kind::always_answer;
  const auto records = run_sweep(agent, SweepSpec{{0.0, 1.0, 10.0}, 50, 3});
  const auto summaries = summarize(records);
  for (const auto& point : penalty_series(summaries, "abstention_rate")) {
    CHECK(*point.value == 0.0);
  }
}

TEST_CASE("strategy deltas subtract base from use_confidence") {
  std::vector<MetricsSummary> base = {cell_summary(10.0)};
  std::vector<MetricsSummary> conf = {
      cell_summary(10.0, "m", Strategy::use_confidence)};

  auto deltas = strategy_delta(base, conf);
  REQUIRE(deltas.size() == 1);
  CHECK(*deltas[0].d_mean_confidence == doctest::Approx(0.0));
  CHECK(*deltas[0].d_policy_consistency == doctest::Approx(0.0));
  CHECK(deltas[0].d_abstention_rate == doctest::Approx(0.0));

  conf[0].policy_consistency = 0.85;
  conf[0].abstention_rate = 0.25;
  deltas = strategy_delta(base, conf);
  CHECK(*deltas[0].d_policy_consistency == doctest::Approx(0.05));
  CHECK(deltas[0].d_abstention_rate == doctest::Approx(0.15));

  base.push_back(cell_summary(50.0));
  CHECK_THROWS_WITH_AS(strategy_delta(base, conf),
                       doctest::Contains("penalty=50"), DomainError);
}

TEST_CASE("display rounding is half away from zero") {
  CHECK(round_display(0.1234999) == doctest::Approx(0.123));
  CHECK(round_display(0.1235001) == doctest::Approx(0.124));
  CHECK(round_display(-0.1235001) == doctest::Approx(-0.124));
  CHECK(format_display(0.3484) == "0.348");
  CHECK(format_display(-0.16949) == "-0.169");
  // Values rounding to zero never display a negative sign.
  CHECK(format_display(-0.0001) == "0.000");
}

TEST_CASE("value-with-gain formatting") {
  CHECK(format_value_with_gain(-0.169, 0.3484) == "-0.169 (+ 0.348)");
  CHECK(format_value_with_gain(0.425, -0.009) == "0.425 (- 0.009)");
  CHECK(format_value_with_gain(0.005, 0.0) == "0.005 (+ 0.000)");
}

TEST_CASE("published high-penalty rows reproduce through the formatter") {
  struct Row {
    const char* model;
    double u_policy;
    double u_optimal;
    double published_gain;
  };
  // Canned values from the results table this layout follows.
  const Row rows[] = {
      {"gemini-3-flash", -0.517, -0.169, 0.347},
      {"gpt-5-nano", -0.688, -0.004, 0.685},
      {"gpt-4.1-mini", -0.853, -0.169, 0.683},
  };
  for (const Row& row : rows) {
    const double gain = row.u_optimal - row.u_policy;
    CHECK(std::abs(gain - row.published_gain) <= 0.001 + 1e-12);
    const std::string cell = format_value_with_gain(row.u_optimal, gain);
    CHECK(cell.find(format_display(row.u_optimal)) == 0);
    CHECK(cell.find("(+ ") != std::string::npos);
  }
}

TEST_CASE("regime-averaged table joins summaries with gain rows") {
  std::vector<MetricsSummary> summaries;
  std::vector<GainRow> gains;
  for (double penalty : {10.0, 100.0}) {
    MetricsSummary s = cell_summary(penalty, "gemini-3-flash");
    s.auarc = 0.533;
    s.policy_consistency = 0.403;
    s.mean_normalized_regret = 0.084;
    s.normalized_utility = -0.517;
    summaries.push_back(s);

    GainRow g;
    g.model_id = "gemini-3-flash";
    g.dataset_id = "d";
    g.strategy = Strategy::base;
    g.penalty = penalty;
    g.utility_with_policy = -0.517;
    g.utility_with_optimal = -0.169;
    g.gain = g.utility_with_optimal - g.utility_with_policy;
    gains.push_back(g);
  }

  const auto table = build_table(summaries, gains, Regime::high_penalty);
  REQUIRE(table.size() == 1);
  const TableRow& row = table[0];
  CHECK(*row.auarc.value == doctest::Approx(0.533));
  CHECK(*row.policy_consistency.value == doctest::Approx(0.403));
  CHECK(*row.mean_normalized_regret.value == doctest::Approx(0.084));
  CHECK(*row.utility_with_policy.value == doctest::Approx(-0.517));
  CHECK(*row.utility_with_optimal.value == doctest::Approx(-0.169));
  REQUIRE(row.gain.has_value());
  CHECK(std::abs(*row.gain - 0.347) <= 0.001 + 1e-12);

  const std::string csv = table_to_csv(table);
  CHECK(csv.find("0.533") != std::string::npos);
  CHECK(csv.find("-0.169 (+ 0.348)") != std::string::npos);

  const std::string gains_csv = gains_to_csv(gains);
  CHECK(gains_csv.find("gemini-3-flash") != std::string::npos);
}

TEST_CASE("series ordering is stable across input permutations") {
  std::vector<MetricsSummary> a = {cell_summary(0.1), cell_summary(10.0),
                                   cell_summary(1.0)};
  std::vector<MetricsSummary> b = {a[1], a[2], a[0]};
  const auto sa = penalty_series(a, "auarc");
  const auto sb = penalty_series(b, "auarc");
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i].penalty == sb[i].penalty);
    CHECK(sa[i].value == sb[i].value);
  }
}

}  // TEST_SUITE
