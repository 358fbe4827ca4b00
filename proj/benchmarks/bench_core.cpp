#include <benchmark/benchmark.h>

#include "riskeval/decision.hpp"
#include "riskeval/metrics.hpp"
#include "riskeval/scaffold.hpp"
#include "riskeval/simulator.hpp"

using namespace riskeval;

namespace {

std::vector<ItemRecord> make_records(std::size_t n, double penalty) {
  AgentProfile agent;
  agent.agent_id = "bench";
  agent.skill.kind = SkillDistribution::Kind::uniform;
  agent.confidence_noise = 0.05;
  agent.policy.kind = AgentPolicy::Kind::fixed_threshold;
  agent.policy.threshold = 0.5;
  std::vector<ItemRecord> recs;
  recs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    recs.push_back(sample_item(agent, penalty, 42, i));
  }
  return recs;
}

}  // namespace

static void BM_EvaluateRecord(benchmark::State& state) {
  const auto recs = make_records(1024, 10.0);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_record(recs[i++ & 1023]));
  }
}
BENCHMARK(BM_EvaluateRecord);

static void BM_Auarc(benchmark::State& state) {
  const auto recs = make_records(state.range(0), 10.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(auarc(recs));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auarc)->Range(64, 16384)->Complexity();

static void BM_Summarize(benchmark::State& state) {
  const auto recs = make_records(state.range(0), 10.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(summarize(recs));
  }
}
BENCHMARK(BM_Summarize)->Range(256, 16384);

static void BM_Scaffold(benchmark::State& state) {
  const auto recs = make_records(state.range(0), 10.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(apply_optimal_policy(recs, 10.0));
  }
}
BENCHMARK(BM_Scaffold)->Range(256, 16384);

static void BM_SampleItem(benchmark::State& state) {
  AgentProfile agent;
  agent.agent_id = "bench";
  agent.skill.kind = SkillDistribution::Kind::uniform;
  agent.confidence_noise = 0.05;
  agent.policy.kind = AgentPolicy::Kind::bayes_optimal;
  std::uint64_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_item(agent, 10.0, 7, i++));
  }
}
BENCHMARK(BM_SampleItem);

BENCHMARK_MAIN();
