#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "riskeval/record.hpp"

namespace riskeval {

// Distribution the per-item correctness probability p is drawn from.
struct SkillDistribution {
  enum class Kind { constant, uniform, two_point };
  Kind kind = Kind::constant;
  double p = 0.5;                   // constant
  double lo = 0.0, hi = 1.0;        // uniform
  double p1 = 0.0, p2 = 1.0, w = 0.5;  // two_point: p1 with probability w
};

// Monotone map from p to the confidence the agent reports.
struct ConfidenceMap {
  enum class Kind { identity, overconfident, underconfident, affine_clip };
  Kind kind = Kind::identity;
  double gamma = 1.0;           // power maps: c = p^gamma
  double a = 0.0, b = 1.0;      // affine_clip: clip(a + b*p), b >= 0
};

// always_answer never abstains. bayes_optimal answers iff c >= tau(lambda).
// fixed_threshold and risk_invariant both answer iff c >= threshold at every
// penalty; the latter name marks agents whose threshold ignores the stakes.
struct AgentPolicy {
  enum class Kind { always_answer, bayes_optimal, fixed_threshold, risk_invariant };
  Kind kind = Kind::always_answer;
  double threshold = 0.5;
};

struct AgentProfile {
  std::string agent_id;
  SkillDistribution skill;
  ConfidenceMap confidence_map;
  double confidence_noise = 0.0;  // stddev of additive gaussian noise
  AgentPolicy policy;
};

struct SweepSpec {
  std::vector<double> penalty_grid;  // non-empty, strictly ascending
  std::size_t n_items = 0;
  std::uint64_t seed = 0;
};

void validate_profile(const AgentProfile& agent);  // throws ConfigError
void validate_sweep(const SweepSpec& spec);        // throws ConfigError

// Draws one record. The stochastic draws (p, noise, correctness uniform)
// depend only on (seed, item_index) — never on the penalty — so the same
// item re-sampled at another penalty differs only in its policy response.
// Reported confidence is clip(m(p) + noise) in [0, 1].
ItemRecord sample_item(const AgentProfile& agent, double penalty,
                       std::uint64_t seed, std::uint64_t item_index,
                       const std::string& dataset_id = "synthetic",
                       Strategy strategy = Strategy::base);

// n_items records per grid penalty, penalty-major, with common random
// numbers across penalties (matching item_ids draw identical p and noise).
// Bit-identical output for identical (agent, spec).
std::vector<ItemRecord> run_sweep(const AgentProfile& agent,
                                  const SweepSpec& spec,
                                  const std::string& dataset_id = "synthetic",
                                  Strategy strategy = Strategy::base);

struct Expectations {
  double expected_utility = 0.0;
  double expected_abstention_rate = 0.0;
};

// Exact expectations of realized utility and abstention under the agent's
// distributions, by closed form where available and adaptive quadrature
// (absolute tolerance 1e-6) otherwise.
Expectations analytic_expectations(const AgentProfile& agent, double penalty);

// The JSON document consumed by the `simulate` CLI subcommand.
struct SimulationSpec {
  AgentProfile agent;
  SweepSpec sweep;
  std::string dataset_id = "synthetic";
  Strategy strategy = Strategy::base;
};

SimulationSpec simulation_spec_from_json_text(const std::string& text);
std::string simulation_spec_to_json_text(const SimulationSpec& spec);

}  // namespace riskeval
