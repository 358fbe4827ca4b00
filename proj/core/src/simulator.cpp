#include "riskeval/simulator.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "riskeval/decision.hpp"
#include "riskeval/rng.hpp"

namespace riskeval {

using nlohmann::json;

namespace {

double clip01(double x) { return std::clamp(x, 0.0, 1.0); }

double apply_map(const ConfidenceMap& map, double p) {
  switch (map.kind) {
    case ConfidenceMap::Kind::identity:
      return p;
    case ConfidenceMap::Kind::overconfident:
    case ConfidenceMap::Kind::underconfident:
      return std::pow(p, map.gamma);
    case ConfidenceMap::Kind::affine_clip:
      return clip01(map.a + map.b * p);
  }
  return p;
}

// Confidence level at or above which the agent answers; -inf means always.
double policy_threshold(const AgentPolicy& policy, double penalty) {
  switch (policy.kind) {
    case AgentPolicy::Kind::always_answer:
      return -std::numeric_limits<double>::infinity();
    case AgentPolicy::Kind::bayes_optimal:
      return optimal_threshold(penalty);
    case AgentPolicy::Kind::fixed_threshold:
    case AgentPolicy::Kind::risk_invariant:
      return policy.threshold;
  }
  return 0.0;
}

double standard_normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// Adaptive Simpson with absolute tolerance.
template <typename F>
double simpson(const F& f, double a, double b, double fa, double fm, double fb,
               double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  return simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

template <typename F>
double integrate(const F& f, double a, double b, double tol) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

// Expectation of g(p) under the skill distribution.
template <typename G>
double skill_expectation(const SkillDistribution& skill, const G& g,
                         double tol) {
  switch (skill.kind) {
    case SkillDistribution::Kind::constant:
      return g(skill.p);
    case SkillDistribution::Kind::two_point:
      return skill.w * g(skill.p1) + (1.0 - skill.w) * g(skill.p2);
    case SkillDistribution::Kind::uniform: {
      if (skill.lo == skill.hi) return g(skill.lo);
      const double width = skill.hi - skill.lo;
      return integrate(g, skill.lo, skill.hi, tol * width) / width;
    }
  }
  return 0.0;
}

const char* skill_kind_name(SkillDistribution::Kind k) {
  switch (k) {
    case SkillDistribution::Kind::constant:
      return "constant";
    case SkillDistribution::Kind::uniform:
      return "uniform";
    default:
      return "two_point";
  }
}

const char* map_kind_name(ConfidenceMap::Kind k) {
  switch (k) {
    case ConfidenceMap::Kind::identity:
      return "identity";
    case ConfidenceMap::Kind::overconfident:
      return "overconfident";
    case ConfidenceMap::Kind::underconfident:
      return "underconfident";
    default:
      return "affine_clip";
  }
}

const char* policy_kind_name(AgentPolicy::Kind k) {
  switch (k) {
    case AgentPolicy::Kind::always_answer:
      return "always_answer";
    case AgentPolicy::Kind::bayes_optimal:
      return "bayes_optimal";
    case AgentPolicy::Kind::fixed_threshold:
      return "fixed_threshold";
    default:
      return "risk_invariant";
  }
}

}  // namespace

void validate_profile(const AgentProfile& agent) {
  if (agent.agent_id.empty()) throw ConfigError("agent_id must be non-empty");
  const auto& s = agent.skill;
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  switch (s.kind) {
    case SkillDistribution::Kind::constant:
      if (!in01(s.p)) throw ConfigError("skill constant p out of [0,1]");
      break;
    case SkillDistribution::Kind::uniform:
      if (!in01(s.lo) || !in01(s.hi) || s.lo > s.hi)
        throw ConfigError("skill uniform bounds must satisfy 0 <= lo <= hi <= 1");
      break;
    case SkillDistribution::Kind::two_point:
      if (!in01(s.p1) || !in01(s.p2) || !in01(s.w))
        throw ConfigError("skill two_point parameters out of [0,1]");
      break;
  }
  const auto& m = agent.confidence_map;
  switch (m.kind) {
    case ConfidenceMap::Kind::identity:
      break;
    case ConfidenceMap::Kind::overconfident:
      if (!(m.gamma > 0.0 && m.gamma < 1.0))
        throw ConfigError("overconfident map requires gamma in (0,1)");
      break;
    case ConfidenceMap::Kind::underconfident:
      if (!(m.gamma > 1.0))
        throw ConfigError("underconfident map requires gamma > 1");
      break;
    case ConfidenceMap::Kind::affine_clip:
      if (!(m.b >= 0.0))
        throw ConfigError("affine_clip map requires b >= 0 to stay monotone");
      break;
  }
  if (!(agent.confidence_noise >= 0.0))
    throw ConfigError("confidence_noise must be >= 0");
  if ((agent.policy.kind == AgentPolicy::Kind::fixed_threshold ||
       agent.policy.kind == AgentPolicy::Kind::risk_invariant) &&
      !in01(agent.policy.threshold)) {
    throw ConfigError("policy threshold out of [0,1]");
  }
}

void validate_sweep(const SweepSpec& spec) {
  if (spec.penalty_grid.empty())
    throw ConfigError("penalty_grid must be non-empty");
  for (std::size_t i = 0; i < spec.penalty_grid.size(); ++i) {
    if (!(spec.penalty_grid[i] >= 0.0))
      throw ConfigError("penalty_grid entries must be >= 0");
    if (i > 0 && !(spec.penalty_grid[i] > spec.penalty_grid[i - 1]))
      throw ConfigError("penalty_grid must be strictly ascending");
  }
  if (spec.n_items == 0) throw ConfigError("n_items must be >= 1");
}

ItemRecord sample_item(const AgentProfile& agent, double penalty,
                       std::uint64_t seed, std::uint64_t item_index,
                       const std::string& dataset_id, Strategy strategy) {
  // All stochastic draws come from a stream keyed by (seed, item_index)
  // only, so the same item re-sampled at another penalty reuses identical
  // p, noise, and correctness draws (common random numbers).
  SplitMix64 rng = derive_stream(seed, item_index);

  double p = 0.0;
  switch (agent.skill.kind) {
    case SkillDistribution::Kind::constant:
      p = agent.skill.p;
      break;
    case SkillDistribution::Kind::uniform:
      p = agent.skill.lo +
          (agent.skill.hi - agent.skill.lo) * rng.next_unit();
      break;
    case SkillDistribution::Kind::two_point:
      p = rng.next_unit() < agent.skill.w ? agent.skill.p1 : agent.skill.p2;
      break;
  }

  double confidence = apply_map(agent.confidence_map, p);
  if (agent.confidence_noise > 0.0) {
    confidence += agent.confidence_noise * rng.next_gaussian();
  }
  confidence = clip01(confidence);

  const double correctness_draw = rng.next_unit();
  const bool answers =
      confidence >= policy_threshold(agent.policy, penalty);

  ItemRecord rec;
  rec.item_id = fmt::format("item-{:06d}", item_index);
  rec.dataset_id = dataset_id;
  rec.model_id = agent.agent_id;
  rec.strategy = strategy;
  rec.penalty = penalty;
  rec.confidence = confidence;
  rec.gold_available = true;
  if (answers) {
    rec.decision = Decision::answer;
    rec.answer_text = "synthetic";
    rec.correctness = correctness_draw < p ? Correctness::correct
                                           : Correctness::incorrect;
  } else {
    rec.decision = Decision::abstain;
    rec.correctness = Correctness::ungraded;
  }
  return rec;
}

std::vector<ItemRecord> run_sweep(const AgentProfile& agent,
                                  const SweepSpec& spec,
                                  const std::string& dataset_id,
                                  Strategy strategy) {
  validate_profile(agent);
  validate_sweep(spec);
  std::vector<ItemRecord> records;
  records.reserve(spec.penalty_grid.size() * spec.n_items);
  for (double penalty : spec.penalty_grid) {
    for (std::size_t i = 0; i < spec.n_items; ++i) {
      records.push_back(
          sample_item(agent, penalty, spec.seed, i, dataset_id, strategy));
    }
  }
  return records;
}

Expectations analytic_expectations(const AgentProfile& agent, double penalty) {
  validate_profile(agent);
  if (!(penalty >= 0.0)) {
    throw DomainError(fmt::format("penalty must be >= 0, got {}", penalty));
  }
  const double t = policy_threshold(agent.policy, penalty);
  const double sigma = agent.confidence_noise;

  // P(answer | p). Clipping keeps {c >= t} equivalent to {m(p)+noise >= t}
  // for t in (0, 1]; t <= 0 always answers, t > 1 never does.
  auto answer_prob = [&](double p) {
    const double mapped = apply_map(agent.confidence_map, p);
    if (t <= 0.0) return 1.0;
    if (t > 1.0) return 0.0;
    if (sigma == 0.0) return mapped >= t ? 1.0 : 0.0;
    return standard_normal_sf((t - mapped) / sigma);
  };

  constexpr double kTol = 1e-6;
  auto utility_at = [&](double p) {
    return answer_prob(p) * (p * (1.0 + penalty) - penalty);
  };
  auto abstain_at = [&](double p) { return 1.0 - answer_prob(p); };

  Expectations out;
  out.expected_utility = skill_expectation(agent.skill, utility_at, kTol);
  out.expected_abstention_rate =
      skill_expectation(agent.skill, abstain_at, kTol);
  return out;
}

SimulationSpec simulation_spec_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("invalid simulation spec JSON: {}", e.what()));
  }
  SimulationSpec spec;
  try {
    const json& a = j.at("agent");
    spec.agent.agent_id = a.at("agent_id").get<std::string>();

    const json& sk = a.at("skill");
    const std::string skill_kind = sk.at("kind").get<std::string>();
    if (skill_kind == "constant") {
      spec.agent.skill.kind = SkillDistribution::Kind::constant;
      spec.agent.skill.p = sk.at("p").get<double>();
    } else if (skill_kind == "uniform") {
      spec.agent.skill.kind = SkillDistribution::Kind::uniform;
      spec.agent.skill.lo = sk.at("lo").get<double>();
      spec.agent.skill.hi = sk.at("hi").get<double>();
    } else if (skill_kind == "two_point") {
      spec.agent.skill.kind = SkillDistribution::Kind::two_point;
      spec.agent.skill.p1 = sk.at("p1").get<double>();
      spec.agent.skill.p2 = sk.at("p2").get<double>();
      spec.agent.skill.w = sk.at("w").get<double>();
    } else {
      throw ParseError(fmt::format("unknown skill kind '{}'", skill_kind));
    }

    if (a.contains("confidence_map")) {
      const json& cm = a.at("confidence_map");
      const std::string map_kind = cm.at("kind").get<std::string>();
      if (map_kind == "identity") {
        spec.agent.confidence_map.kind = ConfidenceMap::Kind::identity;
      } else if (map_kind == "overconfident") {
        spec.agent.confidence_map.kind = ConfidenceMap::Kind::overconfident;
        spec.agent.confidence_map.gamma = cm.at("gamma").get<double>();
      } else if (map_kind == "underconfident") {
        spec.agent.confidence_map.kind = ConfidenceMap::Kind::underconfident;
        spec.agent.confidence_map.gamma = cm.at("gamma").get<double>();
      } else if (map_kind == "affine_clip") {
        spec.agent.confidence_map.kind = ConfidenceMap::Kind::affine_clip;
        spec.agent.confidence_map.a = cm.at("a").get<double>();
        spec.agent.confidence_map.b = cm.at("b").get<double>();
      } else {
        throw ParseError(fmt::format("unknown confidence map '{}'", map_kind));
      }
    }

    spec.agent.confidence_noise = a.value("confidence_noise", 0.0);

    const json& pol = a.at("policy");
    const std::string policy_kind = pol.at("kind").get<std::string>();
    if (policy_kind == "always_answer") {
      spec.agent.policy.kind = AgentPolicy::Kind::always_answer;
    } else if (policy_kind == "bayes_optimal") {
      spec.agent.policy.kind = AgentPolicy::Kind::bayes_optimal;
    } else if (policy_kind == "fixed_threshold") {
      spec.agent.policy.kind = AgentPolicy::Kind::fixed_threshold;
      spec.agent.policy.threshold = pol.at("threshold").get<double>();
    } else if (policy_kind == "risk_invariant") {
      spec.agent.policy.kind = AgentPolicy::Kind::risk_invariant;
      spec.agent.policy.threshold = pol.at("threshold").get<double>();
    } else {
      throw ParseError(fmt::format("unknown policy kind '{}'", policy_kind));
    }

    const json& sw = j.at("sweep");
    spec.sweep.penalty_grid = sw.at("penalty_grid").get<std::vector<double>>();
    spec.sweep.n_items = sw.at("n_items").get<std::size_t>();
    spec.sweep.seed = sw.at("seed").get<std::uint64_t>();

    spec.dataset_id = j.value("dataset_id", std::string{"synthetic"});
    if (j.contains("strategy")) {
      spec.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("bad simulation spec field: {}", e.what()));
  }
  validate_profile(spec.agent);
  validate_sweep(spec.sweep);
  return spec;
}

std::string simulation_spec_to_json_text(const SimulationSpec& spec) {
  json sk;
  sk["kind"] = skill_kind_name(spec.agent.skill.kind);
  switch (spec.agent.skill.kind) {
    case SkillDistribution::Kind::constant:
      sk["p"] = spec.agent.skill.p;
      break;
    case SkillDistribution::Kind::uniform:
      sk["lo"] = spec.agent.skill.lo;
      sk["hi"] = spec.agent.skill.hi;
      break;
    case SkillDistribution::Kind::two_point:
      sk["p1"] = spec.agent.skill.p1;
      sk["p2"] = spec.agent.skill.p2;
      sk["w"] = spec.agent.skill.w;
      break;
  }
  json cm;
  cm["kind"] = map_kind_name(spec.agent.confidence_map.kind);
  switch (spec.agent.confidence_map.kind) {
    case ConfidenceMap::Kind::overconfident:
    case ConfidenceMap::Kind::underconfident:
      cm["gamma"] = spec.agent.confidence_map.gamma;
      break;
    case ConfidenceMap::Kind::affine_clip:
      cm["a"] = spec.agent.confidence_map.a;
      cm["b"] = spec.agent.confidence_map.b;
      break;
    default:
      break;
  }
  json pol;
  pol["kind"] = policy_kind_name(spec.agent.policy.kind);
  if (spec.agent.policy.kind == AgentPolicy::Kind::fixed_threshold ||
      spec.agent.policy.kind == AgentPolicy::Kind::risk_invariant) {
    pol["threshold"] = spec.agent.policy.threshold;
  }
  json j;
  j["agent"] = {{"agent_id", spec.agent.agent_id},
                {"skill", sk},
                {"confidence_map", cm},
                {"confidence_noise", spec.agent.confidence_noise},
                {"policy", pol}};
  j["sweep"] = {{"penalty_grid", spec.sweep.penalty_grid},
                {"n_items", spec.sweep.n_items},
                {"seed", spec.sweep.seed}};
  j["dataset_id"] = spec.dataset_id;
  j["strategy"] = to_string(spec.strategy);
  return j.dump(2);
}

}  // namespace riskeval
