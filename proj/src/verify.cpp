#include "drope/verify.hpp"

#include "drope/attention.hpp"
#include "drope/rotary.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace drope
{

void VerifyConfig::validate() const
{
  if (trials == 0 || counterexample_seeds == 0 || engine_trials == 0) {
    throw std::invalid_argument("trial counts must be positive");
  }
  if (pair_counts.empty() || std::ranges::find(pair_counts, 0u) != pair_counts.end()) {
    throw std::invalid_argument("pair counts must be a non-empty list of positive values");
  }
  if (counterexample_pairs < 2) {
    throw std::invalid_argument("the counterexample needs at least two pairs");
  }
  if (!(tolerance > 0.0)) {
    throw std::invalid_argument("tolerance must be positive");
  }
}

namespace
{

double dot(std::span<const double> a, std::span<const double> b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> gaussian(std::size_t n, std::mt19937_64 & rng)
{
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double & x : v) x = g(rng);
  return v;
}

PropertyResult below(std::string name, std::size_t trials, double observed, double tolerance, std::string detail = {})
{
  return {std::move(name), trials, observed, tolerance, Comparison::kBelow, observed < tolerance, std::move(detail)};
}

PropertyResult above(std::string name, std::size_t trials, double observed, double tolerance, std::string detail = {})
{
  return {std::move(name), trials, observed, tolerance, Comparison::kAbove, observed > tolerance, std::move(detail)};
}

double rel_inf(const Bank & a, const Bank & b) { return max_abs_diff(a, b) / std::max(max_abs(a), 1e-300); }

}  // namespace

PropertyResult check_rope_relative_position(const VerifyConfig & config)
{
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> pos(-100.0, 100.0);
  double worst = 0.0;
  for (std::size_t t = 0; t < config.trials; ++t) {
    const std::size_t pairs = config.pair_counts[t % config.pair_counts.size()];
    const FrequencySchedule sched(pairs);
    const auto q = gaussian(2 * pairs, rng);
    const auto k = gaussian(2 * pairs, rng);
    const double m = pos(rng);
    const double n = pos(rng);
    const double shift = pos(rng);
    const double base = dot(rope_embed(q, m, sched), rope_embed(k, n, sched));
    const double moved = dot(rope_embed(q, m + shift, sched), rope_embed(k, n + shift, sched));
    worst = std::max(worst, std::abs(base - moved) / (l2(q) * l2(k)));
  }
  return below("rope_relative_position", config.trials, worst, config.tolerance);
}

PropertyResult check_drope_relative_angle(const VerifyConfig & config)
{
  config.validate();
  std::mt19937_64 rng(config.seed + 1);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  double worst = 0.0;
  std::size_t wraps = 0;
  for (std::size_t t = 0; t < config.trials; ++t) {
    const std::size_t pairs = config.pair_counts[t % config.pair_counts.size()];
    const auto q = gaussian(2 * pairs, rng);
    const auto k = gaussian(2 * pairs, rng);
    const Angle ti(angle(rng));
    const Angle tj(angle(rng));
    double delta = angle(rng);
    // Every third trial forces the shifted query heading past 2*pi.
    if (t % 3 == 0) delta = kTwoPi - ti.radians() + 0.5 * delta / kTwoPi + 1e-3;
    const Angle si(ti.radians() + delta);
    const Angle sj(tj.radians() + delta);
    if (ti.radians() + delta >= kTwoPi || tj.radians() + delta >= kTwoPi) ++wraps;

    double base = 0.0;
    double moved = 0.0;
    if (config.fault_inject) {
      const FrequencySchedule sched(pairs);
      base = dot(rope_embed(q, ti.radians(), sched), rope_embed(k, tj.radians(), sched));
      moved = dot(rope_embed(q, si.radians(), sched), rope_embed(k, sj.radians(), sched));
    } else {
      base = dot(drope_embed(q, ti), drope_embed(k, tj));
      moved = dot(drope_embed(q, si), drope_embed(k, sj));
    }
    worst = std::max(worst, std::abs(base - moved) / (l2(q) * l2(k)));
  }
  return below(
    "drope_relative_angle", config.trials, worst, config.tolerance,
    fmt::format("{} wrap-around trials{}", wraps, config.fault_inject ? ", fault injected" : ""));
}

std::vector<PropertyResult> check_counterexample(const VerifyConfig & config)
{
  config.validate();
  double min_rope_gap = std::numeric_limits<double>::infinity();
  double max_drope_gap = 0.0;
  for (std::size_t s = 0; s < config.counterexample_seeds; ++s) {
    const auto report = rope_periodicity_counterexample(config.counterexample_pairs, config.seed + s, config.fault_inject);
    min_rope_gap = std::min(min_rope_gap, report.rope_gap);
    max_drope_gap = std::max(max_drope_gap, report.drope_gap);
  }
  return {
    above("counterexample_rope_gap", config.counterexample_seeds, min_rope_gap, 1e-3),
    below("counterexample_drope_gap", config.counterexample_seeds, max_drope_gap, 1e-10)};
}

std::vector<PropertyResult> check_engine_invariance(const VerifyConfig & config)
{
  config.validate();
  constexpr std::size_t tokens = 6;
  constexpr std::size_t heads = 4;
  constexpr std::size_t pairs = 4;
  constexpr std::size_t d_v = 4;
  AttentionOptions options;
  options.angle_uses_rope_schedule = config.fault_inject;
  std::mt19937_64 rng(config.seed + 2);
  std::uniform_real_distribution<double> coord(-50.0, 50.0);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);

  const std::array<Variant, 3> rotating = {Variant::kRope, Variant::kDropeHeadByHead, Variant::kDropeIntraHead};
  std::array<double, 3> translation{};
  std::array<double, 2> heading{};
  for (std::size_t t = 0; t < config.engine_trials; ++t) {
    QKVSet qkv(tokens, heads, pairs, d_v);
    for (Bank * b : {&qkv.query, &qkv.key, &qkv.value}) {
      const auto v = gaussian(b->size(), rng);
      std::ranges::copy(v, b->values().begin());
    }
    PoseSet poses(tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
      poses.positions[i] = {coord(rng), coord(rng)};
      poses.headings[i] = Angle(angle(rng));
    }
    const Vec2 offset{coord(rng), coord(rng)};
    const double delta = angle(rng);
    PoseSet moved = poses;
    PoseSet turned = poses;
    for (std::size_t i = 0; i < tokens; ++i) {
      moved.positions[i] = poses.positions[i] + offset;
      turned.headings[i] = Angle(poses.headings[i].radians() + delta);
    }
    for (std::size_t v = 0; v < rotating.size(); ++v) {
      const auto enc = EncodingVariant::of(rotating[v], pairs);
      const auto base = self_attention(qkv, poses, enc, options);
      translation[v] = std::max(translation[v], rel_inf(base.out, self_attention(qkv, moved, enc, options).out));
      if (v > 0) {
        heading[v - 1] = std::max(heading[v - 1], rel_inf(base.out, self_attention(qkv, turned, enc, options).out));
      }
    }
  }
  std::vector<PropertyResult> out;
  for (std::size_t v = 0; v < rotating.size(); ++v) {
    out.push_back(below(
      fmt::format("engine_translation_{}", to_string(rotating[v])), config.engine_trials, translation[v],
      config.tolerance));
  }
  for (std::size_t v = 1; v < rotating.size(); ++v) {
    out.push_back(below(
      fmt::format("engine_heading_shift_{}", to_string(rotating[v])), config.engine_trials, heading[v - 1],
      config.tolerance));
  }
  return out;
}

std::vector<PropertyResult> run_invariance_suite(const VerifyConfig & config)
{
  config.validate();
  std::vector<PropertyResult> results;
  results.push_back(check_rope_relative_position(config));
  results.push_back(check_drope_relative_angle(config));
  std::ranges::move(check_counterexample(config), std::back_inserter(results));
  std::ranges::move(check_engine_invariance(config), std::back_inserter(results));
  return results;
}

bool all_passed(const std::vector<PropertyResult> & results)
{
  return std::ranges::all_of(results, &PropertyResult::passed);
}

nlohmann::json to_json(const PropertyResult & r)
{
  nlohmann::json j = {
    {"name", r.name},
    {"trials", r.trials},
    {"observed", r.observed},
    {"tolerance", r.tolerance},
    {"comparison", r.comparison == Comparison::kBelow ? "below" : "above"},
    {"passed", r.passed}};
  if (!r.detail.empty()) j["detail"] = r.detail;
  return j;
}

nlohmann::json suite_json(const std::vector<PropertyResult> & results, const VerifyConfig & config)
{
  nlohmann::json props = nlohmann::json::array();
  for (const auto & r : results) props.push_back(to_json(r));
  return {
    {"config",
     {{"trials", config.trials},
      {"seed", config.seed},
      {"pair_counts", config.pair_counts},
      {"counterexample_seeds", config.counterexample_seeds},
      {"counterexample_pairs", config.counterexample_pairs},
      {"engine_trials", config.engine_trials},
      {"tolerance", config.tolerance},
      {"fault_inject", config.fault_inject}}},
    {"properties", props},
    {"passed", all_passed(results)}};
}

}  // namespace drope
