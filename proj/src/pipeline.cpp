#include "drope/pipeline.hpp"

#include "drope/errors.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace drope
{

AttentionOptions PipelineConfig::attention_options() const
{
  AttentionOptions options;
  options.rope_base = rope_base;
  options.angle_uses_rope_schedule = angle_uses_rope_schedule;
  return options;
}

void PipelineConfig::validate() const
{
  if (d_model == 0 || heads == 0 || d_model % (2 * heads) != 0) {
    throw ConfigurationError(fmt::format("d_model {} does not split into rotary pairs over {} heads", d_model, heads));
  }
  if (ffn_hidden == 0 || encoder_hidden == 0 || decoder_hidden == 0) {
    throw ConfigurationError("hidden widths must be positive");
  }
  encoding().validate(pairs(), heads);
}

Linear::Linear(std::size_t in, std::size_t out) : in(in), out(out), weight(in * out, 0.0), bias(out, 0.0) {}

Linear Linear::random(std::size_t in, std::size_t out, std::uint64_t seed)
{
  Linear layer(in, out);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double & w : layer.weight) w = dist(rng);
  for (double & b : layer.bias) b = dist(rng);
  return layer;
}

void Linear::apply(std::span<const double> x, std::span<double> y) const
{
  if (x.size() != in || y.size() != out) {
    throw DimensionError(fmt::format("linear layer {}->{} applied to {}->{}", in, out, x.size(), y.size()));
  }
  for (std::size_t r = 0; r < out; ++r) {
    double acc = bias[r];
    const double * w = weight.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) acc += w[c] * x[c];
    y[r] = acc;
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

void FeedForward::apply(std::span<const double> x, std::span<double> y) const
{
  std::vector<double> hidden(up.out);
  up.apply(x, hidden);
  for (double & h : hidden) h = gelu(h);
  down.apply(hidden, y);
}

void layer_norm(std::span<const double> x, std::span<double> y)
{
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) * inv;
}

AttentionLayer AttentionLayer::random(const PipelineConfig & config, std::uint64_t seed, bool with_rpe)
{
  const std::size_t d = config.d_model;
  AttentionLayer layer;
  layer.query = Linear::random(d, d, seed + 1);
  layer.key = Linear::random(d, d, seed + 2);
  layer.value = Linear::random(d, d, seed + 3);
  layer.output = Linear::random(d, d, seed + 4);
  layer.ffn.up = Linear::random(d, config.ffn_hidden, seed + 5);
  layer.ffn.down = Linear::random(config.ffn_hidden, d, seed + 6);
  if (with_rpe) {
    layer.rpe = RpeEncoders::random(config.heads, config.pairs(), config.value_width(), seed + 7);
  }
  return layer;
}

namespace
{

std::uint64_t layer_seed(std::uint64_t seed, std::size_t index) { return seed * 1000003ULL + 16 * index; }

void zero_residual_branches(AttentionLayer & layer)
{
  layer.output = Linear(layer.output.in, layer.output.out);
  layer.ffn.down = Linear(layer.ffn.down.in, layer.ffn.down.out);
}

}  // namespace

PipelineWeights PipelineWeights::random(const PipelineConfig & config, std::uint64_t seed)
{
  config.validate();
  const bool rpe = config.variant == Variant::kRpe;
  PipelineWeights w;
  w.config = config;
  w.agent_encoder = Mlp::random(kAgentFeatureWidth, config.encoder_hidden, config.d_model, layer_seed(seed, 0), 0.5);
  w.point_encoder = Mlp::random(2, config.encoder_hidden, config.d_model, layer_seed(seed, 1), 0.2);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    InteractionBlock block;
    block.agents = AttentionLayer::random(config, layer_seed(seed, 2 + 3 * b), rpe);
    block.map = AttentionLayer::random(config, layer_seed(seed, 3 + 3 * b), rpe);
    block.agents_to_map = AttentionLayer::random(config, layer_seed(seed, 4 + 3 * b), rpe);
    w.blocks.push_back(std::move(block));
  }
  w.temporal = AttentionLayer::random(config, layer_seed(seed, 2 + 3 * config.blocks), false);
  w.decoder = Mlp::random(config.d_model, config.decoder_hidden, kActionCount, layer_seed(seed, 3 + 3 * config.blocks), 0.5);
  return w;
}

PipelineWeights PipelineWeights::identity(const PipelineConfig & config, std::uint64_t seed)
{
  PipelineWeights w = random(config, seed);
  for (auto & block : w.blocks) {
    zero_residual_branches(block.agents);
    zero_residual_branches(block.map);
    zero_residual_branches(block.agents_to_map);
  }
  zero_residual_branches(w.temporal);
  return w;
}

namespace
{

Bank normalized(const Bank & tokens)
{
  Bank out(tokens.rows(), 1, tokens.width());
  for (std::size_t r = 0; r < tokens.rows(); ++r) layer_norm(tokens.row(r), out.row(r));
  return out;
}

void project(const Linear & layer, const Bank & in, Bank & out)
{
  for (std::size_t r = 0; r < in.rows(); ++r) layer.apply(in.row(r), out.row(r));
}

PoseSet select_poses(const PoseSet & poses, std::size_t first, std::size_t count)
{
  PoseSet out(count);
  std::copy_n(poses.positions.begin() + static_cast<std::ptrdiff_t>(first), count, out.positions.begin());
  std::copy_n(poses.headings.begin() + static_cast<std::ptrdiff_t>(first), count, out.headings.begin());
  return out;
}

}  // namespace

void apply_attention_layer(
  const AttentionLayer & layer, const PipelineConfig & config, const EncodingVariant & variant, Bank & tokens,
  const PoseSet & token_poses, const Bank * context, const PoseSet * context_poses, bool causal)
{
  const std::size_t n = tokens.rows();
  const std::size_t d = config.d_model;
  if (tokens.heads() != 1 || tokens.width() != d) {
    throw DimensionError(fmt::format("token bank must be rows x 1 x {}", d));
  }
  AttentionOptions options = config.attention_options();
  options.causal = causal;
  const RpeEncoders * encoders = layer.rpe ? &*layer.rpe : nullptr;

  const Bank normed = normalized(tokens);
  QKVSet queries(n, config.heads, config.pairs(), config.value_width());
  project(layer.query, normed, queries.query);
  AttentionOutput attended;
  if (context == nullptr) {
    project(layer.key, normed, queries.key);
    project(layer.value, normed, queries.value);
    attended = self_attention(queries, token_poses, variant, options, encoders);
  } else {
    if (context_poses == nullptr) {
      throw std::invalid_argument("cross-attention needs context poses");
    }
    const Bank ctx_normed = normalized(*context);
    QKVSet kv(context->rows(), config.heads, config.pairs(), config.value_width());
    project(layer.key, ctx_normed, kv.key);
    project(layer.value, ctx_normed, kv.value);
    attended = mhca(queries, kv, token_poses, *context_poses, variant, options, encoders);
  }

  std::vector<double> delta(d);
  std::vector<double> normed_row(d);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = tokens.row(r);
    layer.output.apply(attended.merged_row(r), delta);
    for (std::size_t c = 0; c < d; ++c) row[c] += delta[c];
    layer_norm(row, normed_row);
    layer.ffn.apply(normed_row, delta);
    for (std::size_t c = 0; c < d; ++c) row[c] += delta[c];
  }
}

std::array<double, kAgentFeatureWidth> agent_features(std::span<const AgentState> track, std::size_t t, double dt)
{
  if (t >= track.size()) {
    throw std::out_of_range("timestep outside the track");
  }
  const AgentState & now = track[t];
  if (t == 0) {
    return {now.v, 0.0, 0.0};
  }
  const AgentState & prev = track[t - 1];
  // Heading change wrapped to [-pi, pi).
  double turn = relative_angle(now.yaw, prev.yaw).radians();
  if (turn >= std::numbers::pi) turn -= kTwoPi;
  return {now.v, (now.v - prev.v) / dt, turn / dt};
}

SceneTokens tokenize(
  const std::vector<std::vector<AgentState>> & tracks, std::span<const MapSegment> segments, double dt,
  const PipelineWeights & weights)
{
  if (tracks.empty() || tracks.front().empty()) {
    throw std::invalid_argument("cannot tokenize an empty scene");
  }
  const std::size_t d = weights.config.d_model;
  SceneTokens tokens;
  tokens.steps = tracks.front().size();
  tokens.agents = tracks.size();
  for (const auto & track : tracks) {
    if (track.size() != tokens.steps) {
      throw DimensionError("agent windows differ in length");
    }
  }
  tokens.agent_tokens = Bank(tokens.steps * tokens.agents, 1, d);
  tokens.agent_poses = PoseSet(tokens.steps * tokens.agents);
  std::vector<double> scratch(weights.agent_encoder.hidden);
  for (std::size_t t = 0; t < tokens.steps; ++t) {
    for (std::size_t a = 0; a < tokens.agents; ++a) {
      const std::size_t row = t * tokens.agents + a;
      const auto features = agent_features(tracks[a], t, dt);
      weights.agent_encoder.apply(features, tokens.agent_tokens.row(row), scratch);
      tokens.agent_poses.positions[row] = tracks[a][t].position();
      tokens.agent_poses.headings[row] = tracks[a][t].yaw;
    }
  }

  tokens.map_tokens = Bank(segments.size(), 1, d);
  tokens.map_poses = PoseSet(segments.size());
  std::vector<double> point_scratch(weights.point_encoder.hidden);
  std::vector<double> encoded(d);
  for (std::size_t m = 0; m < segments.size(); ++m) {
    auto row = tokens.map_tokens.row(m);
    std::ranges::fill(row, -std::numeric_limits<double>::infinity());
    for (const Vec2 & p : segments[m].local_shape) {
      const std::array<double, 2> point = {p.x, p.y};
      weights.point_encoder.apply(point, encoded, point_scratch);
      for (std::size_t c = 0; c < d; ++c) row[c] = std::max(row[c], encoded[c]);
    }
    tokens.map_poses.positions[m] = segments[m].anchor;
    tokens.map_poses.headings[m] = segments[m].heading;
  }
  return tokens;
}

SceneTokens tokenize_scene(const Scene & scene, const PipelineWeights & weights)
{
  scene.validate();
  std::vector<std::vector<AgentState>> tracks;
  for (const auto & track : scene.agents) tracks.push_back(track.history);
  const auto segments = scene.segments();
  return tokenize(tracks, segments, scene.dt, weights);
}

void interaction_step(SceneTokens & tokens, const PipelineWeights & weights)
{
  const PipelineConfig & config = weights.config;
  const EncodingVariant variant = config.encoding();
  const std::size_t n = tokens.agents;
  const std::size_t d = config.d_model;
  const bool has_map = tokens.map_tokens.rows() > 0;
  for (const auto & block : weights.blocks) {
    for (std::size_t t = 0; t < tokens.steps; ++t) {
      Bank slice(n, 1, d);
      std::ranges::copy(
        tokens.agent_tokens.values().subspan(t * n * d, n * d), slice.values().begin());
      apply_attention_layer(block.agents, config, variant, slice, select_poses(tokens.agent_poses, t * n, n));
      std::ranges::copy(slice.values(), tokens.agent_tokens.values().begin() + static_cast<std::ptrdiff_t>(t * n * d));
    }
    if (!has_map) {
      continue;
    }
    apply_attention_layer(block.map, config, variant, tokens.map_tokens, tokens.map_poses);
    for (std::size_t t = 0; t < tokens.steps; ++t) {
      Bank slice(n, 1, d);
      std::ranges::copy(
        tokens.agent_tokens.values().subspan(t * n * d, n * d), slice.values().begin());
      apply_attention_layer(
        block.agents_to_map, config, variant, slice, select_poses(tokens.agent_poses, t * n, n), &tokens.map_tokens,
        &tokens.map_poses);
      std::ranges::copy(slice.values(), tokens.agent_tokens.values().begin() + static_cast<std::ptrdiff_t>(t * n * d));
    }
  }
}

std::vector<double> temporal_encoding(std::size_t t, std::size_t d_model)
{
  std::vector<double> pe(d_model);
  for (std::size_t i = 0; i < d_model; i += 2) {
    const double angle =
      static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
    pe[i] = std::sin(angle);
    if (i + 1 < d_model) pe[i + 1] = std::cos(angle);
  }
  return pe;
}

Bank temporal_layer(const Bank & sequence, const AttentionLayer & layer, const PipelineConfig & config)
{
  Bank out = sequence;
  apply_attention_layer(layer, config, EncodingVariant::plain(), out, PoseSet{}, nullptr, nullptr, true);
  return out;
}

void temporal_step(SceneTokens & tokens, const PipelineWeights & weights)
{
  const std::size_t d = weights.config.d_model;
  const std::size_t n = tokens.agents;
  for (std::size_t a = 0; a < n; ++a) {
    Bank sequence(tokens.steps, 1, d);
    for (std::size_t t = 0; t < tokens.steps; ++t) {
      const auto pe = temporal_encoding(t, d);
      const auto src = tokens.agent_tokens.row(t * n + a);
      auto dst = sequence.row(t);
      for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] + pe[c];
    }
    const Bank updated = temporal_layer(sequence, weights.temporal, weights.config);
    for (std::size_t t = 0; t < tokens.steps; ++t) {
      std::ranges::copy(updated.row(t), tokens.agent_tokens.row(t * n + a).begin());
    }
  }
}

std::vector<double> ActionDistribution::probabilities(std::size_t r) const
{
  const auto row = row_logits(r);
  const double peak = *std::ranges::max_element(row);
  std::vector<double> p(row.size());
  double total = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    p[i] = std::exp(row[i] - peak);
    total += p[i];
  }
  for (double & v : p) v /= total;
  return p;
}

std::size_t ActionDistribution::argmax(std::size_t r) const
{
  const auto row = row_logits(r);
  return static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
}

ActionDistribution decode_actions(const Bank & tokens, const Mlp & decoder)
{
  if (decoder.out != kActionCount || decoder.in != tokens.heads() * tokens.width()) {
    throw DimensionError("decoder does not map tokens onto the action grid");
  }
  ActionDistribution dist;
  dist.rows = tokens.rows();
  dist.logits.resize(dist.rows * kActionCount);
  std::vector<double> scratch(decoder.hidden);
  for (std::size_t r = 0; r < dist.rows; ++r) {
    if (!std::ranges::all_of(tokens.row(r), [](double v) { return std::isfinite(v); })) {
      throw std::invalid_argument("non-finite token");
    }
    decoder.apply(tokens.row(r), {dist.logits.data() + r * kActionCount, kActionCount}, scratch);
  }
  return dist;
}

ActionDistribution pipeline_forward(
  const std::vector<std::vector<AgentState>> & tracks, std::span<const MapSegment> segments, double dt,
  const PipelineWeights & weights)
{
  SceneTokens tokens = tokenize(tracks, segments, dt, weights);
  interaction_step(tokens, weights);
  temporal_step(tokens, weights);
  const std::size_t d = weights.config.d_model;
  Bank last(tokens.agents, 1, d);
  std::ranges::copy(
    tokens.agent_tokens.values().subspan((tokens.steps - 1) * tokens.agents * d, tokens.agents * d),
    last.values().begin());
  return decode_actions(last, weights.decoder);
}

Policy pipeline_policy(PipelineWeights weights)
{
  return [weights = std::move(weights)](const RolloutContext & ctx) {
    return pipeline_forward(ctx.tracks, ctx.segments, ctx.dt, weights);
  };
}

Policy constant_action_policy(ActionBin bin)
{
  const std::size_t index = bin.flat();
  if (index >= kActionCount) {
    throw std::out_of_range("action bin outside the grid");
  }
  return [index](const RolloutContext & ctx) {
    ActionDistribution dist;
    dist.rows = ctx.tracks.size();
    dist.logits.assign(dist.rows * kActionCount, -50.0);
    for (std::size_t r = 0; r < dist.rows; ++r) dist.logits[r * kActionCount + index] = 0.0;
    return dist;
  };
}

namespace
{

std::size_t sample_index(const std::vector<double> & probs, std::mt19937_64 & rng)
{
  // 53 random bits in [0, 1), independent of the standard library's distributions.
  const double u = static_cast<double>(rng() >> 11) * 0x1p-53;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

}  // namespace

RolloutResult rollout(const Scene & scene, const Policy & policy, const RolloutOptions & options)
{
  scene.validate();
  if (!policy) {
    throw std::invalid_argument("rollout needs a policy");
  }
  RolloutResult result;
  if (static_cast<double>(options.horizon) * scene.dt > kSoftHorizonSeconds + 1e-9) {
    result.warnings.push_back(fmt::format(
      "horizon of {} steps at dt={} s exceeds {} s", options.horizon, scene.dt, kSoftHorizonSeconds));
  }
  const std::size_t n = scene.agents.size();
  const std::size_t context = options.context_steps == 0 ? scene.history_steps() : options.context_steps;
  const auto segments = scene.segments();
  std::vector<std::vector<AgentState>> full;
  for (const auto & track : scene.agents) full.push_back(track.history);
  result.states.assign(n, {});
  result.actions.assign(n, {});
  std::mt19937_64 rng(options.seed);

  std::vector<std::vector<AgentState>> window(n);
  for (std::size_t step = 0; step < options.horizon; ++step) {
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t len = std::min(context, full[a].size());
      window[a].assign(full[a].end() - static_cast<std::ptrdiff_t>(len), full[a].end());
    }
    const ActionDistribution dist = policy(RolloutContext{window, segments, scene.dt, step});
    if (dist.rows != n || dist.logits.size() != n * kActionCount) {
      throw DimensionError("policy returned the wrong number of action rows");
    }
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t index =
        options.selection == Selection::kGreedy ? dist.argmax(a) : sample_index(dist.probabilities(a), rng);
      const ActionBin bin = ActionBin::from_flat(index);
      const AgentState next = kinematic_step(full[a].back(), ControlAction::from_bin(bin), scene.dt);
      full[a].push_back(next);
      result.states[a].push_back(next);
      result.actions[a].push_back(bin);
    }
  }
  return result;
}

double min_ade(std::span<const std::vector<Vec2>> samples, std::span<const Vec2> truth)
{
  if (samples.empty()) {
    throw std::invalid_argument("minADE needs at least one sample");
  }
  if (truth.empty()) {
    throw DimensionError("empty ground truth");
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto & sample : samples) {
    if (sample.size() != truth.size()) {
      throw DimensionError(fmt::format("sample horizon {} vs ground truth {}", sample.size(), truth.size()));
    }
    double total = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) total += norm(sample[t] - truth[t]);
    best = std::min(best, total / static_cast<double>(truth.size()));
  }
  return best;
}

double scene_min_ade(const RolloutResult & result, const Scene & scene)
{
  if (result.states.size() != scene.agents.size()) {
    throw DimensionError("rollout and scene disagree on the agent count");
  }
  double total = 0.0;
  for (std::size_t a = 0; a < scene.agents.size(); ++a) {
    std::vector<Vec2> predicted;
    std::vector<Vec2> truth;
    for (const auto & s : result.states[a]) predicted.push_back(s.position());
    for (const auto & s : scene.agents[a].future) truth.push_back(s.position());
    const std::vector<std::vector<Vec2>> samples = {predicted};
    total += min_ade(samples, truth);
  }
  return total / static_cast<double>(scene.agents.size());
}

std::string trajectory_csv(const Scene & scene, const RolloutResult & result)
{
  std::string out = "scene_id,agent_id,t,x,y,yaw,v\n";
  for (std::size_t a = 0; a < result.states.size(); ++a) {
    for (std::size_t t = 0; t < result.states[a].size(); ++t) {
      const AgentState & s = result.states[a][t];
      out += fmt::format(
        "{},{},{},{},{},{},{}\n", scene.scene_id, scene.agents[a].id, t + 1, s.x, s.y, s.yaw.radians(), s.v);
    }
  }
  return out;
}

}  // namespace drope
