#ifndef DROPE__PIPELINE_HPP_
#define DROPE__PIPELINE_HPP_

#include "drope/attention.hpp"
#include "drope/scene.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drope
{

struct PipelineConfig
{
  std::size_t d_model{64};
  std::size_t heads{4};
  std::size_t blocks{2};  // stacked interaction blocks
  std::size_t ffn_hidden{128};
  std::size_t encoder_hidden{64};
  std::size_t decoder_hidden{64};
  Variant variant{Variant::kDropeHeadByHead};
  double rope_base{kRopeBase};
  bool angle_uses_rope_schedule{false};  // fault injection, see AttentionOptions

  // Per head: QK width 2 * pairs = d_model / heads, value width d_model / heads.
  std::size_t pairs() const noexcept { return d_model / (2 * heads); }
  std::size_t value_width() const noexcept { return d_model / heads; }
  EncodingVariant encoding() const { return EncodingVariant::of(variant, pairs()); }
  AttentionOptions attention_options() const;

  // Throws ConfigurationError unless d_model splits into whole pairs per head.
  void validate() const;
};

/// y = W x + b with W stored row-major (out x in).
struct Linear
{
  std::size_t in{0};
  std::size_t out{0};
  std::vector<double> weight;
  std::vector<double> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out);  // zeros
  // Uniform in [-1/sqrt(in), 1/sqrt(in)].
  static Linear random(std::size_t in, std::size_t out, std::uint64_t seed);

  void apply(std::span<const double> x, std::span<double> y) const;
};

/// down(gelu(up(x))), exact erf GELU.
struct FeedForward
{
  Linear up;
  Linear down;

  void apply(std::span<const double> x, std::span<double> y) const;
};

double gelu(double x);

/// Parameterless layer norm over one token, epsilon 1e-5.
void layer_norm(std::span<const double> x, std::span<double> y);

/// Pre-norm attention sub-block followed by a pre-norm feed-forward, both
/// residual. Zero `output` and `ffn.down` make the whole layer the identity.
struct AttentionLayer
{
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  FeedForward ffn;
  std::optional<RpeEncoders> rpe;

  static AttentionLayer random(const PipelineConfig & config, std::uint64_t seed, bool with_rpe);
};

struct InteractionBlock
{
  AttentionLayer agents;         // agent self-attention, per timestep
  AttentionLayer map;            // map self-attention
  AttentionLayer agents_to_map;  // agents query map tokens, per timestep
};

// Agent features: speed, speed change rate, wrapped yaw rate.
inline constexpr std::size_t kAgentFeatureWidth = 3;

struct PipelineWeights
{
  PipelineConfig config;
  Mlp agent_encoder;  // features -> d_model
  Mlp point_encoder;  // local (x, y) -> d_model, max-pooled over points
  std::vector<InteractionBlock> blocks;
  AttentionLayer temporal;
  Mlp decoder;  // d_model -> action logits

  static PipelineWeights random(const PipelineConfig & config, std::uint64_t seed);
  // Seeded encoders and decoder, every residual branch zeroed.
  static PipelineWeights identity(const PipelineConfig & config, std::uint64_t seed);
};

/// Runs one layer over `tokens` in place (rows x 1 x d_model). Self-attention
/// when `context` is null.
void apply_attention_layer(
  const AttentionLayer & layer, const PipelineConfig & config, const EncodingVariant & variant, Bank & tokens,
  const PoseSet & token_poses, const Bank * context = nullptr, const PoseSet * context_poses = nullptr,
  bool causal = false);

/// Pose-free agent and map tokens plus the poses that were stripped from them.
/// Agent rows are ordered timestep-major: row t * agents + a.
struct SceneTokens
{
  std::size_t steps{0};
  std::size_t agents{0};
  Bank agent_tokens;
  PoseSet agent_poses;
  Bank map_tokens;
  PoseSet map_poses;
};

std::array<double, kAgentFeatureWidth> agent_features(std::span<const AgentState> track, std::size_t t, double dt);

/// `tracks` holds one equally long state window per agent.
SceneTokens tokenize(
  const std::vector<std::vector<AgentState>> & tracks, std::span<const MapSegment> segments, double dt,
  const PipelineWeights & weights);
SceneTokens tokenize_scene(const Scene & scene, const PipelineWeights & weights);

/// All interaction blocks: agents per timestep, then map, then agents to map.
void interaction_step(SceneTokens & tokens, const PipelineWeights & weights);

std::vector<double> temporal_encoding(std::size_t t, std::size_t d_model);

/// Causal plain self-attention layer over one agent's T x d_model sequence;
/// the temporal encoding must already be added.
Bank temporal_layer(const Bank & sequence, const AttentionLayer & layer, const PipelineConfig & config);

/// Adds the temporal encoding and runs temporal_layer for every agent.
void temporal_step(SceneTokens & tokens, const PipelineWeights & weights);

/// Logits over the action grid, one row of kActionCount per token.
struct ActionDistribution
{
  std::size_t rows{0};
  std::vector<double> logits;

  std::span<const double> row_logits(std::size_t r) const { return {logits.data() + r * kActionCount, kActionCount}; }
  std::vector<double> probabilities(std::size_t r) const;
  std::size_t argmax(std::size_t r) const;  // first maximum
};

ActionDistribution decode_actions(const Bank & tokens, const Mlp & decoder);

/// Full forward pass; decodes the last timestep of every agent.
ActionDistribution pipeline_forward(
  const std::vector<std::vector<AgentState>> & tracks, std::span<const MapSegment> segments, double dt,
  const PipelineWeights & weights);

struct RolloutContext
{
  const std::vector<std::vector<AgentState>> & tracks;  // current window per agent
  std::span<const MapSegment> segments;
  double dt;
  std::size_t step;
};

using Policy = std::function<ActionDistribution(const RolloutContext &)>;

Policy pipeline_policy(PipelineWeights weights);
Policy constant_action_policy(ActionBin bin);

enum class Selection { kGreedy, kSample };

struct RolloutOptions
{
  std::size_t horizon{16};
  Selection selection{Selection::kGreedy};
  std::uint64_t seed{0};
  std::size_t context_steps{0};  // 0: the scene's history length
};

inline constexpr double kSoftHorizonSeconds = 8.0;

struct RolloutResult
{
  std::vector<std::vector<AgentState>> states;  // per agent, horizon steps after the prefix
  std::vector<std::vector<ActionBin>> actions;  // per agent, the control that produced each state
  std::vector<std::string> warnings;
};

/// Autoregressive closed loop from the end of each agent's history.
RolloutResult rollout(const Scene & scene, const Policy & policy, const RolloutOptions & options = {});

/// Minimum over samples of the mean displacement. Throws DimensionError on a
/// horizon mismatch and std::invalid_argument without samples.
double min_ade(std::span<const std::vector<Vec2>> samples, std::span<const Vec2> truth);

/// Mean over agents of the single-sample ADE against the scene futures.
double scene_min_ade(const RolloutResult & result, const Scene & scene);

// Header: scene_id,agent_id,t,x,y,yaw,v. t counts steps after the history.
std::string trajectory_csv(const Scene & scene, const RolloutResult & result);

}  // namespace drope

#endif  // DROPE__PIPELINE_HPP_
