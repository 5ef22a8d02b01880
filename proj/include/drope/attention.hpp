#ifndef DROPE__ATTENTION_HPP_
#define DROPE__ATTENTION_HPP_

#include "drope/bank.hpp"
#include "drope/rotary.hpp"
#include "drope/rpe_encoder.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace drope
{

enum class Variant { kPlain, kRpe, kRope, kDropeHeadByHead, kDropeIntraHead };

inline constexpr std::array<Variant, 5> kAllVariants = {
  Variant::kPlain, Variant::kRpe, Variant::kRope, Variant::kDropeHeadByHead, Variant::kDropeIntraHead};

// CLI spelling: plain, rpe, rope, drope-hbh, drope-ih.
std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);  // throws std::invalid_argument

/// Attention regime plus, for the intra-head variant, how each head's QK
/// vector is split between the position and heading sub-vectors (in scalars).
struct EncodingVariant
{
  Variant kind{Variant::kPlain};
  std::size_t pos_width{0};
  std::size_t angle_width{0};

  static EncodingVariant plain() { return {Variant::kPlain}; }
  static EncodingVariant rpe() { return {Variant::kRpe}; }
  static EncodingVariant rope() { return {Variant::kRope}; }
  static EncodingVariant head_by_head() { return {Variant::kDropeHeadByHead}; }
  static EncodingVariant intra_head(std::size_t pos_width, std::size_t angle_width)
  {
    return {Variant::kDropeIntraHead, pos_width, angle_width};
  }
  // Balanced split; odd pair counts give the extra pair to the position part.
  static EncodingVariant balanced_intra_head(std::size_t pairs);
  // Variant with its default split for `pairs` pairs per head.
  static EncodingVariant of(Variant kind, std::size_t pairs);

  // Throws ConfigurationError: intra-head widths must be even and sum to
  // 2 * pairs; head-by-head needs at least two heads.
  void validate(std::size_t pairs, std::size_t heads) const;

  bool rotates() const noexcept
  {
    return kind == Variant::kRope || kind == Variant::kDropeHeadByHead || kind == Variant::kDropeIntraHead;
  }
};

/// Query, key and value banks for N tokens and H heads. Q and K rows are
/// 2 * pairs wide, V rows d_v wide.
struct QKVSet
{
  std::size_t pairs{0};
  std::size_t d_v{0};
  Bank query;
  Bank key;
  Bank value;

  QKVSet() = default;
  QKVSet(std::size_t tokens, std::size_t heads, std::size_t pairs, std::size_t d_v);

  std::size_t tokens() const noexcept { return query.rows(); }
  std::size_t heads() const noexcept { return query.heads(); }
  std::size_t qk_width() const noexcept { return 2 * pairs; }

  // Shape mismatch throws DimensionError, NaN/Inf throws std::invalid_argument.
  void validate() const;
};

/// Global planar positions and headings, one per token.
struct PoseSet
{
  std::vector<Vec2> positions;
  std::vector<Angle> headings;

  PoseSet() = default;
  explicit PoseSet(std::size_t n) : positions(n), headings(n) {}

  std::size_t size() const noexcept { return positions.size(); }
  void validate(std::size_t expected) const;
};

/// Scalar counts of every buffer an engine call allocates, by category.
struct AllocationLedger
{
  std::uint64_t inputs{0};    // Q, K, V banks handed to the engine
  std::uint64_t embedded{0};  // rotated copies of Q and K
  std::uint64_t pairwise{0};  // per-pair K_ij and V_ij
  std::uint64_t outputs{0};   // per-head outputs
  std::uint64_t weights{0};   // retained attention weights

  std::uint64_t total() const noexcept { return inputs + embedded + pairwise + outputs + weights; }
  friend bool operator==(const AllocationLedger &, const AllocationLedger &) = default;
};

struct AttentionOptions
{
  bool retain_alpha{false};
  // Query i attends only to keys j <= i. Self-attention only.
  bool causal{false};
  double rope_base{kRopeBase};
  // Fault injection: embed headings with the multi-frequency position schedule
  // instead of a uniform unit frequency.
  bool angle_uses_rope_schedule{false};
  AllocationLedger * ledger{nullptr};
};

struct AttentionOutput
{
  Bank out;                    // tokens x heads x d_v
  std::optional<Bank> alpha;   // tokens x heads x keys, when retained

  // Head-concatenated rows, tokens x (heads * d_v).
  std::span<const double> merged() const noexcept { return out.values(); }
  std::span<const double> merged_row(std::size_t i) const { return out.row(i); }
  std::size_t merged_width() const noexcept { return out.heads() * out.width(); }
};

/// Rotates one head's QK vector in place according to the variant. `inverse`
/// applies the transpose rotation.
void embed_head_vector(
  std::span<double> vec, std::size_t head, Vec2 position, Angle heading, const EncodingVariant & variant,
  const AttentionOptions & options, bool inverse = false);

AttentionOutput mhsa_plain(const QKVSet & qkv, const AttentionOptions & options = {});
AttentionOutput mhsa_rpe(
  const QKVSet & qkv, const PoseSet & poses, const RpeEncoders & encoders, const AttentionOptions & options = {});
AttentionOutput mhsa_rope(const QKVSet & qkv, const PoseSet & poses, const AttentionOptions & options = {});
AttentionOutput mhsa_drope_hbh(const QKVSet & qkv, const PoseSet & poses, const AttentionOptions & options = {});
AttentionOutput mhsa_drope_ih(
  const QKVSet & qkv, const PoseSet & poses, std::size_t pos_width, std::size_t angle_width,
  const AttentionOptions & options = {});

/// Self-attention under any variant. `encoders` is required for RPE and
/// ignored otherwise. Q and K are embedded into fresh buffers.
AttentionOutput self_attention(
  const QKVSet & qkv, const PoseSet & poses, const EncodingVariant & variant, const AttentionOptions & options = {},
  const RpeEncoders * encoders = nullptr);

/// Same as self_attention, but rotates qkv.query and qkv.key in place so no
/// embedded copies are allocated. On return the banks hold the rotated vectors.
AttentionOutput self_attention_in_place(
  QKVSet & qkv, const PoseSet & poses, const EncodingVariant & variant, const AttentionOptions & options = {},
  const RpeEncoders * encoders = nullptr);

/// Cross-attention: queries come from `queries.query`, keys and values from
/// `keys_values.key` / `keys_values.value`. The other banks are ignored.
AttentionOutput mhca(
  const QKVSet & queries, const QKVSet & keys_values, const PoseSet & query_poses, const PoseSet & kv_poses,
  const EncodingVariant & variant, const AttentionOptions & options = {}, const RpeEncoders * encoders = nullptr);

struct AttentionGradients
{
  Bank query;
  Bank key;
  Bank value;
};

/// Gradients of sum(upstream * O) with respect to the Q, K and V banks of a
/// self-attention call. `forward` must be the output of that call with
/// retain_alpha set. RPE throws NotImplementedError.
AttentionGradients attention_backward(
  const EncodingVariant & variant, const QKVSet & qkv, const PoseSet & poses, const AttentionOutput & forward,
  const Bank & upstream, const AttentionOptions & options = {});

/// Cross-attention counterpart of attention_backward. Query gradients land in
/// `query`, key and value gradients in `key` / `value`.
AttentionGradients cross_attention_backward(
  const EncodingVariant & variant, const QKVSet & queries, const QKVSet & keys_values, const PoseSet & query_poses,
  const PoseSet & kv_poses, const AttentionOutput & forward, const Bank & upstream,
  const AttentionOptions & options = {});

/// Dot products of the three-element heading example: E0, E1, E2 at pi/2, 0
/// and 3*pi/2, so pairs (0,1) and (1,2) share the relative angle pi/2.
struct PeriodicityReport
{
  double rope_lhs{0.0};   // <f(Q, theta_0), f(K, theta_1)> under the position schedule
  double rope_rhs{0.0};   // <f(Q, theta_1), f(K, theta_2)>
  double rope_gap{0.0};
  double drope_lhs{0.0};  // same pairs under the heading embedding
  double drope_rhs{0.0};
  double drope_gap{0.0};

  bool holds(double rope_min_gap = 1e-3, double drope_max_gap = 1e-10) const
  {
    return rope_gap > rope_min_gap && drope_gap < drope_max_gap;
  }
};

/// Evaluates the example for explicit Q and K (any even length, no
/// precondition on the pair count).
PeriodicityReport periodicity_gap(
  std::span<const double> q, std::span<const double> k, bool angle_uses_rope_schedule = false);

/// Seeded Gaussian Q and K with `pairs` pairs. Throws ConfigurationError for
/// pairs < 2, where the single unit frequency makes both embeddings coincide.
PeriodicityReport rope_periodicity_counterexample(
  std::size_t pairs, std::uint64_t seed, bool angle_uses_rope_schedule = false);

}  // namespace drope

#endif  // DROPE__ATTENTION_HPP_
