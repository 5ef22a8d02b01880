#ifndef DROPE__PROFILER_HPP_
#define DROPE__PROFILER_HPP_

#include "drope/attention.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace drope
{

// Whether rotating variants embed Q and K into fresh buffers or overwrite the
// input banks.
enum class EmbedMode { kMaterialized, kInPlace };

// kInputs counts the attention inputs and the intermediates a variant cannot
// avoid (embedded Q/K, per-pair K_ij/V_ij). kFull also counts the per-head
// outputs and the retained attention weights.
enum class CountMode { kInputs, kFull };

std::string_view to_string(EmbedMode mode);
std::string_view to_string(CountMode mode);

inline constexpr std::string_view kWidthConvention =
  "d_k is the rotary pair count; Q and K rows are 2*d_k wide, V rows d_v wide. "
  "symbolic_* fields substitute d_k for the QK width: N*H*(2*d_k+d_v) and N^2*H*(d_k+d_v).";

/// Scalar-count ledger for one attention call.
struct MemoryReport
{
  Variant variant{Variant::kPlain};
  std::size_t tokens{0};
  std::size_t heads{0};
  std::size_t pairs{0};
  std::size_t d_v{0};
  EmbedMode embed_mode{EmbedMode::kMaterialized};
  CountMode count_mode{CountMode::kInputs};

  std::uint64_t qkv_scalars{0};       // N*H*(2*(2*d_k) + d_v)
  std::uint64_t embedded_scalars{0};  // 2*N*H*(2*d_k) when rotated copies are materialized
  std::uint64_t pairwise_scalars{0};  // N^2*H*(2*d_k + d_v), RPE only
  std::uint64_t output_scalars{0};    // full mode: N*H*d_v
  std::uint64_t weight_scalars{0};    // full mode: N*H*N
  std::uint64_t total_scalars{0};
  std::uint64_t bytes_fp32{0};
  std::uint64_t bytes_fp64{0};

  std::uint64_t symbolic_qkv_scalars{0};
  std::uint64_t symbolic_pairwise_scalars{0};

  friend bool operator==(const MemoryReport &, const MemoryReport &) = default;
};

/// Closed-form counts. Dimensions must be positive (std::invalid_argument);
/// counts that overflow 64 bits throw std::range_error. Head-by-head with a
/// single head throws ConfigurationError, as the engine does.
MemoryReport count_input_memory(
  Variant variant, std::size_t tokens, std::size_t heads, std::size_t pairs, std::size_t d_v,
  EmbedMode embed_mode = EmbedMode::kMaterialized, CountMode count_mode = CountMode::kInputs);

/// Runs the engine on seeded random inputs with an AllocationLedger attached
/// and reports what it actually allocated.
MemoryReport measure_input_memory(
  Variant variant, std::size_t tokens, std::size_t heads, std::size_t pairs, std::size_t d_v,
  EmbedMode embed_mode = EmbedMode::kMaterialized, CountMode count_mode = CountMode::kInputs,
  std::uint64_t seed = 7);

/// Arithmetic count of one attention call, one multiply or add per FLOP and
/// one per exp/tanh. Sine/cosine evaluation of the rotation angles is not
/// counted.
///   scores        2*N*M*H*(2*d_k)          dot products
///   softmax       5*N*M*H                  scale, max-subtract, exp, sum, divide
///   weighted_sum  2*N*M*H*d_v
///   embedding     6*d_k*H*(N+M)            4 mul + 2 add per rotated pair of Q and K
///   rpe_encoders  N*M*(3 + mlp(3->hidden->H*2*d_k) + mlp(3->hidden->H*d_v) + H*(2*d_k+d_v))
struct FlopReport
{
  Variant variant{Variant::kPlain};
  std::size_t queries{0};
  std::size_t keys{0};
  std::size_t heads{0};
  std::size_t pairs{0};
  std::size_t d_v{0};
  std::size_t encoder_hidden{0};

  std::uint64_t scores{0};
  std::uint64_t softmax{0};
  std::uint64_t weighted_sum{0};
  std::uint64_t embedding{0};
  std::uint64_t rpe_encoders{0};
  std::uint64_t total{0};

  friend bool operator==(const FlopReport &, const FlopReport &) = default;
};

// keys == 0 means self-attention (keys = queries).
FlopReport count_flops(
  Variant variant, std::size_t queries, std::size_t keys, std::size_t heads, std::size_t pairs, std::size_t d_v,
  std::size_t encoder_hidden = kDefaultEncoderHidden);

struct SweepConfig
{
  std::size_t tokens{0};
  std::size_t heads{0};
  std::size_t pairs{0};
  std::size_t d_v{0};
};

struct SweepRow
{
  SweepConfig config;
  MemoryReport memory;
  FlopReport flops;
};

/// One row per (config, variant), configs outermost. Empty inputs throw
/// std::invalid_argument.
std::vector<SweepRow> sweep(
  std::span<const SweepConfig> configs, std::span<const Variant> variants, EmbedMode embed_mode = EmbedMode::kInPlace,
  CountMode count_mode = CountMode::kInputs, std::size_t encoder_hidden = kDefaultEncoderHidden);

// Fixed header, see README.
extern const char * const kSweepCsvHeader;
std::string sweep_csv(std::span<const SweepRow> rows);
nlohmann::json to_json(const MemoryReport & report);
nlohmann::json to_json(const FlopReport & report);
nlohmann::json sweep_json(std::span<const SweepRow> rows);

/// Gnuplot data blocks, one per variant (separated by two blank lines so
/// `index` selects them): columns d_k, qk_width, total_scalars, total_flops.
std::string gnuplot_curves(std::span<const SweepRow> rows);

}  // namespace drope

#endif  // DROPE__PROFILER_HPP_
