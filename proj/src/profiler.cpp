#include "drope/profiler.hpp"

#include "drope/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <random>
#include <stdexcept>

namespace drope
{
namespace
{

std::uint64_t mul(std::uint64_t a, std::uint64_t b)
{
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) {
    throw std::range_error("scalar count overflows 64 bits");
  }
  return r;
}

std::uint64_t add(std::uint64_t a, std::uint64_t b)
{
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) {
    throw std::range_error("scalar count overflows 64 bits");
  }
  return r;
}

void require_positive(std::initializer_list<std::size_t> dims)
{
  for (std::size_t d : dims) {
    if (d == 0) {
      throw std::invalid_argument("profiler dimensions must be positive");
    }
  }
}

void finish_totals(MemoryReport & r)
{
  r.total_scalars = add(add(add(add(r.qkv_scalars, r.embedded_scalars), r.pairwise_scalars), r.output_scalars), r.weight_scalars);
  r.bytes_fp32 = mul(r.total_scalars, 4);
  r.bytes_fp64 = mul(r.total_scalars, 8);
}

MemoryReport skeleton(
  Variant variant, std::size_t n, std::size_t h, std::size_t p, std::size_t d_v, EmbedMode embed_mode,
  CountMode count_mode)
{
  require_positive({n, h, p, d_v});
  EncodingVariant::of(variant, p).validate(p, h);
  MemoryReport r;
  r.variant = variant;
  r.tokens = n;
  r.heads = h;
  r.pairs = p;
  r.d_v = d_v;
  r.embed_mode = embed_mode;
  r.count_mode = count_mode;
  const std::uint64_t nh = mul(n, h);
  r.symbolic_qkv_scalars = mul(nh, add(mul(2, p), d_v));
  if (variant == Variant::kRpe) {
    r.symbolic_pairwise_scalars = mul(mul(nh, n), add(p, d_v));
  }
  return r;
}

}  // namespace

std::string_view to_string(EmbedMode mode) { return mode == EmbedMode::kInPlace ? "in-place" : "materialized"; }

std::string_view to_string(CountMode mode) { return mode == CountMode::kFull ? "full" : "inputs"; }

MemoryReport count_input_memory(
  Variant variant, std::size_t n, std::size_t h, std::size_t p, std::size_t d_v, EmbedMode embed_mode,
  CountMode count_mode)
{
  MemoryReport r = skeleton(variant, n, h, p, d_v, embed_mode, count_mode);
  const std::uint64_t nh = mul(n, h);
  const std::uint64_t qk = mul(2, p);
  r.qkv_scalars = mul(nh, add(mul(2, qk), d_v));
  if (EncodingVariant::of(variant, p).rotates() && embed_mode == EmbedMode::kMaterialized) {
    r.embedded_scalars = mul(mul(2, nh), qk);
  }
  if (variant == Variant::kRpe) {
    r.pairwise_scalars = mul(mul(nh, n), add(qk, d_v));
  }
  if (count_mode == CountMode::kFull) {
    r.output_scalars = mul(nh, d_v);
    r.weight_scalars = mul(nh, n);
  }
  finish_totals(r);
  return r;
}

MemoryReport measure_input_memory(
  Variant variant, std::size_t n, std::size_t h, std::size_t p, std::size_t d_v, EmbedMode embed_mode,
  CountMode count_mode, std::uint64_t seed)
{
  MemoryReport r = skeleton(variant, n, h, p, d_v, embed_mode, count_mode);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> coord(-50.0, 50.0);
  std::uniform_real_distribution<double> turn(0.0, kTwoPi);
  QKVSet qkv(n, h, p, d_v);
  for (Bank * bank : {&qkv.query, &qkv.key, &qkv.value}) {
    for (double & v : bank->values()) {
      v = gauss(rng);
    }
  }
  PoseSet poses(n);
  for (std::size_t i = 0; i < n; ++i) {
    poses.positions[i] = {coord(rng), coord(rng)};
    poses.headings[i] = Angle(turn(rng));
  }
  const auto encoders = RpeEncoders::random(h, p, d_v, seed);
  const auto enc = EncodingVariant::of(variant, p);

  AllocationLedger ledger;
  AttentionOptions options;
  options.ledger = &ledger;
  options.retain_alpha = count_mode == CountMode::kFull;
  if (embed_mode == EmbedMode::kInPlace) {
    self_attention_in_place(qkv, poses, enc, options, &encoders);
  } else {
    self_attention(qkv, poses, enc, options, &encoders);
  }

  r.qkv_scalars = ledger.inputs;
  r.embedded_scalars = ledger.embedded;
  r.pairwise_scalars = ledger.pairwise;
  if (count_mode == CountMode::kFull) {
    r.output_scalars = ledger.outputs;
    r.weight_scalars = ledger.weights;
  }
  finish_totals(r);
  return r;
}

FlopReport count_flops(
  Variant variant, std::size_t queries, std::size_t keys, std::size_t heads, std::size_t pairs, std::size_t d_v,
  std::size_t encoder_hidden)
{
  if (keys == 0) {
    keys = queries;
  }
  require_positive({queries, keys, heads, pairs, d_v});
  FlopReport r;
  r.variant = variant;
  r.queries = queries;
  r.keys = keys;
  r.heads = heads;
  r.pairs = pairs;
  r.d_v = d_v;
  r.encoder_hidden = encoder_hidden;

  const std::uint64_t qk = mul(2, pairs);
  const std::uint64_t nmh = mul(mul(queries, keys), heads);
  r.scores = mul(mul(2, nmh), qk);
  r.softmax = mul(5, nmh);
  r.weighted_sum = mul(mul(2, nmh), d_v);
  if (EncodingVariant::of(variant, pairs).rotates()) {
    r.embedding = mul(mul(mul(6, pairs), heads), add(queries, keys));
  }
  if (variant == Variant::kRpe) {
    if (encoder_hidden == 0) {
      throw std::invalid_argument("RPE encoder hidden width must be positive");
    }
    const std::uint64_t per_pair = add(
      add(add(3, Mlp::flops(kDescriptorWidth, encoder_hidden, mul(heads, qk))),
          Mlp::flops(kDescriptorWidth, encoder_hidden, mul(heads, d_v))),
      mul(heads, add(qk, d_v)));
    r.rpe_encoders = mul(mul(queries, keys), per_pair);
  }
  r.total = add(add(add(add(r.scores, r.softmax), r.weighted_sum), r.embedding), r.rpe_encoders);
  return r;
}

std::vector<SweepRow> sweep(
  std::span<const SweepConfig> configs, std::span<const Variant> variants, EmbedMode embed_mode, CountMode count_mode,
  std::size_t encoder_hidden)
{
  if (configs.empty() || variants.empty()) {
    throw std::invalid_argument("sweep needs at least one config and one variant");
  }
  std::vector<SweepRow> rows;
  rows.reserve(configs.size() * variants.size());
  for (const auto & c : configs) {
    for (Variant v : variants) {
      rows.push_back(
        {c, count_input_memory(v, c.tokens, c.heads, c.pairs, c.d_v, embed_mode, count_mode),
         count_flops(v, c.tokens, 0, c.heads, c.pairs, c.d_v, encoder_hidden)});
    }
  }
  return rows;
}

const char * const kSweepCsvHeader =
  "variant,N,H,d_k,d_v,embed_mode,count_mode,qkv_scalars,embedded_scalars,pairwise_scalars,output_scalars,"
  "weight_scalars,total_scalars,bytes_fp32,bytes_fp64,symbolic_qkv_scalars,symbolic_pairwise_scalars,"
  "flops_scores,flops_softmax,flops_weighted_sum,flops_embedding,flops_rpe_encoders,flops_total";

std::string sweep_csv(std::span<const SweepRow> rows)
{
  std::string out = kSweepCsvHeader;
  out += '\n';
  for (const auto & row : rows) {
    const auto & m = row.memory;
    const auto & f = row.flops;
    out += fmt::format(
      "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", to_string(m.variant), m.tokens, m.heads,
      m.pairs, m.d_v, to_string(m.embed_mode), to_string(m.count_mode), m.qkv_scalars, m.embedded_scalars,
      m.pairwise_scalars, m.output_scalars, m.weight_scalars, m.total_scalars, m.bytes_fp32, m.bytes_fp64,
      m.symbolic_qkv_scalars, m.symbolic_pairwise_scalars, f.scores, f.softmax, f.weighted_sum, f.embedding,
      f.rpe_encoders, f.total);
  }
  return out;
}

nlohmann::json to_json(const MemoryReport & m)
{
  return {
    {"variant", to_string(m.variant)},
    {"N", m.tokens},
    {"H", m.heads},
    {"d_k", m.pairs},
    {"d_v", m.d_v},
    {"embed_mode", to_string(m.embed_mode)},
    {"count_mode", to_string(m.count_mode)},
    {"qkv_scalars", m.qkv_scalars},
    {"embedded_scalars", m.embedded_scalars},
    {"pairwise_scalars", m.pairwise_scalars},
    {"output_scalars", m.output_scalars},
    {"weight_scalars", m.weight_scalars},
    {"total_scalars", m.total_scalars},
    {"bytes_fp32", m.bytes_fp32},
    {"bytes_fp64", m.bytes_fp64},
    {"symbolic_qkv_scalars", m.symbolic_qkv_scalars},
    {"symbolic_pairwise_scalars", m.symbolic_pairwise_scalars},
  };
}

nlohmann::json to_json(const FlopReport & f)
{
  return {
    {"variant", to_string(f.variant)},
    {"N", f.queries},
    {"M", f.keys},
    {"H", f.heads},
    {"d_k", f.pairs},
    {"d_v", f.d_v},
    {"encoder_hidden", f.encoder_hidden},
    {"scores", f.scores},
    {"softmax", f.softmax},
    {"weighted_sum", f.weighted_sum},
    {"embedding", f.embedding},
    {"rpe_encoders", f.rpe_encoders},
    {"total", f.total},
  };
}

nlohmann::json sweep_json(std::span<const SweepRow> rows)
{
  nlohmann::json out = nlohmann::json::array();
  for (const auto & row : rows) {
    out.push_back({{"memory", to_json(row.memory)}, {"flops", to_json(row.flops)}});
  }
  return out;
}

std::string gnuplot_curves(std::span<const SweepRow> rows)
{
  std::vector<Variant> order;
  for (const auto & row : rows) {
    if (std::find(order.begin(), order.end(), row.memory.variant) == order.end()) {
      order.push_back(row.memory.variant);
    }
  }
  std::string out;
  for (std::size_t b = 0; b < order.size(); ++b) {
    if (b > 0) {
      out += "\n\n";
    }
    out += fmt::format("# variant {}\n# N d_k qk_width total_scalars total_flops\n", to_string(order[b]));
    for (const auto & row : rows) {
      if (row.memory.variant != order[b]) {
        continue;
      }
      out += fmt::format(
        "{} {} {} {} {}\n", row.config.tokens, row.config.pairs, 2 * row.config.pairs, row.memory.total_scalars,
        row.flops.total);
    }
  }
  return out;
}

}  // namespace drope
