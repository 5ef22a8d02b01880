#include "drope/attention.hpp"

#include "drope/errors.hpp"
#include "drope/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace drope
{
namespace
{

struct PairwiseKV
{
  Bank key;    // (queries * keys) x heads x 2 * pairs
  Bank value;  // (queries * keys) x heads x d_v
};

double dot(std::span<const double> a, std::span<const double> b)
{
  double acc = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    acc += a[c] * b[c];
  }
  return acc;
}

void check_bank(const Bank & bank, std::size_t rows, std::size_t heads, std::size_t width, const char * name)
{
  if (bank.rows() != rows || bank.heads() != heads || bank.width() != width) {
    throw DimensionError(
      std::string(name) + " bank is " + std::to_string(bank.rows()) + "x" + std::to_string(bank.heads()) + "x" +
      std::to_string(bank.width()) + ", expected " + std::to_string(rows) + "x" + std::to_string(heads) + "x" +
      std::to_string(width));
  }
  if (!bank.all_finite()) {
    throw std::invalid_argument(std::string(name) + " bank contains NaN or Inf");
  }
}

void angle_embed(std::span<double> vec, Angle heading, const AttentionOptions & options, bool inverse)
{
  if (vec.empty()) {
    return;
  }
  const std::size_t pairs = vec.size() / 2;
  if (options.angle_uses_rope_schedule) {
    const double theta = heading.radians();
    rope_embed_inplace(vec, inverse ? -theta : theta, FrequencySchedule(pairs, options.rope_base));
  } else if (inverse) {
    // Exact transpose: rotate by the negated raw angle rather than its wrap.
    rope_embed_inplace(vec, -heading.radians(), FrequencySchedule::uniform(pairs));
  } else {
    drope_embed_inplace(vec, heading);
  }
}

void position_embed(std::span<double> vec, Vec2 position, const AttentionOptions & options, bool inverse)
{
  if (vec.empty()) {
    return;
  }
  rope_embed_2d_inplace(vec, inverse ? Vec2{-position.x, -position.y} : position, options.rope_base);
}

void embed_bank(
  Bank & bank, const PoseSet & poses, const EncodingVariant & variant, const AttentionOptions & options,
  bool inverse)
{
  for (std::size_t i = 0; i < bank.rows(); ++i) {
    for (std::size_t h = 0; h < bank.heads(); ++h) {
      embed_head_vector(bank.at(i, h), h, poses.positions[i], poses.headings[i], variant, options, inverse);
    }
  }
}

PairwiseKV build_pairwise(
  const Bank & key, const Bank & value, const PoseSet & query_poses, const PoseSet & key_poses,
  const RpeEncoders & encoders, std::size_t queries)
{
  const std::size_t keys = key.rows();
  const std::size_t heads = key.heads();
  if (encoders.heads != heads || 2 * encoders.pairs != key.width() || encoders.d_v != value.width() ||
      encoders.key.out != heads * key.width() || encoders.value.out != heads * value.width() ||
      encoders.key.in != kDescriptorWidth || encoders.value.in != kDescriptorWidth) {
    throw DimensionError("RPE encoder widths do not match the QKV banks");
  }
  PairwiseKV pw{Bank(queries * keys, heads, key.width()), Bank(queries * keys, heads, value.width())};
  std::vector<double> scratch(std::max(encoders.key.hidden, encoders.value.hidden));
  for (std::size_t i = 0; i < queries; ++i) {
    for (std::size_t j = 0; j < keys; ++j) {
      const std::size_t r = i * keys + j;
      const auto desc = relative_descriptor(
        query_poses.positions[i], query_poses.headings[i], key_poses.positions[j], key_poses.headings[j]);
      auto k_row = pw.key.row(r);
      auto v_row = pw.value.row(r);
      encoders.key.apply(desc, k_row, scratch);
      encoders.value.apply(desc, v_row, scratch);
      const auto k_src = key.row(j);
      const auto v_src = value.row(j);
      for (std::size_t c = 0; c < k_row.size(); ++c) {
        k_row[c] = k_src[c] + k_row[c];
      }
      for (std::size_t c = 0; c < v_row.size(); ++c) {
        v_row[c] = v_src[c] + v_row[c];
      }
    }
  }
  return pw;
}

// Scaled dot-product attention over already-embedded banks. With `pairwise`
// set, key/value rows come from the per-pair banks instead of `key`/`value`.
AttentionOutput attend(
  const Bank & query, const Bank * key, const Bank * value, const PairwiseKV * pairwise, std::size_t keys,
  std::size_t pairs, std::size_t d_v, const AttentionOptions & options)
{
  const std::size_t queries = query.rows();
  const std::size_t heads = query.heads();
  AttentionOutput result;
  result.out = Bank(queries, heads, d_v);
  if (options.retain_alpha) {
    result.alpha = Bank(queries, heads, keys);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(pairs));

  parallel_for(heads, [&](std::size_t h) {
    std::vector<double> weights(keys);
    for (std::size_t i = 0; i < queries; ++i) {
      const std::size_t limit = options.causal ? i + 1 : keys;
      const auto q = query.at(i, h);
      double row_max = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < limit; ++j) {
        const auto k = pairwise ? pairwise->key.at(i * keys + j, h) : key->at(j, h);
        weights[j] = dot(q, k) * scale;
        row_max = std::max(row_max, weights[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        weights[j] = std::exp(weights[j] - row_max);
        total += weights[j];
      }
      for (std::size_t j = 0; j < limit; ++j) {
        weights[j] /= total;
      }
      auto o = result.out.at(i, h);
      for (std::size_t j = 0; j < limit; ++j) {
        const auto v = pairwise ? pairwise->value.at(i * keys + j, h) : value->at(j, h);
        const double a = weights[j];
        for (std::size_t c = 0; c < d_v; ++c) {
          o[c] += a * v[c];
        }
      }
      if (result.alpha) {
        auto dst = result.alpha->at(i, h);
        std::copy_n(weights.begin(), limit, dst.begin());
      }
    }
  });
  return result;
}

void record_outputs(const AttentionOutput & result, const AttentionOptions & options)
{
  if (options.ledger == nullptr) {
    return;
  }
  options.ledger->outputs += result.out.size();
  if (result.alpha) {
    options.ledger->weights += result.alpha->size();
  }
}

struct CrossShape
{
  std::size_t queries;
  std::size_t keys;
  std::size_t heads;
  std::size_t pairs;
  std::size_t d_v;
};

CrossShape check_cross(
  const QKVSet & queries, const QKVSet & keys_values, const PoseSet & query_poses, const PoseSet & kv_poses,
  const EncodingVariant & variant, const AttentionOptions & options)
{
  if (queries.pairs != keys_values.pairs || queries.heads() != keys_values.heads()) {
    throw DimensionError("cross-attention query and key widths differ");
  }
  const CrossShape shape{queries.tokens(), keys_values.key.rows(), queries.heads(), queries.pairs, keys_values.d_v};
  if (shape.queries == 0 || shape.keys == 0 || shape.heads == 0 || shape.pairs == 0 || shape.d_v == 0) {
    throw DimensionError("attention dimensions must be positive");
  }
  check_bank(queries.query, shape.queries, shape.heads, 2 * shape.pairs, "query");
  check_bank(keys_values.key, shape.keys, shape.heads, 2 * shape.pairs, "key");
  check_bank(keys_values.value, shape.keys, shape.heads, shape.d_v, "value");
  variant.validate(shape.pairs, shape.heads);
  if (variant.kind != Variant::kPlain) {
    query_poses.validate(shape.queries);
    kv_poses.validate(shape.keys);
  }
  if (options.causal && shape.queries != shape.keys) {
    throw ConfigurationError("causal masking needs as many queries as keys");
  }
  return shape;
}

const RpeEncoders & require_encoders(const RpeEncoders * encoders)
{
  if (encoders == nullptr) {
    throw ConfigurationError("RPE attention needs descriptor encoders");
  }
  return *encoders;
}

AttentionOutput cross_impl(
  const Bank & query, const Bank & key, const Bank & value, const CrossShape & shape, const PoseSet & query_poses,
  const PoseSet & kv_poses, const EncodingVariant & variant, const AttentionOptions & options,
  const RpeEncoders * encoders, bool embedded_in_place)
{
  if (options.ledger) {
    options.ledger->inputs += query.size() + key.size() + value.size();
  }
  AttentionOutput result;
  if (variant.kind == Variant::kRpe) {
    const auto pw = build_pairwise(key, value, query_poses, kv_poses, require_encoders(encoders), shape.queries);
    if (options.ledger) {
      options.ledger->pairwise += pw.key.size() + pw.value.size();
    }
    result = attend(query, nullptr, nullptr, &pw, shape.keys, shape.pairs, shape.d_v, options);
  } else if (variant.rotates() && !embedded_in_place) {
    Bank q_hat = query;
    Bank k_hat = key;
    embed_bank(q_hat, query_poses, variant, options, false);
    embed_bank(k_hat, kv_poses, variant, options, false);
    if (options.ledger) {
      options.ledger->embedded += q_hat.size() + k_hat.size();
    }
    result = attend(q_hat, &k_hat, &value, nullptr, shape.keys, shape.pairs, shape.d_v, options);
  } else {
    result = attend(query, &key, &value, nullptr, shape.keys, shape.pairs, shape.d_v, options);
  }
  record_outputs(result, options);
  return result;
}

AttentionGradients backward_core(
  const Bank & q_hat, const Bank & k_hat, const Bank & value, const Bank & alpha, const Bank & upstream,
  std::size_t pairs)
{
  const std::size_t queries = q_hat.rows();
  const std::size_t keys = k_hat.rows();
  const std::size_t heads = q_hat.heads();
  const std::size_t d_v = value.width();
  AttentionGradients grads{Bank(queries, heads, q_hat.width()), Bank(keys, heads, k_hat.width()), Bank(keys, heads, d_v)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(pairs));

  parallel_for(heads, [&](std::size_t h) {
    std::vector<double> d_alpha(keys);
    for (std::size_t i = 0; i < queries; ++i) {
      const auto a = alpha.at(i, h);
      const auto d_out = upstream.at(i, h);
      double weighted = 0.0;
      for (std::size_t j = 0; j < keys; ++j) {
        d_alpha[j] = dot(d_out, value.at(j, h));
        weighted += a[j] * d_alpha[j];
      }
      auto dq = grads.query.at(i, h);
      const auto qi = q_hat.at(i, h);
      for (std::size_t j = 0; j < keys; ++j) {
        if (a[j] == 0.0) {
          continue;
        }
        auto dv = grads.value.at(j, h);
        for (std::size_t c = 0; c < d_v; ++c) {
          dv[c] += a[j] * d_out[c];
        }
        const double d_score = a[j] * (d_alpha[j] - weighted) * scale;
        const auto kj = k_hat.at(j, h);
        auto dk = grads.key.at(j, h);
        for (std::size_t c = 0; c < dq.size(); ++c) {
          dq[c] += d_score * kj[c];
          dk[c] += d_score * qi[c];
        }
      }
    }
  });
  return grads;
}

AttentionGradients backward_impl(
  const EncodingVariant & variant, const Bank & query, const Bank & key, const Bank & value,
  const CrossShape & shape, const PoseSet & query_poses, const PoseSet & kv_poses, const AttentionOutput & forward,
  const Bank & upstream, const AttentionOptions & options)
{
  if (variant.kind == Variant::kRpe) {
    throw NotImplementedError("backward pass for RPE attention is not implemented");
  }
  if (!forward.alpha) {
    throw std::invalid_argument("attention_backward needs a forward pass run with retain_alpha");
  }
  check_bank(*forward.alpha, shape.queries, shape.heads, shape.keys, "alpha");
  check_bank(upstream, shape.queries, shape.heads, shape.d_v, "upstream gradient");

  Bank q_hat = query;
  Bank k_hat = key;
  if (variant.rotates()) {
    embed_bank(q_hat, query_poses, variant, options, false);
    embed_bank(k_hat, kv_poses, variant, options, false);
  }
  auto grads = backward_core(q_hat, k_hat, value, *forward.alpha, upstream, shape.pairs);
  if (variant.rotates()) {
    embed_bank(grads.query, query_poses, variant, options, true);
    embed_bank(grads.key, kv_poses, variant, options, true);
  }
  return grads;
}

}  // namespace

std::string_view to_string(Variant v)
{
  switch (v) {
    case Variant::kPlain:
      return "plain";
    case Variant::kRpe:
      return "rpe";
    case Variant::kRope:
      return "rope";
    case Variant::kDropeHeadByHead:
      return "drope-hbh";
    case Variant::kDropeIntraHead:
      return "drope-ih";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name)
{
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) {
      return v;
    }
  }
  throw std::invalid_argument("unknown attention variant '" + std::string(name) + "'");
}

EncodingVariant EncodingVariant::balanced_intra_head(std::size_t pairs)
{
  const std::size_t pos_pairs = (pairs + 1) / 2;
  return intra_head(2 * pos_pairs, 2 * (pairs - pos_pairs));
}

EncodingVariant EncodingVariant::of(Variant kind, std::size_t pairs)
{
  if (kind == Variant::kDropeIntraHead) {
    return balanced_intra_head(pairs);
  }
  return {kind};
}

void EncodingVariant::validate(std::size_t pairs, std::size_t heads) const
{
  if (kind == Variant::kDropeHeadByHead && heads < 2) {
    throw ConfigurationError("head-by-head integration needs at least two heads");
  }
  if (kind == Variant::kDropeIntraHead) {
    if (pos_width % 2 != 0 || angle_width % 2 != 0) {
      throw ConfigurationError("intra-head split widths must be even");
    }
    if (pos_width + angle_width != 2 * pairs) {
      throw ConfigurationError(
        "intra-head split " + std::to_string(pos_width) + "+" + std::to_string(angle_width) +
        " does not cover the QK width " + std::to_string(2 * pairs));
    }
  }
}

QKVSet::QKVSet(std::size_t tokens, std::size_t heads, std::size_t pairs_, std::size_t d_v_)
: pairs(pairs_), d_v(d_v_), query(tokens, heads, 2 * pairs_), key(tokens, heads, 2 * pairs_), value(tokens, heads, d_v_)
{
}

void QKVSet::validate() const
{
  if (tokens() == 0 || heads() == 0 || pairs == 0 || d_v == 0) {
    throw DimensionError("QKV dimensions must be positive");
  }
  check_bank(query, tokens(), heads(), 2 * pairs, "query");
  check_bank(key, tokens(), heads(), 2 * pairs, "key");
  check_bank(value, tokens(), heads(), d_v, "value");
}

void PoseSet::validate(std::size_t expected) const
{
  if (positions.size() != expected || headings.size() != expected) {
    throw DimensionError(
      "pose set holds " + std::to_string(positions.size()) + " positions and " + std::to_string(headings.size()) +
      " headings, expected " + std::to_string(expected));
  }
  for (const Vec2 & p : positions) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw std::invalid_argument("pose set contains a non-finite position");
    }
  }
}

void embed_head_vector(
  std::span<double> vec, std::size_t head, Vec2 position, Angle heading, const EncodingVariant & variant,
  const AttentionOptions & options, bool inverse)
{
  switch (variant.kind) {
    case Variant::kPlain:
    case Variant::kRpe:
      return;
    case Variant::kRope:
      position_embed(vec, position, options, inverse);
      return;
    case Variant::kDropeHeadByHead:
      if (head % 2 == 0) {
        position_embed(vec, position, options, inverse);
      } else {
        angle_embed(vec, heading, options, inverse);
      }
      return;
    case Variant::kDropeIntraHead:
      position_embed(vec.first(variant.pos_width), position, options, inverse);
      angle_embed(vec.subspan(variant.pos_width), heading, options, inverse);
      return;
  }
}

AttentionOutput self_attention(
  const QKVSet & qkv, const PoseSet & poses, const EncodingVariant & variant, const AttentionOptions & options,
  const RpeEncoders * encoders)
{
  const auto shape = check_cross(qkv, qkv, poses, poses, variant, options);
  return cross_impl(qkv.query, qkv.key, qkv.value, shape, poses, poses, variant, options, encoders, false);
}

AttentionOutput self_attention_in_place(
  QKVSet & qkv, const PoseSet & poses, const EncodingVariant & variant, const AttentionOptions & options,
  const RpeEncoders * encoders)
{
  const auto shape = check_cross(qkv, qkv, poses, poses, variant, options);
  if (variant.rotates()) {
    embed_bank(qkv.query, poses, variant, options, false);
    embed_bank(qkv.key, poses, variant, options, false);
  }
  return cross_impl(qkv.query, qkv.key, qkv.value, shape, poses, poses, variant, options, encoders, true);
}

AttentionOutput mhsa_plain(const QKVSet & qkv, const AttentionOptions & options)
{
  return self_attention(qkv, PoseSet{}, EncodingVariant::plain(), options);
}

AttentionOutput mhsa_rpe(
  const QKVSet & qkv, const PoseSet & poses, const RpeEncoders & encoders, const AttentionOptions & options)
{
  return self_attention(qkv, poses, EncodingVariant::rpe(), options, &encoders);
}

AttentionOutput mhsa_rope(const QKVSet & qkv, const PoseSet & poses, const AttentionOptions & options)
{
  return self_attention(qkv, poses, EncodingVariant::rope(), options);
}

AttentionOutput mhsa_drope_hbh(const QKVSet & qkv, const PoseSet & poses, const AttentionOptions & options)
{
  return self_attention(qkv, poses, EncodingVariant::head_by_head(), options);
}

AttentionOutput mhsa_drope_ih(
  const QKVSet & qkv, const PoseSet & poses, std::size_t pos_width, std::size_t angle_width,
  const AttentionOptions & options)
{
  return self_attention(qkv, poses, EncodingVariant::intra_head(pos_width, angle_width), options);
}

AttentionOutput mhca(
  const QKVSet & queries, const QKVSet & keys_values, const PoseSet & query_poses, const PoseSet & kv_poses,
  const EncodingVariant & variant, const AttentionOptions & options, const RpeEncoders * encoders)
{
  const auto shape = check_cross(queries, keys_values, query_poses, kv_poses, variant, options);
  return cross_impl(
    queries.query, keys_values.key, keys_values.value, shape, query_poses, kv_poses, variant, options, encoders,
    false);
}

AttentionGradients attention_backward(
  const EncodingVariant & variant, const QKVSet & qkv, const PoseSet & poses, const AttentionOutput & forward,
  const Bank & upstream, const AttentionOptions & options)
{
  const auto shape = check_cross(qkv, qkv, poses, poses, variant, options);
  return backward_impl(variant, qkv.query, qkv.key, qkv.value, shape, poses, poses, forward, upstream, options);
}

AttentionGradients cross_attention_backward(
  const EncodingVariant & variant, const QKVSet & queries, const QKVSet & keys_values, const PoseSet & query_poses,
  const PoseSet & kv_poses, const AttentionOutput & forward, const Bank & upstream, const AttentionOptions & options)
{
  const auto shape = check_cross(queries, keys_values, query_poses, kv_poses, variant, options);
  return backward_impl(
    variant, queries.query, keys_values.key, keys_values.value, shape, query_poses, kv_poses, forward, upstream,
    options);
}

PeriodicityReport periodicity_gap(std::span<const double> q, std::span<const double> k, bool angle_uses_rope_schedule)
{
  if (q.size() != k.size() || q.empty() || q.size() % 2 != 0) {
    throw DimensionError("periodicity check needs equal, even-length Q and K");
  }
  const std::size_t pairs = q.size() / 2;
  const FrequencySchedule sched(pairs);
  const double theta[3] = {std::numbers::pi / 2.0, 0.0, 3.0 * std::numbers::pi / 2.0};

  PeriodicityReport report;
  report.rope_lhs = dot(rope_embed(q, theta[0], sched), rope_embed(k, theta[1], sched));
  report.rope_rhs = dot(rope_embed(q, theta[1], sched), rope_embed(k, theta[2], sched));
  report.rope_gap = std::abs(report.rope_lhs - report.rope_rhs);

  AttentionOptions options;
  options.angle_uses_rope_schedule = angle_uses_rope_schedule;
  const auto heading_embed = [&](std::span<const double> x, double t) {
    EvenVector out(x.begin(), x.end());
    angle_embed(out, Angle(t), options, false);
    return out;
  };
  report.drope_lhs = dot(heading_embed(q, theta[0]), heading_embed(k, theta[1]));
  report.drope_rhs = dot(heading_embed(q, theta[1]), heading_embed(k, theta[2]));
  report.drope_gap = std::abs(report.drope_lhs - report.drope_rhs);
  return report;
}

PeriodicityReport rope_periodicity_counterexample(std::size_t pairs, std::uint64_t seed, bool angle_uses_rope_schedule)
{
  if (pairs < 2) {
    throw ConfigurationError("the periodicity counterexample needs at least two pairs");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  EvenVector q(2 * pairs);
  EvenVector k(2 * pairs);
  for (double & v : q) {
    v = gauss(rng);
  }
  for (double & v : k) {
    v = gauss(rng);
  }
  return periodicity_gap(q, k, angle_uses_rope_schedule);
}

}  // namespace drope
