#include "drope/attention.hpp"
#include "drope/errors.hpp"
#include "drope/parallel.hpp"
#include "reference_attention.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace drope
{
namespace
{

using testing::random_poses;
using testing::random_qkv;
using testing::rel_diff;

PoseSet identical_poses(std::size_t n, Vec2 p, double heading)
{
  PoseSet poses(n);
  for (std::size_t i = 0; i < n; ++i) {
    poses.positions[i] = p;
    poses.headings[i] = Angle(heading);
  }
  return poses;
}

double oracle_gap(const AttentionOutput & out, const std::vector<double> & ref)
{
  return testing::max_abs_diff(out.merged(), ref);
}

TEST(MhsaPlain, UniformScoresAverageValues)
{
  QKVSet qkv(2, 1, 1, 3);
  for (double & v : qkv.query.values()) v = 1.0;
  for (double & v : qkv.key.values()) v = 1.0;
  const std::vector<double> values = {1.0, 2.0, 3.0, 5.0, 8.0, 13.0};
  std::copy(values.begin(), values.end(), qkv.value.values().begin());
  AttentionOptions options;
  options.retain_alpha = true;
  const auto out = mhsa_plain(qkv, options);
  for (double a : out.alpha->values()) {
    EXPECT_DOUBLE_EQ(a, 0.5);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(out.out.at(i, 0)[0], 3.0);
    EXPECT_DOUBLE_EQ(out.out.at(i, 0)[1], 5.0);
    EXPECT_DOUBLE_EQ(out.out.at(i, 0)[2], 8.0);
  }
}

TEST(MhsaPlain, SingleTokenReturnsItsValue)
{
  const auto qkv = random_qkv(1, 2, 2, 3, 1);
  const auto out = mhsa_plain(qkv);
  EXPECT_EQ(out.out, qkv.value);
}

TEST(MhsaPlain, MatchesReference)
{
  const auto qkv = random_qkv(3, 2, 3, 4, 2);
  const auto out = mhsa_plain(qkv);
  EXPECT_LT(oracle_gap(out, reference::self_attention(qkv, PoseSet{}, EncodingVariant::plain())), 1e-12);
  EXPECT_EQ(out.merged_width(), 8u);
  EXPECT_EQ(out.merged().size(), 24u);
}

TEST(MhsaPlain, RejectsNonFiniteInput)
{
  auto qkv = random_qkv(3, 1, 2, 2, 3);
  qkv.key.at(1, 0)[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(mhsa_plain(qkv), std::invalid_argument);
  qkv = random_qkv(3, 1, 2, 2, 3);
  qkv.value.at(0, 0)[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(mhsa_plain(qkv), std::invalid_argument);
}

TEST(MhsaRpe, ZeroEncodersReproducePlainBitwise)
{
  const auto qkv = random_qkv(4, 2, 2, 3, 4);
  const auto poses = random_poses(4, 5);
  const auto encoders = RpeEncoders::zeros(2, 2, 3);
  EXPECT_EQ(mhsa_rpe(qkv, poses, encoders).out, mhsa_plain(qkv).out);
}

TEST(MhsaRpe, CoincidentPosesShiftKeysAndValuesByConstant)
{
  const auto qkv = random_qkv(4, 2, 2, 3, 6);
  const auto poses = identical_poses(4, {3.0, -1.0}, 0.7);
  const auto encoders = RpeEncoders::random(2, 2, 3, 7);
  const std::vector<double> origin = {0.0, 0.0, 0.0};
  const auto dk = encoders.key(origin);
  const auto dv = encoders.value(origin);
  QKVSet shifted = qkv;
  for (std::size_t j = 0; j < 4; ++j) {
    auto k = shifted.key.row(j);
    auto v = shifted.value.row(j);
    for (std::size_t c = 0; c < k.size(); ++c) k[c] += dk[c];
    for (std::size_t c = 0; c < v.size(); ++c) v[c] += dv[c];
  }
  EXPECT_LT(max_abs_diff(mhsa_rpe(qkv, poses, encoders).out, mhsa_plain(shifted).out), 1e-12);
}

TEST(MhsaRpe, MatchesReference)
{
  const auto qkv = random_qkv(3, 2, 2, 3, 8);
  const auto poses = random_poses(3, 9);
  const auto encoders = RpeEncoders::random(2, 2, 3, 10);
  const auto out = mhsa_rpe(qkv, poses, encoders);
  EXPECT_LT(oracle_gap(out, reference::self_attention(qkv, poses, EncodingVariant::rpe(), &encoders)), 1e-12);
}

TEST(MhsaRpe, RequiresMatchingEncoders)
{
  const auto qkv = random_qkv(3, 2, 2, 3, 8);
  const auto poses = random_poses(3, 9);
  EXPECT_THROW(self_attention(qkv, poses, EncodingVariant::rpe()), ConfigurationError);
  EXPECT_THROW(mhsa_rpe(qkv, poses, RpeEncoders::random(2, 3, 3, 1)), DimensionError);
}

TEST(MhsaRope, CoincidentPositionsReducesToPlain)
{
  const auto qkv = random_qkv(4, 2, 3, 2, 11);
  const auto poses = identical_poses(4, {12.0, -7.5}, 2.0);
  EXPECT_LT(max_abs_diff(mhsa_rope(qkv, poses).out, mhsa_plain(qkv).out), 1e-12);
}

TEST(MhsaRope, TranslationLeavesOutputUnchanged)
{
  const auto qkv = random_qkv(5, 2, 4, 3, 12);
  const auto poses = random_poses(5, 13);
  const auto a = mhsa_rope(qkv, poses);
  const auto b = mhsa_rope(qkv, testing::translated(poses, {5.3, -2.1}));
  EXPECT_LT(rel_diff(a.merged(), b.merged()), 1e-8);
}

TEST(MhsaRope, MatchesReference)
{
  const auto qkv = random_qkv(3, 2, 3, 2, 14);
  const auto poses = random_poses(3, 15);
  EXPECT_LT(oracle_gap(mhsa_rope(qkv, poses), reference::self_attention(qkv, poses, EncodingVariant::rope())), 1e-12);
}

TEST(MhsaDropeHbh, CoincidentPosesReduceToPlain)
{
  const auto qkv = random_qkv(4, 4, 2, 3, 16);
  const auto poses = identical_poses(4, {-3.0, 8.0}, 4.0);
  EXPECT_LT(max_abs_diff(mhsa_drope_hbh(qkv, poses).out, mhsa_plain(qkv).out), 1e-12);
}

TEST(MhsaDropeHbh, CommonHeadingShiftLeavesOutputUnchanged)
{
  const auto qkv = random_qkv(5, 4, 3, 3, 17);
  const auto poses = random_poses(5, 18);
  const auto base = mhsa_drope_hbh(qkv, poses);
  for (double delta : {0.9, kTwoPi, 5.5, -2.0}) {
    const auto moved = mhsa_drope_hbh(qkv, testing::heading_shifted(poses, delta));
    EXPECT_LT(rel_diff(base.merged(), moved.merged()), 1e-8) << "delta " << delta;
  }
}

TEST(MhsaDropeHbh, HeadParityChoosesEmbedding)
{
  // Head 0 ignores headings, head 1 ignores positions.
  const auto qkv = random_qkv(4, 2, 2, 2, 19);
  const auto poses = random_poses(4, 20);
  auto turned = poses;
  turned.headings[2] = Angle(turned.headings[2].radians() + 1.0);
  auto moved = poses;
  moved.positions[2] = moved.positions[2] + Vec2{3.0, 1.0};
  const auto a = mhsa_drope_hbh(qkv, poses);
  const auto b = mhsa_drope_hbh(qkv, turned);
  const auto c = mhsa_drope_hbh(qkv, moved);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(testing::max_abs_diff(a.out.at(i, 0), b.out.at(i, 0)), 0.0);
    EXPECT_GT(testing::max_abs_diff(a.out.at(i, 1), b.out.at(i, 1)), 1e-6);
    EXPECT_GT(testing::max_abs_diff(a.out.at(i, 0), c.out.at(i, 0)), 1e-6);
    EXPECT_EQ(testing::max_abs_diff(a.out.at(i, 1), c.out.at(i, 1)), 0.0);
  }
}

TEST(MhsaDropeHbh, MatchesReference)
{
  const auto qkv = random_qkv(3, 2, 2, 3, 21);
  const auto poses = random_poses(3, 22);
  EXPECT_LT(
    oracle_gap(mhsa_drope_hbh(qkv, poses), reference::self_attention(qkv, poses, EncodingVariant::head_by_head())),
    1e-12);
}

TEST(MhsaDropeHbh, NeedsTwoHeads)
{
  const auto qkv = random_qkv(3, 1, 2, 3, 23);
  EXPECT_THROW(mhsa_drope_hbh(qkv, random_poses(3, 1)), ConfigurationError);
}

TEST(MhsaDropeIh, EmptyAngleSplitMatchesRope)
{
  const auto qkv = random_qkv(4, 2, 3, 2, 24);
  const auto poses = random_poses(4, 25);
  EXPECT_LT(max_abs_diff(mhsa_drope_ih(qkv, poses, 6, 0).out, mhsa_rope(qkv, poses).out), 1e-12);
}

TEST(MhsaDropeIh, CoincidentPosesReduceToPlain)
{
  const auto qkv = random_qkv(4, 2, 4, 2, 26);
  const auto poses = identical_poses(4, {1.0, 2.0}, 3.0);
  EXPECT_LT(max_abs_diff(mhsa_drope_ih(qkv, poses, 4, 4).out, mhsa_plain(qkv).out), 1e-12);
}

TEST(MhsaDropeIh, MatchesReference)
{
  const auto qkv = random_qkv(3, 2, 4, 3, 27);
  const auto poses = random_poses(3, 28);
  for (auto [pos, ang] : {std::pair{4, 4}, std::pair{2, 6}, std::pair{6, 2}, std::pair{0, 8}}) {
    const auto v = EncodingVariant::intra_head(pos, ang);
    EXPECT_LT(oracle_gap(self_attention(qkv, poses, v), reference::self_attention(qkv, poses, v)), 1e-12);
  }
}

TEST(MhsaDropeIh, RejectsInvalidSplit)
{
  const auto qkv = random_qkv(3, 2, 4, 3, 29);
  const auto poses = random_poses(3, 30);
  EXPECT_THROW(mhsa_drope_ih(qkv, poses, 3, 5), ConfigurationError);
  EXPECT_THROW(mhsa_drope_ih(qkv, poses, 4, 2), ConfigurationError);
  EXPECT_EQ(EncodingVariant::balanced_intra_head(4).pos_width, 4u);
  EXPECT_EQ(EncodingVariant::balanced_intra_head(3).pos_width, 4u);
  EXPECT_EQ(EncodingVariant::balanced_intra_head(3).angle_width, 2u);
}

TEST(Mhca, SelfBankReproducesSelfAttention)
{
  const auto qkv = random_qkv(4, 2, 2, 3, 31);
  const auto poses = random_poses(4, 32);
  const auto encoders = RpeEncoders::random(2, 2, 3, 33);
  for (Variant v : kAllVariants) {
    const auto enc = EncodingVariant::of(v, 2);
    const auto self = self_attention(qkv, poses, enc, {}, &encoders);
    const auto cross = mhca(qkv, qkv, poses, poses, enc, {}, &encoders);
    EXPECT_EQ(self.out, cross.out) << to_string(v);
  }
}

TEST(Mhca, SingleKeyReturnsItsValueForEveryQuery)
{
  const auto queries = random_qkv(5, 2, 2, 3, 34);
  const auto kv = random_qkv(1, 2, 2, 3, 35);
  const auto qp = random_poses(5, 36);
  const auto kp = random_poses(1, 37);
  for (Variant v : {Variant::kPlain, Variant::kRope, Variant::kDropeHeadByHead, Variant::kDropeIntraHead}) {
    const auto out = mhca(queries, kv, qp, kp, EncodingVariant::of(v, 2));
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_LT(testing::max_abs_diff(out.out.row(i), kv.value.row(0)), 1e-15);
    }
  }
}

TEST(Mhca, MatchesReferenceThreeQueriesFourKeys)
{
  const auto queries = random_qkv(3, 2, 2, 3, 38);
  const auto kv = random_qkv(4, 2, 2, 3, 39);
  const auto qp = random_poses(3, 40);
  const auto kp = random_poses(4, 41);
  const auto encoders = RpeEncoders::random(2, 2, 3, 42);
  for (Variant v : kAllVariants) {
    const auto enc = EncodingVariant::of(v, 2);
    const auto out = mhca(queries, kv, qp, kp, enc, {}, &encoders);
    EXPECT_LT(oracle_gap(out, reference::attention(queries, kv, qp, kp, enc, &encoders)), 1e-12) << to_string(v);
  }
}

TEST(Mhca, RejectsWidthMismatch)
{
  const auto queries = random_qkv(3, 2, 2, 3, 43);
  const auto kv = random_qkv(4, 2, 3, 3, 44);
  EXPECT_THROW(mhca(queries, kv, random_poses(3, 1), random_poses(4, 2), EncodingVariant::rope()), DimensionError);
}

TEST(AttentionProperties, RetainedWeightsAreRowStochastic)
{
  const auto qkv = random_qkv(6, 2, 3, 2, 45);
  const auto poses = random_poses(6, 46);
  const auto encoders = RpeEncoders::random(2, 3, 2, 47);
  AttentionOptions options;
  options.retain_alpha = true;
  for (Variant v : kAllVariants) {
    const auto out = self_attention(qkv, poses, EncodingVariant::of(v, 3), options, &encoders);
    ASSERT_TRUE(out.alpha.has_value());
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t h = 0; h < 2; ++h) {
        const auto row = out.alpha->at(i, h);
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
        for (double a : row) {
          EXPECT_GE(a, 0.0);
          EXPECT_LE(a, 1.0);
        }
      }
    }
  }
}

TEST(AttentionProperties, PermutingTokensPermutesOutputs)
{
  const std::size_t n = 5;
  const auto qkv = random_qkv(n, 2, 2, 3, 48);
  const auto poses = random_poses(n, 49);
  const auto encoders = RpeEncoders::random(2, 2, 3, 50);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  QKVSet pq = qkv;
  PoseSet pp = poses;
  for (std::size_t i = 0; i < n; ++i) {
    std::ranges::copy(qkv.query.row(perm[i]), pq.query.row(i).begin());
    std::ranges::copy(qkv.key.row(perm[i]), pq.key.row(i).begin());
    std::ranges::copy(qkv.value.row(perm[i]), pq.value.row(i).begin());
    pp.positions[i] = poses.positions[perm[i]];
    pp.headings[i] = poses.headings[perm[i]];
  }
  for (Variant v : kAllVariants) {
    const auto enc = EncodingVariant::of(v, 2);
    const auto a = self_attention(qkv, poses, enc, {}, &encoders);
    const auto b = self_attention(pq, pp, enc, {}, &encoders);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_LT(testing::max_abs_diff(b.out.row(i), a.out.row(perm[i])), 1e-10) << to_string(v);
    }
  }
}

TEST(AttentionProperties, WorkerCountDoesNotChangeResults)
{
  const auto qkv = random_qkv(7, 4, 3, 3, 51);
  const auto poses = random_poses(7, 52);
  set_worker_cap(1);
  const auto serial = mhsa_drope_hbh(qkv, poses);
  set_worker_cap(4);
  const auto threaded = mhsa_drope_hbh(qkv, poses);
  set_worker_cap(0);
  EXPECT_EQ(serial.out, threaded.out);
}

TEST(AttentionProperties, InPlaceModeMatchesMaterialized)
{
  const auto qkv = random_qkv(5, 2, 3, 3, 53);
  const auto poses = random_poses(5, 54);
  for (Variant v : {Variant::kRope, Variant::kDropeHeadByHead, Variant::kDropeIntraHead}) {
    const auto enc = EncodingVariant::of(v, 3);
    QKVSet scratch = qkv;
    const auto a = self_attention(qkv, poses, enc);
    const auto b = self_attention_in_place(scratch, poses, enc);
    EXPECT_EQ(a.out, b.out);
    EXPECT_GT(max_abs_diff(scratch.query, qkv.query), 0.0);
  }
}

TEST(AttentionProperties, CausalMaskMatchesReference)
{
  const auto qkv = random_qkv(4, 2, 2, 3, 55);
  const auto poses = random_poses(4, 56);
  AttentionOptions options;
  options.causal = true;
  options.retain_alpha = true;
  for (Variant v : {Variant::kPlain, Variant::kRope, Variant::kDropeHeadByHead}) {
    const auto enc = EncodingVariant::of(v, 2);
    const auto out = self_attention(qkv, poses, enc, options);
    EXPECT_LT(oracle_gap(out, reference::self_attention(qkv, poses, enc, nullptr, true)), 1e-12);
    EXPECT_EQ(out.alpha->at(0, 0)[1], 0.0);
  }
}

TEST(AttentionProperties, LedgerCountsAllocations)
{
  const auto qkv = random_qkv(4, 2, 3, 5, 57);
  const auto poses = random_poses(4, 58);
  AllocationLedger ledger;
  AttentionOptions options;
  options.ledger = &ledger;
  mhsa_rope(qkv, poses, options);
  EXPECT_EQ(ledger.inputs, 4u * 2 * (6 + 6 + 5));
  EXPECT_EQ(ledger.embedded, 2u * 4 * 2 * 6);
  EXPECT_EQ(ledger.pairwise, 0u);
  EXPECT_EQ(ledger.outputs, 4u * 2 * 5);
}

TEST(PeriodicityCounterexample, OnesVectorsSeparateRopeFromDrope)
{
  const std::vector<double> ones(4, 1.0);
  const auto report = periodicity_gap(ones, ones);
  EXPECT_GT(report.rope_gap, 1e-3);
  EXPECT_LT(report.drope_gap, 1e-10);
  EXPECT_TRUE(report.holds());
  // Closed form for d_k = 2: only the 0.01 frequency pair differs, 2*|cos(a) - cos(b)|.
  const double expected = 2.0 * std::abs(std::cos(0.01 * std::numbers::pi / 2.0) - std::cos(0.01 * 3.0 * std::numbers::pi / 2.0));
  EXPECT_NEAR(report.rope_gap, expected, 1e-12);
}

TEST(PeriodicityCounterexample, SinglePairIsDegenerate)
{
  const std::vector<double> q = {0.3, -1.2};
  const std::vector<double> k = {0.8, 0.5};
  EXPECT_LT(periodicity_gap(q, k).rope_gap, 1e-10);
  EXPECT_THROW(rope_periodicity_counterexample(1, 0), ConfigurationError);
}

TEST(PeriodicityCounterexample, RandomSeedsAlwaysShowRopeGap)
{
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto report = rope_periodicity_counterexample(8, seed);
    EXPECT_GT(report.rope_gap, 1e-3) << "seed " << seed;
    EXPECT_LT(report.drope_gap, 1e-10) << "seed " << seed;
  }
}

TEST(PeriodicityCounterexample, FaultInjectedHeadingEmbeddingLosesPeriodicity)
{
  const auto report = rope_periodicity_counterexample(8, 3, true);
  EXPECT_GT(report.drope_gap, 1e-3);
  EXPECT_FALSE(report.holds());
}

TEST(VariantNames, RoundTrip)
{
  for (Variant v : kAllVariants) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_variant("alibi"), std::invalid_argument);
}

}  // namespace
}  // namespace drope
