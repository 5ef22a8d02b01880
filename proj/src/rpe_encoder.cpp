#include "drope/rpe_encoder.hpp"

#include "drope/errors.hpp"

#include <cmath>
#include <random>

namespace drope
{

Mlp::Mlp(std::size_t in_, std::size_t hidden_, std::size_t out_)
: in(in_), hidden(hidden_), out(out_), w1(hidden_ * in_, 0.0), b1(hidden_, 0.0), w2(out_ * hidden_, 0.0), b2(out_, 0.0)
{
}

Mlp Mlp::random(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed, double scale)
{
  Mlp mlp(in, hidden, out);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto * vec : {&mlp.w1, &mlp.b1, &mlp.w2, &mlp.b2}) {
    for (double & w : *vec) {
      w = dist(rng);
    }
  }
  return mlp;
}

void Mlp::apply(std::span<const double> input, std::span<double> output, std::span<double> scratch) const
{
  if (input.size() != in || output.size() != out || scratch.size() < hidden) {
    throw DimensionError("Mlp::apply: buffer sizes do not match the layer widths");
  }
  for (std::size_t r = 0; r < hidden; ++r) {
    double acc = b1[r];
    const double * w = w1.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) {
      acc += w[c] * input[c];
    }
    scratch[r] = std::tanh(acc);
  }
  for (std::size_t r = 0; r < out; ++r) {
    double acc = b2[r];
    const double * w = w2.data() + r * hidden;
    for (std::size_t c = 0; c < hidden; ++c) {
      acc += w[c] * scratch[c];
    }
    output[r] = acc;
  }
}

std::vector<double> Mlp::operator()(std::span<const double> input) const
{
  std::vector<double> output(out);
  std::vector<double> scratch(hidden);
  apply(input, output, scratch);
  return output;
}

std::uint64_t Mlp::flops(std::size_t in, std::size_t hidden, std::size_t out)
{
  // One multiply and one add per weight (the bias supplies the extra add),
  // plus one tanh per hidden unit.
  return 2ULL * hidden * in + hidden + 2ULL * out * hidden;
}

std::array<double, kDescriptorWidth> relative_descriptor(Vec2 pos_i, Angle heading_i, Vec2 pos_j, Angle heading_j)
{
  return {pos_i.x - pos_j.x, pos_i.y - pos_j.y, relative_angle(heading_i, heading_j).radians()};
}

RpeEncoders RpeEncoders::zeros(std::size_t heads, std::size_t pairs, std::size_t d_v, std::size_t hidden)
{
  return {heads, pairs, d_v, Mlp(kDescriptorWidth, hidden, heads * 2 * pairs), Mlp(kDescriptorWidth, hidden, heads * d_v)};
}

RpeEncoders RpeEncoders::random(
  std::size_t heads, std::size_t pairs, std::size_t d_v, std::uint64_t seed, std::size_t hidden, double scale)
{
  return {
    heads, pairs, d_v, Mlp::random(kDescriptorWidth, hidden, heads * 2 * pairs, seed, scale),
    Mlp::random(kDescriptorWidth, hidden, heads * d_v, seed ^ 0x9e3779b97f4a7c15ULL, scale)};
}

}  // namespace drope
