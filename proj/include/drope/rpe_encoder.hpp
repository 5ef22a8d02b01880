#ifndef DROPE__RPE_ENCODER_HPP_
#define DROPE__RPE_ENCODER_HPP_

#include "drope/rotary.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace drope
{

/// Two-layer perceptron, out = W2 * tanh(W1 * in + b1) + b2. Weights are
/// stored row-major and exposed so reference code can evaluate them directly.
struct Mlp
{
  std::size_t in{0};
  std::size_t hidden{0};
  std::size_t out{0};
  std::vector<double> w1;  // hidden x in
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // out x hidden
  std::vector<double> b2;  // out

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out);  // all weights zero

  // Uniform weights in [-scale, scale].
  static Mlp random(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed, double scale);

  // `scratch` needs at least `hidden` entries.
  void apply(std::span<const double> input, std::span<double> output, std::span<double> scratch) const;
  std::vector<double> operator()(std::span<const double> input) const;

  // Multiply/add/tanh count of one evaluation; tanh counts as one.
  static std::uint64_t flops(std::size_t in, std::size_t hidden, std::size_t out);
};

// Width of the relative descriptor (dx, dy, dtheta).
inline constexpr std::size_t kDescriptorWidth = 3;
inline constexpr std::size_t kDefaultEncoderHidden = 32;

/// (x_i - x_j, y_i - y_j, (theta_i - theta_j) mod 2*pi) for query i, key j.
std::array<double, kDescriptorWidth> relative_descriptor(Vec2 pos_i, Angle heading_i, Vec2 pos_j, Angle heading_j);

/// The learnable descriptor encoders of explicit relative attention. The key
/// encoder emits all heads at once (heads * 2 * pairs), the value encoder
/// heads * d_v; head h reads its own contiguous slice.
struct RpeEncoders
{
  std::size_t heads{0};
  std::size_t pairs{0};
  std::size_t d_v{0};
  Mlp key;
  Mlp value;

  static RpeEncoders zeros(std::size_t heads, std::size_t pairs, std::size_t d_v, std::size_t hidden = kDefaultEncoderHidden);
  static RpeEncoders random(
    std::size_t heads, std::size_t pairs, std::size_t d_v, std::uint64_t seed,
    std::size_t hidden = kDefaultEncoderHidden, double scale = 0.3);
};

}  // namespace drope

#endif  // DROPE__RPE_ENCODER_HPP_
