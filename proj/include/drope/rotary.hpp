#ifndef DROPE__ROTARY_HPP_
#define DROPE__ROTARY_HPP_

#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace drope
{

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Base of the multi-frequency rotary schedule, theta_l = base^(-l / pairs).
inline constexpr double kRopeBase = 10000.0;

/// Maps any finite real onto [0, 2*pi) with a floor-based modulo, so negative
/// inputs wrap upwards.
double canonical_angle(double radians);

/// Heading or relative heading in radians, always held in [0, 2*pi).
class Angle
{
public:
  constexpr Angle() = default;

  // Throws std::invalid_argument for NaN or infinite input.
  explicit Angle(double radians);

  double radians() const noexcept { return value_; }

  Angle operator+(Angle other) const { return Angle(value_ + other.value_); }
  Angle operator-(Angle other) const { return Angle(value_ - other.value_); }

  friend bool operator==(Angle, Angle) = default;

private:
  double value_{0.0};
};

/// (a - b) mod 2*pi.
Angle relative_angle(Angle a, Angle b);

struct Vec2
{
  double x{0.0};
  double y{0.0};

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

double norm(Vec2 v);

/// Row-major 2x2 matrix.
struct Matrix2
{
  double m00{1.0};
  double m01{0.0};
  double m10{0.0};
  double m11{1.0};

  Matrix2 operator*(const Matrix2 & rhs) const;
  Vec2 operator*(Vec2 v) const;
  Matrix2 transposed() const { return {m00, m10, m01, m11}; }
  double determinant() const { return m00 * m11 - m01 * m10; }
};

/// [[cos t, -sin t], [sin t, cos t]]. Throws std::invalid_argument for
/// non-finite t.
Matrix2 rotate2d(double theta);

/// Per-pair rotation frequencies of the absolute-position embedding.
class FrequencySchedule
{
public:
  // freqs[l] = base^(-l / pairs); freqs[0] is exactly 1.
  explicit FrequencySchedule(std::size_t pairs, double base = kRopeBase);

  // Every frequency equal to one, the schedule the heading embedding uses.
  static FrequencySchedule uniform(std::size_t pairs);

  std::size_t pairs() const noexcept { return freqs_.size(); }
  std::span<const double> freqs() const noexcept { return freqs_; }
  double operator[](std::size_t l) const { return freqs_[l]; }

private:
  FrequencySchedule() = default;
  std::vector<double> freqs_;
};

// A QK vector of 2 * pairs reals, read as consecutive 2D pairs.
using EvenVector = std::vector<double>;

/// Absolute-position rotary embedding: pair l of `x` is rotated by
/// position * sched[l]. Throws DimensionError unless x.size() == 2 * sched.pairs().
EvenVector rope_embed(std::span<const double> x, double position, const FrequencySchedule & sched);
void rope_embed_inplace(std::span<double> x, double position, const FrequencySchedule & sched);

/// Heading rotary embedding: every pair of `x` is rotated by the same angle.
/// Throws DimensionError for odd lengths.
EvenVector drope_embed(std::span<const double> x, Angle heading);
void drope_embed_inplace(std::span<double> x, Angle heading);

/// Axis-split extension of rope_embed to planar positions. The first
/// ceil(P/2) pairs carry x with their own schedule, the remaining floor(P/2)
/// pairs carry y. A single-pair vector therefore only encodes x.
void rope_embed_2d_inplace(std::span<double> x, Vec2 position, double base = kRopeBase);

// Number of pairs the axis split assigns to the x coordinate.
constexpr std::size_t x_axis_pairs(std::size_t pairs) noexcept { return (pairs + 1) / 2; }

}  // namespace drope

#endif  // DROPE__ROTARY_HPP_
