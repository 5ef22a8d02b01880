#include "drope/rotary.hpp"

#include "drope/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace drope
{
namespace
{

void require_finite(double value, const char * what)
{
  if (!std::isfinite(value)) {
    throw std::invalid_argument(std::string(what) + " must be finite");
  }
}

void require_even(std::size_t size)
{
  if (size % 2 != 0) {
    throw DimensionError("rotary input must have even length, got " + std::to_string(size));
  }
}

inline void rotate_pair(double * pair, double c, double s)
{
  const double a = pair[0];
  const double b = pair[1];
  pair[0] = c * a - s * b;
  pair[1] = s * a + c * b;
}

// Rotates `pairs` consecutive pairs starting at `data` by position * base^(-l/pairs).
void rotate_schedule(double * data, std::size_t pairs, double position, double base)
{
  for (std::size_t l = 0; l < pairs; ++l) {
    const double freq =
      l == 0 ? 1.0 : std::pow(base, -static_cast<double>(l) / static_cast<double>(pairs));
    const double angle = position * freq;
    rotate_pair(data + 2 * l, std::cos(angle), std::sin(angle));
  }
}

}  // namespace

double canonical_angle(double radians)
{
  require_finite(radians, "angle");
  double wrapped = radians - kTwoPi * std::floor(radians / kTwoPi);
  // Rounding can land exactly on 2*pi for tiny negative inputs.
  if (wrapped >= kTwoPi || wrapped < 0.0) {
    wrapped = 0.0;
  }
  return wrapped;
}

Angle::Angle(double radians) : value_(canonical_angle(radians)) {}

Angle relative_angle(Angle a, Angle b) { return a - b; }

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

Matrix2 Matrix2::operator*(const Matrix2 & rhs) const
{
  return {
    m00 * rhs.m00 + m01 * rhs.m10, m00 * rhs.m01 + m01 * rhs.m11,
    m10 * rhs.m00 + m11 * rhs.m10, m10 * rhs.m01 + m11 * rhs.m11};
}

Vec2 Matrix2::operator*(Vec2 v) const { return {m00 * v.x + m01 * v.y, m10 * v.x + m11 * v.y}; }

Matrix2 rotate2d(double theta)
{
  require_finite(theta, "rotation angle");
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c, -s, s, c};
}

FrequencySchedule::FrequencySchedule(std::size_t pairs, double base)
{
  if (pairs == 0) {
    throw std::invalid_argument("frequency schedule needs at least one pair");
  }
  if (!(base > 0.0) || !std::isfinite(base)) {
    throw std::invalid_argument("frequency base must be positive and finite");
  }
  freqs_.resize(pairs);
  freqs_[0] = 1.0;
  for (std::size_t l = 1; l < pairs; ++l) {
    freqs_[l] = std::pow(base, -static_cast<double>(l) / static_cast<double>(pairs));
  }
}

FrequencySchedule FrequencySchedule::uniform(std::size_t pairs)
{
  if (pairs == 0) {
    throw std::invalid_argument("frequency schedule needs at least one pair");
  }
  FrequencySchedule sched;
  sched.freqs_.assign(pairs, 1.0);
  return sched;
}

void rope_embed_inplace(std::span<double> x, double position, const FrequencySchedule & sched)
{
  if (x.size() != 2 * sched.pairs()) {
    throw DimensionError(
      "rope_embed: vector length " + std::to_string(x.size()) + " does not match " +
      std::to_string(sched.pairs()) + " pairs");
  }
  require_finite(position, "position");
  for (std::size_t l = 0; l < sched.pairs(); ++l) {
    const double angle = position * sched[l];
    rotate_pair(x.data() + 2 * l, std::cos(angle), std::sin(angle));
  }
}

EvenVector rope_embed(std::span<const double> x, double position, const FrequencySchedule & sched)
{
  EvenVector out(x.begin(), x.end());
  rope_embed_inplace(out, position, sched);
  return out;
}

void drope_embed_inplace(std::span<double> x, Angle heading)
{
  require_even(x.size());
  const double c = std::cos(heading.radians());
  const double s = std::sin(heading.radians());
  for (std::size_t i = 0; i < x.size(); i += 2) {
    rotate_pair(x.data() + i, c, s);
  }
}

EvenVector drope_embed(std::span<const double> x, Angle heading)
{
  EvenVector out(x.begin(), x.end());
  drope_embed_inplace(out, heading);
  return out;
}

void rope_embed_2d_inplace(std::span<double> x, Vec2 position, double base)
{
  require_even(x.size());
  require_finite(position.x, "position.x");
  require_finite(position.y, "position.y");
  const std::size_t pairs = x.size() / 2;
  const std::size_t px = x_axis_pairs(pairs);
  const std::size_t py = pairs - px;
  if (px > 0) {
    rotate_schedule(x.data(), px, position.x, base);
  }
  if (py > 0) {
    rotate_schedule(x.data() + 2 * px, py, position.y, base);
  }
}

}  // namespace drope
