#include "drope/bank.hpp"

#include "drope/errors.hpp"

#include <algorithm>
#include <cmath>

namespace drope
{

Bank::Bank(std::size_t rows, std::size_t heads, std::size_t width, double fill)
: rows_(rows), heads_(heads), width_(width), data_(rows * heads * width, fill)
{
}

bool Bank::all_finite() const noexcept
{
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Bank & a, const Bank & b)
{
  if (a.rows() != b.rows() || a.heads() != b.heads() || a.width() != b.width()) {
    throw DimensionError("max_abs_diff: bank shapes differ");
  }
  double worst = 0.0;
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    worst = std::max(worst, std::abs(va[i] - vb[i]));
  }
  return worst;
}

double max_abs(const Bank & a)
{
  double worst = 0.0;
  for (double v : a.values()) {
    worst = std::max(worst, std::abs(v));
  }
  return worst;
}

}  // namespace drope
