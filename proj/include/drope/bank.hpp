#ifndef DROPE__BANK_HPP_
#define DROPE__BANK_HPP_

#include <cstddef>
#include <span>
#include <vector>

namespace drope
{

/// Dense rows x heads x width store of doubles, row-major. A row with all of
/// its heads is contiguous, so row(r) doubles as the head-concatenated view.
class Bank
{
public:
  Bank() = default;
  Bank(std::size_t rows, std::size_t heads, std::size_t width, double fill = 0.0);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> at(std::size_t row, std::size_t head)
  {
    return {data_.data() + (row * heads_ + head) * width_, width_};
  }
  std::span<const double> at(std::size_t row, std::size_t head) const
  {
    return {data_.data() + (row * heads_ + head) * width_, width_};
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * heads_ * width_, heads_ * width_}; }
  std::span<const double> row(std::size_t r) const
  {
    return {data_.data() + r * heads_ * width_, heads_ * width_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const Bank &, const Bank &) = default;

private:
  std::size_t rows_{0};
  std::size_t heads_{0};
  std::size_t width_{0};
  std::vector<double> data_;
};

// Largest absolute elementwise difference; throws DimensionError on shape mismatch.
double max_abs_diff(const Bank & a, const Bank & b);
double max_abs(const Bank & a);

}  // namespace drope

#endif  // DROPE__BANK_HPP_
