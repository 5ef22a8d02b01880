#ifndef DROPE__VERIFY_HPP_
#define DROPE__VERIFY_HPP_

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace drope
{

enum class Comparison { kBelow, kAbove };

/// Outcome of one randomized property. `observed` is the worst value seen:
/// the largest error for kBelow checks, the smallest gap for kAbove checks.
struct PropertyResult
{
  std::string name;
  std::size_t trials{0};
  double observed{0.0};
  double tolerance{0.0};
  Comparison comparison{Comparison::kBelow};
  bool passed{false};
  std::string detail;
};

struct VerifyConfig
{
  std::size_t trials{1000};
  std::uint64_t seed{0};
  std::vector<std::size_t> pair_counts{1, 2, 8, 32};
  std::size_t counterexample_seeds{100};
  std::size_t counterexample_pairs{8};
  std::size_t engine_trials{50};
  double tolerance{1e-8};
  // Use the multi-frequency position schedule inside the heading embedding.
  bool fault_inject{false};

  // Throws std::invalid_argument for zero trials or an empty pair list.
  void validate() const;
};

/// Shifting both scalar positions by a common offset leaves the rotary dot
/// product unchanged. Error normalized by |q| |k|.
PropertyResult check_rope_relative_position(const VerifyConfig & config);

/// Advancing both headings by a common angle, wrapped into [0, 2*pi), leaves
/// the heading dot product unchanged. At least a third of the trials wrap.
PropertyResult check_drope_relative_angle(const VerifyConfig & config);

/// Three-heading counterexample: the position schedule separates two pairs
/// with equal relative angle, the uniform one does not. Two results.
std::vector<PropertyResult> check_counterexample(const VerifyConfig & config);

/// Engine-level rigid motion: translation for every rotating variant, common
/// heading shift for the two heading-aware variants.
std::vector<PropertyResult> check_engine_invariance(const VerifyConfig & config);

std::vector<PropertyResult> run_invariance_suite(const VerifyConfig & config);

bool all_passed(const std::vector<PropertyResult> & results);

nlohmann::json to_json(const PropertyResult & result);
nlohmann::json suite_json(const std::vector<PropertyResult> & results, const VerifyConfig & config);

}  // namespace drope

#endif  // DROPE__VERIFY_HPP_
