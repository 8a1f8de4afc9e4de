#pragma once

#include <optional>
#include <vector>

namespace prsense {

enum class Direction { highest, lowest };

enum class GradientMethod { explicit_solves, adjoint, topk, finite_difference };

/// Per-parameter partial derivatives of a (robust) solution function.
/// `param_ids` names the parameters the values belong to; a full gradient
/// carries 0..l-1.
struct GradientReport {
  std::vector<int> param_ids;
  std::vector<double> values;
  GradientMethod method = GradientMethod::explicit_solves;
};

/// Result of a k-highest / k-lowest derivative selection.
struct TopkResult {
  std::vector<int> selected;  // ascending parameter ids, |selected| == k
  int k = 0;
  double lp_objective = 0.0;
  /// Raw relaxation values before the tie-break (for exactness checks).
  std::vector<double> z;
  /// Derivatives for `selected`, when requested.
  std::optional<std::vector<double>> values;
};

}  // namespace prsense
