#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace cafkit {

/// `max_rel_err` only counts coordinates whose absolute error exceeds the
/// absolute floor, so pass == (max_rel_err <= tol_rel || max_abs_err <= tol_abs).
struct GradReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t worst_index = 0;
  bool pass = true;
};

using ScalarFn = std::function<double(std::span<const double>)>;

inline constexpr double kDefaultFdStep = 1e-5;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
/// Throws InvalidInputError naming the coordinate if f is non-finite there.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x,
                                     double h = kDefaultFdStep);

/// Per coordinate: rel = |a - n| / max(|a|, |n|, 1e-12), abs = |a - n|. A
/// coordinate passes when rel <= tol_rel or abs <= tol_abs; the report passes
/// when every coordinate does. Throws ShapeError on length mismatch.
GradReport check_grads(std::span<const double> analytic, std::span<const double> numeric,
                       double tol_rel, double tol_abs);

}  // namespace cafkit
