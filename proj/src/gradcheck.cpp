#include "cafkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cafkit/error.hpp"

namespace cafkit {

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidInputError("finite_diff_grad: step must be > 0");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = probe[i];
    probe[i] = xi + h;
    const double up = f(probe);
    probe[i] = xi - h;
    const double down = f(probe);
    probe[i] = xi;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw InvalidInputError("finite_diff_grad: non-finite evaluation at coordinate " +
                              std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

GradReport check_grads(std::span<const double> analytic, std::span<const double> numeric,
                       double tol_rel, double tol_abs) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError("check_grads: " + std::to_string(analytic.size()) + " analytic vs " +
                     std::to_string(numeric.size()) + " numeric");
  }
  GradReport rep;
  std::size_t worst_abs = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double err = std::abs(a - n);
    if (!(err <= rep.max_abs_err)) {  // also catches NaN
      rep.max_abs_err = err;
      worst_abs = i;
    }
    if (err <= tol_abs) continue;
    const double rel = err / std::max({std::abs(a), std::abs(n), 1e-12});
    if (!(rel <= rep.max_rel_err)) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
    }
  }
  if (rep.max_rel_err == 0.0) rep.worst_index = worst_abs;
  rep.pass = rep.max_rel_err <= tol_rel || rep.max_abs_err <= tol_abs;
  return rep;
}

}  // namespace cafkit
