#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "cornercert/errors.hpp"

namespace cornercert {

/// A d-dimensional right-angle corner (intersection of d orthogonal
/// half-spaces) probed at robustness radius eps.
struct CornerSpec {
  int d = 2;
  double eps = 0.5;

  void validate() const {
    if (d < 1) throw ParameterError("corner dimension must be >= 1");
    if (eps <= 0.0) throw ParameterError("corner eps must be positive");
  }
};

/// Fraction of the eps-hypercube opposite a d-dimensional corner that is
/// truly non-robust: pi^{d/2} / Gamma(d/2 + 1) * 2^{-d}. Evaluated through
/// log-gamma so it stays finite for d up to ~10^4.
inline double corner_ratio(int d) {
  if (d < 1) throw ParameterError("corner_ratio: d must be >= 1");
  const double log_ratio = 0.5 * d * std::log(std::numbers::pi) -
                           std::lgamma(0.5 * d + 1.0) - d * std::log(2.0);
  return std::exp(log_ratio);
}

/// Maximum boundary distance of an uncertified point inside the corner cube:
/// the cube diagonal sqrt(d) * eps.
inline double corner_diagonal(const CornerSpec& spec) {
  spec.validate();
  return std::sqrt(static_cast<double>(spec.d)) * spec.eps;
}

/// Exact area of robust-but-uncertified points opposite a 90-degree corner in
/// 2-D when the level curves run parallel to the facets: eps^2 * (1 - pi/4).
inline double corner_uncertified_area_2d(double eps) {
  if (eps <= 0.0) throw ParameterError("corner_uncertified_area_2d: eps must be positive");
  return eps * eps * (1.0 - std::numbers::pi / 4.0);
}

/// Signed Euclidean distance to the corner boundary {max(x1, x2) = 0}:
/// positive on the class-1 side (matches f1 - f0 of the minimal net),
/// negative where both coordinates are negative.
inline double corner_signed_distance(const Eigen::Vector2d& p) {
  if (p.x() > 0.0 && p.y() > 0.0) return p.norm();
  return std::max(p.x(), p.y());
}

}  // namespace cornercert
