#pragma once

#include <cmath>
#include <span>
#include <string>

#include <Eigen/Core>

#include "vdecor/error.hpp"
#include "vdecor/geom.hpp"

namespace vdecor {

enum class KernelFamily { Exponential, Matern };

inline std::string to_string(KernelFamily f) {
  return f == KernelFamily::Exponential ? "exponential" : "matern";
}

inline KernelFamily parse_kernel_family(const std::string &name) {
  if (name == "exponential" || name == "exp") {
    return KernelFamily::Exponential;
  }
  if (name == "matern") {
    return KernelFamily::Matern;
  }
  throw InvalidArgument("unknown kernel family '" + name + "' (expected exponential|matern)");
}

/// Stationary isotropic correlation with a nugget.
///
/// Off-diagonal correlation between distinct observations is
/// (1 - nugget) * rho(d), and the diagonal is 1. The Matérn form is
///   rho(d) = 2^(1-nu) / Gamma(nu) * (d/range)^nu * K_nu(d/range)
/// with no sqrt(2 nu) factor inside the argument; nu = 1/2 reduces to the
/// exponential exp(-d/range).
struct CorrelationModel {
  KernelFamily family = KernelFamily::Exponential;
  double range = 1.0;
  double smoothness = 0.5;
  double nugget = 0.0;

  void validate() const {
    detail::require(std::isfinite(range) && range > 0.0, "kernel range must be positive");
    detail::require(nugget >= 0.0 && nugget <= 1.0, "nugget must lie in [0, 1]");
    if (family == KernelFamily::Matern) {
      detail::require(std::isfinite(smoothness) && smoothness > 0.0,
                      "Matern smoothness must be positive");
    }
  }

  friend bool operator==(const CorrelationModel &, const CorrelationModel &) = default;
};

/// Pre-nugget correlation rho(d).
inline double correlation(double d, const CorrelationModel &model) {
  if (!(d >= 0.0)) {
    throw InvalidArgument("distance must be non-negative");
  }
  if (d == 0.0) {
    return 1.0;
  }
  const double x = d / model.range;
  if (model.family == KernelFamily::Exponential) {
    return std::exp(-x);
  }
  if (x > 700.0) {
    return 0.0;
  }
  const double nu = model.smoothness;
  // 1 - rho(x) behaves like x^(2 min(nu, 1)); below this it is under 1e-20
  // and K_nu may already overflow.
  if (x < std::pow(1e-20, 1.0 / (2.0 * std::min(nu, 1.0)))) {
    return 1.0;
  }
  // log-space prefactor keeps large nu from overflowing Gamma(nu)
  const double log_pref = (1.0 - nu) * std::log(2.0) - std::lgamma(nu) + nu * std::log(x);
  const double rho = std::exp(log_pref) * std::cyl_bessel_k(nu, x);
  if (!std::isfinite(rho)) {
    throw NumericalError("Matern correlation not representable in double precision (nu = " +
                         std::to_string(nu) + ", d/range = " + std::to_string(x) + ")");
  }
  return rho;
}

/// Correlation between two distinct observations at distance d.
inline double offdiag_correlation(double d, const CorrelationModel &model) {
  return (1.0 - model.nugget) * correlation(d, model);
}

/// R(points, points): unit diagonal, (1 - nugget) rho(d_ij) elsewhere.
inline Eigen::MatrixXd correlation_block(std::span<const Index> points, const LocationSet &locs,
                                         const CorrelationModel &model) {
  const auto k = static_cast<Index>(points.size());
  Eigen::MatrixXd block(k, k);
  for (Index a = 0; a < k; ++a) {
    block(a, a) = 1.0;
    const auto pa = locs.point(points[static_cast<std::size_t>(a)]);
    for (Index b = a + 1; b < k; ++b) {
      const double d = std::sqrt(squared_distance(pa, locs.point(points[static_cast<std::size_t>(b)])));
      const double r = offdiag_correlation(d, model);
      block(a, b) = r;
      block(b, a) = r;
    }
  }
  return block;
}

/// R(target, points) for a target location that is not itself one of the
/// points; a coincident point still gets 1 - nugget, not 1.
inline Eigen::VectorXd cross_correlation(std::span<const double> target,
                                         std::span<const Index> points, const LocationSet &locs,
                                         const CorrelationModel &model) {
  detail::require(static_cast<Index>(target.size()) == locs.dim(),
                  "target dimension does not match locations");
  for (double c : target) {
    detail::require(std::isfinite(c), "target location must be finite");
  }
  Eigen::VectorXd out(static_cast<Index>(points.size()));
  for (std::size_t j = 0; j < points.size(); ++j) {
    const double d = std::sqrt(squared_distance(target, locs.point(points[j])));
    out(static_cast<Index>(j)) = offdiag_correlation(d, model);
  }
  return out;
}

/// Dense n x n correlation matrix over all locations.
inline Eigen::MatrixXd correlation_matrix(const LocationSet &locs, const CorrelationModel &model) {
  std::vector<Index> all(static_cast<std::size_t>(locs.size()));
  for (Index i = 0; i < locs.size(); ++i) {
    all[static_cast<std::size_t>(i)] = i;
  }
  return correlation_block(all, locs, model);
}

} // namespace vdecor
