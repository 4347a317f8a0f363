#pragma once

// Nearest-neighbor (Vecchia) decorrelation transform.
//
// For each observation, in max-min order, the conditional-Gaussian weights
//   b_i = R(i, C_i) R(C_i, C_i)^-1     v_i = 1 - b_i R(C_i, i)
// are computed from its conditioning set C_i. The forward map is
//   y~_i = v_i^(-1/2) (y_i - b_i y_{C_i})
// (position 0 passes through), applied identically to every feature column
// including the intercept. Predictions made on the transformed scale at a new
// location u are mapped back with
//   y*(u) = v_u^(1/2) y~*(u) + b_u y_{C_u}
// where C_u are the C nearest training locations.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "vdecor/error.hpp"
#include "vdecor/geom.hpp"
#include "vdecor/kernel.hpp"
#include "vdecor/parallel.hpp"

namespace vdecor {

inline constexpr Index kDefaultNeighbors = 30;
inline constexpr double kCholeskyJitter = 1e-10;
inline constexpr double kVarianceFloor = 1e-12;
inline constexpr Index kDenseCacheLimit = 4096;

struct VecchiaFactors {
  Ordering ordering;
  ConditioningSets sets;
  std::vector<double> weights; // aligned with sets.neighbors
  std::vector<double> vars;    // per ordered position
  CorrelationModel model;
  Index cap = kDefaultNeighbors;

  Index size() const { return ordering.size(); }

  std::span<const double> weights_at(Index position) const {
    const auto b = sets.offsets[static_cast<std::size_t>(position)];
    const auto e = sets.offsets[static_cast<std::size_t>(position) + 1];
    return {weights.data() + b, e - b};
  }
};

/// Rows are in max-min order: row p corresponds to original index
/// ordering.perm[p].
struct TransformedDataset {
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
};

struct PredictionFactors {
  std::vector<Index> neighbors; // training indices, nearest first
  Eigen::VectorXd weights;
  double var = 1.0;
};

namespace detail {

struct ConditionalSolve {
  Eigen::VectorXd weights;
  double var;
};

// Solves R(C,C) b = R(C,i) by Cholesky, retrying once with diagonal jitter.
inline std::optional<ConditionalSolve> conditional_solve(Eigen::MatrixXd block,
                                                         const Eigen::VectorXd &cross) {
  if (cross.size() == 0) {
    return ConditionalSolve{Eigen::VectorXd(0), 1.0};
  }
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) {
      block.diagonal().array() += kCholeskyJitter;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(block);
    if (llt.info() != Eigen::Success) {
      continue;
    }
    Eigen::VectorXd w = llt.matrixL().solve(cross);
    const double var = 1.0 - w.squaredNorm();
    Eigen::VectorXd b = llt.matrixU().solve(w);
    if (!b.allFinite() || !std::isfinite(var)) {
      continue;
    }
    return ConditionalSolve{std::move(b), std::clamp(var, 0.0, 1.0)};
  }
  return std::nullopt;
}

inline double inv_sqrt_var(double v) { return 1.0 / std::sqrt(std::max(v, kVarianceFloor)); }

} // namespace detail

/// Ordering, conditioning sets and conditional weights/variances for every
/// observation. Per-observation solves run on up to `threads` threads.
inline VecchiaFactors compute_factors(const LocationSet &locs, const CorrelationModel &model,
                                      Index cap = kDefaultNeighbors, unsigned threads = 1) {
  model.validate();
  detail::require(cap >= 1, "conditioning set size C must be at least 1");
  VecchiaFactors f;
  f.model = model;
  f.cap = cap;
  f.ordering = maxmin_order(locs);
  f.sets = conditioning_sets(locs, f.ordering, cap);
  f.weights.assign(f.sets.neighbors.size(), 0.0);
  f.vars.assign(static_cast<std::size_t>(locs.size()), 1.0);

  // Large conditioning sets on small inputs revisit the same pairs many
  // times; one dense matrix is then cheaper. Entries are bitwise the same.
  const Index n = locs.size();
  std::size_t pair_evals = 0;
  for (Index p = 0; p < n; ++p) {
    const std::size_t k = f.sets[p].size();
    pair_evals += k * (k + 1) / 2;
  }
  Eigen::MatrixXd dense;
  if (n <= kDenseCacheLimit && pair_evals > static_cast<std::size_t>(n) * static_cast<std::size_t>(n) / 2) {
    dense = correlation_matrix(locs, model);
  }

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t pos) {
    const auto set = f.sets[static_cast<Index>(pos)];
    if (set.empty()) {
      return;
    }
    const Index obs = f.ordering.perm[pos];
    Eigen::MatrixXd block;
    Eigen::VectorXd cross;
    if (dense.size() > 0) {
      const auto k = static_cast<Index>(set.size());
      block.resize(k, k);
      cross.resize(k);
      for (Index a = 0; a < k; ++a) {
        const Index ia = set[static_cast<std::size_t>(a)];
        cross(a) = dense(obs, ia);
        for (Index b = 0; b < k; ++b) {
          block(a, b) = dense(ia, set[static_cast<std::size_t>(b)]);
        }
      }
    } else {
      block = correlation_block(set, locs, model);
      cross = cross_correlation(locs.point(obs), set, locs, model);
    }
    const auto solved = detail::conditional_solve(std::move(block), cross);
    if (!solved) {
      throw NumericalError("singular correlation block for observation " + std::to_string(obs) +
                           " (duplicate locations with zero nugget?)");
    }
    std::copy(solved->weights.begin(), solved->weights.end(),
              f.weights.begin() + static_cast<std::ptrdiff_t>(f.sets.offsets[pos]));
    f.vars[pos] = solved->var;
  });
  return f;
}

/// Forward transform of a response vector given in original row order.
/// Output is in max-min order.
inline Eigen::VectorXd decorrelate_response(const Eigen::Ref<const Eigen::VectorXd> &y,
                                            const VecchiaFactors &f) {
  detail::require(y.size() == f.size(), "response length " + std::to_string(y.size()) +
                                            " does not match factor size " +
                                            std::to_string(f.size()));
  Eigen::VectorXd out(y.size());
  for (Index pos = 0; pos < y.size(); ++pos) {
    const auto set = f.sets[pos];
    const auto b = f.weights_at(pos);
    double mean = 0.0;
    for (std::size_t j = 0; j < set.size(); ++j) {
      mean += b[j] * y(set[j]);
    }
    const double yi = y(f.ordering.perm[static_cast<std::size_t>(pos)]);
    out(pos) = set.empty() ? yi : (yi - mean) * detail::inv_sqrt_var(f.vars[static_cast<std::size_t>(pos)]);
  }
  return out;
}

inline bool has_intercept_column(const Eigen::Ref<const Eigen::MatrixXd> &x) {
  return x.cols() >= 1 && (x.col(0).array() == 1.0).all();
}

/// Forward transform of a design matrix whose first column is the intercept.
/// Every column, the intercept included, goes through the same linear map as
/// the response.
inline Eigen::MatrixXd decorrelate_features(const Eigen::Ref<const Eigen::MatrixXd> &x,
                                            const VecchiaFactors &f) {
  detail::require(has_intercept_column(x),
                  "feature matrix must carry a leading intercept column of ones");
  detail::require(x.rows() == f.size(), "feature rows do not match factor size");
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    out.col(c) = decorrelate_response(x.col(c), f);
  }
  return out;
}

inline TransformedDataset decorrelate(const Eigen::Ref<const Eigen::VectorXd> &y,
                                      const Eigen::Ref<const Eigen::MatrixXd> &x,
                                      const VecchiaFactors &f) {
  return {decorrelate_response(y, f), decorrelate_features(x, f)};
}

/// Neighbors, weights and conditional variance for a new location u, using
/// the C nearest training points (no ordering restriction).
inline PredictionFactors prediction_factors(std::span<const double> u, const KdTree &training,
                                            const CorrelationModel &model,
                                            Index cap = kDefaultNeighbors) {
  detail::require(cap >= 1, "conditioning set size C must be at least 1");
  for (double c : u) {
    detail::require(std::isfinite(c), "prediction location must be finite");
  }
  const LocationSet &locs = training.locations();
  PredictionFactors pf;
  for (const auto &nb : training.knn(u, std::min(cap, locs.size()))) {
    pf.neighbors.push_back(nb.index);
  }
  const auto solved = detail::conditional_solve(correlation_block(pf.neighbors, locs, model),
                                                cross_correlation(u, pf.neighbors, locs, model));
  if (!solved) {
    throw NumericalError("singular neighbor correlation block at prediction location");
  }
  pf.weights = solved->weights;
  pf.var = solved->var;
  return pf;
}

inline PredictionFactors prediction_factors(std::span<const double> u, const LocationSet &locs,
                                            const CorrelationModel &model,
                                            Index cap = kDefaultNeighbors) {
  const KdTree tree(locs);
  return prediction_factors(u, tree, model, cap);
}

/// The training-time factors of the observation at an ordered position,
/// viewed as prediction factors.
inline PredictionFactors training_prediction_factors(const VecchiaFactors &f, Index position) {
  PredictionFactors pf;
  const auto set = f.sets[position];
  const auto b = f.weights_at(position);
  pf.neighbors.assign(set.begin(), set.end());
  pf.weights = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Index>(b.size()));
  pf.var = f.vars[static_cast<std::size_t>(position)];
  return pf;
}

/// x~(u) = v_u^(-1/2) (x(u) - b_u X_{C_u}); x(u) includes the intercept.
inline Eigen::VectorXd transform_features_at(const Eigen::Ref<const Eigen::VectorXd> &x,
                                             const Eigen::Ref<const Eigen::MatrixXd> &x_train,
                                             const PredictionFactors &pf) {
  detail::require(x.size() == x_train.cols(), "feature row has " + std::to_string(x.size()) +
                                                  " entries, training features have " +
                                                  std::to_string(x_train.cols()));
  detail::require(static_cast<Index>(pf.neighbors.size()) == pf.weights.size(),
                  "prediction factors are inconsistent");
  Eigen::VectorXd out(x.size());
  const double scale = detail::inv_sqrt_var(pf.var);
  for (Index c = 0; c < x.size(); ++c) {
    double mean = 0.0;
    for (std::size_t j = 0; j < pf.neighbors.size(); ++j) {
      mean += pf.weights(static_cast<Index>(j)) * x_train(pf.neighbors[j], c);
    }
    out(c) = pf.neighbors.empty() ? x(c) : (x(c) - mean) * scale;
  }
  return out;
}

/// y*(u) = v_u^(1/2) y~* + b_u y_{C_u}.
inline double recorrelate_prediction(double transformed, const PredictionFactors &pf,
                                     const Eigen::Ref<const Eigen::VectorXd> &y_train) {
  detail::require(static_cast<Index>(pf.neighbors.size()) == pf.weights.size(),
                  "prediction factors are inconsistent");
  double mean = 0.0;
  for (std::size_t j = 0; j < pf.neighbors.size(); ++j) {
    const Index nb = pf.neighbors[j];
    detail::require(nb >= 0 && nb < y_train.size(), "neighbor index outside training response");
    mean += pf.weights(static_cast<Index>(j)) * y_train(nb);
  }
  if (pf.neighbors.empty()) {
    return transformed;
  }
  return std::sqrt(pf.var) * transformed + mean;
}

/// Dense n x n matrix A with A y = decorrelate_response(y). Used by tests
/// and diagnostics; O(n^2) memory.
inline Eigen::MatrixXd transform_matrix(const VecchiaFactors &f) {
  const Index n = f.size();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Index pos = 0; pos < n; ++pos) {
    const auto set = f.sets[pos];
    const auto b = f.weights_at(pos);
    const double s = set.empty() ? 1.0 : detail::inv_sqrt_var(f.vars[static_cast<std::size_t>(pos)]);
    a(pos, f.ordering.perm[static_cast<std::size_t>(pos)]) = s;
    for (std::size_t j = 0; j < set.size(); ++j) {
      a(pos, set[j]) -= s * b[j];
    }
  }
  return a;
}

} // namespace vdecor
