#pragma once

// Seeded generators for the three benchmark scenarios:
//   IndepLinear      y = X beta + iid N(0, sill)
//   SpatialLinear    y = X beta + GP noise, exponential kernel
//   SpatialNonlinear y = f(x1, x2) + GP noise, f a Matérn GP over feature space
// plus an exact dense GP sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "vdecor/dataset.hpp"
#include "vdecor/error.hpp"
#include "vdecor/geom.hpp"
#include "vdecor/kernel.hpp"
#include "vdecor/vecchia.hpp"

namespace vdecor {

using Rng = std::mt19937_64;

inline constexpr Index kDenseSamplerCap = 5000;

enum class Scenario { IndepLinear = 1, SpatialLinear = 2, SpatialNonlinear = 3 };

inline Scenario parse_scenario(int tag) {
  if (tag < 1 || tag > 3) {
    throw InvalidArgument("scenario must be 1, 2 or 3 (got " + std::to_string(tag) + ")");
  }
  return static_cast<Scenario>(tag);
}

enum class GpSampler { Dense, Vecchia };

struct SimulationConfig {
  Index n = 2000;
  Scenario scenario = Scenario::IndepLinear;
  Index features = 10;
  double sill = 100.0;
  CorrelationModel spatial{KernelFamily::Exponential, 0.236, 0.5, 0.25};
  CorrelationModel feature_space{KernelFamily::Matern, 0.842, 2.1, 0.0};
  double signal_sill = 100.0;
  double train_fraction = 0.8;
  GpSampler sampler = GpSampler::Dense;
  Index dense_cap = kDenseSamplerCap;
  Index vecchia_neighbors = kDefaultNeighbors;
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(n >= 1, "n must be at least 1");
    detail::require(features >= 1, "need at least one feature");
    detail::require(sill > 0.0 && std::isfinite(sill), "sill must be positive");
    detail::require(signal_sill > 0.0 && std::isfinite(signal_sill), "signal sill must be positive");
    detail::require(train_fraction > 0.0 && train_fraction <= 1.0, "train fraction must be in (0, 1]");
    spatial.validate();
    feature_space.validate();
    if (scenario == Scenario::SpatialNonlinear) {
      detail::require(features >= 2, "scenario 3 needs at least two features");
    }
  }
};

struct SimulatedDataset {
  SpatialDataset data;
  Eigen::VectorXd beta;   // length P+1, intercept coefficient 0; zero for scenario 3
  Eigen::VectorXd signal; // noiseless mean X beta or f(x1, x2)
  std::vector<Index> train;
  std::vector<Index> test;
  Index zeroed = 0;       // J, the number of coefficients set to zero
};

inline LocationSet sample_locations(Index n, Rng &rng) {
  detail::require(n >= 1, "n must be at least 1");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  RowMatrix coords(n, 2);
  for (Index i = 0; i < n; ++i) {
    coords(i, 0) = unif(rng);
    coords(i, 1) = unif(rng);
  }
  return LocationSet(std::move(coords));
}

inline LocationSet sample_locations(Index n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_locations(n, rng);
}

inline Eigen::VectorXd standard_normals(Index n, Rng &rng) {
  std::normal_distribution<double> norm(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Index i = 0; i < n; ++i) {
    z(i) = norm(rng);
  }
  return z;
}

/// `draws` exact draws from N(0, sill * R), one per column, via a single dense
/// Cholesky. Very smooth kernels with no nugget make R numerically singular;
/// the factorization then escalates a diagonal jitter 1e-10, 1e-8, 1e-6
/// before giving up.
inline Eigen::MatrixXd sample_gp_batch(const LocationSet &locs, const CorrelationModel &model,
                                       double sill, Rng &rng, Index draws,
                                       Index dense_cap = kDenseSamplerCap) {
  model.validate();
  detail::require(sill > 0.0 && std::isfinite(sill), "sill must be positive");
  detail::require(draws >= 1, "need at least one draw");
  detail::require(locs.size() <= dense_cap,
                  "dense GP sampler limited to " + std::to_string(dense_cap) + " points (got " +
                      std::to_string(locs.size()) + ")");
  Eigen::MatrixXd z(locs.size(), draws);
  for (Index c = 0; c < draws; ++c) {
    z.col(c) = standard_normals(locs.size(), rng);
  }
  const Eigen::MatrixXd r = correlation_matrix(locs, model);
  for (double jitter : {0.0, 1e-10, 1e-8, 1e-6}) {
    Eigen::MatrixXd a = r;
    a.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd lz = llt.matrixL() * z;
      return std::sqrt(sill) * lz;
    }
  }
  throw NumericalError("GP correlation matrix is not positive definite");
}

inline Eigen::VectorXd sample_gp(const LocationSet &locs, const CorrelationModel &model, double sill,
                                 Rng &rng, Index dense_cap = kDenseSamplerCap) {
  return sample_gp_batch(locs, model, sill, rng, 1, dense_cap).col(0);
}

inline Eigen::VectorXd sample_gp(const LocationSet &locs, const CorrelationModel &model, double sill,
                                 std::uint64_t seed, Index dense_cap = kDenseSamplerCap) {
  Rng rng(seed);
  return sample_gp(locs, model, sill, rng, dense_cap);
}

/// Approximate draw using the nearest-neighbor conditionals: in max-min
/// order, y_i = b_i y_{C_i} + sqrt(sill v_i) z_i. Scales to large n.
inline Eigen::VectorXd sample_gp_vecchia(const LocationSet &locs, const CorrelationModel &model,
                                         double sill, Rng &rng, Index cap = kDefaultNeighbors) {
  detail::require(sill > 0.0 && std::isfinite(sill), "sill must be positive");
  const VecchiaFactors f = compute_factors(locs, model, cap);
  const Eigen::VectorXd z = standard_normals(locs.size(), rng);
  Eigen::VectorXd y(locs.size());
  for (Index pos = 0; pos < locs.size(); ++pos) {
    const auto set = f.sets[pos];
    const auto b = f.weights_at(pos);
    double mean = 0.0;
    for (std::size_t j = 0; j < set.size(); ++j) {
      mean += b[j] * y(set[j]);
    }
    y(f.ordering.perm[static_cast<std::size_t>(pos)]) =
        mean + std::sqrt(sill * f.vars[static_cast<std::size_t>(pos)]) * z(pos);
  }
  return y;
}

namespace detail {

// Independent noise is the nugget-one special case; it shares the normal
// draws with the correlated path so that nugget 1 reproduces scenario 1.
inline Eigen::VectorXd correlated_noise(const LocationSet &locs, const CorrelationModel &model,
                                        double sill, Rng &rng, const SimulationConfig &cfg) {
  if (model.nugget == 1.0) {
    return std::sqrt(sill) * standard_normals(locs.size(), rng);
  }
  if (cfg.sampler == GpSampler::Vecchia) {
    return sample_gp_vecchia(locs, model, sill, rng, cfg.vecchia_neighbors);
  }
  return sample_gp(locs, model, sill, rng, cfg.dense_cap);
}

} // namespace detail

inline SimulatedDataset generate_scenario(const SimulationConfig &cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SimulatedDataset out;
  const Index n = cfg.n;
  const Index p = cfg.features;

  LocationSet locs = sample_locations(n, rng);
  Eigen::MatrixXd raw(n, p);
  {
    std::normal_distribution<double> norm(0.0, 1.0);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < p; ++j) {
        raw(i, j) = norm(rng);
      }
    }
  }

  out.beta = Eigen::VectorXd::Zero(p + 1);
  {
    std::normal_distribution<double> coef(0.0, 5.0);
    for (Index j = 1; j <= p; ++j) {
      out.beta(j) = coef(rng);
    }
    std::binomial_distribution<Index> binom(p, 0.5);
    out.zeroed = binom(rng);
    std::vector<Index> cols(static_cast<std::size_t>(p));
    std::iota(cols.begin(), cols.end(), Index{1});
    std::shuffle(cols.begin(), cols.end(), rng);
    for (Index j = 0; j < out.zeroed; ++j) {
      out.beta(cols[static_cast<std::size_t>(j)]) = 0.0;
    }
  }

  Eigen::MatrixXd x = with_intercept(raw);
  CorrelationModel noise_model = cfg.spatial;
  switch (cfg.scenario) {
  case Scenario::IndepLinear:
    noise_model.nugget = 1.0;
    out.signal = x * out.beta;
    break;
  case Scenario::SpatialLinear:
    out.signal = x * out.beta;
    break;
  case Scenario::SpatialNonlinear: {
    out.beta.setZero();
    RowMatrix feature_pts = raw.leftCols(2);
    const LocationSet feature_locs(std::move(feature_pts));
    if (cfg.sampler == GpSampler::Vecchia) {
      out.signal = sample_gp_vecchia(feature_locs, cfg.feature_space, cfg.signal_sill, rng,
                                     cfg.vecchia_neighbors);
    } else {
      out.signal = sample_gp(feature_locs, cfg.feature_space, cfg.signal_sill, rng, cfg.dense_cap);
    }
    break;
  }
  }
  const Eigen::VectorXd noise = detail::correlated_noise(locs, noise_model, cfg.sill, rng, cfg);
  Eigen::VectorXd y = out.signal + noise;

  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::clamp<Index>(static_cast<Index>(std::llround(cfg.train_fraction * static_cast<double>(n))), 1, n));
  out.train.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());

  out.data = SpatialDataset{std::move(locs), std::move(x), std::move(y)};
  return out;
}

} // namespace vdecor
