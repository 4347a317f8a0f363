#pragma once

// Cross-validated tuning of the kernel nugget/range jointly with learner
// hyperparameters, and the final fitted pipeline.
//
// Held-out rows are scored exactly as deployment predictions: factors come
// from the fold's training rows only, and each held-out point goes through
// prediction_factors -> transform_features_at -> learner -> recorrelate.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vdecor/dataset.hpp"
#include "vdecor/error.hpp"
#include "vdecor/geom.hpp"
#include "vdecor/kernel.hpp"
#include "vdecor/learners.hpp"
#include "vdecor/parallel.hpp"
#include "vdecor/vecchia.hpp"

namespace vdecor {

struct TuningGrid {
  std::vector<double> nuggets{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> ranges;
  std::vector<LearnerSpec> learners;

  void validate() const {
    detail::require(!nuggets.empty() && !ranges.empty() && !learners.empty(),
                    "tuning grid must not be empty");
    for (double w : nuggets) {
      detail::require(w >= 0.0 && w <= 1.0, "grid nugget values must lie in [0, 1]");
    }
    for (double r : ranges) {
      detail::require(std::isfinite(r) && r > 0.0, "grid range values must be positive");
    }
    for (const auto &l : learners) {
      l.validate();
    }
  }
};

/// Diagonal of the bounding box: an upper estimate of the maximum pairwise
/// distance.
inline double max_distance_estimate(const LocationSet &locs) {
  const auto &c = locs.coords();
  return (c.colwise().maxCoeff() - c.colwise().minCoeff()).norm();
}

/// `count` log-spaced ranges over [0.01 Dmax, Dmax / 3].
inline std::vector<double> default_ranges(const LocationSet &locs, std::size_t count = 5) {
  const double dmax = max_distance_estimate(locs);
  detail::require(dmax > 0.0, "all locations coincide; cannot derive a range grid");
  const double lo = std::log(0.01 * dmax);
  const double hi = std::log(dmax / 3.0);
  std::vector<double> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    out.push_back(std::exp(lo + t * (hi - lo)));
  }
  return out;
}

/// Five-value hyperparameter grid per learner kind around `base`.
inline std::vector<LearnerSpec> default_learner_grid(const LearnerSpec &base) {
  std::vector<LearnerSpec> out;
  switch (base.kind) {
  case LearnerKind::Linear:
    out.push_back(base);
    break;
  case LearnerKind::Knn:
    for (Index k : {5, 10, 20, 40, 80}) {
      LearnerSpec s = base;
      s.k = k;
      out.push_back(s);
    }
    break;
  case LearnerKind::BaggedTrees:
    for (Index leaf : {1, 3, 5, 10, 20}) {
      LearnerSpec s = base;
      s.min_leaf = leaf;
      out.push_back(s);
    }
    break;
  }
  return out;
}

struct CvOptions {
  Index folds = 5;
  std::uint64_t seed = 1;
  Index neighbors = kDefaultNeighbors;
  KernelFamily family = KernelFamily::Exponential;
  double smoothness = 0.5;
  bool blocked = false; // spatial block folds instead of random rows
  unsigned threads = 1;
  // Called with (fold, training rows) right before factors are computed.
  std::function<void(Index, std::span<const Index>)> on_factor_rows;
};

struct CvCell {
  double nugget = 0.0;
  double range = 0.0;
  LearnerSpec learner;
  std::vector<double> fold_rmse;
  double mean_rmse = 0.0;
};

struct CvResult {
  std::vector<CvCell> cells;
  std::size_t best = 0;
  double wall_seconds = 0.0;

  const CvCell &best_cell() const { return cells.at(best); }
};

/// Fold label per row. Random folds shuffle rows; blocked folds cut the
/// bounding box into a grid of about 4*folds cells and deal shuffled cells
/// round-robin to folds.
inline std::vector<Index> assign_folds(const LocationSet &locs, Index folds, std::uint64_t seed,
                                       bool blocked) {
  const Index n = locs.size();
  std::mt19937_64 rng(seed);
  std::vector<Index> label(static_cast<std::size_t>(n));
  if (!blocked) {
    std::vector<Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Index{0});
    std::shuffle(rows.begin(), rows.end(), rng);
    for (Index i = 0; i < n; ++i) {
      label[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])] = i % folds;
    }
    return label;
  }
  const auto &c = locs.coords();
  const Eigen::RowVectorXd lo = c.colwise().minCoeff();
  const Eigen::RowVectorXd hi = c.colwise().maxCoeff();
  const auto side = static_cast<Index>(std::ceil(std::sqrt(4.0 * static_cast<double>(folds))));
  const Index dims = std::min<Index>(locs.dim(), 2);
  Index cells = 1;
  for (Index k = 0; k < dims; ++k) {
    cells *= side;
  }
  std::vector<Index> cell_fold(static_cast<std::size_t>(cells));
  std::iota(cell_fold.begin(), cell_fold.end(), Index{0});
  std::shuffle(cell_fold.begin(), cell_fold.end(), rng);
  for (Index i = 0; i < cells; ++i) {
    cell_fold[static_cast<std::size_t>(i)] %= folds;
  }
  for (Index i = 0; i < n; ++i) {
    Index cell = 0;
    for (Index k = 0; k < dims; ++k) {
      const double width = hi(k) - lo(k);
      auto b = width > 0.0 ? static_cast<Index>((c(i, k) - lo(k)) / width * static_cast<double>(side)) : 0;
      b = std::clamp<Index>(b, 0, side - 1);
      cell = cell * side + b;
    }
    label[static_cast<std::size_t>(i)] = cell_fold[static_cast<std::size_t>(cell)];
  }
  return label;
}

/// Predictions at new locations, fitted transform and learner included.
class SpatialPipeline {
public:
  SpatialPipeline() = default;
  SpatialPipeline(VecchiaFactors factors, SpatialDataset train, Learner learner)
      : factors_(std::move(factors)), train_(std::move(train)), learner_(std::move(learner)) {}

  /// `x` carries the intercept column, like the training features.
  Eigen::VectorXd predict(const LocationSet &locs, const Eigen::Ref<const Eigen::MatrixXd> &x,
                          unsigned threads = 1) const {
    detail::require(locs.dim() == train_.locs.dim(), "query locations have dimension " +
                                                         std::to_string(locs.dim()) + ", expected " +
                                                         std::to_string(train_.locs.dim()));
    detail::require(x.cols() == train_.x.cols(),
                    "query has " + std::to_string(x.cols() - 1) + " features, pipeline expects " +
                        std::to_string(train_.x.cols() - 1));
    detail::require(x.rows() == locs.size(), "query locations and features differ in row count");
    return predict_rows(locs.coords(), x, threads);
  }

  Eigen::VectorXd predict_rows(const RowMatrix &coords, const Eigen::Ref<const Eigen::MatrixXd> &x,
                               unsigned threads = 1) const {
    const Index m = coords.rows();
    if (m == 0) {
      return Eigen::VectorXd(0);
    }
    const KdTree tree(train_.locs);
    std::vector<PredictionFactors> pfs(static_cast<std::size_t>(m));
    Eigen::MatrixXd xt(m, x.cols());
    parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t r) {
      const auto row = static_cast<Index>(r);
      const std::span<const double> u(coords.data() + row * coords.cols(),
                                      static_cast<std::size_t>(coords.cols()));
      pfs[r] = prediction_factors(u, tree, factors_.model, factors_.cap);
      xt.row(row) = transform_features_at(x.row(row).transpose(), train_.x, pfs[r]).transpose();
    });
    const Eigen::VectorXd yt = learner_.predict(xt);
    Eigen::VectorXd out(m);
    for (Index r = 0; r < m; ++r) {
      out(r) = recorrelate_prediction(yt(r), pfs[static_cast<std::size_t>(r)], train_.y);
    }
    return out;
  }

  const VecchiaFactors &factors() const { return factors_; }
  const SpatialDataset &training() const { return train_; }
  const Learner &learner() const { return learner_; }

private:
  VecchiaFactors factors_;
  SpatialDataset train_;
  Learner learner_;
};

struct FittedPipeline {
  SpatialPipeline pipeline;
  FitReport report;
};

/// Factors on all of `data`, learner fit on the full transformed set.
inline FittedPipeline final_fit(const SpatialDataset &data, const CorrelationModel &model,
                                const LearnerSpec &learner, Index neighbors = kDefaultNeighbors,
                                unsigned threads = 1) {
  data.validate();
  const auto start = std::chrono::steady_clock::now();
  VecchiaFactors factors = compute_factors(data.locs, model, neighbors, threads);
  const TransformedDataset t = decorrelate(data.y, data.x, factors);
  Learner fitted(learner);
  FitReport report = fitted.fit(t.x, t.y, threads);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {SpatialPipeline(std::move(factors), data, std::move(fitted)), report};
}

inline CorrelationModel cell_model(const CvCell &cell, const CvOptions &opt) {
  return CorrelationModel{opt.family, cell.range, opt.smoothness, cell.nugget};
}

inline FittedPipeline final_fit(const SpatialDataset &data, const CvCell &best, const CvOptions &opt) {
  return final_fit(data, cell_model(best, opt), best.learner, opt.neighbors, 1);
}

/// Lowest mean RMSE among cells accepted by `keep`; ties prefer the larger
/// nugget, then the smaller range, then the earlier cell.
template <typename Keep>
std::size_t best_cell_index(const std::vector<CvCell> &cells, Keep &&keep) {
  std::size_t best = cells.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!keep(cells[i])) {
      continue;
    }
    if (best == cells.size()) {
      best = i;
      continue;
    }
    const CvCell &a = cells[i];
    const CvCell &b = cells[best];
    if (a.mean_rmse < b.mean_rmse ||
        (a.mean_rmse == b.mean_rmse &&
         (a.nugget > b.nugget || (a.nugget == b.nugget && a.range < b.range)))) {
      best = i;
    }
  }
  detail::require(best < cells.size(), "no grid cell matches");
  return best;
}

inline std::size_t best_cell_index(const std::vector<CvCell> &cells) {
  return best_cell_index(cells, [](const CvCell &) { return true; });
}

/// k-fold cross-validated RMSE (original scale) for every grid cell.
/// Best cell: lowest mean RMSE; ties prefer larger nugget, then smaller range,
/// then earlier learner spec.
inline CvResult cross_validate(const SpatialDataset &data, const TuningGrid &grid,
                               const CvOptions &opt = {}) {
  data.validate();
  grid.validate();
  detail::require(opt.folds >= 2, "need at least two folds");
  detail::require(data.size() >= opt.folds, "fewer rows than folds");
  const auto start = std::chrono::steady_clock::now();

  const std::vector<Index> label = assign_folds(data.locs, opt.folds, opt.seed, opt.blocked);
  std::vector<std::vector<Index>> train_rows(static_cast<std::size_t>(opt.folds));
  std::vector<std::vector<Index>> test_rows(static_cast<std::size_t>(opt.folds));
  for (Index i = 0; i < data.size(); ++i) {
    for (Index f = 0; f < opt.folds; ++f) {
      (label[static_cast<std::size_t>(i)] == f ? test_rows : train_rows)[static_cast<std::size_t>(f)].push_back(i);
    }
  }
  for (Index f = 0; f < opt.folds; ++f) {
    detail::require(test_rows[static_cast<std::size_t>(f)].size() >= 2 &&
                        train_rows[static_cast<std::size_t>(f)].size() >= 2,
                    "fold " + std::to_string(f) + " has fewer than two rows");
  }

  const std::size_t n_learn = grid.learners.size();
  const std::size_t n_range = grid.ranges.size();
  const std::size_t n_nug = grid.nuggets.size();
  const std::size_t n_kernel = n_nug * n_range;
  // sq_err[(kernel cell * learners + learner) * folds + fold]
  std::vector<double> fold_rmse(n_kernel * n_learn * static_cast<std::size_t>(opt.folds), 0.0);

  struct Task {
    Index fold;
    std::size_t kernel;
  };
  std::vector<Task> tasks;
  for (Index f = 0; f < opt.folds; ++f) {
    for (std::size_t kc = 0; kc < n_kernel; ++kc) {
      tasks.push_back({f, kc});
    }
  }

  std::vector<SpatialDataset> fold_train(static_cast<std::size_t>(opt.folds));
  std::vector<SpatialDataset> fold_test(static_cast<std::size_t>(opt.folds));
  for (Index f = 0; f < opt.folds; ++f) {
    fold_train[static_cast<std::size_t>(f)] = data.subset(train_rows[static_cast<std::size_t>(f)]);
    fold_test[static_cast<std::size_t>(f)] = data.subset(test_rows[static_cast<std::size_t>(f)]);
    if (opt.on_factor_rows) {
      opt.on_factor_rows(f, train_rows[static_cast<std::size_t>(f)]);
    }
  }

  auto run = [&](const Task &task) {
    const auto fi = static_cast<std::size_t>(task.fold);
    const SpatialDataset &tr = fold_train[fi];
    const SpatialDataset &te = fold_test[fi];
    const double nugget = grid.nuggets[task.kernel / n_range];
    const double range = grid.ranges[task.kernel % n_range];
    const CorrelationModel model{opt.family, range, opt.smoothness, nugget};
    const VecchiaFactors factors = compute_factors(tr.locs, model, opt.neighbors);
    const TransformedDataset t = decorrelate(tr.y, tr.x, factors);

    const KdTree tree(tr.locs);
    std::vector<PredictionFactors> pfs(static_cast<std::size_t>(te.size()));
    Eigen::MatrixXd xt(te.size(), te.x.cols());
    for (Index r = 0; r < te.size(); ++r) {
      pfs[static_cast<std::size_t>(r)] = prediction_factors(te.locs.point(r), tree, model, opt.neighbors);
      xt.row(r) = transform_features_at(te.x.row(r).transpose(), tr.x, pfs[static_cast<std::size_t>(r)]).transpose();
    }
    for (std::size_t li = 0; li < n_learn; ++li) {
      Learner learner(grid.learners[li]);
      learner.fit(t.x, t.y);
      const Eigen::VectorXd yt = learner.predict(xt);
      Eigen::VectorXd pred(te.size());
      for (Index r = 0; r < te.size(); ++r) {
        pred(r) = recorrelate_prediction(yt(r), pfs[static_cast<std::size_t>(r)], tr.y);
      }
      fold_rmse[(task.kernel * n_learn + li) * static_cast<std::size_t>(opt.folds) + fi] = rmse(pred, te.y);
    }
  };

  // With nugget 1 the factors do not depend on the range, so one range per
  // fold is enough; the others copy its scores.
  std::vector<Task> distinct;
  std::vector<std::pair<std::size_t, std::size_t>> copies; // (target kernel, source kernel)
  for (std::size_t w = 0; w < n_nug; ++w) {
    for (std::size_t r = 0; r < n_range; ++r) {
      if (grid.nuggets[w] == 1.0 && r > 0) {
        copies.emplace_back(w * n_range + r, w * n_range);
      }
    }
  }
  for (const Task &t : tasks) {
    const bool is_copy = std::any_of(copies.begin(), copies.end(),
                                     [&](const auto &c) { return c.first == t.kernel; });
    if (!is_copy) {
      distinct.push_back(t);
    }
  }
  parallel_for(distinct.size(), opt.threads, [&](std::size_t i) { run(distinct[i]); });
  for (const auto &[target, source] : copies) {
    for (std::size_t li = 0; li < n_learn; ++li) {
      for (std::size_t f = 0; f < static_cast<std::size_t>(opt.folds); ++f) {
        fold_rmse[(target * n_learn + li) * static_cast<std::size_t>(opt.folds) + f] =
            fold_rmse[(source * n_learn + li) * static_cast<std::size_t>(opt.folds) + f];
      }
    }
  }

  CvResult result;
  for (std::size_t kc = 0; kc < n_kernel; ++kc) {
    for (std::size_t li = 0; li < n_learn; ++li) {
      CvCell cell;
      cell.nugget = grid.nuggets[kc / n_range];
      cell.range = grid.ranges[kc % n_range];
      cell.learner = grid.learners[li];
      const auto base = (kc * n_learn + li) * static_cast<std::size_t>(opt.folds);
      cell.fold_rmse.assign(fold_rmse.begin() + static_cast<std::ptrdiff_t>(base),
                            fold_rmse.begin() + static_cast<std::ptrdiff_t>(base) + opt.folds);
      cell.mean_rmse = std::accumulate(cell.fold_rmse.begin(), cell.fold_rmse.end(), 0.0) /
                       static_cast<double>(opt.folds);
      result.cells.push_back(std::move(cell));
    }
  }
  result.best = best_cell_index(result.cells);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

} // namespace vdecor
