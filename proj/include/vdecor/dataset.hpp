#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vdecor/error.hpp"
#include "vdecor/geom.hpp"

namespace vdecor {

/// Locations, features and response. `x` always carries the intercept as its
/// first column; callers supply raw features through with_intercept().
struct SpatialDataset {
  LocationSet locs;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Index size() const { return locs.size(); }
  Index feature_count() const { return x.cols() - 1; }

  void validate() const {
    detail::require(x.rows() == locs.size() && y.size() == locs.size(),
                    "dataset parts disagree on row count");
    detail::require(x.cols() >= 1 && (x.col(0).array() == 1.0).all(),
                    "dataset features must start with an intercept column");
    detail::require(y.allFinite() && x.allFinite(), "dataset contains non-finite values");
  }

  SpatialDataset subset(std::span<const Index> rows) const {
    SpatialDataset out{locs.subset(rows), Eigen::MatrixXd(static_cast<Index>(rows.size()), x.cols()),
                       Eigen::VectorXd(static_cast<Index>(rows.size()))};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.x.row(static_cast<Index>(r)) = x.row(rows[r]);
      out.y(static_cast<Index>(r)) = y(rows[r]);
    }
    return out;
  }
};

inline Eigen::MatrixXd with_intercept(const Eigen::Ref<const Eigen::MatrixXd> &raw) {
  Eigen::MatrixXd x(raw.rows(), raw.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(raw.cols()) = raw;
  return x;
}

inline double rmse(const Eigen::Ref<const Eigen::VectorXd> &pred,
                   const Eigen::Ref<const Eigen::VectorXd> &truth) {
  detail::require(pred.size() == truth.size(), "rmse: length mismatch");
  if (pred.size() == 0) {
    return 0.0;
  }
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

} // namespace vdecor
