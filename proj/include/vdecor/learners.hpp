#pragma once

// Regression learners used on (transformed) data: ordinary least squares,
// k-nearest-neighbors, and bagged CART trees. None of them adds an intercept
// of its own; the first feature column plays that role.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "vdecor/dataset.hpp"
#include "vdecor/error.hpp"
#include "vdecor/parallel.hpp"

namespace vdecor {

enum class LearnerKind { Linear, Knn, BaggedTrees };

inline std::string to_string(LearnerKind k) {
  switch (k) {
  case LearnerKind::Linear:
    return "linear";
  case LearnerKind::Knn:
    return "knn";
  case LearnerKind::BaggedTrees:
    return "trees";
  }
  return "?";
}

inline LearnerKind parse_learner_kind(const std::string &name) {
  if (name == "linear" || name == "lm") {
    return LearnerKind::Linear;
  }
  if (name == "knn") {
    return LearnerKind::Knn;
  }
  if (name == "trees" || name == "rf" || name == "bagged_trees") {
    return LearnerKind::BaggedTrees;
  }
  throw InvalidArgument("unknown learner '" + name + "' (expected linear|knn|trees)");
}

struct LearnerSpec {
  LearnerKind kind = LearnerKind::Linear;
  Index k = 10;        // knn neighbors
  Index trees = 64;
  Index min_leaf = 5;  // minimum rows per leaf
  Index mtry = 0;      // features tried per split; 0 means max(1, p / 3)
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(k >= 1, "knn k must be positive");
    detail::require(trees >= 1, "tree count must be positive");
    detail::require(min_leaf >= 1, "min_leaf must be positive");
    detail::require(mtry >= 0, "mtry must be non-negative");
  }

  friend bool operator==(const LearnerSpec &, const LearnerSpec &) = default;
};

struct FitReport {
  double train_rmse = 0.0;
  LearnerSpec spec;
  double wall_seconds = 0.0;
};

class LinearModel {
public:
  static constexpr double kRidge = 1e-8;

  void fit(const Eigen::Ref<const Eigen::MatrixXd> &x, const Eigen::Ref<const Eigen::VectorXd> &y) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() == x.cols()) {
      coef_ = qr.solve(y);
      return;
    }
    // rank deficient: tiny ridge on the normal equations
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += kRidge;
    coef_ = gram.ldlt().solve(x.transpose() * y);
  }

  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd> &x) const { return x * coef_; }

  const Eigen::VectorXd &coefficients() const { return coef_; }
  void set_coefficients(Eigen::VectorXd c) { coef_ = std::move(c); }

private:
  Eigen::VectorXd coef_;
};

/// Mean response of the k nearest training rows in feature space; distance
/// ties go to the lower training row.
class KnnRegressor {
public:
  explicit KnnRegressor(Index k = 10) : k_(k) {}

  void fit(const Eigen::Ref<const Eigen::MatrixXd> &x, const Eigen::Ref<const Eigen::VectorXd> &y) {
    x_ = x;
    y_ = y;
  }

  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd> &q) const {
    const Index n = x_.rows();
    const Index k = std::min(k_, n);
    Eigen::VectorXd out(q.rows());
    std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n));
    for (Index r = 0; r < q.rows(); ++r) {
      for (Index i = 0; i < n; ++i) {
        dist[static_cast<std::size_t>(i)] = {(x_.row(i) - q.row(r)).squaredNorm(), i};
      }
      std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
      double s = 0.0;
      for (Index j = 0; j < k; ++j) {
        s += y_(dist[static_cast<std::size_t>(j)].second);
      }
      out(r) = s / static_cast<double>(k);
    }
    return out;
  }

  Index k() const { return k_; }
  const Eigen::MatrixXd &train_x() const { return x_; }
  const Eigen::VectorXd &train_y() const { return y_; }

private:
  Index k_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
};

/// CART regression tree: variance-reduction splits over sorted unique
/// values, midpoint thresholds, `x <= threshold` goes left.
class RegressionTree {
public:
  struct Node {
    Index feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    Index left = -1;
    Index right = -1;
    double value = 0.0;
  };

  void fit(const Eigen::MatrixXd &x, const Eigen::VectorXd &y, std::vector<Index> rows,
           Index mtry, Index min_leaf, std::mt19937_64 &rng) {
    nodes_.clear();
    features_.resize(static_cast<std::size_t>(x.cols()));
    std::iota(features_.begin(), features_.end(), Index{0});
    grow(x, y, rows, 0, static_cast<Index>(rows.size()), std::clamp<Index>(mtry, 1, x.cols()),
         min_leaf, rng);
  }

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd> &row) const {
    Index id = 0;
    while (nodes_[static_cast<std::size_t>(id)].feature >= 0) {
      const Node &nd = nodes_[static_cast<std::size_t>(id)];
      id = row(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  const std::vector<Node> &nodes() const { return nodes_; }
  void set_nodes(std::vector<Node> nodes) { nodes_ = std::move(nodes); }

private:
  Index grow(const Eigen::MatrixXd &x, const Eigen::VectorXd &y, std::vector<Index> &rows,
             Index begin, Index end, Index mtry, Index min_leaf, std::mt19937_64 &rng) {
    const Index id = static_cast<Index>(nodes_.size());
    nodes_.push_back(Node{});
    const Index m = end - begin;
    double sum = 0.0;
    for (Index i = begin; i < end; ++i) {
      sum += y(rows[static_cast<std::size_t>(i)]);
    }
    nodes_[static_cast<std::size_t>(id)].value = sum / static_cast<double>(m);
    if (m < 2 * min_leaf) {
      return id;
    }

    // partial Fisher-Yates: first mtry entries become the candidate features
    for (Index j = 0; j < mtry; ++j) {
      std::uniform_int_distribution<Index> pick(j, static_cast<Index>(features_.size()) - 1);
      std::swap(features_[static_cast<std::size_t>(j)], features_[static_cast<std::size_t>(pick(rng))]);
    }

    const double base = sum * sum / static_cast<double>(m);
    double best_gain = 1e-12 * std::max(1.0, std::abs(base));
    Index best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, double>> vals(static_cast<std::size_t>(m));
    for (Index j = 0; j < mtry; ++j) {
      const Index f = features_[static_cast<std::size_t>(j)];
      for (Index i = 0; i < m; ++i) {
        const Index r = rows[static_cast<std::size_t>(begin + i)];
        vals[static_cast<std::size_t>(i)] = {x(r, f), y(r)};
      }
      std::sort(vals.begin(), vals.end());
      double left_sum = 0.0;
      for (Index i = 0; i + 1 < m; ++i) {
        left_sum += vals[static_cast<std::size_t>(i)].second;
        const Index nl = i + 1;
        const Index nr = m - nl;
        if (nl < min_leaf || nr < min_leaf) {
          continue;
        }
        const double lo = vals[static_cast<std::size_t>(i)].first;
        const double hi = vals[static_cast<std::size_t>(i + 1)].first;
        if (!(lo < hi)) {
          continue;
        }
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(nl) +
                            right_sum * right_sum / static_cast<double>(nr) - base;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = lo + 0.5 * (hi - lo);
        }
      }
    }
    if (best_feature < 0) {
      return id;
    }
    auto mid_it = std::partition(rows.begin() + begin, rows.begin() + end, [&](Index r) {
      return x(r, best_feature) <= best_threshold;
    });
    const Index mid = static_cast<Index>(mid_it - rows.begin());
    const Index left = grow(x, y, rows, begin, mid, mtry, min_leaf, rng);
    const Index right = grow(x, y, rows, mid, end, mtry, min_leaf, rng);
    Node &nd = nodes_[static_cast<std::size_t>(id)];
    nd.feature = best_feature;
    nd.threshold = best_threshold;
    nd.left = left;
    nd.right = right;
    return id;
  }

  std::vector<Node> nodes_;
  std::vector<Index> features_;
};

/// Bootstrap-aggregated regression trees. Tree t draws from its own stream
/// seeded by (seed, t), so results do not depend on the thread count.
class BaggedTrees {
public:
  BaggedTrees() = default;
  BaggedTrees(Index trees, Index min_leaf, Index mtry, std::uint64_t seed)
      : trees_(trees), min_leaf_(min_leaf), mtry_(mtry), seed_(seed) {}

  void fit(const Eigen::MatrixXd &x, const Eigen::VectorXd &y, unsigned threads = 1) {
    const Index n = x.rows();
    const Index mtry = mtry_ > 0 ? mtry_ : std::max<Index>(1, x.cols() / 3);
    forest_.assign(static_cast<std::size_t>(trees_), RegressionTree{});
    parallel_for(static_cast<std::size_t>(trees_), threads, [&](std::size_t t) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                        static_cast<std::uint32_t>(t)};
      std::mt19937_64 rng(seq);
      std::uniform_int_distribution<Index> draw(0, n - 1);
      std::vector<Index> rows(static_cast<std::size_t>(n));
      for (Index &r : rows) {
        r = draw(rng);
      }
      forest_[t].fit(x, y, std::move(rows), mtry, min_leaf_, rng);
    });
  }

  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd> &q) const {
    Eigen::VectorXd out(q.rows());
    for (Index r = 0; r < q.rows(); ++r) {
      double s = 0.0;
      for (const auto &tree : forest_) {
        s += tree.predict_row(q.row(r));
      }
      out(r) = s / static_cast<double>(forest_.size());
    }
    return out;
  }

  const std::vector<RegressionTree> &forest() const { return forest_; }
  void set_forest(std::vector<RegressionTree> forest) { forest_ = std::move(forest); }

private:
  Index trees_ = 64;
  Index min_leaf_ = 5;
  Index mtry_ = 0;
  std::uint64_t seed_ = 1;
  std::vector<RegressionTree> forest_;
};

/// A learner of any built-in kind plus its fitted state.
class Learner {
public:
  using State = std::variant<std::monostate, LinearModel, KnnRegressor, BaggedTrees>;

  Learner() = default;
  explicit Learner(LearnerSpec spec) : spec_(spec) { spec_.validate(); }
  Learner(LearnerSpec spec, State state, Index features)
      : spec_(spec), state_(std::move(state)), features_(features) {}

  FitReport fit(const Eigen::MatrixXd &x, const Eigen::VectorXd &y, unsigned threads = 1) {
    detail::require(x.rows() == y.size(), "feature rows and response length differ");
    detail::require(x.rows() >= 2, "need at least two training rows");
    const auto start = std::chrono::steady_clock::now();
    features_ = x.cols();
    switch (spec_.kind) {
    case LearnerKind::Linear: {
      LinearModel m;
      m.fit(x, y);
      state_ = std::move(m);
      break;
    }
    case LearnerKind::Knn: {
      KnnRegressor m(spec_.k);
      m.fit(x, y);
      state_ = std::move(m);
      break;
    }
    case LearnerKind::BaggedTrees: {
      BaggedTrees m(spec_.trees, spec_.min_leaf, spec_.mtry, spec_.seed);
      m.fit(x, y, threads);
      state_ = std::move(m);
      break;
    }
    }
    FitReport report;
    report.spec = spec_;
    report.train_rmse = rmse(predict(x), y);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
  }

  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd> &x) const {
    detail::require(!fitted() || x.cols() == features_,
                    "learner was fitted on " + std::to_string(features_) + " features, got " +
                        std::to_string(x.cols()));
    return std::visit(
        [&](const auto &m) -> Eigen::VectorXd {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, std::monostate>) {
            throw InvalidArgument("learner used before fit");
          } else {
            return m.predict(x);
          }
        },
        state_);
  }

  bool fitted() const { return !std::holds_alternative<std::monostate>(state_); }
  const LearnerSpec &spec() const { return spec_; }
  const State &state() const { return state_; }
  Index feature_count() const { return features_; }

private:
  LearnerSpec spec_;
  State state_;
  Index features_ = 0;
};

} // namespace vdecor
