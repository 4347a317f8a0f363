#pragma once

// Spatial geometry: point sets, an exact k-d tree, max-min ordering and
// nearest-earlier-neighbor conditioning sets.
//
// Every distance tie anywhere in this header is broken by the lower original
// point index, so all results are fully deterministic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vdecor/error.hpp"

namespace vdecor {

using Index = Eigen::Index;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n points in R^d, stored row-major so each point is contiguous.
class LocationSet {
public:
  LocationSet() = default;

  explicit LocationSet(RowMatrix coords) : coords_(std::move(coords)) {
    detail::require(coords_.rows() >= 1, "location set must contain at least one point");
    detail::require(coords_.cols() >= 1, "locations need at least one coordinate");
    for (Index i = 0; i < coords_.rows(); ++i) {
      for (Index j = 0; j < coords_.cols(); ++j) {
        if (!std::isfinite(coords_(i, j))) {
          throw InvalidArgument("non-finite coordinate at row " + std::to_string(i));
        }
      }
    }
  }

  Index size() const { return coords_.rows(); }
  Index dim() const { return coords_.cols(); }

  std::span<const double> point(Index i) const {
    return {coords_.data() + i * coords_.cols(), static_cast<std::size_t>(coords_.cols())};
  }

  const RowMatrix &coords() const { return coords_; }

  /// Rows selected by `rows`, in that order.
  LocationSet subset(std::span<const Index> rows) const {
    RowMatrix out(static_cast<Index>(rows.size()), dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.row(static_cast<Index>(r)) = coords_.row(rows[r]);
    }
    return LocationSet(std::move(out));
  }

private:
  RowMatrix coords_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

/// Permutation: perm[position] = original index.
struct Ordering {
  std::vector<Index> perm;

  Index size() const { return static_cast<Index>(perm.size()); }

  /// inverse[original index] = position.
  std::vector<Index> inverse() const {
    std::vector<Index> inv(perm.size());
    for (std::size_t p = 0; p < perm.size(); ++p) {
      inv[static_cast<std::size_t>(perm[p])] = static_cast<Index>(p);
    }
    return inv;
  }

  bool is_valid(Index n) const {
    if (size() != n) {
      return false;
    }
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (Index p : perm) {
      if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)]) {
        return false;
      }
      seen[static_cast<std::size_t>(p)] = 1;
    }
    return true;
  }
};

/// Neighbor lists per ordered position, in compressed-row form. Entries are
/// original point indices sorted by increasing distance.
struct ConditioningSets {
  std::vector<std::size_t> offsets{0};
  std::vector<Index> neighbors;
  Index cap = 0;

  Index size() const { return static_cast<Index>(offsets.size()) - 1; }

  std::span<const Index> operator[](Index position) const {
    const auto b = offsets[static_cast<std::size_t>(position)];
    const auto e = offsets[static_cast<std::size_t>(position) + 1];
    return {neighbors.data() + b, e - b};
  }

  void push_back(std::span<const Index> set) {
    neighbors.insert(neighbors.end(), set.begin(), set.end());
    offsets.push_back(neighbors.size());
  }
};

/// Neighbor returned by a k-d tree query.
struct Neighbor {
  double dist2;
  Index index;

  friend bool operator<(const Neighbor &a, const Neighbor &b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

/// Exact k-d tree over a LocationSet. Immutable after construction, so
/// concurrent queries are safe. The referenced LocationSet must outlive it.
///
/// Optionally carries a per-point rank; queries can then be restricted to
/// points with rank < limit, which is how nearest *earlier-ordered*
/// neighbors are found without rebuilding the tree.
class KdTree {
public:
  static constexpr Index kLeafSize = 12;

  explicit KdTree(const LocationSet &locs, std::vector<Index> ranks = {})
      : locs_(&locs), ranks_(std::move(ranks)) {
    detail::require(ranks_.empty() || static_cast<Index>(ranks_.size()) == locs.size(),
                    "rank vector length must match point count");
    order_.resize(static_cast<std::size_t>(locs.size()));
    std::iota(order_.begin(), order_.end(), Index{0});
    nodes_.reserve(static_cast<std::size_t>(2 * locs.size() / kLeafSize + 2));
    build(0, locs.size());
  }

  const LocationSet &locations() const { return *locs_; }

  /// The k nearest points to `query` by Euclidean distance, sorted by
  /// (distance, index). Only points with rank < rank_limit are eligible when
  /// the tree carries ranks.
  std::vector<Neighbor> knn(std::span<const double> query, Index k,
                            Index rank_limit = std::numeric_limits<Index>::max()) const {
    detail::require(static_cast<Index>(query.size()) == locs_->dim(),
                    "query dimension does not match index");
    std::vector<Neighbor> heap;
    if (k <= 0) {
      return heap;
    }
    heap.reserve(static_cast<std::size_t>(k) + 1);
    knn_visit(0, query, k, rank_limit, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// Calls fn(index, dist2) for every point with dist2 < radius2.
  template <typename Fn>
  void for_each_within(std::span<const double> query, double radius2, Fn &&fn) const {
    radius_visit(0, query, radius2, fn);
  }

private:
  struct Node {
    Index begin;
    Index end;
    Index left = -1;
    Index right = -1;
    Index min_rank = 0;
    std::size_t box = 0; // offset into boxes_: d lows then d highs
  };

  Index build(Index begin, Index end) {
    const Index d = locs_->dim();
    const Index id = static_cast<Index>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    const std::size_t box = boxes_.size();
    boxes_.resize(box + static_cast<std::size_t>(2 * d));
    for (Index k = 0; k < d; ++k) {
      boxes_[box + k] = std::numeric_limits<double>::infinity();
      boxes_[box + d + k] = -std::numeric_limits<double>::infinity();
    }
    Index min_rank = std::numeric_limits<Index>::max();
    for (Index i = begin; i < end; ++i) {
      const auto p = locs_->point(order_[static_cast<std::size_t>(i)]);
      for (Index k = 0; k < d; ++k) {
        boxes_[box + k] = std::min(boxes_[box + k], p[k]);
        boxes_[box + d + k] = std::max(boxes_[box + d + k], p[k]);
      }
      if (!ranks_.empty()) {
        min_rank = std::min(min_rank, ranks_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
      }
    }
    nodes_[static_cast<std::size_t>(id)].box = box;
    nodes_[static_cast<std::size_t>(id)].min_rank = ranks_.empty() ? 0 : min_rank;

    if (end - begin <= kLeafSize) {
      return id;
    }
    Index axis = 0;
    double widest = -1.0;
    for (Index k = 0; k < d; ++k) {
      const double w = boxes_[box + d + k] - boxes_[box + k];
      if (w > widest) {
        widest = w;
        axis = k;
      }
    }
    if (widest <= 0.0) {
      return id; // all points coincide
    }
    const Index mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](Index a, Index b) {
                       const double ca = locs_->point(a)[axis];
                       const double cb = locs_->point(b)[axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const Index left = build(begin, mid);
    const Index right = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  double box_distance2(const Node &node, std::span<const double> q) const {
    const Index d = locs_->dim();
    double s = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double lo = boxes_[node.box + k];
      const double hi = boxes_[node.box + d + k];
      double diff = 0.0;
      if (q[k] < lo) {
        diff = lo - q[k];
      } else if (q[k] > hi) {
        diff = q[k] - hi;
      }
      s += diff * diff;
    }
    return s;
  }

  void knn_visit(Index id, std::span<const double> q, Index k, Index rank_limit,
                 std::vector<Neighbor> &heap) const {
    const Node &node = nodes_[static_cast<std::size_t>(id)];
    if (!ranks_.empty() && node.min_rank >= rank_limit) {
      return;
    }
    // Strict comparison keeps equal-distance boxes in play for index ties.
    if (static_cast<Index>(heap.size()) == k && box_distance2(node, q) > heap.front().dist2) {
      return;
    }
    if (node.left < 0) {
      for (Index i = node.begin; i < node.end; ++i) {
        const Index pt = order_[static_cast<std::size_t>(i)];
        if (!ranks_.empty() && ranks_[static_cast<std::size_t>(pt)] >= rank_limit) {
          continue;
        }
        const Neighbor cand{squared_distance(q, locs_->point(pt)), pt};
        if (static_cast<Index>(heap.size()) < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const Node &l = nodes_[static_cast<std::size_t>(node.left)];
    const Node &r = nodes_[static_cast<std::size_t>(node.right)];
    if (box_distance2(l, q) <= box_distance2(r, q)) {
      knn_visit(node.left, q, k, rank_limit, heap);
      knn_visit(node.right, q, k, rank_limit, heap);
    } else {
      knn_visit(node.right, q, k, rank_limit, heap);
      knn_visit(node.left, q, k, rank_limit, heap);
    }
  }

  template <typename Fn>
  void radius_visit(Index id, std::span<const double> q, double radius2, Fn &fn) const {
    const Node &node = nodes_[static_cast<std::size_t>(id)];
    if (box_distance2(node, q) >= radius2) {
      return;
    }
    if (node.left < 0) {
      for (Index i = node.begin; i < node.end; ++i) {
        const Index pt = order_[static_cast<std::size_t>(i)];
        const double d2 = squared_distance(q, locs_->point(pt));
        if (d2 < radius2) {
          fn(pt, d2);
        }
      }
      return;
    }
    radius_visit(node.left, q, radius2, fn);
    radius_visit(node.right, q, radius2, fn);
  }

  const LocationSet *locs_;
  std::vector<Index> ranks_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
  std::vector<double> boxes_;
};

/// Convenience: an unrestricted index over all points.
inline KdTree build_knn_index(const LocationSet &locs) { return KdTree(locs); }

/// Index of the point nearest the coordinate centroid.
inline Index nearest_to_centroid(const LocationSet &locs) {
  std::vector<double> centroid(static_cast<std::size_t>(locs.dim()), 0.0);
  for (Index i = 0; i < locs.size(); ++i) {
    const auto p = locs.point(i);
    for (std::size_t k = 0; k < centroid.size(); ++k) {
      centroid[k] += p[k];
    }
  }
  for (double &c : centroid) {
    c /= static_cast<double>(locs.size());
  }
  Index best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < locs.size(); ++i) {
    const double d2 = squared_distance(centroid, locs.point(i));
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

/// Greedy max-min ordering. Starts at the point nearest the centroid; each
/// next point maximizes its minimum distance to the points already ordered.
///
/// Exact, but avoids the O(n^2) scan: candidate keys live in a lazy max-heap
/// and, when a point is picked at separation r, only points inside the ball
/// of radius r around it can have their key lowered, so only those are
/// touched. For well-spread points this is O(n log^2 n) overall.
inline Ordering maxmin_order(const LocationSet &locs) {
  const Index n = locs.size();
  Ordering ord;
  ord.perm.reserve(static_cast<std::size_t>(n));
  const Index first = nearest_to_centroid(locs);
  ord.perm.push_back(first);
  if (n == 1) {
    return ord;
  }

  struct Entry {
    double key;
    Index index;
    // priority_queue pops the largest: larger key first, then lower index.
    bool operator<(const Entry &o) const {
      return key < o.key || (key == o.key && index > o.index);
    }
  };

  std::vector<double> key(static_cast<std::size_t>(n));
  std::vector<char> picked(static_cast<std::size_t>(n), 0);
  picked[static_cast<std::size_t>(first)] = 1;
  std::vector<Entry> initial;
  initial.reserve(static_cast<std::size_t>(n));
  const auto first_pt = locs.point(first);
  for (Index i = 0; i < n; ++i) {
    key[static_cast<std::size_t>(i)] = squared_distance(first_pt, locs.point(i));
    if (i != first) {
      initial.push_back({key[static_cast<std::size_t>(i)], i});
    }
  }
  std::priority_queue<Entry> heap(std::less<Entry>{}, std::move(initial));
  const KdTree tree(locs);

  while (static_cast<Index>(ord.perm.size()) < n) {
    const Entry top = heap.top();
    heap.pop();
    const auto ti = static_cast<std::size_t>(top.index);
    if (picked[ti] || top.key != key[ti]) {
      continue; // stale
    }
    picked[ti] = 1;
    ord.perm.push_back(top.index);
    tree.for_each_within(locs.point(top.index), top.key, [&](Index q, double d2) {
      const auto qi = static_cast<std::size_t>(q);
      if (!picked[qi] && d2 < key[qi]) {
        key[qi] = d2;
        heap.push({d2, q});
      }
    });
  }
  return ord;
}

/// For each ordered position i, the min(i, cap) nearest points among
/// positions 0..i-1. Set 0 is empty.
inline ConditioningSets conditioning_sets(const LocationSet &locs, const Ordering &ord,
                                          Index cap) {
  detail::require(cap >= 1, "conditioning set size C must be at least 1");
  detail::require(ord.is_valid(locs.size()), "ordering is not a permutation of the locations");
  const KdTree tree(locs, ord.inverse());
  ConditioningSets sets;
  sets.cap = cap;
  sets.offsets.reserve(static_cast<std::size_t>(locs.size()) + 1);
  sets.neighbors.reserve(static_cast<std::size_t>(locs.size() * std::min<Index>(cap, locs.size())));
  std::vector<Index> buffer;
  for (Index pos = 0; pos < locs.size(); ++pos) {
    const auto found = tree.knn(locs.point(ord.perm[static_cast<std::size_t>(pos)]),
                                std::min(pos, cap), pos);
    buffer.clear();
    for (const auto &nb : found) {
      buffer.push_back(nb.index);
    }
    sets.push_back(buffer);
  }
  return sets;
}

} // namespace vdecor
