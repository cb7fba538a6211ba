#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

namespace carbonflex {

/// Static k-d tree over fixed-dimension points for exact k-nearest-neighbour
/// queries under Euclidean distance. Equal distances are ordered by point
/// index, so results match a linear scan exactly.
class KdTree {
 public:
  struct Neighbor {
    std::size_t index;
    double distance;
  };

  KdTree() = default;

  explicit KdTree(std::vector<std::vector<double>> points) : points_(std::move(points)) {
    if (points_.empty()) return;
    dim_ = points_.front().size();
    std::vector<std::size_t> idx(points_.size());
    std::iota(idx.begin(), idx.end(), 0);
    nodes_.reserve(points_.size());
    root_ = build(idx, 0, idx.size(), 0);
  }

  std::size_t size() const { return points_.size(); }
  std::size_t dimension() const { return dim_; }

  std::vector<Neighbor> nearest(const std::vector<double>& query, std::size_t k) const {
    std::vector<Neighbor> out;
    k = std::min(k, points_.size());
    if (k == 0) return out;
    Heap heap;
    search(root_, query, k, heap);
    while (!heap.empty()) {
      out.push_back({heap.top().second, std::sqrt(heap.top().first)});
      heap.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Squared Euclidean distance; summed in dimension order.
  static double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      s += d * d;
    }
    return s;
  }

 private:
  struct Node {
    std::size_t point;
    std::size_t axis;
    int left = -1;
    int right = -1;
  };
  // Max-heap on (squared distance, index): top is the current worst neighbour.
  using Entry = std::pair<double, std::size_t>;
  using Heap = std::priority_queue<Entry>;

  int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, std::size_t depth) {
    if (lo >= hi) return -1;
    // Split on the axis of largest spread.
    std::size_t axis = depth % dim_;
    double best_spread = -1.0;
    for (std::size_t a = 0; a < dim_; ++a) {
      auto [mn, mx] = std::minmax_element(idx.begin() + lo, idx.begin() + hi, [&](std::size_t x, std::size_t y) {
        return points_[x][a] < points_[y][a];
      });
      const double spread = points_[*mx][a] - points_[*mn][a];
      if (spread > best_spread) {
        best_spread = spread;
        axis = a;
      }
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi, [&](std::size_t x, std::size_t y) {
      return points_[x][axis] < points_[y][axis];
    });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({idx[mid], axis});
    const int l = build(idx, lo, mid, depth + 1);
    const int r = build(idx, mid + 1, hi, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  void offer(Heap& heap, std::size_t k, double d2, std::size_t index) const {
    const Entry e{d2, index};
    if (heap.size() < k) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
  }

  void search(int node_id, const std::vector<double>& q, std::size_t k, Heap& heap) const {
    if (node_id < 0) return;
    const auto& node = nodes_[static_cast<std::size_t>(node_id)];
    const auto& p = points_[node.point];
    offer(heap, k, squared_distance(q, p), node.point);
    const double diff = q[node.axis] - p[node.axis];
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    search(near, q, k, heap);
    // Points on the far side are at least |diff| away; ties must still be visited.
    if (heap.size() < k || diff * diff <= heap.top().first) search(far, q, k, heap);
  }

  std::vector<std::vector<double>> points_;
  std::size_t dim_ = 0;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace carbonflex
