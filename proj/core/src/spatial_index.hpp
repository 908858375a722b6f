#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace vibus::detail {

/// Static 3D kd-tree over a point set for exact k-nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Eigen::Vector3d> points);

  /// Indices of the k nearest points to q, closest first; ties broken by
  /// lower index. Returns fewer when the set is smaller than k.
  std::vector<std::size_t> knn(const Eigen::Vector3d& q, std::size_t k) const;
  std::size_t nearest(const Eigen::Vector3d& q) const;

  const std::vector<Eigen::Vector3d>& points() const { return points_; }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range into order_
    int axis = -1;                   // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };
  int build(std::size_t begin, std::size_t end);

  std::vector<Eigen::Vector3d> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace vibus::detail
