#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace unforge {

using Real = double;
using Index = Eigen::Index;
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);

// Dense row-major tensor of doubles. Rank-1 tensors view as a single row.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Vector data);

  static Tensor zeros(Shape shape);
  static Tensor from_matrix(const RowMatrix& m);

  const Shape& shape() const noexcept { return shape_; }
  const Vector& data() const noexcept { return data_; }
  Index size() const noexcept { return data_.size(); }

  // 2-D view; rank-1 tensors are [1, n], higher ranks fold leading dims.
  Index rows() const;
  Index cols() const;
  Eigen::Map<const RowMatrix> matrix() const;

  bool all_finite() const;

 private:
  Shape shape_;
  Vector data_;
};

}  // namespace unforge
