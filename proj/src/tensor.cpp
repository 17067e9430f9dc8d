#include "unforge/tensor.hpp"

#include "unforge/errors.hpp"

#include <numeric>

namespace unforge {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ArgumentError("tensor shape must have at least one dimension");
  for (Index d : shape_)
    if (d <= 0) throw ArgumentError("tensor dimensions must be positive");
  if (shape_size(shape_) != data_.size())
    throw StructuralMismatch("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape product " + std::to_string(shape_size(shape_)));
}

Tensor Tensor::zeros(Shape shape) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Vector::Zero(n));
}

Tensor Tensor::from_matrix(const RowMatrix& m) {
  return Tensor({m.rows(), m.cols()}, Eigen::Map<const Vector>(m.data(), m.size()));
}

Index Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  return data_.size() / shape_.back();
}

Index Tensor::cols() const { return shape_.back(); }

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  return Eigen::Map<const RowMatrix>(data_.data(), rows(), cols());
}

bool Tensor::all_finite() const { return data_.allFinite(); }

}  // namespace unforge
