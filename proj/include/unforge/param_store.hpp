#pragma once

#include "unforge/tensor.hpp"

#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace unforge {

struct ParamEntry {
  std::string name;
  Shape shape;
  Index offset = 0;
  Index size = 0;
};

// Names, shapes and flat offsets of a store. Shared between congruent stores.
class ParamLayout {
 public:
  explicit ParamLayout(std::vector<std::pair<std::string, Shape>> entries);

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  Index total_len() const noexcept { return total_; }
  // Throws ArgumentError for unknown names.
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
  Index total_ = 0;
};

// Ordered, named parameter tensors stored as one contiguous vector in
// manifest order. Copies share the layout and own their values.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::vector<std::pair<std::string, Tensor>> entries);
  ParamStore(std::shared_ptr<const ParamLayout> layout, Vector values);

  static ParamStore zeros_like(const ParamStore& other);

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return layout_; }
  const std::vector<ParamEntry>& entries() const { return layout_->entries(); }
  std::size_t num_entries() const { return layout_ ? layout_->entries().size() : 0; }
  Index total_len() const noexcept { return values_.size(); }

  const Vector& flat() const noexcept { return values_; }
  Vector& flat() noexcept { return values_; }

  Tensor tensor(std::size_t i) const;
  Tensor tensor(std::string_view name) const { return tensor(layout_->index_of(name)); }
  Eigen::Map<const RowMatrix> matrix(std::size_t i) const;
  Eigen::Map<RowMatrix> matrix(std::size_t i);

  bool congruent(const ParamStore& other) const;
  bool all_finite() const { return values_.allFinite(); }

  bool operator==(const ParamStore& other) const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
  Vector values_;
};

// Same structure as ParamStore; holds dL/dtheta.
using GradStore = ParamStore;

// Throws StructuralMismatch unless a and b are congruent.
void require_congruent(const ParamStore& a, const ParamStore& b, std::string_view op);

// a*x + b*y elementwise.
ParamStore axpy(Real a, const ParamStore& x, Real b, const ParamStore& y);

// Sum of x_i*y_i, accumulated left to right in manifest order.
Real dot(const ParamStore& x, const ParamStore& y);

Real l2_norm(const ParamStore& x);
Real l2_distance(const ParamStore& x, const ParamStore& y);

// Cosine between the two flattened parameter vectors.
Real cosine(const ParamStore& x, const ParamStore& y);

}  // namespace unforge
