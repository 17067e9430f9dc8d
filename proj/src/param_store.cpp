#include "unforge/param_store.hpp"

#include "unforge/errors.hpp"

#include <cmath>

namespace unforge {

ParamLayout::ParamLayout(std::vector<std::pair<std::string, Shape>> entries) {
  entries_.reserve(entries.size());
  for (auto& [name, shape] : entries) {
    if (by_name_.count(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
    ParamEntry e;
    e.name = name;
    e.size = shape_size(shape);
    if (shape.empty() || e.size <= 0) throw ArgumentError("parameter '" + name + "' has empty shape");
    e.shape = std::move(shape);
    e.offset = total_;
    total_ += e.size;
    by_name_.emplace(e.name, entries_.size());
    entries_.push_back(std::move(e));
  }
}

std::size_t ParamLayout::index_of(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ArgumentError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParamLayout::contains(std::string_view name) const { return by_name_.count(std::string(name)) > 0; }

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape)
      return false;
  }
  return true;
}

ParamStore::ParamStore(std::vector<std::pair<std::string, Tensor>> entries) {
  std::vector<std::pair<std::string, Shape>> shapes;
  shapes.reserve(entries.size());
  for (const auto& [name, t] : entries) shapes.emplace_back(name, t.shape());
  layout_ = std::make_shared<const ParamLayout>(std::move(shapes));
  values_.resize(layout_->total_len());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = layout_->entries()[i];
    values_.segment(e.offset, e.size) = entries[i].second.data();
  }
}

ParamStore::ParamStore(std::shared_ptr<const ParamLayout> layout, Vector values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_) throw ArgumentError("null parameter layout");
  if (values_.size() != layout_->total_len())
    throw StructuralMismatch("value count does not match parameter layout");
}

ParamStore ParamStore::zeros_like(const ParamStore& other) {
  return ParamStore(other.layout_, Vector::Zero(other.total_len()));
}

Tensor ParamStore::tensor(std::size_t i) const {
  const auto& e = layout_->entries().at(i);
  return Tensor(e.shape, values_.segment(e.offset, e.size));
}

namespace {
Index entry_rows(const ParamEntry& e) { return e.shape.size() == 1 ? 1 : e.size / e.shape.back(); }
}  // namespace

Eigen::Map<const RowMatrix> ParamStore::matrix(std::size_t i) const {
  const auto& e = layout_->entries().at(i);
  return Eigen::Map<const RowMatrix>(values_.data() + e.offset, entry_rows(e), e.shape.back());
}

Eigen::Map<RowMatrix> ParamStore::matrix(std::size_t i) {
  const auto& e = layout_->entries().at(i);
  return Eigen::Map<RowMatrix>(values_.data() + e.offset, entry_rows(e), e.shape.back());
}

bool ParamStore::congruent(const ParamStore& other) const {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

bool ParamStore::operator==(const ParamStore& other) const {
  return congruent(other) && values_ == other.values_;
}

void require_congruent(const ParamStore& a, const ParamStore& b, std::string_view op) {
  if (!a.congruent(b))
    throw StructuralMismatch(std::string(op) + ": parameter stores are not congruent");
}

ParamStore axpy(Real a, const ParamStore& x, Real b, const ParamStore& y) {
  require_congruent(x, y, "axpy");
  return ParamStore(x.layout_ptr(), a * x.flat() + b * y.flat());
}

Real dot(const ParamStore& x, const ParamStore& y) {
  require_congruent(x, y, "dot");
  const Real* px = x.flat().data();
  const Real* py = y.flat().data();
  Real acc = 0.0;
  for (Index i = 0, n = x.total_len(); i < n; ++i) acc += px[i] * py[i];
  return acc;
}

Real l2_norm(const ParamStore& x) { return std::sqrt(dot(x, x)); }

Real l2_distance(const ParamStore& x, const ParamStore& y) { return l2_norm(axpy(1.0, x, -1.0, y)); }

Real cosine(const ParamStore& x, const ParamStore& y) {
  const Real nx = l2_norm(x);
  const Real ny = l2_norm(y);
  if (nx == 0.0 || ny == 0.0) throw DegenerateDirection("cosine of a zero vector");
  return dot(x, y) / (nx * ny);
}

}  // namespace unforge
