#include "unforge/autodiff.hpp"

#include "unforge/errors.hpp"

#include <cmath>

namespace unforge {

namespace {

constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Real kGeluA = 0.044715;

Graph& graph_of(Var a) {
  if (!a.graph) throw ArgumentError("operation on an unattached Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw StructuralMismatch("operands belong to different graphs");
  return graph_of(a);
}

void require_same_shape(const RowMatrix& a, const RowMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw StructuralMismatch(std::string(op) + ": shape mismatch");
}

Real log_sigmoid_scalar(Real x) {
  // log(sigmoid(x)) = -softplus(-x)
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

Real sigmoid_scalar(Real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const RowMatrix& Var::value() const { return graph->value(*this); }

Real Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw ArgumentError("item() on a non-scalar node");
  return v(0, 0);
}

void Graph::bind(const ParamStore& params) {
  if (params_ && params_ != &params) throw ArgumentError("graph already bound to another store");
  params_ = &params;
  param_nodes_.assign(params.num_entries(), -1);
}

Var Graph::param(std::size_t entry) {
  if (!params_) throw ArgumentError("graph has no bound parameter store");
  if (entry >= param_nodes_.size()) throw ArgumentError("parameter index out of range");
  if (param_nodes_[entry] >= 0) return Var{this, param_nodes_[entry]};
  Var v = push(Op::Param, RowMatrix(params_->matrix(entry)), {});
  nodes_[v.id].param_entry = static_cast<int>(entry);
  param_nodes_[entry] = v.id;
  return v;
}

Var Graph::param(std::string_view name) {
  if (!params_) throw ArgumentError("graph has no bound parameter store");
  return param(params_->layout().index_of(name));
}

Var Graph::constant(RowMatrix value) { return push(Op::Constant, std::move(value), {}); }

Var Graph::scalar(Real value) {
  RowMatrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Graph::push(Op op, RowMatrix value, std::vector<int> inputs) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

GradStore Graph::backward(Var loss) {
  if (loss.graph != this) throw ArgumentError("loss node belongs to another graph");
  if (!params_) throw ArgumentError("graph has no bound parameter store");
  const auto& lv = nodes_.at(loss.id).value;
  if (lv.size() != 1) throw ArgumentError("backward requires a scalar loss");

  std::vector<RowMatrix> grads(nodes_.size());
  std::vector<char> has(nodes_.size(), 0);
  auto acc = [&](int id) -> RowMatrix& {
    if (!has[id]) {
      grads[id] = RowMatrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
      has[id] = 1;
    }
    return grads[id];
  };
  acc(loss.id)(0, 0) = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    if (!has[id]) continue;
    const Node& n = nodes_[id];
    const RowMatrix& g = grads[id];
    const auto& in = n.inputs;
    switch (n.op) {
      case Op::Constant:
      case Op::Param:
        break;
      case Op::MatMul: {
        const RowMatrix& a = nodes_[in[0]].value;
        const RowMatrix& b = nodes_[in[1]].value;
        acc(in[0]).noalias() += g * b.transpose();
        acc(in[1]).noalias() += a.transpose() * g;
        break;
      }
      case Op::MatMulNT: {
        const RowMatrix& a = nodes_[in[0]].value;
        const RowMatrix& b = nodes_[in[1]].value;
        acc(in[0]).noalias() += g * b;
        acc(in[1]).noalias() += g.transpose() * a;
        break;
      }
      case Op::Add:
        acc(in[0]) += g;
        acc(in[1]) += g;
        break;
      case Op::Sub:
        acc(in[0]) += g;
        acc(in[1]) -= g;
        break;
      case Op::AddRow:
        acc(in[0]) += g;
        acc(in[1]) += g.colwise().sum();
        break;
      case Op::Scale:
        acc(in[0]) += n.scalar * g;
        break;
      case Op::AddN:
        for (int i : in) acc(i) += g;
        break;
      case Op::Gelu: {
        const RowMatrix& x = nodes_[in[0]].value;
        RowMatrix& ga = acc(in[0]);
        for (Index i = 0; i < x.size(); ++i) {
          const Real xv = x.data()[i];
          const Real t = std::tanh(kGeluC * (xv + kGeluA * xv * xv * xv));
          const Real d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * xv * xv);
          ga.data()[i] += g.data()[i] * d;
        }
        break;
      }
      case Op::LayerNorm: {
        // aux holds xhat in columns [0, n) and 1/sigma in column n.
        const Index cols = n.value.cols();
        const RowMatrix& gain = nodes_[in[1]].value;
        RowMatrix& gx = acc(in[0]);
        RowMatrix& gg = acc(in[1]);
        RowMatrix& gb = acc(in[2]);
        for (Index r = 0; r < n.value.rows(); ++r) {
          auto xhat = n.aux.row(r).head(cols);
          const Real inv_sigma = n.aux(r, cols);
          auto gy = g.row(r);
          gg += gy.cwiseProduct(xhat);
          gb += gy;
          RowMatrix dxhat = gy.cwiseProduct(gain);
          const Real m1 = dxhat.mean();
          const Real m2 = dxhat.cwiseProduct(xhat).mean();
          gx.row(r) += inv_sigma * ((dxhat.array() - m1) - xhat.array() * m2).matrix();
        }
        break;
      }
      case Op::CausalSoftmax: {
        const RowMatrix& y = n.value;
        RowMatrix& ga = acc(in[0]);
        for (Index r = 0; r < y.rows(); ++r) {
          const Index k = std::min<Index>(r + 1, y.cols());
          const Real s = g.row(r).head(k).dot(y.row(r).head(k));
          ga.row(r).head(k) += (y.row(r).head(k).array() * (g.row(r).head(k).array() - s)).matrix();
        }
        break;
      }
      case Op::LogSoftmax: {
        // aux holds softmax probabilities.
        RowMatrix& ga = acc(in[0]);
        for (Index r = 0; r < g.rows(); ++r) {
          const Real s = g.row(r).sum();
          ga.row(r) += g.row(r) - s * n.aux.row(r);
        }
        break;
      }
      case Op::Embedding: {
        RowMatrix& gt = acc(in[0]);
        for (std::size_t k = 0; k < n.index.size(); ++k) gt.row(n.index[k]) += g.row(static_cast<Index>(k));
        break;
      }
      case Op::SliceCols:
        acc(in[0]).middleCols(static_cast<Index>(n.scalar), n.value.cols()) += g;
        break;
      case Op::ConcatCols: {
        Index start = 0;
        for (int i : in) {
          const Index c = nodes_[i].value.cols();
          acc(i) += g.middleCols(start, c);
          start += c;
        }
        break;
      }
      case Op::SelectRows: {
        RowMatrix& ga = acc(in[0]);
        for (std::size_t k = 0; k < n.index.size(); ++k) ga.row(n.index[k]) += g.row(static_cast<Index>(k));
        break;
      }
      case Op::Pick: {
        RowMatrix& ga = acc(in[0]);
        for (std::size_t k = 0; k < n.index.size(); ++k)
          ga(n.index[k], n.index2[k]) += g(static_cast<Index>(k), 0);
        break;
      }
      case Op::Sum:
        acc(in[0]).array() += g(0, 0);
        break;
      case Op::Mean: {
        const Real s = g(0, 0) / static_cast<Real>(nodes_[in[0]].value.size());
        acc(in[0]).array() += s;
        break;
      }
      case Op::WeightedSum:
        acc(in[0]) += g(0, 0) * n.weights;
        break;
      case Op::LogSigmoid: {
        const RowMatrix& x = nodes_[in[0]].value;
        RowMatrix& ga = acc(in[0]);
        for (Index i = 0; i < x.size(); ++i) ga.data()[i] += g.data()[i] * sigmoid_scalar(-x.data()[i]);
        break;
      }
      case Op::Opaque:
        throw CapabilityError("no derivative rule for opaque op '" + n.label + "'");
    }
  }

  GradStore out = ParamStore::zeros_like(*params_);
  for (std::size_t e = 0; e < param_nodes_.size(); ++e) {
    const int id = param_nodes_[e];
    if (id >= 0 && id <= loss.id && has[id]) out.matrix(e) = grads[id];
  }
  return out;
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const RowMatrix& x = a.value();
  const RowMatrix& y = b.value();
  if (x.cols() != y.rows()) throw StructuralMismatch("matmul: inner dimensions differ");
  RowMatrix out = x * y;
  return g.push(Op::MatMul, std::move(out), {a.id, b.id});
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const RowMatrix& x = a.value();
  const RowMatrix& y = b.value();
  if (x.cols() != y.cols()) throw StructuralMismatch("matmul_nt: inner dimensions differ");
  RowMatrix out = x * y.transpose();
  return g.push(Op::MatMulNT, std::move(out), {a.id, b.id});
}

Var operator+(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  RowMatrix out = a.value() + b.value();
  return g.push(Op::Add, std::move(out), {a.id, b.id});
}

Var operator-(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  RowMatrix out = a.value() - b.value();
  return g.push(Op::Sub, std::move(out), {a.id, b.id});
}

Var operator*(Real s, Var a) {
  Graph& g = graph_of(a);
  RowMatrix out = s * a.value();
  Var v = g.push(Op::Scale, std::move(out), {a.id});
  g.node(v).scalar = s;
  return v;
}

Var operator-(Var a) { return -1.0 * a; }

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  const RowMatrix& r = row.value();
  if (r.rows() != 1 || r.cols() != a.value().cols()) throw StructuralMismatch("add_row: bad row shape");
  RowMatrix out = a.value().rowwise() + r.row(0);
  return g.push(Op::AddRow, std::move(out), {a.id, row.id});
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ArgumentError("add_n of no terms");
  Graph& g = graph_of(terms[0]);
  RowMatrix out = terms[0].value();
  std::vector<int> ids{terms[0].id};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    graph_of(terms[0], terms[i]);
    require_same_shape(out, terms[i].value(), "add_n");
    out += terms[i].value();
    ids.push_back(terms[i].id);
  }
  return g.push(Op::AddN, std::move(out), std::move(ids));
}

Var gelu(Var a) {
  Graph& g = graph_of(a);
  const RowMatrix& x = a.value();
  RowMatrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const Real v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return g.push(Op::Gelu, std::move(out), {a.id});
}

Var layer_norm(Var x, Var gain, Var bias, Real eps) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const RowMatrix& in = x.value();
  const Index cols = in.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != cols || bias.value().rows() != 1 ||
      bias.value().cols() != cols)
    throw StructuralMismatch("layer_norm: gain/bias shape");
  RowMatrix aux(in.rows(), cols + 1);
  RowMatrix out(in.rows(), cols);
  for (Index r = 0; r < in.rows(); ++r) {
    const Real mu = in.row(r).mean();
    const Real var = (in.row(r).array() - mu).square().mean();
    const Real inv_sigma = 1.0 / std::sqrt(var + eps);
    aux.row(r).head(cols) = (in.row(r).array() - mu) * inv_sigma;
    aux(r, cols) = inv_sigma;
    out.row(r) = aux.row(r).head(cols).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  }
  Var v = g.push(Op::LayerNorm, std::move(out), {x.id, gain.id, bias.id});
  g.node(v).aux = std::move(aux);
  g.node(v).scalar = eps;
  return v;
}

Var causal_softmax(Var a) {
  Graph& g = graph_of(a);
  const RowMatrix& x = a.value();
  RowMatrix out = RowMatrix::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Index k = std::min<Index>(r + 1, x.cols());
    const Real mx = x.row(r).head(k).maxCoeff();
    out.row(r).head(k) = (x.row(r).head(k).array() - mx).exp().matrix();
    out.row(r).head(k) /= out.row(r).head(k).sum();
  }
  return g.push(Op::CausalSoftmax, std::move(out), {a.id});
}

Var log_softmax(Var a) {
  Graph& g = graph_of(a);
  const RowMatrix& x = a.value();
  RowMatrix out(x.rows(), x.cols());
  RowMatrix probs(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Real mx = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - mx).exp().matrix();
    const Real z = probs.row(r).sum();
    probs.row(r) /= z;
    out.row(r) = (x.row(r).array() - mx - std::log(z)).matrix();
  }
  Var v = g.push(Op::LogSoftmax, std::move(out), {a.id});
  g.node(v).aux = std::move(probs);
  return v;
}

Var embedding(Var table, std::span<const Index> ids) {
  Graph& g = graph_of(table);
  const RowMatrix& t = table.value();
  RowMatrix out(static_cast<Index>(ids.size()), t.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= t.rows()) throw ArgumentError("embedding id out of range");
    out.row(static_cast<Index>(k)) = t.row(ids[k]);
  }
  Var v = g.push(Op::Embedding, std::move(out), {table.id});
  g.node(v).index.assign(ids.begin(), ids.end());
  return v;
}

Var slice_cols(Var a, Index start, Index count) {
  Graph& g = graph_of(a);
  const RowMatrix& x = a.value();
  if (start < 0 || count <= 0 || start + count > x.cols()) throw ArgumentError("slice_cols out of range");
  RowMatrix out = x.middleCols(start, count);
  Var v = g.push(Op::SliceCols, std::move(out), {a.id});
  g.node(v).scalar = static_cast<Real>(start);
  return v;
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols of no parts");
  Graph& g = graph_of(parts[0]);
  const Index rows = parts[0].value().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    if (p.value().rows() != rows) throw StructuralMismatch("concat_cols: row counts differ");
    cols += p.value().cols();
  }
  RowMatrix out(rows, cols);
  std::vector<int> ids;
  Index start = 0;
  for (const Var& p : parts) {
    out.middleCols(start, p.value().cols()) = p.value();
    start += p.value().cols();
    ids.push_back(p.id);
  }
  return g.push(Op::ConcatCols, std::move(out), std::move(ids));
}

Var select_rows(Var a, std::span<const Index> rows) {
  Graph& g = graph_of(a);
  const RowMatrix& x = a.value();
  RowMatrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.rows()) throw ArgumentError("select_rows index out of range");
    out.row(static_cast<Index>(k)) = x.row(rows[k]);
  }
  Var v = g.push(Op::SelectRows, std::move(out), {a.id});
  g.node(v).index.assign(rows.begin(), rows.end());
  return v;
}

Var pick(Var a, std::span<const Index> rows, std::span<const Index> cols) {
  Graph& g = graph_of(a);
  if (rows.size() != cols.size() || rows.empty()) throw ArgumentError("pick: index lists must match and be non-empty");
  const RowMatrix& x = a.value();
  RowMatrix out(static_cast<Index>(rows.size()), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.rows() || cols[k] < 0 || cols[k] >= x.cols())
      throw ArgumentError("pick index out of range");
    out(static_cast<Index>(k), 0) = x(rows[k], cols[k]);
  }
  Var v = g.push(Op::Pick, std::move(out), {a.id});
  g.node(v).index.assign(rows.begin(), rows.end());
  g.node(v).index2.assign(cols.begin(), cols.end());
  return v;
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  RowMatrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.push(Op::Sum, std::move(out), {a.id});
}

Var mean(Var a) {
  Graph& g = graph_of(a);
  RowMatrix out(1, 1);
  out(0, 0) = a.value().mean();
  return g.push(Op::Mean, std::move(out), {a.id});
}

Var weighted_sum(Var a, const RowMatrix& weights) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), weights, "weighted_sum");
  RowMatrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  Var v = g.push(Op::WeightedSum, std::move(out), {a.id});
  g.node(v).weights = weights;
  return v;
}

Var log_sigmoid(Var a) {
  Graph& g = graph_of(a);
  RowMatrix out = a.value().unaryExpr([](Real x) { return log_sigmoid_scalar(x); });
  return g.push(Op::LogSigmoid, std::move(out), {a.id});
}

Var opaque(Var a, const std::function<RowMatrix(const RowMatrix&)>& fn, std::string label) {
  Graph& g = graph_of(a);
  Var v = g.push(Op::Opaque, fn(a.value()), {a.id});
  g.node(v).label = std::move(label);
  return v;
}

}  // namespace unforge
