#pragma once

#include "unforge/param_store.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace unforge {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the Graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const RowMatrix& value() const;
  // Value of a 1x1 node.
  Real item() const;
};

enum class Op {
  Constant,
  Param,
  MatMul,
  MatMulNT,
  Add,
  Sub,
  AddRow,
  Scale,
  AddN,
  Gelu,
  LayerNorm,
  CausalSoftmax,
  LogSoftmax,
  Embedding,
  SliceCols,
  ConcatCols,
  SelectRows,
  Pick,
  Sum,
  Mean,
  WeightedSum,
  LogSigmoid,
  Opaque,
};

// Tape of dense matrix operations with exact reverse-mode gradients.
// Nodes are evaluated eagerly at construction; backward walks the tape in
// reverse creation order, so gradients are reproducible bit for bit.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Binds the parameter store whose leaves this graph will differentiate.
  // The store must outlive the graph.
  void bind(const ParamStore& params);
  bool bound() const noexcept { return params_ != nullptr; }
  // Leaf for parameter entry i of the bound store (created once).
  Var param(std::size_t entry);
  Var param(std::string_view name);

  Var constant(RowMatrix value);
  Var scalar(Real value);

  const RowMatrix& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the 1x1 node `loss` with respect to every parameter of the
  // bound store. Parameters not reachable from the loss get zero gradient.
  GradStore backward(Var loss);

  // Node construction; prefer the free functions below.
  Var push(Op op, RowMatrix value, std::vector<int> inputs);
  struct Node {
    Op op = Op::Constant;
    RowMatrix value;
    std::vector<int> inputs;
    std::vector<Index> index;   // row ids (Embedding, SelectRows, Pick)
    std::vector<Index> index2;  // column ids (Pick)
    Real scalar = 0.0;          // Scale factor, LayerNorm eps, SliceCols start
    RowMatrix aux;              // cached forward intermediates
    RowMatrix weights;          // WeightedSum weights
    int param_entry = -1;
    std::string label;          // Opaque
  };
  Node& node(Var v) { return nodes_.at(v.id); }

 private:
  std::vector<Node> nodes_;
  const ParamStore* params_ = nullptr;
  std::vector<int> param_nodes_;
};

// A*B
Var matmul(Var a, Var b);
// A*B^T
Var matmul_nt(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Real s, Var a);
Var operator-(Var a);
// Adds a [1, n] row to every row of a.
Var add_row(Var a, Var row);
// Left-to-right sum of equally shaped nodes.
Var add_n(std::span<const Var> terms);
// Tanh-approximated GELU.
Var gelu(Var a);
// Per-row normalization with [1, n] gain and bias.
Var layer_norm(Var x, Var gain, Var bias, Real eps = 1e-5);
// Row softmax over columns j <= i; masked entries are exactly zero.
Var causal_softmax(Var a);
// Row-wise log-softmax with max subtraction.
Var log_softmax(Var a);
// Rows of table selected by ids.
Var embedding(Var table, std::span<const Index> ids);
Var slice_cols(Var a, Index start, Index count);
Var concat_cols(std::span<const Var> parts);
Var select_rows(Var a, std::span<const Index> rows);
// Column vector [a(rows[k], cols[k])]_k.
Var pick(Var a, std::span<const Index> rows, std::span<const Index> cols);
Var sum(Var a);
Var mean(Var a);
// Sum of a .* weights, weights treated as constants.
Var weighted_sum(Var a, const RowMatrix& weights);
// Elementwise log(sigmoid(x)), evaluated without overflow.
Var log_sigmoid(Var a);
// Forward-only transform with no derivative rule; backward through it
// raises CapabilityError.
Var opaque(Var a, const std::function<RowMatrix(const RowMatrix&)>& fn, std::string label);

}  // namespace unforge
