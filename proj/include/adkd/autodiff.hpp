#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "adkd/tensor.hpp"

// Reverse-mode differentiation over a small, fixed op set.
//
// A Graph is a define-by-run tape: every op is evaluated eagerly when it is
// recorded. gradient() records the backward pass as ordinary graph ops, so the
// returned adjoints can themselves be differentiated (gradient of gradient).
// Ops whose derivative is only registered to first order record an opaque
// node in the backward pass; a later sweep through it throws
// NonDifferentiableError.
//
// Leaves can be rebound and the whole tape replayed with recompute(); values of
// recorded gradient nodes are replayed too, which is what the finite
// difference checks use.
namespace adkd::ad {

enum class Op : std::uint8_t {
  Input,
  Constant,
  Detach,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  MatMul,
  MatMulNT,
  MatMulTN,
  BroadcastRows,
  BroadcastCols,
  BroadcastScalar,
  SumRows,
  SumCols,
  SumAll,
  SoftmaxRows,
  LogSoftmaxRows,
  Exp,
  Sqrt,
  Rsqrt,
  Gelu,
  GeluGrad,
  GeluGrad2,
  ColSlice,
  PadCols,
  RowSlice,
  PadRows,
  ConcatCols,
  ConcatRows,
  GatherRows,
  ScatterRows,
  TopKRowNorm,
  TopKRowNormGrad,
};

std::string_view op_name(Op op);

// Whether gradient() can sweep through the op. Ops outside this set only
// appear in a graph as the output of a first-order backward rule.
bool has_derivative(Op op);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  Shape shape() const { return value().shape(); }
  Op op() const;

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

struct NodeAttrs {
  double scalar = 0.0;
  std::size_t a = 0;
  std::size_t b = 0;
  std::shared_ptr<const std::vector<std::size_t>> index;
  std::shared_ptr<const std::vector<unsigned char>> mask;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Bindable leaf.
  Var input(Tensor value);
  // Leaf that bind() refuses to change.
  Var constant(Tensor value);

  void bind(Var leaf, Tensor value);
  // Re-evaluates every non-leaf node in recording order.
  void recompute();

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  Op op(std::size_t id) const { return nodes_[id].op; }

  Var record(Op op, std::vector<std::size_t> inputs, NodeAttrs attrs = {});

 private:
  friend std::vector<Var> gradient(Var output, std::span<const Var> wrt);

  std::vector<Var> reverse_sweep(Var output, std::span<const Var> wrt);

  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    NodeAttrs attrs;
    Tensor value;
  };

  Tensor compute(const Node& node) const;
  Var var(std::size_t id) { return Var(this, id); }

  std::vector<Node> nodes_;
};

// Elementwise ops require equal shapes; broadcasting is explicit.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
// a / b with 0 wherever b == 0.
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// Gradient does not flow through a detached value.
Var detach(Var a);

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var matmul_tn(Var a, Var b);

Var broadcast_rows(Var row, std::size_t rows);
Var broadcast_cols(Var col, std::size_t cols);
Var broadcast_scalar(Var s, Shape shape);
Var sum_rows(Var a);  // r×c -> 1×c
Var sum_cols(Var a);  // r×c -> r×1
Var sum(Var a);       // r×c -> 1×1

Var softmax_rows(Var a, std::vector<unsigned char> key_mask = {});
Var log_softmax_rows(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var rsqrt(Var a);
Var gelu(Var a);

Var col_slice(Var a, std::size_t begin, std::size_t width);
Var row_slice(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var table, std::vector<std::size_t> ids);

// Per row: L2 norm of the k entries with largest magnitude (ties to the lower
// column). Differentiable to first order only.
Var topk_row_norm(Var a, std::size_t k);

// Composite helpers.
Var add_row(Var a, Var bias);  // bias 1×c added to every row
Var layer_norm(Var x, Var gamma, Var beta, double eps);
Var l2_norm(Var a);  // 1×1

// d output / d wrt[i] for a 1×1 output. Nodes in wrt may be leaves or
// intermediate results. The adjoints are recorded in the graph and can be
// differentiated again.
std::vector<Var> gradient(Var output, std::span<const Var> wrt);
Var gradient(Var output, Var wrt);

struct Binding {
  Var leaf;
  Tensor value;
};

// Binds the leaves, replays the tape and returns the requested values.
std::vector<Tensor> evaluate(Graph& graph, std::span<const Binding> bindings,
                             std::span<const Var> outputs);

struct FdReport {
  Tensor analytic;
  Tensor numeric;
  double max_rel_error = 0.0;  // ‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)
};

// Central differences of a scalar output w.r.t. every element of an input
// leaf, compared against `analytic`. Never throws: a failed replay yields an
// infinite error. The leaf is restored afterwards.
FdReport finite_difference_check(Graph& graph, Var output, Var leaf, const Tensor& analytic,
                                 double step);
// As above with the analytic gradient taken from gradient().
FdReport finite_difference_check(Graph& graph, Var output, Var leaf, double step);

}  // namespace adkd::ad
