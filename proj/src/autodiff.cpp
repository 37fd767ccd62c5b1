#include "adkd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "adkd/errors.hpp"
#include "adkd/kernels.hpp"

namespace adkd::ad {
namespace {

void require_same(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, Op op, F f) {
  require_same(a, b, op);
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

Graph& common_graph(Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    throw Error("ops combine vars from different graphs");
  }
  return a.graph();
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Detach: return "detach";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::MatMulTN: return "matmul_tn";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::BroadcastScalar: return "broadcast_scalar";
    case Op::SumRows: return "sum_rows";
    case Op::SumCols: return "sum_cols";
    case Op::SumAll: return "sum";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::LogSoftmaxRows: return "log_softmax_rows";
    case Op::Exp: return "exp";
    case Op::Sqrt: return "sqrt";
    case Op::Rsqrt: return "rsqrt";
    case Op::Gelu: return "gelu";
    case Op::GeluGrad: return "gelu_grad";
    case Op::GeluGrad2: return "gelu_grad2";
    case Op::ColSlice: return "col_slice";
    case Op::PadCols: return "pad_cols";
    case Op::RowSlice: return "row_slice";
    case Op::PadRows: return "pad_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::GatherRows: return "gather_rows";
    case Op::ScatterRows: return "scatter_rows";
    case Op::TopKRowNorm: return "topk_row_norm";
    case Op::TopKRowNormGrad: return "topk_row_norm_grad";
  }
  return "unknown";
}

bool has_derivative(Op op) {
  return op != Op::GeluGrad2 && op != Op::TopKRowNormGrad;
}

const Tensor& Var::value() const { return graph_->value(id_); }
Op Var::op() const { return graph_->op(id_); }

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{Op::Input, {}, {}, std::move(value)});
  return var(nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{Op::Constant, {}, {}, std::move(value)});
  return var(nodes_.size() - 1);
}

void Graph::bind(Var leaf, Tensor value) {
  if (&leaf.graph() != this || nodes_[leaf.id()].op != Op::Input) {
    throw Error("bind(): node " + std::to_string(leaf.id()) + " is not an input of this graph");
  }
  if (nodes_[leaf.id()].value.shape() != value.shape()) {
    throw ShapeError("bind(): expected " + nodes_[leaf.id()].value.shape().str() + ", got " +
                     value.shape().str());
  }
  nodes_[leaf.id()].value = std::move(value);
}

void Graph::recompute() {
  for (auto& node : nodes_) {
    if (node.op == Op::Input || node.op == Op::Constant) continue;
    node.value = compute(node);
  }
}

Var Graph::record(Op op, std::vector<std::size_t> inputs, NodeAttrs attrs) {
  Node node{op, std::move(inputs), std::move(attrs), {}};
  node.value = compute(node);
  nodes_.push_back(std::move(node));
  return var(nodes_.size() - 1);
}

Tensor Graph::compute(const Node& node) const {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  const NodeAttrs& at = node.attrs;
  Tensor out;
  switch (node.op) {
    case Op::Input:
    case Op::Constant:
      return node.value;
    case Op::Detach:
      out = in(0);
      break;
    case Op::Add:
      out = zip(in(0), in(1), node.op, [](double x, double y) { return x + y; });
      break;
    case Op::Sub:
      out = zip(in(0), in(1), node.op, [](double x, double y) { return x - y; });
      break;
    case Op::Mul:
      out = zip(in(0), in(1), node.op, [](double x, double y) { return x * y; });
      break;
    case Op::Div:
      out = zip(in(0), in(1), node.op, [](double x, double y) { return y == 0.0 ? 0.0 : x / y; });
      break;
    case Op::Scale: {
      const double s = at.scalar;
      out = map(in(0), [s](double x) { return s * x; });
      break;
    }
    case Op::AddScalar: {
      const double s = at.scalar;
      out = map(in(0), [s](double x) { return x + s; });
      break;
    }
    case Op::MatMul:
      out = kernels::matmul(in(0), in(1));
      break;
    case Op::MatMulNT:
      out = kernels::matmul_nt(in(0), in(1));
      break;
    case Op::MatMulTN:
      out = kernels::matmul_tn(in(0), in(1));
      break;
    case Op::BroadcastRows: {
      const Tensor& x = in(0);
      if (x.rows() != 1) throw ShapeError("broadcast_rows: expected 1×c, got " + x.shape().str());
      out = Tensor(at.a, x.cols());
      for (std::size_t r = 0; r < at.a; ++r)
        std::copy(x.data(), x.data() + x.cols(), out.data() + r * x.cols());
      break;
    }
    case Op::BroadcastCols: {
      const Tensor& x = in(0);
      if (x.cols() != 1) throw ShapeError("broadcast_cols: expected r×1, got " + x.shape().str());
      out = Tensor(x.rows(), at.a);
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < at.a; ++c) out(r, c) = x[r];
      break;
    }
    case Op::BroadcastScalar: {
      const Tensor& x = in(0);
      if (x.size() != 1) throw ShapeError("broadcast_scalar: expected 1×1, got " + x.shape().str());
      out = Tensor(at.a, at.b, x[0]);
      break;
    }
    case Op::SumRows: {
      const Tensor& x = in(0);
      out = Tensor(1, x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
      break;
    }
    case Op::SumCols: {
      const Tensor& x = in(0);
      out = Tensor(x.rows(), 1);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c);
        out[r] = s;
      }
      break;
    }
    case Op::SumAll: {
      double s = 0.0;
      for (double v : in(0).values()) s += v;
      out = Tensor::scalar(s);
      break;
    }
    case Op::SoftmaxRows: {
      std::span<const unsigned char> mask;
      if (at.mask) mask = *at.mask;
      out = kernels::softmax_rows(in(0), mask);
      break;
    }
    case Op::LogSoftmaxRows:
      out = kernels::log_softmax_rows(in(0));
      break;
    case Op::Exp:
      out = map(in(0), [](double x) { return std::exp(x); });
      break;
    case Op::Sqrt:
      out = map(in(0), [](double x) {
        return x < 0.0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(x);
      });
      break;
    case Op::Rsqrt:
      out = map(in(0), [](double x) {
        return x <= 0.0 ? std::numeric_limits<double>::quiet_NaN() : 1.0 / std::sqrt(x);
      });
      break;
    case Op::Gelu:
      out = kernels::gelu(in(0));
      break;
    case Op::GeluGrad:
      out = kernels::gelu_grad(in(0));
      break;
    case Op::GeluGrad2:
      out = kernels::gelu_grad2(in(0));
      break;
    case Op::ColSlice: {
      const Tensor& x = in(0);
      if (at.a + at.b > x.cols()) {
        throw ShapeError("col_slice [" + std::to_string(at.a) + ", +" + std::to_string(at.b) +
                         ") of " + x.shape().str());
      }
      out = Tensor(x.rows(), at.b);
      for (std::size_t r = 0; r < x.rows(); ++r)
        std::copy_n(x.data() + r * x.cols() + at.a, at.b, out.data() + r * at.b);
      break;
    }
    case Op::PadCols: {
      const Tensor& x = in(0);
      if (at.a + x.cols() > at.b) throw ShapeError("pad_cols: slice exceeds target width");
      out = Tensor(x.rows(), at.b);
      for (std::size_t r = 0; r < x.rows(); ++r)
        std::copy_n(x.data() + r * x.cols(), x.cols(), out.data() + r * at.b + at.a);
      break;
    }
    case Op::RowSlice: {
      const Tensor& x = in(0);
      if (at.a + at.b > x.rows()) {
        throw ShapeError("row_slice [" + std::to_string(at.a) + ", +" + std::to_string(at.b) +
                         ") of " + x.shape().str());
      }
      out = Tensor(at.b, x.cols());
      std::copy_n(x.data() + at.a * x.cols(), at.b * x.cols(), out.data());
      break;
    }
    case Op::PadRows: {
      const Tensor& x = in(0);
      if (at.a + x.rows() > at.b) throw ShapeError("pad_rows: slice exceeds target height");
      out = Tensor(at.b, x.cols());
      std::copy_n(x.data(), x.size(), out.data() + at.a * x.cols());
      break;
    }
    case Op::ConcatCols: {
      std::size_t width = 0;
      const std::size_t rows = in(0).rows();
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        if (in(k).rows() != rows) throw ShapeError("concat_cols: row counts differ");
        width += in(k).cols();
      }
      out = Tensor(rows, width);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const Tensor& x = in(k);
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(x.data() + r * x.cols(), x.cols(), out.data() + r * width + offset);
        offset += x.cols();
      }
      break;
    }
    case Op::ConcatRows: {
      std::size_t height = 0;
      const std::size_t cols = in(0).cols();
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        if (in(k).cols() != cols) throw ShapeError("concat_rows: column counts differ");
        height += in(k).rows();
      }
      out = Tensor(height, cols);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        std::copy_n(in(k).data(), in(k).size(), out.data() + offset);
        offset += in(k).size();
      }
      break;
    }
    case Op::GatherRows: {
      const Tensor& table = in(0);
      const auto& ids = *at.index;
      out = Tensor(ids.size(), table.cols());
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= table.rows()) {
          throw ShapeError("gather_rows: id " + std::to_string(ids[r]) + " >= " +
                           std::to_string(table.rows()));
        }
        std::copy_n(table.data() + ids[r] * table.cols(), table.cols(),
                    out.data() + r * table.cols());
      }
      break;
    }
    case Op::ScatterRows: {
      const Tensor& x = in(0);
      const auto& ids = *at.index;
      out = Tensor(at.a, x.cols());
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(ids[r], c) += x(r, c);
      break;
    }
    case Op::TopKRowNorm: {
      const Tensor& x = in(0);
      if (at.a == 0 || at.a > x.cols()) {
        throw ShapeError("topk_row_norm: k=" + std::to_string(at.a) + " for " + x.shape().str());
      }
      out = Tensor(x.rows(), 1);
      std::vector<std::size_t> order(x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) order[c] = c;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
          return std::abs(x(r, i)) > std::abs(x(r, j));
        });
        double s = 0.0;
        for (std::size_t k = 0; k < at.a; ++k) s += x(r, order[k]) * x(r, order[k]);
        out[r] = std::sqrt(s);
      }
      break;
    }
    case Op::TopKRowNormGrad: {
      // inputs: upstream adjoint (r×1), x (r×c), forward norms (r×1)
      const Tensor& g = in(0);
      const Tensor& x = in(1);
      const Tensor& norms = in(2);
      out = Tensor(x.rows(), x.cols());
      std::vector<std::size_t> order(x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        if (norms[r] == 0.0) continue;
        for (std::size_t c = 0; c < x.cols(); ++c) order[c] = c;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
          return std::abs(x(r, i)) > std::abs(x(r, j));
        });
        for (std::size_t k = 0; k < at.a; ++k) {
          out(r, order[k]) = g[r] * x(r, order[k]) / norms[r];
        }
      }
      break;
    }
  }
  if (!out.all_finite()) {
    throw NumericError(std::string(op_name(node.op)) + ": non-finite value");
  }
  return out;
}

Var operator+(Var a, Var b) { return common_graph(a, b).record(Op::Add, {a.id(), b.id()}); }
Var operator-(Var a, Var b) { return common_graph(a, b).record(Op::Sub, {a.id(), b.id()}); }
Var operator*(Var a, Var b) { return common_graph(a, b).record(Op::Mul, {a.id(), b.id()}); }
Var operator-(Var a) { return scale(a, -1.0); }
Var div(Var a, Var b) { return common_graph(a, b).record(Op::Div, {a.id(), b.id()}); }

Var scale(Var a, double s) {
  NodeAttrs at;
  at.scalar = s;
  return a.graph().record(Op::Scale, {a.id()}, std::move(at));
}

Var add_scalar(Var a, double s) {
  NodeAttrs at;
  at.scalar = s;
  return a.graph().record(Op::AddScalar, {a.id()}, std::move(at));
}

Var detach(Var a) { return a.graph().record(Op::Detach, {a.id()}); }

Var matmul(Var a, Var b) { return common_graph(a, b).record(Op::MatMul, {a.id(), b.id()}); }
Var matmul_nt(Var a, Var b) { return common_graph(a, b).record(Op::MatMulNT, {a.id(), b.id()}); }
Var matmul_tn(Var a, Var b) { return common_graph(a, b).record(Op::MatMulTN, {a.id(), b.id()}); }

Var broadcast_rows(Var row, std::size_t rows) {
  NodeAttrs at;
  at.a = rows;
  return row.graph().record(Op::BroadcastRows, {row.id()}, std::move(at));
}

Var broadcast_cols(Var col, std::size_t cols) {
  NodeAttrs at;
  at.a = cols;
  return col.graph().record(Op::BroadcastCols, {col.id()}, std::move(at));
}

Var broadcast_scalar(Var s, Shape shape) {
  NodeAttrs at;
  at.a = shape.rows;
  at.b = shape.cols;
  return s.graph().record(Op::BroadcastScalar, {s.id()}, std::move(at));
}

Var sum_rows(Var a) { return a.graph().record(Op::SumRows, {a.id()}); }
Var sum_cols(Var a) { return a.graph().record(Op::SumCols, {a.id()}); }
Var sum(Var a) { return a.graph().record(Op::SumAll, {a.id()}); }

Var softmax_rows(Var a, std::vector<unsigned char> key_mask) {
  NodeAttrs at;
  if (!key_mask.empty()) {
    at.mask = std::make_shared<const std::vector<unsigned char>>(std::move(key_mask));
  }
  return a.graph().record(Op::SoftmaxRows, {a.id()}, std::move(at));
}

Var log_softmax_rows(Var a) { return a.graph().record(Op::LogSoftmaxRows, {a.id()}); }
Var exp(Var a) { return a.graph().record(Op::Exp, {a.id()}); }
Var sqrt(Var a) { return a.graph().record(Op::Sqrt, {a.id()}); }
Var rsqrt(Var a) { return a.graph().record(Op::Rsqrt, {a.id()}); }
Var gelu(Var a) { return a.graph().record(Op::Gelu, {a.id()}); }

Var col_slice(Var a, std::size_t begin, std::size_t width) {
  NodeAttrs at;
  at.a = begin;
  at.b = width;
  return a.graph().record(Op::ColSlice, {a.id()}, std::move(at));
}

Var row_slice(Var a, std::size_t begin, std::size_t count) {
  NodeAttrs at;
  at.a = begin;
  at.b = count;
  return a.graph().record(Op::RowSlice, {a.id()}, std::move(at));
}

namespace {
Var concat(std::span<const Var> parts, Op op) {
  if (parts.empty()) throw ShapeError(std::string(op_name(op)) + ": no inputs");
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    common_graph(parts.front(), p);
    ids.push_back(p.id());
  }
  return parts.front().graph().record(op, std::move(ids));
}
}  // namespace

Var concat_cols(std::span<const Var> parts) { return concat(parts, Op::ConcatCols); }
Var concat_rows(std::span<const Var> parts) { return concat(parts, Op::ConcatRows); }

Var gather_rows(Var table, std::vector<std::size_t> ids) {
  NodeAttrs at;
  at.index = std::make_shared<const std::vector<std::size_t>>(std::move(ids));
  return table.graph().record(Op::GatherRows, {table.id()}, std::move(at));
}

Var topk_row_norm(Var a, std::size_t k) {
  NodeAttrs at;
  at.a = k;
  return a.graph().record(Op::TopKRowNorm, {a.id()}, std::move(at));
}

Var add_row(Var a, Var bias) { return a + broadcast_rows(bias, a.shape().rows); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Shape s = x.shape();
  const double inv_d = 1.0 / static_cast<double>(s.cols);
  Var mean = scale(sum_cols(x), inv_d);
  Var centered = x - broadcast_cols(mean, s.cols);
  Var var = scale(sum_cols(centered * centered), inv_d);
  Var inv_std = rsqrt(add_scalar(var, eps));
  Var normed = centered * broadcast_cols(inv_std, s.cols);
  return add_row(normed * broadcast_rows(gamma, s.rows), beta);
}

Var l2_norm(Var a) { return sqrt(sum(a * a)); }

std::vector<Var> Graph::reverse_sweep(Var output, std::span<const Var> wrt) {
  if (&output.graph() != this) throw Error("gradient(): output belongs to another graph");
  if (output.value().size() != 1) {
    throw ShapeError("gradient(): output must be 1×1, got " + output.shape().str());
  }
  const std::size_t end = output.id() + 1;
  std::size_t first = end;
  std::vector<bool> from_wrt(end, false);
  for (const Var& w : wrt) {
    if (&w.graph() != this) throw Error("gradient(): wrt node belongs to another graph");
    if (w.id() < end) {
      from_wrt[w.id()] = true;
      first = std::min(first, w.id());
    }
  }
  for (std::size_t i = first; i < end; ++i) {
    if (from_wrt[i] || nodes_[i].op == Op::Detach) continue;
    for (std::size_t in : nodes_[i].inputs) {
      if (from_wrt[in]) {
        from_wrt[i] = true;
        break;
      }
    }
  }
  std::vector<bool> to_output(end, false);
  to_output[output.id()] = true;
  for (std::size_t i = end; i-- > first;) {
    if (!to_output[i] || nodes_[i].op == Op::Detach) continue;
    for (std::size_t in : nodes_[i].inputs) to_output[in] = true;
  }

  std::vector<Var> adj(end);
  adj[output.id()] = constant(Tensor::scalar(1.0));
  auto accumulate = [&](std::size_t target, Var contribution) {
    adj[target] = adj[target].valid() ? adj[target] + contribution : contribution;
  };

  for (std::size_t i = end; i-- > first;) {
    if (!from_wrt[i] || !to_output[i] || !adj[i].valid()) continue;
    const Op op = nodes_[i].op;
    if (op == Op::Input || op == Op::Constant) continue;
    if (!has_derivative(op)) {
      throw NonDifferentiableError(std::string("gradient(): no registered derivative for op '") +
                                   std::string(op_name(op)) + "'");
    }
    // Copies: recording new nodes may reallocate nodes_.
    const std::vector<std::size_t> inputs = nodes_[i].inputs;
    const NodeAttrs at = nodes_[i].attrs;
    const Var g = adj[i];
    const Var out = var(i);
    auto in = [&](std::size_t k) { return var(inputs[k]); };
    auto need = [&](std::size_t k) { return from_wrt[inputs[k]]; };
    auto in_shape = [&](std::size_t k) { return nodes_[inputs[k]].value.shape(); };
    auto emit = [&](std::size_t k, auto make) {
      if (need(k)) accumulate(inputs[k], make());
    };

    switch (op) {
      case Op::Add:
        emit(0, [&] { return g; });
        emit(1, [&] { return g; });
        break;
      case Op::Sub:
        emit(0, [&] { return g; });
        emit(1, [&] { return -g; });
        break;
      case Op::Mul:
        emit(0, [&] { return g * in(1); });
        emit(1, [&] { return g * in(0); });
        break;
      case Op::Div:
        emit(0, [&] { return div(g, in(1)); });
        emit(1, [&] { return -div(g * out, in(1)); });
        break;
      case Op::Scale:
        emit(0, [&] { return scale(g, at.scalar); });
        break;
      case Op::AddScalar:
        emit(0, [&] { return g; });
        break;
      case Op::MatMul:
        emit(0, [&] { return matmul_nt(g, in(1)); });
        emit(1, [&] { return matmul_tn(in(0), g); });
        break;
      case Op::MatMulNT:
        emit(0, [&] { return matmul(g, in(1)); });
        emit(1, [&] { return matmul_tn(g, in(0)); });
        break;
      case Op::MatMulTN:
        emit(0, [&] { return matmul_nt(in(1), g); });
        emit(1, [&] { return matmul(in(0), g); });
        break;
      case Op::BroadcastRows:
        emit(0, [&] { return sum_rows(g); });
        break;
      case Op::BroadcastCols:
        emit(0, [&] { return sum_cols(g); });
        break;
      case Op::BroadcastScalar:
        emit(0, [&] { return sum(g); });
        break;
      case Op::SumRows:
        emit(0, [&] { return broadcast_rows(g, in_shape(0).rows); });
        break;
      case Op::SumCols:
        emit(0, [&] { return broadcast_cols(g, in_shape(0).cols); });
        break;
      case Op::SumAll:
        emit(0, [&] { return broadcast_scalar(g, in_shape(0)); });
        break;
      case Op::SoftmaxRows:
        emit(0, [&] {
          return out * (g - broadcast_cols(sum_cols(g * out), in_shape(0).cols));
        });
        break;
      case Op::LogSoftmaxRows:
        emit(0, [&] { return g - exp(out) * broadcast_cols(sum_cols(g), in_shape(0).cols); });
        break;
      case Op::Exp:
        emit(0, [&] { return g * out; });
        break;
      case Op::Sqrt:
        emit(0, [&] { return scale(div(g, out), 0.5); });
        break;
      case Op::Rsqrt:
        emit(0, [&] { return scale(g * (out * (out * out)), -0.5); });
        break;
      case Op::Gelu:
        emit(0, [&] { return g * record(Op::GeluGrad, {inputs[0]}); });
        break;
      case Op::GeluGrad:
        emit(0, [&] { return g * record(Op::GeluGrad2, {inputs[0]}); });
        break;
      case Op::ColSlice:
        emit(0, [&] {
          NodeAttrs pad;
          pad.a = at.a;
          pad.b = in_shape(0).cols;
          return record(Op::PadCols, {g.id()}, std::move(pad));
        });
        break;
      case Op::PadCols:
        emit(0, [&] { return col_slice(g, at.a, in_shape(0).cols); });
        break;
      case Op::RowSlice:
        emit(0, [&] {
          NodeAttrs pad;
          pad.a = at.a;
          pad.b = in_shape(0).rows;
          return record(Op::PadRows, {g.id()}, std::move(pad));
        });
        break;
      case Op::PadRows:
        emit(0, [&] { return row_slice(g, at.a, in_shape(0).rows); });
        break;
      case Op::ConcatCols: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          const std::size_t width = in_shape(k).cols;
          emit(k, [&] { return col_slice(g, offset, width); });
          offset += width;
        }
        break;
      }
      case Op::ConcatRows: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          const std::size_t height = in_shape(k).rows;
          emit(k, [&] { return row_slice(g, offset, height); });
          offset += height;
        }
        break;
      }
      case Op::GatherRows:
        emit(0, [&] {
          NodeAttrs scatter;
          scatter.index = at.index;
          scatter.a = in_shape(0).rows;
          return record(Op::ScatterRows, {g.id()}, std::move(scatter));
        });
        break;
      case Op::ScatterRows:
        emit(0, [&] {
          NodeAttrs gather;
          gather.index = at.index;
          return record(Op::GatherRows, {g.id()}, std::move(gather));
        });
        break;
      case Op::TopKRowNorm:
        emit(0, [&] {
          NodeAttrs grad;
          grad.a = at.a;
          return record(Op::TopKRowNormGrad, {g.id(), inputs[0], i}, std::move(grad));
        });
        break;
      case Op::Input:
      case Op::Constant:
      case Op::Detach:
      case Op::GeluGrad2:
      case Op::TopKRowNormGrad:
        break;
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() < end && adj[w.id()].valid()) {
      result.push_back(adj[w.id()]);
    } else {
      result.push_back(constant(Tensor(w.shape())));
    }
  }
  return result;
}

std::vector<Var> gradient(Var output, std::span<const Var> wrt) {
  if (!output.valid()) throw Error("gradient(): invalid output");
  return output.graph().reverse_sweep(output, wrt);
}

Var gradient(Var output, Var wrt) {
  return gradient(output, std::span<const Var>(&wrt, 1)).front();
}

std::vector<Tensor> evaluate(Graph& graph, std::span<const Binding> bindings,
                             std::span<const Var> outputs) {
  for (const Binding& b : bindings) graph.bind(b.leaf, b.value);
  graph.recompute();
  std::vector<Tensor> values;
  values.reserve(outputs.size());
  for (const Var& v : outputs) values.push_back(v.value());
  return values;
}

FdReport finite_difference_check(Graph& graph, Var output, Var leaf, const Tensor& analytic,
                                 double step) {
  FdReport report;
  report.analytic = analytic;
  report.numeric = Tensor(leaf.shape());
  const Tensor base = leaf.value();
  try {
    if (analytic.shape() != base.shape()) throw ShapeError("analytic gradient shape mismatch");
    for (std::size_t i = 0; i < base.size(); ++i) {
      Tensor probe = base;
      probe[i] = base[i] + step;
      graph.bind(leaf, probe);
      graph.recompute();
      const double plus = output.value().item();
      probe[i] = base[i] - step;
      graph.bind(leaf, probe);
      graph.recompute();
      const double minus = output.value().item();
      report.numeric[i] = (plus - minus) / (2.0 * step);
    }
    double diff = 0.0;
    double scale_ref = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      diff = std::max(diff, std::abs(analytic[i] - report.numeric[i]));
      scale_ref = std::max({scale_ref, std::abs(analytic[i]), std::abs(report.numeric[i])});
    }
    report.max_rel_error = scale_ref > 0.0 ? diff / scale_ref : diff;
  } catch (const std::exception&) {
    report.max_rel_error = std::numeric_limits<double>::infinity();
  }
  try {
    graph.bind(leaf, base);
    graph.recompute();
  } catch (const std::exception&) {
    report.max_rel_error = std::numeric_limits<double>::infinity();
  }
  return report;
}

FdReport finite_difference_check(Graph& graph, Var output, Var leaf, double step) {
  Tensor analytic;
  try {
    analytic = gradient(output, leaf).value();
  } catch (const std::exception&) {
    FdReport report;
    report.max_rel_error = std::numeric_limits<double>::infinity();
    return report;
  }
  return finite_difference_check(graph, output, leaf, analytic, step);
}

}  // namespace adkd::ad
