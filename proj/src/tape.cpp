#include "tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "random.hpp"

namespace dagkt::ad {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

ConstMatMap as_matrix(const Tensor& t) {
  return {t.values.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

MatMap as_matrix(std::vector<double>& buf, std::size_t rows, std::size_t cols) {
  return {buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": shape " + to_string(a) + " " + why);
}

Tape& tape_of(Var a, const char* op) {
  if (!a.tape) throw ShapeError(std::string(op) + ": variable is not bound to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b, const char* op) {
  if (!a.tape || a.tape != b.tape) {
    throw ShapeError(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape;
}

Tape::Node unary(Op op, Var a, Tensor value) {
  Tape::Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = {a.id};
  return n;
}

Tape::Node binary(Op op, Var a, Var b, Tensor value) {
  Tape::Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = {a.id, b.id};
  return n;
}

void check_offsets(const char* op, const std::vector<std::size_t>& offsets, std::size_t rows) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw ShapeError(std::string(op) + ": segment offsets must run from 0 to " +
                     std::to_string(rows) + " in nondecreasing order");
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Param: return "parameter";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::AddRow: return "add_row";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Concat: return "concat";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Gather: return "embedding_lookup";
    case Op::Dropout: return "dropout";
    case Op::Softmax: return "softmax";
    case Op::SegmentSoftmax: return "segment_softmax";
    case Op::SegmentSum: return "segment_sum";
    case Op::NeighborMean: return "neighbor_mean";
    case Op::RowsDot: return "rows_dot";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::Square: return "square";
    case Op::BinaryCrossEntropy: return "binary_cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape) throw ShapeError("variable is not bound to a tape");
  return tape->value(*this);
}

Var Tape::push(Node node) {
  for (auto in : node.inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.op = Op::Param;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  auto v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_.at(v.id);
  Tensor g(n.value.shape);
  if (!n.grad.empty()) g.values = n.grad;
  return g;
}

std::vector<double>& Tape::grad_buffer(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ShapeError("backward: loss belongs to another tape");
  const auto& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    shape_error("backward", root.value.shape, "is not a scalar loss");
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    if (nodes_[id].requires_grad && !nodes_[id].grad.empty()) backward_node(id);
  }
  for (auto& n : nodes_) {
    if (n.op != Op::Param) continue;
    n.param->zero_grad();
    if (!n.grad.empty()) n.param->grad.values = n.grad;
  }
}

void Tape::backward_node(std::uint32_t id) {
  Node& n = nodes_[id];
  const std::vector<double>& g = n.grad;
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto in_value = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.op) {
    case Op::Constant:
    case Op::Param:
      break;

    case Op::MatMul: {
      const auto& a = in_value(0);
      const auto& b = in_value(1);
      ConstMatMap dc(g.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(b.cols()));
      if (wants(0)) {
        as_matrix(grad_buffer(n.inputs[0]), a.rows(), a.cols()).noalias() += dc * as_matrix(b).transpose();
      }
      if (wants(1)) {
        as_matrix(grad_buffer(n.inputs[1]), b.rows(), b.cols()).noalias() += as_matrix(a).transpose() * dc;
      }
      break;
    }

    case Op::Add:
    case Op::Sub: {
      const double sign = n.op == Op::Sub ? -1.0 : 1.0;
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      }
      break;
    }

    case Op::AddRow: {
      const std::size_t cols = n.value.cols();
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
      }
      break;
    }

    case Op::Mul: {
      const auto& a = in_value(0).values;
      const auto& b = in_value(1).values;
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }

    case Op::Scale: {
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
      break;
    }

    case Op::Concat: {
      const std::size_t rows = n.value.rows();
      const std::size_t width = n.value.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t c = in_value(k).cols();
        if (wants(k)) {
          auto& gk = grad_buffer(n.inputs[k]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) gk[r * c + j] += g[r * width + offset + j];
        }
        offset += c;
      }
      break;
    }

    case Op::ConcatRows: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = in_value(k).size();
        if (wants(k)) {
          auto& gk = grad_buffer(n.inputs[k]);
          for (std::size_t i = 0; i < len; ++i) gk[i] += g[offset + i];
        }
        offset += len;
      }
      break;
    }

    case Op::SliceCols: {
      const std::size_t rows = n.value.rows();
      const std::size_t count = n.value.cols();
      const std::size_t width = in_value(0).cols();
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j) ga[r * width + n.begin + j] += g[r * count + j];
      break;
    }

    case Op::SliceRows: {
      const std::size_t start = n.begin * n.value.cols();
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[start + i] += g[i];
      break;
    }

    case Op::Relu: {
      const auto& x = in_value(0).values;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
      break;
    }

    case Op::Tanh: {
      const auto& y = n.value.values;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }

    case Op::Sigmoid: {
      const auto& y = n.value.values;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }

    case Op::Gather: {
      const std::size_t d = n.value.cols();
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        const std::size_t src = n.index[i] * d;
        for (std::size_t j = 0; j < d; ++j) ga[src + j] += g[i * d + j];
      }
      break;
    }

    case Op::Dropout: {
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.aux[i];
      break;
    }

    case Op::Softmax: {
      const std::size_t rows = n.value.rows();
      const std::size_t cols = n.value.cols();
      const auto& y = n.value.values;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j) {
          ga[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
        }
      }
      break;
    }

    case Op::SegmentSoftmax: {
      const auto& y = n.value.values;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t s = 0; s + 1 < n.index.size(); ++s) {
        double dot = 0.0;
        for (std::size_t i = n.index[s]; i < n.index[s + 1]; ++i) dot += g[i] * y[i];
        for (std::size_t i = n.index[s]; i < n.index[s + 1]; ++i) ga[i] += y[i] * (g[i] - dot);
      }
      break;
    }

    case Op::SegmentSum: {
      const std::size_t c = n.value.cols();
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t s = 0; s + 1 < n.index.size(); ++s)
        for (std::size_t i = n.index[s]; i < n.index[s + 1]; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[s * c + j];
      break;
    }

    case Op::NeighborMean: {
      const std::size_t d = n.value.cols();
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t r = 0; r + 1 < n.index.size(); ++r) {
        const double w = 1.0 / static_cast<double>(n.index[r + 1] - n.index[r]);
        for (std::size_t k = n.index[r]; k < n.index[r + 1]; ++k) {
          const std::size_t src = n.index2[k] * d;
          for (std::size_t j = 0; j < d; ++j) ga[src + j] += w * g[r * d + j];
        }
      }
      break;
    }

    case Op::RowsDot: {
      const auto& a = in_value(0);
      const auto& b = in_value(1);
      const std::size_t d = a.cols();
      if (wants(0)) {
        auto& ga = grad_buffer(n.inputs[0]);
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += g[r] * b.values[r * d + j];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.inputs[1]);
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t j = 0; j < d; ++j) gb[r * d + j] += g[r] * a.values[r * d + j];
      }
      break;
    }

    case Op::Mean:
    case Op::Sum: {
      auto& ga = grad_buffer(n.inputs[0]);
      const double w = n.op == Op::Mean ? g[0] / static_cast<double>(ga.size()) : g[0];
      for (auto& v : ga) v += w;
      break;
    }

    case Op::Square: {
      const auto& x = in_value(0).values;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
      break;
    }

    case Op::BinaryCrossEntropy: {
      const auto& p = in_value(0).values;
      auto& ga = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (n.aux[i] > 0.5) {
          if (p[i] > kProbabilityFloor) ga[i] += -g[0] / p[i];
        } else {
          if (1.0 - p[i] > kProbabilityFloor) ga[i] += g[0] / (1.0 - p[i]);
        }
      }
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  auto& tape = tape_of(a, b, "matmul");
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.cols() != y.rows() || (y.shape.size() == 1 && x.cols() != 1)) {
    shape_error("matmul", x.shape, y.shape);
  }
  Tensor out({x.rows(), y.cols()});
  as_matrix(out.values, x.rows(), y.cols()).noalias() = as_matrix(x) * as_matrix(y);
  return tape.push(binary(Op::MatMul, a, b, std::move(out)));
}

Var add(Var a, Var b) {
  auto& tape = tape_of(a, b, "add");
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.shape == y.shape) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += y.values[i];
    return tape.push(binary(Op::Add, a, b, std::move(out)));
  }
  if (y.rows() == 1 && y.cols() == x.cols()) {
    Tensor out = x;
    const std::size_t c = x.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += y.values[i % c];
    return tape.push(binary(Op::AddRow, a, b, std::move(out)));
  }
  shape_error("add", x.shape, y.shape);
}

Var sub(Var a, Var b) {
  auto& tape = tape_of(a, b, "sub");
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.shape != y.shape) shape_error("sub", x.shape, y.shape);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= y.values[i];
  return tape.push(binary(Op::Sub, a, b, std::move(out)));
}

Var mul(Var a, Var b) {
  auto& tape = tape_of(a, b, "mul");
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.shape != y.shape) shape_error("mul", x.shape, y.shape);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= y.values[i];
  return tape.push(binary(Op::Mul, a, b, std::move(out)));
}

Var scale(Var a, double factor) {
  auto& tape = tape_of(a, "scale");
  Tensor out = a.value();
  for (auto& v : out.values) v *= factor;
  auto n = unary(Op::Scale, a, std::move(out));
  n.scalar = factor;
  return tape.push(std::move(n));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto& tape = tape_of(parts[0], "concat");
  const std::size_t rows = parts[0].value().rows();
  std::size_t width = 0;
  for (auto p : parts) {
    tape_of(parts[0], p, "concat");
    if (p.value().rows() != rows) shape_error("concat", parts[0].shape(), p.shape());
    width += p.value().cols();
  }
  Tensor out({rows, width});
  std::size_t offset = 0;
  Tape::Node n;
  n.op = Op::Concat;
  for (auto p : parts) {
    const auto& v = p.value();
    const std::size_t c = v.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.values.begin() + static_cast<std::ptrdiff_t>(r * c), c,
                  out.values.begin() + static_cast<std::ptrdiff_t>(r * width + offset));
    offset += c;
    n.inputs.push_back(p.id);
  }
  n.value = std::move(out);
  return tape.push(std::move(n));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  auto& tape = tape_of(parts[0], "concat_rows");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (auto p : parts) {
    tape_of(parts[0], p, "concat_rows");
    if (p.value().cols() != cols) shape_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.value().rows();
  }
  Tape::Node n;
  n.op = Op::ConcatRows;
  n.value = Tensor({rows, cols});
  std::size_t offset = 0;
  for (auto p : parts) {
    const auto& v = p.value().values;
    std::copy(v.begin(), v.end(), n.value.values.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.size();
    n.inputs.push_back(p.id);
  }
  return tape.push(std::move(n));
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  auto& tape = tape_of(a, "slice_cols");
  const auto& x = a.value();
  if (count == 0 || begin + count > x.cols()) {
    shape_error("slice_cols", x.shape,
                "cannot yield columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ")");
  }
  Tensor out({x.rows(), count});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < count; ++j) out(r, j) = x(r, begin + j);
  auto n = unary(Op::SliceCols, a, std::move(out));
  n.begin = begin;
  return tape.push(std::move(n));
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  auto& tape = tape_of(a, "slice_rows");
  const auto& x = a.value();
  if (count == 0 || begin + count > x.rows()) {
    shape_error("slice_rows", x.shape,
                "cannot yield rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ")");
  }
  const std::size_t c = x.cols();
  Tensor out({count, c});
  std::copy_n(x.values.begin() + static_cast<std::ptrdiff_t>(begin * c), count * c, out.values.begin());
  auto n = unary(Op::SliceRows, a, std::move(out));
  n.begin = begin;
  return tape.push(std::move(n));
}

Var relu(Var a) {
  auto& tape = tape_of(a, "relu");
  Tensor out = a.value();
  for (auto& v : out.values) v = v > 0.0 ? v : 0.0;
  return tape.push(unary(Op::Relu, a, std::move(out)));
}

Var tanh(Var a) {
  auto& tape = tape_of(a, "tanh");
  Tensor out = a.value();
  for (auto& v : out.values) v = std::tanh(v);
  return tape.push(unary(Op::Tanh, a, std::move(out)));
}

Var sigmoid(Var a) {
  auto& tape = tape_of(a, "sigmoid");
  Tensor out = a.value();
  for (auto& v : out.values) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return tape.push(unary(Op::Sigmoid, a, std::move(out)));
}

Var embedding_lookup(Var table, std::vector<std::size_t> indices) {
  auto& tape = tape_of(table, "embedding_lookup");
  const auto& t = table.value();
  if (indices.empty()) shape_error("embedding_lookup", t.shape, "given no indices");
  const std::size_t d = t.cols();
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows()) {
      shape_error("embedding_lookup", t.shape, "has no row " + std::to_string(indices[i]));
    }
    std::copy_n(t.values.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d,
                out.values.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto n = unary(Op::Gather, table, std::move(out));
  n.index = std::move(indices);
  return tape.push(std::move(n));
}

Var dropout(Var a, double keep_prob, bool training, std::uint64_t seed) {
  auto& tape = tape_of(a, "dropout");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ValidationError("dropout: keep probability must lie in (0, 1], got " +
                          std::to_string(keep_prob));
  }
  if (!training || keep_prob == 1.0) return a;
  Tensor out = a.value();
  std::vector<double> mask(out.size());
  Rng rng(seed);
  const double inv = 1.0 / keep_prob;
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < keep_prob ? inv : 0.0;
    out.values[i] *= mask[i];
  }
  auto n = unary(Op::Dropout, a, std::move(out));
  n.aux = std::move(mask);
  return tape.push(std::move(n));
}

Var softmax(Var a) {
  auto& tape = tape_of(a, "softmax");
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& v : row) total += (v = std::exp(v - mx));
    for (auto& v : row) v /= total;
  }
  return tape.push(unary(Op::Softmax, a, std::move(out)));
}

Var segment_softmax(Var a, std::vector<std::size_t> offsets) {
  auto& tape = tape_of(a, "segment_softmax");
  const auto& x = a.value();
  if (x.cols() != 1) shape_error("segment_softmax", x.shape, "is not a column");
  check_offsets("segment_softmax", offsets, x.rows());
  Tensor out = x;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s] == offsets[s + 1]) continue;
    double mx = out.values[offsets[s]];
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) mx = std::max(mx, out.values[i]);
    double total = 0.0;
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) total += (out.values[i] = std::exp(out.values[i] - mx));
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) out.values[i] /= total;
  }
  auto n = unary(Op::SegmentSoftmax, a, std::move(out));
  n.index = std::move(offsets);
  return tape.push(std::move(n));
}

Var segment_sum(Var a, std::vector<std::size_t> offsets) {
  auto& tape = tape_of(a, "segment_sum");
  const auto& x = a.value();
  check_offsets("segment_sum", offsets, x.rows());
  const std::size_t c = x.cols();
  Tensor out({offsets.size() - 1, c});
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i)
      for (std::size_t j = 0; j < c; ++j) out(s, j) += x(i, j);
  auto n = unary(Op::SegmentSum, a, std::move(out));
  n.index = std::move(offsets);
  return tape.push(std::move(n));
}

Var neighbor_mean(Var a, std::vector<std::size_t> offsets, std::vector<std::size_t> columns) {
  auto& tape = tape_of(a, "neighbor_mean");
  const auto& x = a.value();
  check_offsets("neighbor_mean", offsets, columns.size());
  const std::size_t d = x.cols();
  Tensor out({offsets.size() - 1, d});
  for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
    if (offsets[r] == offsets[r + 1]) {
      shape_error("neighbor_mean", x.shape, "given an empty neighborhood for row " + std::to_string(r));
    }
    const double w = 1.0 / static_cast<double>(offsets[r + 1] - offsets[r]);
    for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) {
      if (columns[k] >= x.rows()) {
        shape_error("neighbor_mean", x.shape, "has no row " + std::to_string(columns[k]));
      }
      for (std::size_t j = 0; j < d; ++j) out(r, j) += w * x(columns[k], j);
    }
  }
  auto n = unary(Op::NeighborMean, a, std::move(out));
  n.index = std::move(offsets);
  n.index2 = std::move(columns);
  return tape.push(std::move(n));
}

Var rows_dot(Var a, Var b) {
  auto& tape = tape_of(a, b, "rows_dot");
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.rows() != y.rows() || x.cols() != y.cols()) shape_error("rows_dot", x.shape, y.shape);
  Tensor out({x.rows(), 1});
  const std::size_t d = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += x.values[r * d + j] * y.values[r * d + j];
    out.values[r] = acc;
  }
  return tape.push(binary(Op::RowsDot, a, b, std::move(out)));
}

Var mean(Var a) {
  auto& tape = tape_of(a, "mean");
  const auto& x = a.value().values;
  double total = 0.0;
  for (double v : x) total += v;
  return tape.push(unary(Op::Mean, a, Tensor::scalar(total / static_cast<double>(x.size()))));
}

Var sum(Var a) {
  auto& tape = tape_of(a, "sum");
  double total = 0.0;
  for (double v : a.value().values) total += v;
  return tape.push(unary(Op::Sum, a, Tensor::scalar(total)));
}

Var square(Var a) {
  auto& tape = tape_of(a, "square");
  Tensor out = a.value();
  for (auto& v : out.values) v *= v;
  return tape.push(unary(Op::Square, a, std::move(out)));
}

Var binary_cross_entropy(Var p, std::vector<double> labels) {
  auto& tape = tape_of(p, "binary_cross_entropy");
  const auto& x = p.value();
  if (labels.size() != x.size()) {
    shape_error("binary_cross_entropy", x.shape, "does not match " + std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw ValidationError("binary_cross_entropy: labels must be 0 or 1");
    }
    const double q = labels[i] > 0.5 ? x.values[i] : 1.0 - x.values[i];
    total -= std::log(std::max(q, kProbabilityFloor));
  }
  auto n = unary(Op::BinaryCrossEntropy, p, Tensor::scalar(total));
  n.aux = std::move(labels);
  return tape.push(std::move(n));
}

}  // namespace dagkt::ad
