#pragma once

// Define-by-run reverse-mode differentiation. Every operator appends a node to
// the tape of its inputs; backward() walks the tape in reverse.

#include <cstdint>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace dagkt::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

enum class Op : std::uint8_t {
  Constant,
  Param,
  MatMul,
  Add,
  AddRow,
  Sub,
  Mul,
  Scale,
  Concat,
  ConcatRows,
  SliceCols,
  SliceRows,
  Relu,
  Tanh,
  Sigmoid,
  Gather,
  Dropout,
  Softmax,
  SegmentSoftmax,
  SegmentSum,
  NeighborMean,
  RowsDot,
  Mean,
  Sum,
  Square,
  BinaryCrossEntropy,
};

const char* op_name(Op op);

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter; gradients land in `p.grad` on backward().
  /// Registering the same parameter twice returns the same node.
  Var parameter(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() w.r.t. `v` (zeros when unreached).
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Populates gradients for every node and zeroes, then fills, the grads of
  /// all parameters registered on this tape. `loss` must hold one element.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  const std::vector<std::uint32_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }

  // Operator implementation interface.
  struct Node {
    Op op = Op::Constant;
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::uint32_t> inputs;
    std::vector<std::size_t> index;   // gather rows, segment offsets, CSR offsets
    std::vector<std::size_t> index2;  // CSR columns
    std::vector<double> aux;          // dropout mask, labels
    double scalar = 0.0;
    std::size_t begin = 0;
    Parameter* param = nullptr;
  };

  Var push(Node node);
  const Node& node(Var v) const { return nodes_.at(v.id); }

 private:
  void backward_node(std::uint32_t id);
  std::vector<double>& grad_buffer(std::uint32_t id);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

/// [m,k] x [k,n] -> [m,n].
Var matmul(Var a, Var b);
/// Same-shape sum, or [m,n] + [n] / [1,n] bias broadcast over rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of same-shape tensors.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Concatenation along the last axis; all inputs need equal row counts.
Var concat(std::span<const Var> parts);
inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}
/// Stacks inputs of equal width along the first axis.
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
/// Rows of `table` at `indices`, in order.
Var embedding_lookup(Var table, std::vector<std::size_t> indices);
/// Inverted dropout; identity when !training or keep_prob == 1.
Var dropout(Var a, double keep_prob, bool training, std::uint64_t seed);
/// Row-wise softmax over the last axis.
Var softmax(Var a);
/// Softmax of a column [m,1] within segments [offsets[s], offsets[s+1]).
Var segment_softmax(Var a, std::vector<std::size_t> offsets);
/// Per-segment row sums: [m,c] -> [segments,c].
Var segment_sum(Var a, std::vector<std::size_t> offsets);
/// Row r of the output is the mean of rows columns[offsets[r]..offsets[r+1]) of `a`.
Var neighbor_mean(Var a, std::vector<std::size_t> offsets, std::vector<std::size_t> columns);
/// Row-wise inner products of two [m,d] tensors -> [m,1].
Var rows_dot(Var a, Var b);
Var mean(Var a);
Var sum(Var a);
Var square(Var a);
/// Summed binary cross entropy of probabilities against {0,1} labels. The
/// active log term is floored at kProbabilityFloor.
Var binary_cross_entropy(Var p, std::vector<double> labels);

inline constexpr double kProbabilityFloor = 1e-7;

}  // namespace dagkt::ad
