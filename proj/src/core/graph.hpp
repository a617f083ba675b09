#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace alignlab {

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind : std::uint8_t {
  Input,
  Parameter,
  Constant,
  // elementwise
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  Shift,
  Exp,
  Log,
  Sqrt,
  Square,
  Relu,
  // linear algebra and layout
  MatMul,
  Transpose,
  Reshape,
  GatherRows,
  // image ops on (C, H, W)
  Conv2d,
  Downsample2,
  Upsample,
  // normalisation and reductions
  Softmax,
  Sum,
  SumAxis,
  Mean,
};

const char* op_name(OpKind kind);

using Gradients = std::map<std::string, Tensor>;

// Define-by-run tape. Every op computes its value when recorded, so nodes are
// stored in topological order. The tape can be replayed by evaluate() after
// rebinding inputs or parameters; constants recorded from values (masks,
// bandwidths, stabilising shifts) stay fixed during replay and are treated as
// stop-gradient.
class Graph {
 public:
  NodeId input(std::string name, Tensor value);
  NodeId parameter(std::string name, Tensor value);
  NodeId constant(Tensor value);

  // Binary elementwise ops broadcast numpy-style (shapes aligned on the right).
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId shift(NodeId a, double offset);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId square(NodeId a);
  NodeId relu(NodeId a);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId reshape(NodeId a, Shape shape);
  NodeId gather_rows(NodeId a, std::vector<std::size_t> rows);

  // x: (C_in, H, W), weight: (C_out, C_in, k, k), k odd, zero "same" padding.
  NodeId conv2d(NodeId x, NodeId weight);
  // 2x2 average pooling with stride 2.
  NodeId downsample2(NodeId x);
  // Nearest-neighbour upsampling by an integer factor.
  NodeId upsample(NodeId x, std::size_t factor);

  NodeId softmax(NodeId x, std::size_t axis);
  NodeId sum(NodeId x);
  NodeId sum_axis(NodeId x, std::size_t axis);  // keeps the axis with size 1
  NodeId mean(NodeId x);

  void set_output(const std::string& name, NodeId node);

  const Tensor& value(NodeId node) const;
  const Shape& shape(NodeId node) const { return value(node).shape(); }
  OpKind kind(NodeId node) const;
  std::size_t size() const { return nodes_.size(); }

  std::vector<std::string> parameter_names() const;
  std::optional<NodeId> find_parameter(const std::string& name) const;
  void set_parameter(const std::string& name, Tensor value);

  // Rebinds the named inputs and replays every op in recorded order.
  std::map<std::string, Tensor> evaluate(const std::map<std::string, Tensor>& inputs);

  // Reverse sweep from a scalar node. Returns one gradient per parameter;
  // parameters the loss does not depend on get zeros.
  Gradients backpropagate(NodeId loss) const;

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<NodeId> inputs;
    Tensor value;
    bool needs_grad = false;
    double scalar = 0.0;
    std::size_t axis = 0;
    Shape shape_attr;
    std::vector<std::size_t> indices;
    std::vector<double> saved;  // im2col buffer for conv2d
    std::string name;
  };

  NodeId record(Node node);
  void run_forward(Node& node);
  void run_backward(const Node& node, std::vector<std::vector<double>>& grads) const;
  const Node& at(NodeId id) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> params_;
  std::map<std::string, NodeId> inputs_;
  std::map<std::string, NodeId> outputs_;
};

std::map<std::string, Tensor> evaluate(Graph& graph, const std::map<std::string, Tensor>& inputs);
Gradients backpropagate(const Graph& graph, NodeId loss);

// Central-difference gradient check of one parameter against backpropagate.
// Returns max |numeric - analytic| / max(|analytic|, 1e-8) over the checked
// elements. When max_elements is nonzero and smaller than the parameter,
// an evenly strided subset of elements is checked.
double finite_difference_check(Graph& graph, NodeId loss, const std::string& param, double epsilon,
                               std::size_t max_elements = 0);

}  // namespace alignlab
