#pragma once

// Computation graphs built from operator, function, loss and leaf nodes.
//
// A Graph is immutable once built. Nodes are stored in topological order, so
// every node's inputs precede it. Recurrences are expressed by unrolling and
// reusing the same Parameter node at every step.

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convexcert/functions.hpp"
#include "convexcert/tensor.hpp"

namespace convexcert {

class GraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class NodeId : std::size_t {};

constexpr std::size_t index_of(NodeId id) { return static_cast<std::size_t>(id); }

enum class NodeKind { Input, Parameter, Plus, ElemMul, MatMul, Conv, Func, Loss };

std::string_view to_string(NodeKind kind);
std::optional<NodeKind> node_kind_from_string(std::string_view name);

struct Node {
  std::string name;
  NodeKind kind = NodeKind::Input;
  std::vector<NodeId> inputs;
  FunctionId func = FunctionId::Sigmoid;  // Func only
  double delta = 1.0;                     // Func only, in (0, 1]
  LossId loss = LossId::Square;           // Loss only
  double loss_weight = 1.0;               // Loss only
  std::optional<std::pair<std::size_t, std::size_t>> shape;  // declared leaf shape

  bool operator==(const Node&) const = default;
};

class Graph {
 public:
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(index_of(id)); }
  std::size_t size() const { return nodes_.size(); }

  std::optional<NodeId> find(std::string_view name) const;
  /// Like find, but throws GraphError naming the missing node.
  NodeId require(std::string_view name) const;

  NodeId loss() const { return loss_; }
  std::vector<NodeId> parameters() const;
  std::vector<NodeId> func_nodes() const;
  /// Nodes consuming `id`, once per input slot.
  std::vector<std::pair<NodeId, std::size_t>> consumers(NodeId id) const;

  bool operator==(const Graph&) const = default;

 private:
  friend class GraphBuilder;
  std::vector<Node> nodes_;
  NodeId loss_{};
};

class GraphBuilder {
 public:
  NodeId input(std::string name, std::optional<std::pair<std::size_t, std::size_t>> shape = {});
  NodeId parameter(std::string name, std::optional<std::pair<std::size_t, std::size_t>> shape = {});
  NodeId plus(std::string name, NodeId a, NodeId b);
  NodeId elem_mul(std::string name, NodeId a, NodeId b);
  NodeId matmul(std::string name, NodeId a, NodeId b);
  NodeId conv(std::string name, NodeId input, NodeId kernel);
  NodeId func(std::string name, FunctionId f, NodeId a, double delta = 1.0);
  NodeId loss(std::string name, LossId l, NodeId prediction, NodeId label, double weight = 1.0);

  /// Appends a node whose inputs already exist. Used by the JSON loader.
  NodeId add(Node node);

  /// Validates: exactly one Loss node, it is a sink, its label is an Input.
  Graph build() const;

 private:
  std::vector<Node> nodes_;
};

/// Leaf values keyed by node name.
using Bindings = std::map<std::string, Matrix>;

/// One matrix per node, indexed by NodeId.
using Activations = std::vector<Matrix>;

Activations forward(const Graph& g, const Bindings& bindings,
                    const FunctionLibrary& lib = FunctionLibrary::builtin());

/// Scalar objective at the given bindings.
double loss_value(const Graph& g, const Bindings& bindings,
                  const FunctionLibrary& lib = FunctionLibrary::builtin());

/// Loss value for prediction y and label yhat, summed over all entries and
/// multiplied by `weight`.
double evaluate_loss(LossId id, const Matrix& y, const Matrix& yhat, double weight);

/// dE/dy for the loss above.
Matrix loss_gradient(LossId id, const Matrix& y, const Matrix& yhat, double weight);

/// Reverse-mode first-order gradients dE/d(node) for every node. Label inputs
/// are constants and receive zero.
std::vector<Matrix> backward_gradients(const Graph& g, const Activations& acts,
                                       const FunctionLibrary& lib = FunctionLibrary::builtin());

/// Valid-mode, stride-1, single-channel 2-D cross-correlation.
Matrix conv_valid(const Matrix& a, const Matrix& k);

/// Jacobian of vec(conv_valid(a, k)) with respect to vec(a), k fixed.
Matrix conv_jacobian_input(std::size_t a_rows, std::size_t a_cols, const Matrix& k);
/// Jacobian of vec(conv_valid(a, k)) with respect to vec(k), a fixed.
Matrix conv_jacobian_kernel(const Matrix& a, std::size_t k_rows, std::size_t k_cols);

struct CirclePath {
  std::string variable;
  std::string meet_node;
  /// One entry per input slot of the meet node that depends on the variable,
  /// e.g. "W -> a1 -> h1".
  std::vector<std::string> branches;
};

/// Nodes where two or more input slots depend on `variable`. Empty iff the
/// graph is tree-structured with respect to it.
std::vector<CirclePath> detect_circles(const Graph& g, std::string_view variable);

/// Per node: true iff the node is `id` or depends on it.
std::vector<bool> depends_on(const Graph& g, NodeId id);

/// Copy of `g` with the listed Func nodes' scale factors replaced.
Graph apply_scale(const Graph& g, const std::map<std::string, double>& plan);

/// Plan assigning `delta` to every Func node.
std::map<std::string, double> uniform_plan(const Graph& g, double delta);

}  // namespace convexcert
