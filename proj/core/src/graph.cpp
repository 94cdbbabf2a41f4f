#include "convexcert/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace convexcert {

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Input: return "input";
    case NodeKind::Parameter: return "parameter";
    case NodeKind::Plus: return "plus";
    case NodeKind::ElemMul: return "elem_mul";
    case NodeKind::MatMul: return "matmul";
    case NodeKind::Conv: return "conv";
    case NodeKind::Func: return "func";
    case NodeKind::Loss: return "loss";
  }
  return "?";
}

std::optional<NodeKind> node_kind_from_string(std::string_view name) {
  for (NodeKind k : {NodeKind::Input, NodeKind::Parameter, NodeKind::Plus, NodeKind::ElemMul,
                     NodeKind::MatMul, NodeKind::Conv, NodeKind::Func, NodeKind::Loss}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

std::optional<NodeId> Graph::find(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].name == name) return NodeId{i};
  return std::nullopt;
}

NodeId Graph::require(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw GraphError("unknown node '" + std::string(name) + "'");
}

std::vector<NodeId> Graph::parameters() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == NodeKind::Parameter) out.push_back(NodeId{i});
  return out;
}

std::vector<NodeId> Graph::func_nodes() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == NodeKind::Func) out.push_back(NodeId{i});
  return out;
}

std::vector<std::pair<NodeId, std::size_t>> Graph::consumers(NodeId id) const {
  std::vector<std::pair<NodeId, std::size_t>> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& in = nodes_[i].inputs;
    for (std::size_t slot = 0; slot < in.size(); ++slot)
      if (in[slot] == id) out.emplace_back(NodeId{i}, slot);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Builder

namespace {

std::size_t arity(NodeKind kind) {
  switch (kind) {
    case NodeKind::Input:
    case NodeKind::Parameter: return 0;
    case NodeKind::Func: return 1;
    default: return 2;
  }
}

}  // namespace

NodeId GraphBuilder::add(Node node) {
  if (node.name.empty()) throw GraphError("node name must not be empty");
  for (const Node& n : nodes_)
    if (n.name == node.name) throw GraphError("duplicate node name '" + node.name + "'");
  if (node.inputs.size() != arity(node.kind)) {
    throw GraphError("node '" + node.name + "' of kind " + std::string(to_string(node.kind)) +
                     " expects " + std::to_string(arity(node.kind)) + " inputs, got " +
                     std::to_string(node.inputs.size()));
  }
  for (NodeId in : node.inputs) {
    if (index_of(in) >= nodes_.size()) throw GraphError("node '" + node.name + "' references a later node");
    if (nodes_[index_of(in)].kind == NodeKind::Loss) {
      throw GraphError("node '" + node.name + "' consumes loss node '" + nodes_[index_of(in)].name + "'");
    }
  }
  if (node.kind == NodeKind::Func && !(node.delta > 0.0 && node.delta <= 1.0)) {
    throw GraphError("node '" + node.name + "': scale factor must lie in (0, 1]");
  }
  if (node.kind == NodeKind::Loss && !(node.loss_weight > 0.0 && std::isfinite(node.loss_weight))) {
    throw GraphError("node '" + node.name + "': loss weight must be positive");
  }
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId GraphBuilder::input(std::string name, std::optional<std::pair<std::size_t, std::size_t>> shape) {
  Node n;
  n.name = std::move(name);
  n.kind = NodeKind::Input;
  n.shape = shape;
  return add(std::move(n));
}

NodeId GraphBuilder::parameter(std::string name, std::optional<std::pair<std::size_t, std::size_t>> shape) {
  Node n;
  n.name = std::move(name);
  n.kind = NodeKind::Parameter;
  n.shape = shape;
  return add(std::move(n));
}

namespace {

Node binary(std::string name, NodeKind kind, NodeId a, NodeId b) {
  Node n;
  n.name = std::move(name);
  n.kind = kind;
  n.inputs = {a, b};
  return n;
}

}  // namespace

NodeId GraphBuilder::plus(std::string name, NodeId a, NodeId b) {
  return add(binary(std::move(name), NodeKind::Plus, a, b));
}
NodeId GraphBuilder::elem_mul(std::string name, NodeId a, NodeId b) {
  return add(binary(std::move(name), NodeKind::ElemMul, a, b));
}
NodeId GraphBuilder::matmul(std::string name, NodeId a, NodeId b) {
  return add(binary(std::move(name), NodeKind::MatMul, a, b));
}
NodeId GraphBuilder::conv(std::string name, NodeId input, NodeId kernel) {
  return add(binary(std::move(name), NodeKind::Conv, input, kernel));
}

NodeId GraphBuilder::func(std::string name, FunctionId f, NodeId a, double delta) {
  Node n;
  n.name = std::move(name);
  n.kind = NodeKind::Func;
  n.inputs = {a};
  n.func = f;
  n.delta = delta;
  return add(std::move(n));
}

NodeId GraphBuilder::loss(std::string name, LossId l, NodeId prediction, NodeId label, double weight) {
  Node n = binary(std::move(name), NodeKind::Loss, prediction, label);
  n.loss = l;
  n.loss_weight = weight;
  return add(std::move(n));
}

Graph GraphBuilder::build() const {
  Graph g;
  g.nodes_ = nodes_;
  std::optional<NodeId> loss;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind != NodeKind::Loss) continue;
    if (loss) throw GraphError("graph has more than one loss node");
    loss = NodeId{i};
  }
  if (!loss) throw GraphError("graph has no loss node");
  const Node& l = nodes_[index_of(*loss)];
  if (nodes_[index_of(l.inputs[1])].kind != NodeKind::Input) {
    throw GraphError("loss node '" + l.name + "': label '" + nodes_[index_of(l.inputs[1])].name +
                     "' must be an input node");
  }
  g.loss_ = *loss;
  return g;
}

// ---------------------------------------------------------------------------
// Forward

Matrix conv_valid(const Matrix& a, const Matrix& k) {
  if (k.rows() == 0 || k.cols() == 0 || k.rows() > a.rows() || k.cols() > a.cols()) {
    throw ShapeError("conv: kernel " + k.shape_string() + " does not fit input " + a.shape_string());
  }
  const std::size_t out_r = a.rows() - k.rows() + 1;
  const std::size_t out_c = a.cols() - k.cols() + 1;
  Matrix c(out_r, out_c);
  for (std::size_t i = 0; i < out_r; ++i)
    for (std::size_t j = 0; j < out_c; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k.rows(); ++p)
        for (std::size_t q = 0; q < k.cols(); ++q) s += a(i + p, j + q) * k(p, q);
      c(i, j) = s;
    }
  return c;
}

Matrix conv_jacobian_input(std::size_t a_rows, std::size_t a_cols, const Matrix& k) {
  const std::size_t out_r = a_rows - k.rows() + 1;
  const std::size_t out_c = a_cols - k.cols() + 1;
  Matrix j(out_r * out_c, a_rows * a_cols);
  for (std::size_t i = 0; i < out_r; ++i)
    for (std::size_t c = 0; c < out_c; ++c)
      for (std::size_t p = 0; p < k.rows(); ++p)
        for (std::size_t q = 0; q < k.cols(); ++q) j(i * out_c + c, (i + p) * a_cols + (c + q)) = k(p, q);
  return j;
}

Matrix conv_jacobian_kernel(const Matrix& a, std::size_t k_rows, std::size_t k_cols) {
  const std::size_t out_r = a.rows() - k_rows + 1;
  const std::size_t out_c = a.cols() - k_cols + 1;
  Matrix j(out_r * out_c, k_rows * k_cols);
  for (std::size_t i = 0; i < out_r; ++i)
    for (std::size_t c = 0; c < out_c; ++c)
      for (std::size_t p = 0; p < k_rows; ++p)
        for (std::size_t q = 0; q < k_cols; ++q) j(i * out_c + c, p * k_cols + q) = a(i + p, c + q);
  return j;
}

namespace {

bool is_column_broadcast(const Matrix& narrow, const Matrix& wide) {
  return narrow.cols() == 1 && wide.cols() > 1 && narrow.rows() == wide.rows();
}

Matrix plus_forward(const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return add(a, b);
  const bool a_narrow = is_column_broadcast(a, b);
  if (!a_narrow && !is_column_broadcast(b, a)) {
    throw ShapeError("plus: operand shapes " + a.shape_string() + " and " + b.shape_string() +
                     " are neither equal nor column-broadcastable");
  }
  const Matrix& wide = a_narrow ? b : a;
  const Matrix& narrow = a_narrow ? a : b;
  Matrix c = wide;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) += narrow(i, 0);
  return c;
}

void check_cross_entropy_domain(const Matrix& y, const Matrix& yhat) {
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double p = y.data()[k];
    if (!(p > 0.0 && p < 1.0)) {
      throw std::domain_error("cross entropy: prediction " + std::to_string(p) + " outside (0, 1)");
    }
    const double t = yhat.data()[k];
    if (!(t >= 0.0 && t <= 1.0)) {
      throw std::domain_error("cross entropy: label " + std::to_string(t) + " outside [0, 1]");
    }
  }
}

}  // namespace

double evaluate_loss(LossId id, const Matrix& y, const Matrix& yhat, double weight) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols()) {
    throw ShapeError("loss: prediction " + y.shape_string() + " and label " + yhat.shape_string() + " differ");
  }
  double s = 0.0;
  switch (id) {
    case LossId::Square:
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double d = y.data()[k] - yhat.data()[k];
        s += 0.5 * d * d;
      }
      break;
    case LossId::Absolute:
      for (std::size_t k = 0; k < y.size(); ++k) s += std::abs(y.data()[k] - yhat.data()[k]);
      break;
    case LossId::CrossEntropy:
      check_cross_entropy_domain(y, yhat);
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double p = y.data()[k];
        const double t = yhat.data()[k];
        s -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
      }
      break;
  }
  return weight * s;
}

Matrix loss_gradient(LossId id, const Matrix& y, const Matrix& yhat, double weight) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols()) {
    throw ShapeError("loss: prediction " + y.shape_string() + " and label " + yhat.shape_string() + " differ");
  }
  Matrix g(y.rows(), y.cols());
  switch (id) {
    case LossId::Square:
      for (std::size_t k = 0; k < y.size(); ++k) g.data()[k] = weight * (y.data()[k] - yhat.data()[k]);
      break;
    case LossId::Absolute:
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double d = y.data()[k] - yhat.data()[k];
        g.data()[k] = weight * static_cast<double>((d > 0) - (d < 0));
      }
      break;
    case LossId::CrossEntropy:
      check_cross_entropy_domain(y, yhat);
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double p = y.data()[k];
        const double t = yhat.data()[k];
        g.data()[k] = weight * (-t / p + (1.0 - t) / (1.0 - p));
      }
      break;
  }
  return g;
}

Activations forward(const Graph& g, const Bindings& bindings, const FunctionLibrary& lib) {
  Activations acts(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Node& n = g.nodes()[i];
    auto in = [&](std::size_t slot) -> const Matrix& { return acts[index_of(n.inputs[slot])]; };
    try {
      switch (n.kind) {
        case NodeKind::Input:
        case NodeKind::Parameter: {
          auto it = bindings.find(n.name);
          if (it == bindings.end()) throw GraphError("node '" + n.name + "' is unbound");
          if (n.shape && (it->second.rows() != n.shape->first || it->second.cols() != n.shape->second)) {
            throw ShapeError("bound value " + it->second.shape_string() + " does not match declared " +
                             std::to_string(n.shape->first) + "x" + std::to_string(n.shape->second));
          }
          if (it->second.empty()) throw ShapeError("bound value is empty");
          acts[i] = it->second;
          break;
        }
        case NodeKind::Plus: acts[i] = plus_forward(in(0), in(1)); break;
        case NodeKind::ElemMul: acts[i] = hadamard(in(0), in(1)); break;
        case NodeKind::MatMul: acts[i] = matmul(in(0), in(1)); break;
        case NodeKind::Conv: acts[i] = conv_valid(in(0), in(1)); break;
        case NodeKind::Func: {
          Matrix c = in(0);
          for (double& x : c.data()) x = lib.value(n.func, n.delta, x);
          acts[i] = std::move(c);
          break;
        }
        case NodeKind::Loss:
          acts[i] = Matrix(1, 1, evaluate_loss(n.loss, in(0), in(1), n.loss_weight));
          break;
      }
    } catch (const GraphError&) {
      throw;
    } catch (const ShapeError& e) {
      throw ShapeError("node '" + n.name + "': " + e.what());
    } catch (const std::domain_error& e) {
      throw std::domain_error("node '" + n.name + "': " + e.what());
    }
  }
  return acts;
}

double loss_value(const Graph& g, const Bindings& bindings, const FunctionLibrary& lib) {
  return forward(g, bindings, lib)[index_of(g.loss())](0, 0);
}

std::vector<Matrix> backward_gradients(const Graph& g, const Activations& acts, const FunctionLibrary& lib) {
  std::vector<Matrix> grads(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) grads[i] = Matrix(acts[i].rows(), acts[i].cols());
  grads[index_of(g.loss())](0, 0) = 1.0;

  auto accumulate = [&](NodeId target, const Matrix& contribution) {
    Matrix& dst = grads[index_of(target)];
    if (dst.rows() == contribution.rows() && dst.cols() == contribution.cols()) {
      for (std::size_t k = 0; k < dst.size(); ++k) dst.data()[k] += contribution.data()[k];
      return;
    }
    // column-broadcast operand of a Plus
    for (std::size_t r = 0; r < contribution.rows(); ++r)
      for (std::size_t c = 0; c < contribution.cols(); ++c) dst(r, 0) += contribution(r, c);
  };

  for (std::size_t i = g.size(); i-- > 0;) {
    const Node& n = g.nodes()[i];
    const Matrix& G = grads[i];
    auto act = [&](std::size_t slot) -> const Matrix& { return acts[index_of(n.inputs[slot])]; };
    switch (n.kind) {
      case NodeKind::Input:
      case NodeKind::Parameter: break;
      case NodeKind::Plus:
        accumulate(n.inputs[0], G);
        accumulate(n.inputs[1], G);
        break;
      case NodeKind::ElemMul:
        accumulate(n.inputs[0], hadamard(G, act(1)));
        accumulate(n.inputs[1], hadamard(G, act(0)));
        break;
      case NodeKind::MatMul:
        accumulate(n.inputs[0], matmul(G, transpose(act(1))));
        accumulate(n.inputs[1], matmul(transpose(act(0)), G));
        break;
      case NodeKind::Conv: {
        const Matrix& a = act(0);
        const Matrix& k = act(1);
        Matrix ga(a.rows(), a.cols());
        Matrix gk(k.rows(), k.cols());
        for (std::size_t r = 0; r < G.rows(); ++r)
          for (std::size_t c = 0; c < G.cols(); ++c) {
            const double gv = G(r, c);
            for (std::size_t p = 0; p < k.rows(); ++p)
              for (std::size_t q = 0; q < k.cols(); ++q) {
                ga(r + p, c + q) += gv * k(p, q);
                gk(p, q) += gv * a(r + p, c + q);
              }
          }
        accumulate(n.inputs[0], ga);
        accumulate(n.inputs[1], gk);
        break;
      }
      case NodeKind::Func: {
        const Matrix& a = act(0);
        Matrix ga(a.rows(), a.cols());
        for (std::size_t k = 0; k < a.size(); ++k)
          ga.data()[k] = G.data()[k] * lib.eval(n.func, n.delta, a.data()[k]).d1;
        accumulate(n.inputs[0], ga);
        break;
      }
      case NodeKind::Loss:
        accumulate(n.inputs[0], scale(loss_gradient(n.loss, act(0), act(1), n.loss_weight), G(0, 0)));
        break;
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Structure

std::vector<bool> depends_on(const Graph& g, NodeId id) {
  std::vector<bool> dep(g.size(), false);
  dep[index_of(id)] = true;
  for (std::size_t i = index_of(id) + 1; i < g.size(); ++i)
    for (NodeId in : g.nodes()[i].inputs)
      if (dep[index_of(in)]) dep[i] = true;
  return dep;
}

std::vector<CirclePath> detect_circles(const Graph& g, std::string_view variable) {
  const NodeId var = g.require(variable);
  if (g.node(var).kind != NodeKind::Parameter) {
    throw GraphError("node '" + std::string(variable) + "' is not a parameter");
  }
  const std::vector<bool> dep = depends_on(g, var);

  auto describe = [&](NodeId from) {
    std::vector<std::string> chain;
    NodeId cur = from;
    while (cur != var) {
      chain.push_back(g.node(cur).name);
      const auto& ins = g.node(cur).inputs;
      cur = *std::find_if(ins.begin(), ins.end(), [&](NodeId x) { return dep[index_of(x)]; });
    }
    std::string s = g.node(var).name;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) s += " -> " + *it;
    return s;
  };

  std::vector<CirclePath> circles;
  for (std::size_t i = index_of(var) + 1; i < g.size(); ++i) {
    const Node& n = g.nodes()[i];
    std::vector<std::string> branches;
    for (NodeId in : n.inputs)
      if (dep[index_of(in)]) branches.push_back(describe(in));
    if (branches.size() >= 2) circles.push_back({std::string(variable), n.name, std::move(branches)});
  }
  return circles;
}

Graph apply_scale(const Graph& g, const std::map<std::string, double>& plan) {
  GraphBuilder rebuilt;
  std::vector<Node> nodes = g.nodes();
  for (const auto& [name, delta] : plan) {
    const NodeId id = g.require(name);
    Node& n = nodes[index_of(id)];
    if (n.kind != NodeKind::Func) throw GraphError("scale target '" + name + "' is not a function node");
    if (!(delta > 0.0 && delta <= 1.0)) {
      throw GraphError("scale factor " + std::to_string(delta) + " for '" + name + "' outside (0, 1]");
    }
    n.delta = delta;
  }
  for (Node& n : nodes) rebuilt.add(std::move(n));
  return rebuilt.build();
}

std::map<std::string, double> uniform_plan(const Graph& g, double delta) {
  std::map<std::string, double> plan;
  for (NodeId id : g.func_nodes()) plan[g.node(id).name] = delta;
  return plan;
}

}  // namespace convexcert
