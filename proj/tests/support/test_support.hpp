#pragma once

// Independent reference implementations and random graph generators shared by
// the unit and acceptance tests. Nothing here calls the curvature module.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "convexcert/graph.hpp"
#include "convexcert/random.hpp"
#include "convexcert/tensor.hpp"

namespace convexcert::testing {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(lo, hi);
  return m;
}

inline Matrix random_symmetric(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Matrix m = random_matrix(rng, n, n, lo, hi);
  symmetrize(m);
  return m;
}

// ---------------------------------------------------------------------------
// Loop references

inline Matrix matmul_loops(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Matrix conv_loops(const Matrix& a, const Matrix& k) {
  Matrix c(a.rows() - k.rows() + 1, a.cols() - k.cols() + 1);
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j)
      for (std::size_t p = 0; p < k.rows(); ++p)
        for (std::size_t q = 0; q < k.cols(); ++q) c(i, j) += a(i + p, j + q) * k(p, q);
  return c;
}

// ---------------------------------------------------------------------------
// Inertia bisection: the number of negative pivots of the LDL^T factorization
// of h - lambda I equals the number of eigenvalues below lambda (Sylvester).

inline std::size_t count_below(const Matrix& h, double lambda) {
  const std::size_t n = h.rows();
  std::vector<double> a(h.data().begin(), h.data().end());
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] -= lambda;
  std::size_t negative = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double d = a[k * n + k];
    if (d == 0.0) d = -1e-300;
    if (d < 0.0) ++negative;
    for (std::size_t i = k + 1; i < n; ++i) {
      const double l = a[i * n + k] / d;
      for (std::size_t j = k + 1; j <= i; ++j) a[i * n + j] -= l * a[j * n + k];
      for (std::size_t j = k + 1; j <= i; ++j) a[j * n + i] = a[i * n + j];
    }
  }
  return negative;
}

/// Eigenvalue number `k` (0-based ascending) by bisection on the inertia count.
inline double bisect_eigenvalue(const Matrix& h, std::size_t k, double tol = 1e-12) {
  double radius = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < h.cols(); ++j) r += std::abs(h(i, j));
    radius = std::max(radius, r);
  }
  double lo = -radius - 1.0;
  double hi = radius + 1.0;
  while (hi - lo > tol * std::max(1.0, radius)) {
    const double mid = 0.5 * (lo + hi);
    if (count_below(h, mid) > k) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// The four-point FD Hessian at the default step carries round-off of about
/// 1e-8 |E| per entry. Comparisons against it are only meaningful when the
/// Hessian stands well above that floor.
inline bool fd_resolvable(const Matrix& h_fd, double loss) {
  return frobenius_norm(h_fd) >= 1e-2 * std::max(1.0, std::abs(loss));
}

/// Exact Hessian of a square-loss objective whose prediction is affine in
/// `variable`: J^T J (times the loss weight), where J is the Jacobian of the
/// prediction. Central differences with a unit step are exact for an affine map.
inline Matrix gauss_newton_linear(const Graph& g, const Bindings& bindings, const std::string& variable) {
  const Node& loss = g.node(g.loss());
  const NodeId pred = loss.inputs.front();
  const std::size_t n = bindings.at(variable).size();
  Matrix jac;
  for (std::size_t k = 0; k < n; ++k) {
    Bindings plus = bindings;
    Bindings minus = bindings;
    plus[variable].data()[k] += 1.0;
    minus[variable].data()[k] -= 1.0;
    const Matrix a = forward(g, plus)[index_of(pred)];
    const Matrix b = forward(g, minus)[index_of(pred)];
    if (k == 0) jac = Matrix(a.size(), n);
    for (std::size_t r = 0; r < a.size(); ++r) jac(r, k) = 0.5 * (a.data()[r] - b.data()[r]);
  }
  Matrix h(n, n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q) {
      double s = 0.0;
      for (std::size_t r = 0; r < jac.rows(); ++r) s += jac(r, p) * jac(r, q);
      h(p, q) = loss.loss_weight * s;
    }
  return h;
}

// ---------------------------------------------------------------------------
// Circle reference: ancestor parameter sets by recursive descent.

inline std::set<std::string> ancestor_parameters(const Graph& g, NodeId id,
                                                 std::map<std::size_t, std::set<std::string>>& memo) {
  if (auto it = memo.find(index_of(id)); it != memo.end()) return it->second;
  std::set<std::string> out;
  const Node& n = g.node(id);
  if (n.kind == NodeKind::Parameter) out.insert(n.name);
  for (NodeId in : n.inputs) {
    const auto sub = ancestor_parameters(g, in, memo);
    out.insert(sub.begin(), sub.end());
  }
  memo[index_of(id)] = out;
  return out;
}

/// Names of nodes where at least two input slots have `variable` among their
/// ancestor parameters.
inline std::set<std::string> reference_meet_nodes(const Graph& g, const std::string& variable) {
  std::map<std::size_t, std::set<std::string>> memo;
  std::set<std::string> meets;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Node& n = g.nodes()[i];
    std::size_t hits = 0;
    for (NodeId in : n.inputs) hits += ancestor_parameters(g, in, memo).contains(variable);
    if (hits >= 2) meets.insert(n.name);
  }
  return meets;
}

// ---------------------------------------------------------------------------
// Random graphs

struct RandomGraph {
  Graph graph;
  Bindings bindings;
  std::vector<std::string> variables;  // parameters, each used exactly once
};

struct RandomGraphOptions {
  std::size_t max_layers = 4;
  std::size_t max_units = 16;
  std::size_t max_batch = 4;
  bool allow_relu = false;
  bool allow_cross_entropy = true;
  bool allow_absolute = true;
  bool linear = false;  // no Func nodes, square loss
};

/// A layered tree-structured graph: per layer z = W h (+ b broadcast)
/// (elem_mul with a fixed mask), then a scaled activation. The first layer's
/// input is sometimes a Parameter so that the right-operand MatMul rule is
/// exercised. Every parameter is consumed exactly once.
inline RandomGraph make_random_graph(std::uint64_t seed, const RandomGraphOptions& opt = {}) {
  Rng rng = Rng::stream(seed, "random-graph");
  GraphBuilder b;
  RandomGraph out;
  const std::size_t layers = 1 + rng.below(opt.max_layers);
  const std::size_t batch = 1 + rng.below(opt.max_batch);
  std::size_t width = 1 + rng.below(std::min<std::size_t>(opt.max_units, 4));

  NodeId h{};
  if (rng.below(3) == 0) {
    h = b.parameter("x");
    out.variables.push_back("x");
  } else {
    h = b.input("x");
  }
  out.bindings["x"] = random_matrix(rng, width, batch, -1.5, 1.5);

  const std::vector<FunctionId> funcs = opt.allow_relu
                                            ? std::vector<FunctionId>{FunctionId::Sigmoid, FunctionId::Tanh,
                                                                      FunctionId::Sin, FunctionId::Square,
                                                                      FunctionId::ReLU}
                                            : std::vector<FunctionId>{FunctionId::Sigmoid, FunctionId::Tanh,
                                                                      FunctionId::Sin, FunctionId::Square};
  LossId loss = LossId::Square;
  if (!opt.linear) {
    const auto pick = rng.below(4);
    if (pick == 1 && opt.allow_cross_entropy) loss = LossId::CrossEntropy;
    if (pick == 2 && opt.allow_absolute) loss = LossId::Absolute;
  }

  for (std::size_t l = 0; l < layers; ++l) {
    const std::string k = std::to_string(l + 1);
    const bool last = l + 1 == layers;
    const std::size_t next = last ? 1 + rng.below(3) : 1 + rng.below(opt.max_units);
    const NodeId w = b.parameter("W" + k);
    out.variables.push_back("W" + k);
    out.bindings["W" + k] = random_matrix(rng, next, width, -1.0 / std::sqrt(double(width)) - 0.3,
                                          1.0 / std::sqrt(double(width)) + 0.3);
    NodeId z = b.matmul("a" + k, w, h);
    if (rng.below(2) == 0) {
      const NodeId bias = b.parameter("b" + k);
      out.variables.push_back("b" + k);
      out.bindings["b" + k] = random_matrix(rng, next, 1, -0.5, 0.5);
      z = b.plus("z" + k, z, bias);
    }
    if (rng.below(4) == 0) {
      const NodeId mask = b.input("m" + k);
      out.bindings["m" + k] = random_matrix(rng, next, batch, 0.5, 1.5);
      z = b.elem_mul("e" + k, z, mask);
    }
    if (!opt.linear) {
      FunctionId f = funcs[rng.below(funcs.size())];
      if (last && loss == LossId::CrossEntropy) f = FunctionId::Sigmoid;
      const double delta = rng.below(2) == 0 ? 1.0 : rng.uniform(0.3, 1.0);
      z = b.func("h" + k, f, z, delta);
    }
    h = z;
    width = next;
  }
  const NodeId label = b.input("y");
  Matrix y = random_matrix(rng, width, batch, loss == LossId::CrossEntropy ? 0.0 : -1.0, 1.0);
  if (loss == LossId::Absolute) {
    // keep the prediction away from the kink
    for (double& v : y.data()) v += v >= 0 ? 3.0 : -3.0;
  }
  out.bindings["y"] = y;
  b.loss("E", loss, h, label);
  out.graph = b.build();
  return out;
}

/// conv(x, K) -> tanh -> matmul with a readout row -> square loss.
inline RandomGraph make_conv_graph(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "conv-graph");
  GraphBuilder b;
  RandomGraph out;
  const std::size_t ar = 3 + rng.below(2);
  const std::size_t ac = 3 + rng.below(2);
  const std::size_t kr = 2;
  const std::size_t kc = 1 + rng.below(2);
  const NodeId x = b.parameter("X");
  const NodeId k = b.parameter("K");
  const NodeId c = b.conv("c", x, k);
  const NodeId t = b.func("t", FunctionId::Tanh, c, rng.uniform(0.4, 1.0));
  const NodeId r = b.parameter("R");
  const NodeId o = b.matmul("o", r, t);
  b.loss("E", LossId::Square, o, b.input("y"));
  out.graph = b.build();
  out.variables = {"X", "K", "R"};
  out.bindings["X"] = random_matrix(rng, ar, ac);
  out.bindings["K"] = random_matrix(rng, kr, kc);
  out.bindings["R"] = random_matrix(rng, 2, ar - kr + 1);
  out.bindings["y"] = random_matrix(rng, 2, ac - kc + 1);
  return out;
}

/// Random DAG over at most `max_nodes` nodes: leaves are parameters, inner
/// nodes are Plus or ElemMul of two earlier nodes (scalars, so shapes always
/// agree), and a loss on the last node.
inline Graph make_random_dag(std::uint64_t seed, std::size_t max_nodes = 20) {
  Rng rng = Rng::stream(seed, "random-dag");
  GraphBuilder b;
  const std::size_t leaves = 2 + rng.below(4);
  const std::size_t inner = 1 + rng.below(max_nodes - leaves - 2);
  std::vector<NodeId> nodes;
  for (std::size_t i = 0; i < leaves; ++i) nodes.push_back(b.parameter("p" + std::to_string(i)));
  for (std::size_t i = 0; i < inner; ++i) {
    const NodeId u = nodes[rng.below(nodes.size())];
    const NodeId v = nodes[rng.below(nodes.size())];
    const std::string name = "n" + std::to_string(i);
    nodes.push_back(rng.below(2) == 0 ? b.plus(name, u, v) : b.elem_mul(name, u, v));
  }
  b.loss("E", LossId::Square, nodes.back(), b.input("y"));
  return b.build();
}

}  // namespace convexcert::testing
