#include "doctest.h"

#include <cmath>
#include <set>

#include "convexcert/functions.hpp"
#include "convexcert/graph.hpp"
#include "convexcert/graph_io.hpp"
#include "test_support.hpp"

using namespace convexcert;
namespace t = convexcert::testing;

namespace {

/// E = square-loss(sigma(W x), yhat)
Graph sigmoid_chain() {
  GraphBuilder b;
  const NodeId w = b.parameter("W");
  const NodeId x = b.input("x");
  const NodeId a = b.matmul("a", w, x);
  const NodeId s = b.func("s", FunctionId::Sigmoid, a);
  b.loss("E", LossId::Square, s, b.input("y"));
  return b.build();
}

/// y = W sigma(W x)
Graph double_use() {
  GraphBuilder b;
  const NodeId w = b.parameter("W");
  const NodeId x = b.input("x");
  const NodeId inner = b.matmul("inner", w, x);
  const NodeId s = b.func("s", FunctionId::Sigmoid, inner);
  const NodeId outer = b.matmul("outer", w, s);
  b.loss("E", LossId::Square, outer, b.input("y"));
  return b.build();
}

/// E = 2 * 1/2 sin(delta x)^2
Graph sin_squared(double delta = 1.0) {
  GraphBuilder b;
  const NodeId x = b.parameter("x");
  const NodeId s = b.func("s", FunctionId::Sin, x, delta);
  b.loss("E", LossId::Square, s, b.input("zero"), 2.0);
  return b.build();
}

}  // namespace

TEST_CASE("forward: identity weight") {
  GraphBuilder b;
  const NodeId y = b.matmul("y", b.parameter("W"), b.input("x"));
  b.loss("E", LossId::Square, y, b.input("t"));
  const Graph g = b.build();
  const Activations acts = forward(g, {{"W", Matrix::identity(2)}, {"x", Matrix{{3}, {4}}}, {"t", Matrix{{0}, {0}}}});
  CHECK(acts[index_of(g.require("y"))] == Matrix{{3}, {4}});
}

TEST_CASE("forward: sigmoid of zero and the three-node chain") {
  const Graph g = sigmoid_chain();
  const Bindings bind = {{"W", Matrix{{1}}}, {"x", Matrix{{0}}}, {"y", Matrix{{0}}}};
  const Activations acts = forward(g, bind);
  CHECK(acts[index_of(g.require("s"))](0, 0) == 0.5);
  CHECK(acts[index_of(g.loss())](0, 0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(loss_value(g, bind) == 0.125);
}

TEST_CASE("forward: errors name the node") {
  const Graph g = sigmoid_chain();
  try {
    (void)forward(g, {{"W", Matrix{{1}}}, {"y", Matrix{{0}}}});
    FAIL("expected unbound error");
  } catch (const GraphError& e) {
    CHECK(std::string(e.what()).find("'x'") != std::string::npos);
  }
  try {
    (void)forward(g, {{"W", Matrix(1, 2)}, {"x", Matrix(3, 1)}, {"y", Matrix{{0}}}});
    FAIL("expected shape error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("'a'") != std::string::npos);
  }
}

TEST_CASE("forward: declared leaf shapes are enforced") {
  GraphBuilder b;
  const NodeId w = b.parameter("W", std::make_pair(std::size_t{2}, std::size_t{2}));
  b.loss("E", LossId::Square, w, b.input("y"));
  const Graph g = b.build();
  CHECK_THROWS_AS((void)forward(g, {{"W", Matrix(2, 3)}, {"y", Matrix(2, 3)}}), ShapeError);
}

TEST_CASE("forward: deterministic") {
  const t::RandomGraph rg = t::make_random_graph(3);
  CHECK(forward(rg.graph, rg.bindings) == forward(rg.graph, rg.bindings));
}

TEST_CASE("forward: plus broadcasts a column") {
  GraphBuilder b;
  const NodeId z = b.plus("z", b.input("a"), b.parameter("bias"));
  b.loss("E", LossId::Square, z, b.input("y"));
  const Graph g = b.build();
  const Activations acts =
      forward(g, {{"a", Matrix{{1, 2}, {3, 4}}}, {"bias", Matrix{{10}, {20}}}, {"y", Matrix(2, 2)}});
  CHECK(acts[index_of(g.require("z"))] == Matrix{{11, 12}, {23, 24}});
}

TEST_CASE("builder: validation") {
  {
    GraphBuilder b;
    b.parameter("x");
    CHECK_THROWS_AS(b.build(), GraphError);  // no loss
  }
  {
    GraphBuilder b;
    const NodeId x = b.parameter("x");
    CHECK_THROWS_AS(b.func("s", FunctionId::Tanh, x, 0.0), GraphError);
    CHECK_THROWS_AS(b.func("s", FunctionId::Tanh, x, 1.5), GraphError);
  }
  {
    GraphBuilder b;
    const NodeId x = b.parameter("x");
    b.loss("E", LossId::Square, x, b.parameter("label"));
    CHECK_THROWS_AS(b.build(), GraphError);  // label must be an Input
  }
  {
    GraphBuilder b;
    const NodeId x = b.parameter("x");
    const NodeId e = b.loss("E", LossId::Square, x, b.input("y"));
    CHECK_THROWS_AS(b.func("after", FunctionId::Tanh, e), GraphError);  // loss must be a sink
  }
  {
    GraphBuilder b;
    b.parameter("x");
    CHECK_THROWS_AS(b.parameter("x"), GraphError);  // duplicate name
  }
}

TEST_CASE("detect_circles: examples") {
  const auto circles = detect_circles(double_use(), "W");
  REQUIRE(circles.size() == 1);
  CHECK(circles[0].meet_node == "outer");
  CHECK(circles[0].variable == "W");
  CHECK(circles[0].branches.size() == 2);

  GraphBuilder b;
  const NodeId y = b.matmul("y", b.parameter("W"), b.input("x"));
  b.loss("E", LossId::Square, y, b.input("t"));
  CHECK(detect_circles(b.build(), "W").empty());

  CHECK_THROWS_AS(detect_circles(double_use(), "nope"), GraphError);
  CHECK_THROWS_AS(detect_circles(double_use(), "x"), GraphError);  // not a parameter
}

TEST_CASE("detect_circles: unrolled two-step recurrence meets at the outer matmul") {
  GraphBuilder b;
  const NodeId w = b.parameter("W");
  const NodeId h0 = b.input("h0");
  const NodeId h1 = b.func("h1", FunctionId::Tanh, b.matmul("m1", w, h0));
  const NodeId h2 = b.func("h2", FunctionId::Tanh, b.matmul("m2", w, h1));
  b.loss("E", LossId::Square, h2, b.input("y"));
  const auto circles = detect_circles(b.build(), "W");
  REQUIRE(circles.size() == 1);
  CHECK(circles[0].meet_node == "m2");
}

TEST_CASE("detect_circles: sound and complete on 200 random DAGs") {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const Graph g = t::make_random_dag(seed, 20);
    CHECK(g.size() <= 20);
    for (NodeId p : g.parameters()) {
      const std::string var = g.node(p).name;
      std::set<std::string> found;
      for (const auto& c : detect_circles(g, var)) found.insert(c.meet_node);
      CHECK_MESSAGE(found == t::reference_meet_nodes(g, var), "seed " << seed << " variable " << var);
    }
  }
}

TEST_CASE("apply_scale: sigmoid node computes sigma(0.5 x)") {
  GraphBuilder b;
  const NodeId s = b.func("s", FunctionId::Sigmoid, b.parameter("x"));
  b.loss("E", LossId::Square, s, b.input("y"));
  const Graph g = b.build();
  const Graph scaled = apply_scale(g, {{"s", 0.5}});
  CHECK(g.node(g.require("s")).delta == 1.0);
  const Activations acts = forward(scaled, {{"x", Matrix{{1.7}}}, {"y", Matrix{{0}}}});
  CHECK(acts[index_of(scaled.require("s"))](0, 0) == 1.0 / (1.0 + std::exp(-0.85)));
}

TEST_CASE("apply_scale: empty plan and reset") {
  const t::RandomGraph rg = t::make_random_graph(17);
  CHECK(apply_scale(rg.graph, {}) == rg.graph);
  const Graph scaled = apply_scale(rg.graph, uniform_plan(rg.graph, 0.37));
  std::map<std::string, double> reset;
  for (NodeId f : rg.graph.func_nodes()) reset[rg.graph.node(f).name] = rg.graph.node(f).delta;
  CHECK(forward(apply_scale(scaled, reset), rg.bindings) == forward(rg.graph, rg.bindings));
}

TEST_CASE("apply_scale: sin node at 0.3 gives sin^2(0.6) at x = 2") {
  const Graph g = apply_scale(sin_squared(), {{"s", 0.3}});
  const double e = loss_value(g, {{"x", Matrix{{2}}}, {"zero", Matrix{{0}}}});
  CHECK(e == doctest::Approx(std::pow(std::sin(0.6), 2)).epsilon(1e-15));
  CHECK(e == doctest::Approx(0.3188).epsilon(1e-4));
}

TEST_CASE("apply_scale: errors") {
  const Graph g = sin_squared();
  CHECK_THROWS_AS(apply_scale(g, {{"s", 0.0}}), GraphError);
  CHECK_THROWS_AS(apply_scale(g, {{"s", 1.01}}), GraphError);
  CHECK_THROWS_AS(apply_scale(g, {{"x", 0.5}}), GraphError);
  CHECK_THROWS_AS(apply_scale(g, {{"missing", 0.5}}), GraphError);
}

TEST_CASE("conv_valid: examples") {
  Rng rng(4);
  const Matrix a = t::random_matrix(rng, 3, 4);
  CHECK(conv_valid(a, Matrix{{1}}) == a);
  CHECK(conv_valid(Matrix{{1, 2}, {3, 4}}, Matrix{{1, 0}, {0, 1}}) == Matrix{{5}});
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix x = t::random_matrix(rng, 5, 5);
    const Matrix k = t::random_matrix(rng, 3, 3);
    const Matrix c = conv_valid(x, k);
    const Matrix ref = t::conv_loops(x, k);
    REQUIRE(c.rows() == 3);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(conv_valid(Matrix(2, 2), Matrix(3, 1)), ShapeError);
}

TEST_CASE("conv jacobians reproduce the linear map") {
  Rng rng(8);
  const Matrix x = t::random_matrix(rng, 4, 3);
  const Matrix k = t::random_matrix(rng, 2, 2);
  const Matrix c = conv_valid(x, k);
  const Matrix jx = conv_jacobian_input(4, 3, k);
  const Matrix jk = conv_jacobian_kernel(x, 2, 2);
  const Matrix vx(x.size(), 1, std::vector<double>(x.data().begin(), x.data().end()));
  const Matrix vk(k.size(), 1, std::vector<double>(k.data().begin(), k.data().end()));
  const Matrix cx = matmul(jx, vx);
  const Matrix ck = matmul(jk, vk);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(cx.data()[i] == doctest::Approx(c.data()[i]).epsilon(1e-14));
    CHECK(ck.data()[i] == doctest::Approx(c.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("functions: analytic derivatives match central differences") {
  Rng rng(31);
  const FunctionLibrary& lib = FunctionLibrary::builtin();
  for (FunctionId f : kAllFunctions) {
    const ActivationFns& fns = lib.get(f);
    for (int k = 0; k < 100; ++k) {
      double x = rng.uniform(-5.0, 5.0);
      if (f == FunctionId::ReLU && std::abs(x) < 1e-3) x += 0.01;
      const double h1 = 1e-6;
      const double h2 = 1e-4;
      const double d1 = (fns.value(x + h1) - fns.value(x - h1)) / (2 * h1);
      const double d2 = (fns.d1(x + h2) - fns.d1(x - h2)) / (2 * h2);
      CHECK_MESSAGE(std::abs(fns.d1(x) - d1) <= 1e-6 * std::max(1.0, std::abs(d1)), to_string(f) << " at " << x);
      CHECK_MESSAGE(std::abs(fns.d2(x) - d2) <= 1e-6 * std::max(1.0, std::abs(d2)), to_string(f) << " at " << x);
    }
  }
}

TEST_CASE("functions: scaled derivatives carry delta and delta squared") {
  const ScaledDerivatives d = FunctionLibrary::builtin().eval(FunctionId::Sin, 0.3, 2.0);
  CHECK(d.value == std::sin(0.6));
  CHECK(d.d1 == doctest::Approx(0.3 * std::cos(0.6)).epsilon(1e-15));
  CHECK(d.d2 == doctest::Approx(-0.09 * std::sin(0.6)).epsilon(1e-15));
  const ScaledDerivatives r = FunctionLibrary::builtin().eval(FunctionId::ReLU, 1.0, 0.0);
  CHECK(r.d1 == 0.0);
  CHECK(r.d2 == 0.0);
}

TEST_CASE("functions: names round-trip") {
  for (FunctionId f : kAllFunctions) CHECK(function_from_string(to_string(f)) == f);
  CHECK_FALSE(function_from_string("softplus").has_value());
  for (LossId l : {LossId::Square, LossId::Absolute, LossId::CrossEntropy}) CHECK(loss_from_string(to_string(l)) == l);
}

TEST_CASE("graph json: round trip and rejection") {
  const t::RandomGraph rg = t::make_random_graph(5);
  const std::string text = graph_to_json(rg.graph, rg.bindings);
  const GraphDocument doc = parse_graph_json(text);
  CHECK(doc.graph == rg.graph);
  CHECK(doc.bindings == rg.bindings);

  CHECK_THROWS_AS(parse_graph_json("{"), GraphFormatError);
  CHECK_THROWS_AS(parse_graph_json(R"({"nodes":[{"id":"x","kind":"tensor"}]})"), GraphFormatError);
  CHECK_THROWS_AS(parse_graph_json(R"({"nodes":[{"id":"x","kind":"input","extra":1}]})"), GraphFormatError);
  CHECK_THROWS_AS(
      parse_graph_json(R"({"nodes":[{"id":"a","kind":"plus","inputs":["b","b"]},
                                     {"id":"b","kind":"plus","inputs":["a","a"]}]})"),
      GraphFormatError);
  CHECK_THROWS_AS(parse_graph_json(R"({"nodes":[{"id":"a","kind":"func","inputs":["q"],"params":{"func":"tanh"}}]})"),
                  GraphFormatError);
}

TEST_CASE("graph json: nodes may be listed in any order") {
  const GraphDocument doc = parse_graph_json(R"({
    "nodes": [
      {"id": "E", "kind": "loss", "inputs": ["s", "zero"], "params": {"loss": "square", "weight": 2.0}},
      {"id": "s", "kind": "func", "inputs": ["x"], "params": {"func": "sin", "delta": 0.3}},
      {"id": "zero", "kind": "input"},
      {"id": "x", "kind": "parameter", "params": {"shape": [1, 1]}}
    ],
    "bindings": {"x": [[2.0]], "zero": [[0.0]]}
  })");
  CHECK(doc.graph.node(doc.graph.loss()).loss_weight == 2.0);
  CHECK(loss_value(doc.graph, doc.bindings) == doctest::Approx(std::pow(std::sin(0.6), 2)).epsilon(1e-15));
}
