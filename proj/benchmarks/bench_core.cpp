#include <benchmark/benchmark.h>

#include "convexcert/curvature.hpp"
#include "convexcert/oracle.hpp"
#include "convexcert/random.hpp"
#include "convexcert/train.hpp"

using namespace convexcert;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(-1.0, 1.0);
  return m;
}

/// x -> sigmoid(W1 x + b1) -> Wout h -> square loss, batch m.
struct Mlp {
  Graph graph;
  Bindings bindings;
};

Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t batch) {
  Rng rng(1);
  GraphBuilder b;
  const NodeId z = b.plus("z1", b.matmul("a1", b.parameter("W1"), b.input("x")), b.parameter("b1"));
  const NodeId h = b.func("h1", FunctionId::Sigmoid, z, 0.5);
  b.loss("E", LossId::Square, b.matmul("out", b.parameter("Wout"), h), b.input("y"));
  Mlp m{b.build(), {}};
  m.bindings = {{"x", random_matrix(rng, in, batch)},     {"W1", random_matrix(rng, hidden, in)},
                {"b1", random_matrix(rng, hidden, 1)},     {"Wout", random_matrix(rng, 3, hidden)},
                {"y", random_matrix(rng, 3, batch)}};
  return m;
}

void BM_JacobiMinEigen(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Matrix a = random_matrix(rng, n, n);
  symmetrize(a);
  for (auto _ : state) benchmark::DoNotOptimize(sym_eig_min(a));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_JacobiMinEigen)->RangeMultiplier(2)->Range(4, 64)->Complexity();

void BM_ForwardBackward(benchmark::State& state) {
  const Mlp m = make_mlp(16, static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) {
    const Activations acts = forward(m.graph, m.bindings);
    benchmark::DoNotOptimize(backward_gradients(m.graph, acts));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(8)->Arg(32)->Arg(128);

void BM_CurvaturePropagation(benchmark::State& state) {
  const Mlp m = make_mlp(4, static_cast<std::size_t>(state.range(0)), 8);
  for (auto _ : state) benchmark::DoNotOptimize(certify(m.graph, m.bindings, "W1"));
}
BENCHMARK(BM_CurvaturePropagation)->Arg(4)->Arg(8)->Arg(16);

void BM_FdHessian(benchmark::State& state) {
  const Mlp m = make_mlp(4, static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(fd_hessian(m.graph, m.bindings, "W1"));
}
BENCHMARK(BM_FdHessian)->Arg(2)->Arg(4)->Arg(8);

void BM_AdaDeltaStep(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  Bindings params = {{"W", random_matrix(rng, n, n)}};
  const std::map<std::string, Matrix> grads = {{"W", random_matrix(rng, n, n)}};
  std::map<std::string, AdaDeltaState> opt;
  for (auto _ : state) adadelta_step(params, grads, opt, OptimConfig{});
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_AdaDeltaStep)->Arg(32)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
