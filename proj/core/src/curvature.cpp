#include "convexcert/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "convexcert/random.hpp"

namespace convexcert {

namespace {

std::string describe_circles(const std::vector<CirclePath>& circles) {
  std::string s = "circle detected";
  for (const auto& c : circles) {
    s += "; meet node '" + c.meet_node + "' via";
    for (const auto& b : c.branches) s += " [" + b + "]";
  }
  return s;
}

}  // namespace

CircleError::CircleError(std::vector<CirclePath> circles)
    : std::runtime_error(describe_circles(circles)), circles_(std::move(circles)) {}

LossSeed loss_seed(LossId id, const Matrix& y, const Matrix& yhat, double weight) {
  Matrix grad = loss_gradient(id, y, yhat, weight);
  const std::size_t n = y.rows();
  std::vector<Matrix> blocks(y.cols(), Matrix(n, n));
  switch (id) {
    case LossId::Square:
      for (auto& b : blocks) b = scale(Matrix::identity(n), weight);
      break;
    case LossId::Absolute:
      break;
    case LossId::CrossEntropy:
      for (std::size_t j = 0; j < y.cols(); ++j)
        for (std::size_t i = 0; i < n; ++i) {
          const double p = y(i, j);
          const double t = yhat(i, j);
          blocks[j](i, i) = weight * (t / (p * p) + (1.0 - t) / ((1.0 - p) * (1.0 - p)));
        }
      break;
  }
  return {std::move(grad), PerSampleBlocks::per_column(n, std::move(blocks))};
}

// ---------------------------------------------------------------------------
// Pullback rules

namespace {

void check_joint_dim(std::size_t dim, const BackpropOptions& opts, const std::string& node) {
  if (dim > opts.max_joint_dim) {
    throw std::length_error("joint curvature block at '" + node + "' would have dimension " +
                            std::to_string(dim) + " > " + std::to_string(opts.max_joint_dim));
  }
}

// Row-major Jacobian of vec(A B) with respect to vec(B), A fixed.
Matrix matmul_jacobian_right(const Matrix& a, std::size_t b_cols) {
  const std::size_t n = a.rows();
  const std::size_t k = a.cols();
  const std::size_t m = b_cols;
  Matrix j(n * m, k * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t c = 0; c < m; ++c) j(i * m + c, p * m + c) = a(i, p);
  return j;
}

// Row-major Jacobian of vec(A B) with respect to vec(A), B fixed.
Matrix matmul_jacobian_left(std::size_t a_rows, const Matrix& b) {
  const std::size_t n = a_rows;
  const std::size_t k = b.rows();
  const std::size_t m = b.cols();
  Matrix j(n * m, n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t p = 0; p < k; ++p) j(i * m + c, i * k + p) = b(p, c);
  return j;
}

PerSampleBlocks pull_plus(const PerSampleBlocks& bc, const Matrix& a_act) {
  if (a_act.cols() == bc.cols()) return bc;
  // a was broadcast across columns; every output column is a copy of it
  const std::size_t n = bc.rows();
  Matrix sum(n, n);
  if (bc.layout() == BlockLayout::PerColumn) {
    for (std::size_t j = 0; j < bc.sample_count(); ++j) sum = add(sum, bc.block(j));
  } else {
    const Matrix& h = bc.block(0);
    const std::size_t m = bc.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i2 = 0; i2 < n; ++i2)
          for (std::size_t j2 = 0; j2 < m; ++j2) sum(i, i2) += h(i * m + j, i2 * m + j2);
  }
  return PerSampleBlocks::per_column(n, {std::move(sum)});
}

PerSampleBlocks pull_diagonal(const PerSampleBlocks& bc, const Matrix& d, const Matrix* extra) {
  // diag(d) B diag(d) + diag(extra)
  const std::size_t n = bc.rows();
  const std::size_t m = bc.cols();
  if (bc.layout() == BlockLayout::PerColumn) {
    std::vector<Matrix> out;
    out.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
      Matrix b = bc.block(j);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) b(i, k) *= d(i, j) * d(k, j);
      if (extra)
        for (std::size_t i = 0; i < n; ++i) b(i, i) += (*extra)(i, j);
      out.push_back(std::move(b));
    }
    return PerSampleBlocks::per_column(n, std::move(out));
  }
  Matrix h = bc.block(0);
  const std::size_t dim = n * m;
  for (std::size_t p = 0; p < dim; ++p)
    for (std::size_t q = 0; q < dim; ++q) h(p, q) *= d.data()[p] * d.data()[q];
  if (extra)
    for (std::size_t p = 0; p < dim; ++p) h(p, p) += extra->data()[p];
  return PerSampleBlocks::joint(n, m, std::move(h));
}

PerSampleBlocks pull_matmul_right(const PerSampleBlocks& bc, const Matrix& a, std::size_t b_cols,
                                  const BackpropOptions& opts, const std::string& node) {
  if (bc.layout() == BlockLayout::PerColumn) {
    std::vector<Matrix> out;
    out.reserve(bc.sample_count());
    const Matrix at = transpose(a);
    for (std::size_t j = 0; j < bc.sample_count(); ++j) out.push_back(matmul(at, matmul(bc.block(j), a)));
    return PerSampleBlocks::per_column(a.cols(), std::move(out));
  }
  check_joint_dim(a.cols() * b_cols, opts, node);
  return PerSampleBlocks::joint(a.cols(), b_cols, congruence(bc.block(0), matmul_jacobian_right(a, b_cols)));
}

PerSampleBlocks pull_matmul_left(const PerSampleBlocks& bc, std::size_t a_rows, const Matrix& b,
                                 const BackpropOptions& opts, const std::string& node) {
  const std::size_t k = b.rows();
  check_joint_dim(a_rows * k, opts, node);
  if (bc.layout() == BlockLayout::Joint) {
    return PerSampleBlocks::joint(a_rows, k, congruence(bc.block(0), matmul_jacobian_left(a_rows, b)));
  }
  // H[(i,p),(i2,p2)] = sum_j B_j[i,i2] b[p,j] b[p2,j]
  Matrix h(a_rows * k, a_rows * k);
  for (std::size_t j = 0; j < bc.sample_count(); ++j) {
    const Matrix& blk = bc.block(j);
    for (std::size_t i = 0; i < a_rows; ++i)
      for (std::size_t i2 = 0; i2 < a_rows; ++i2) {
        const double v = blk(i, i2);
        if (v == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          const double vp = v * b(p, j);
          if (vp == 0.0) continue;
          for (std::size_t p2 = 0; p2 < k; ++p2) h(i * k + p, i2 * k + p2) += vp * b(p2, j);
        }
      }
  }
  return PerSampleBlocks::joint(a_rows, k, std::move(h));
}

PerSampleBlocks pull_linear(const PerSampleBlocks& bc, const Matrix& jacobian, std::size_t rows,
                            std::size_t cols, const BackpropOptions& opts, const std::string& node) {
  check_joint_dim(rows * cols, opts, node);
  check_joint_dim(bc.rows() * bc.cols(), opts, node);
  return PerSampleBlocks::joint(rows, cols, congruence(bc.to_joint(), jacobian));
}

}  // namespace

CurvatureState backprop_blocks(const Graph& g, const Activations& acts, const std::string& variable,
                               BackpropOptions opts, const FunctionLibrary& lib) {
  auto circles = detect_circles(g, variable);
  if (!circles.empty()) throw CircleError(std::move(circles));

  const NodeId var = g.require(variable);
  const Node& loss = g.node(g.loss());
  if (acts[index_of(g.loss())].size() != 1) throw std::invalid_argument("loss node is not scalar");

  CurvatureState state;
  state.variable = variable;
  state.grad = backward_gradients(g, acts, lib);

  const std::vector<bool> dep = depends_on(g, var);
  const NodeId pred = loss.inputs[0];
  if (!dep[index_of(pred)]) {
    const Matrix& v = acts[index_of(var)];
    if (opts.assemble_variable) state.variable_hessian = Matrix(v.size(), v.size());
    return state;
  }

  const Matrix& y = acts[index_of(pred)];
  const Matrix& yhat = acts[index_of(loss.inputs[1])];
  state.blocks[pred] = loss_seed(loss.loss, y, yhat, loss.loss_weight).blocks;
  state.path.push_back(pred);

  NodeId cur = pred;
  while (cur != var) {
    const Node& n = g.node(cur);
    std::size_t slot = 0;
    while (!dep[index_of(n.inputs[slot])]) ++slot;
    const NodeId a_id = n.inputs[slot];
    if (a_id == var && !opts.assemble_variable) break;

    const PerSampleBlocks& bc = state.blocks.at(cur);
    const Matrix& a = acts[index_of(a_id)];
    auto other = [&]() -> const Matrix& { return acts[index_of(n.inputs[1 - slot])]; };

    PerSampleBlocks ba;
    switch (n.kind) {
      case NodeKind::Plus: ba = pull_plus(bc, a); break;
      case NodeKind::ElemMul: ba = pull_diagonal(bc, other(), nullptr); break;
      case NodeKind::MatMul:
        ba = slot == 1 ? pull_matmul_right(bc, other(), a.cols(), opts, n.name)
                       : pull_matmul_left(bc, a.rows(), other(), opts, n.name);
        break;
      case NodeKind::Conv:
        ba = slot == 0 ? pull_linear(bc, conv_jacobian_input(a.rows(), a.cols(), other()), a.rows(), a.cols(),
                                     opts, n.name)
                       : pull_linear(bc, conv_jacobian_kernel(other(), a.rows(), a.cols()), a.rows(), a.cols(),
                                     opts, n.name);
        break;
      case NodeKind::Func: {
        Matrix d1(a.rows(), a.cols());
        Matrix gd2(a.rows(), a.cols());
        const Matrix& gc = state.grad[index_of(cur)];
        for (std::size_t k = 0; k < a.size(); ++k) {
          const ScaledDerivatives s = lib.eval(n.func, n.delta, a.data()[k]);
          d1.data()[k] = s.d1;
          gd2.data()[k] = gc.data()[k] * s.d2;
        }
        ba = pull_diagonal(bc, d1, &gd2);
        break;
      }
      case NodeKind::Input:
      case NodeKind::Parameter:
      case NodeKind::Loss:
        throw std::logic_error("node '" + n.name + "' cannot lie inside a curvature path");
    }
    state.blocks[a_id] = std::move(ba);
    state.path.push_back(a_id);
    cur = a_id;
  }

  if (opts.assemble_variable) state.variable_hessian = state.blocks.at(var).to_joint();
  return state;
}

// ---------------------------------------------------------------------------
// Margins and certificates

bool MarginRecord::nonnegative(double tol) const {
  for (std::size_t j = 0; j < margin.size(); ++j)
    if (margin[j] < -tol * block_scale[j]) return false;
  return true;
}

MarginRecord function_margin(const Graph& g, NodeId node, const CurvatureState& state, const Activations& acts,
                             const FunctionLibrary& lib) {
  const Node& n = g.node(node);
  if (n.kind != NodeKind::Func) throw std::invalid_argument("node '" + n.name + "' is not a function node");
  auto it = state.blocks.find(node);
  if (it == state.blocks.end()) {
    throw std::invalid_argument("node '" + n.name + "' has no curvature block (not on the variable path)");
  }
  const PerSampleBlocks& bc = it->second;
  const Matrix& a = acts[index_of(n.inputs[0])];
  const Matrix& gc = state.grad[index_of(node)];

  auto quotient = [&](std::size_t flat) {
    const ScaledDerivatives s = lib.eval(n.func, n.delta, a.data()[flat]);
    if (s.d1 == 0.0) {
      if (s.d2 == 0.0) return 0.0;
      throw std::domain_error("node '" + n.name + "': first derivative vanishes where the second does not");
    }
    return gc.data()[flat] * s.d2 / (s.d1 * s.d1);
  };

  MarginRecord rec;
  rec.node = n.name;
  for (std::size_t j = 0; j < bc.sample_count(); ++j) {
    const Matrix& blk = bc.block(j);
    const double lam = sym_eig_min(blk);
    double corr = std::numeric_limits<double>::infinity();
    if (bc.layout() == BlockLayout::PerColumn) {
      for (std::size_t i = 0; i < a.rows(); ++i) corr = std::min(corr, quotient(i * a.cols() + j));
    } else {
      for (std::size_t k = 0; k < a.size(); ++k) corr = std::min(corr, quotient(k));
    }
    rec.lambda_min.push_back(lam);
    rec.correction.push_back(corr);
    rec.margin.push_back(lam + corr);
    rec.block_scale.push_back(std::max(1.0, frobenius_norm(blk)));
  }
  return rec;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Certified: return "Certified";
    case Verdict::MarginViolated: return "MarginViolated";
    case Verdict::CircleUncertified: return "CircleUncertified";
  }
  return "?";
}

double CertificateReport::min_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& r : margins)
    for (double v : r.margin) m = std::min(m, v);
  return m;
}

CertificateReport certify(const Graph& g, const Bindings& bindings, const std::string& variable,
                          const CertifyOptions& opts) {
  const FunctionLibrary& lib = *opts.lib;
  CertificateReport report;
  report.variable = variable;
  report.point_id = opts.point_id;

  const Activations acts = forward(g, bindings, lib);
  report.circles = detect_circles(g, variable);
  if (!report.circles.empty()) {
    report.verdict = Verdict::CircleUncertified;
    report.offending_node = report.circles.front().meet_node;
    return report;
  }

  BackpropOptions bopts;
  bopts.assemble_variable = false;
  const CurvatureState state = backprop_blocks(g, acts, variable, bopts, lib);
  for (NodeId id : state.path) {
    if (g.node(id).kind != NodeKind::Func || !state.blocks.contains(id)) continue;
    report.margins.push_back(function_margin(g, id, state, acts, lib));
    if (report.verdict == Verdict::Certified && !report.margins.back().nonnegative(opts.margin_tol)) {
      report.verdict = Verdict::MarginViolated;
      report.offending_node = g.node(id).name;
    }
  }
  return report;
}

Matrix propagated_hessian(const Graph& g, const Bindings& bindings, const std::string& variable,
                          const FunctionLibrary& lib) {
  const Activations acts = forward(g, bindings, lib);
  return *backprop_blocks(g, acts, variable, {}, lib).variable_hessian;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<Bindings> sample_points(const Bindings& base, const SamplerSpec& spec) {
  if (spec.points == 0) throw std::invalid_argument("sampler: point count must be positive");
  if (spec.mode != SamplerSpec::Mode::Dataset && !(spec.lo <= spec.hi)) {
    throw std::invalid_argument("sampler: empty interval");
  }
  for (const auto& name : spec.nodes) {
    if (spec.mode != SamplerSpec::Mode::Dataset && !base.contains(name)) {
      throw std::invalid_argument("sampler: node '" + name + "' has no base binding to take its shape from");
    }
  }

  std::vector<Bindings> points;
  points.reserve(spec.points);
  Rng rng = Rng::stream(spec.seed, "sampler");
  for (std::size_t k = 0; k < spec.points; ++k) {
    Bindings b = base;
    for (const auto& name : spec.nodes) {
      switch (spec.mode) {
        case SamplerSpec::Mode::Grid: {
          const double t = spec.points == 1 ? spec.lo
                                            : spec.lo + (spec.hi - spec.lo) * static_cast<double>(k) /
                                                            static_cast<double>(spec.points - 1);
          Matrix& m = b.at(name);
          std::fill(m.data().begin(), m.data().end(), t);
          break;
        }
        case SamplerSpec::Mode::Hypercube: {
          Matrix& m = b.at(name);
          for (double& x : m.data()) x = rng.uniform(spec.lo, spec.hi);
          break;
        }
        case SamplerSpec::Mode::Dataset: {
          if (spec.batch == 0 || spec.data.cols() < spec.batch) {
            throw std::invalid_argument("sampler: dataset has fewer columns than one batch");
          }
          const std::size_t first = (k * spec.batch) % (spec.data.cols() - spec.batch + 1);
          Matrix m(spec.data.rows(), spec.batch);
          for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < spec.batch; ++j) m(i, j) = spec.data(i, first + j);
          b[name] = std::move(m);
          break;
        }
      }
    }
    points.push_back(std::move(b));
  }
  return points;
}

// ---------------------------------------------------------------------------
// Scale search

DeltaSearchResult search_delta(const Graph& g, const std::vector<Bindings>& points,
                               const std::vector<std::string>& variables, const std::vector<double>& grid,
                               const CertifyOptions& opts) {
  if (grid.empty()) throw std::invalid_argument("scale search: empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] <= 1.0)) throw std::invalid_argument("scale search: grid value outside (0, 1]");
    if (i > 0 && !(grid[i] < grid[i - 1])) throw std::invalid_argument("scale search: grid must be strictly descending");
  }
  if (points.empty()) throw std::invalid_argument("scale search: no sample points");

  DeltaSearchResult result;
  std::optional<std::size_t> chosen;
  for (double delta : grid) {
    const Graph scaled = apply_scale(g, uniform_plan(g, delta));
    DeltaRow row;
    row.delta = delta;
    row.min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < points.size(); ++p) {
      for (const auto& var : variables) {
        CertifyOptions o = opts;
        o.point_id = "p" + std::to_string(p);
        const CertificateReport rep = certify(scaled, points[p], var, o);
        ++row.total;
        row.min_margin = std::min(row.min_margin, rep.min_margin());
        switch (rep.verdict) {
          case Verdict::Certified: ++row.certified; break;
          case Verdict::MarginViolated: ++row.violated; break;
          case Verdict::CircleUncertified: ++row.circle; break;
        }
      }
    }
    if (row.circle > 0) result.has_circles = true;
    if (!chosen && row.violation_free()) chosen = result.table.size();
    result.table.push_back(row);
  }

  if (chosen) {
    result.delta = result.table[*chosen].delta;
    result.certified = !result.has_circles;
  } else {
    auto best = std::max_element(result.table.begin(), result.table.end(),
                                 [](const DeltaRow& a, const DeltaRow& b) { return a.min_margin < b.min_margin; });
    result.delta = best->delta;
    result.certified = false;
  }
  result.plan = uniform_plan(g, result.delta);
  return result;
}

}  // namespace convexcert
