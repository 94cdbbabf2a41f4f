#include "convexcert/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "convexcert/curvature.hpp"

namespace convexcert {

void FDConfig::validate() const {
  if (!(step >= 1e-7 && step <= 1e-2)) {
    throw std::invalid_argument("finite-difference step " + std::to_string(step) + " outside [1e-7, 1e-2]");
  }
}

namespace {

// Evaluates the objective with the variable perturbed in place.
class Prober {
 public:
  Prober(const Graph& g, const Bindings& bindings, const std::string& variable, const FunctionLibrary& lib)
      : g_(g), bindings_(bindings), variable_(variable), lib_(lib) {
    auto it = bindings_.find(variable);
    if (it == bindings_.end()) throw GraphError("variable '" + variable + "' is unbound");
    if (g.node(g.require(variable)).kind != NodeKind::Parameter) {
      throw GraphError("node '" + variable + "' is not a parameter");
    }
    base_ = it->second;
  }

  std::size_t size() const { return base_.size(); }
  const Matrix& base() const { return base_; }

  double eval(std::initializer_list<std::pair<std::size_t, double>> shifts) {
    Matrix& v = bindings_.at(variable_);
    v = base_;
    for (auto [k, d] : shifts) v.data()[k] += d;
    const double e = loss_value(g_, bindings_, lib_);
    if (!std::isfinite(e)) throw std::domain_error("objective is not finite while probing '" + variable_ + "'");
    return e;
  }

 private:
  const Graph& g_;
  Bindings bindings_;
  std::string variable_;
  const FunctionLibrary& lib_;
  Matrix base_;
};

}  // namespace

Matrix fd_gradient(const Graph& g, const Bindings& bindings, const std::string& variable, FDConfig cfg,
                   const FunctionLibrary& lib) {
  cfg.validate();
  Prober probe(g, bindings, variable, lib);
  const double h = cfg.step;
  Matrix grad(probe.base().rows(), probe.base().cols());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    grad.data()[k] = (probe.eval({{k, h}}) - probe.eval({{k, -h}})) / (2.0 * h);
  }
  return grad;
}

Matrix fd_hessian(const Graph& g, const Bindings& bindings, const std::string& variable, FDConfig cfg,
                  bool symmetrize_result, const FunctionLibrary& lib) {
  cfg.validate();
  Prober probe(g, bindings, variable, lib);
  const std::size_t n = probe.size();
  if (n > 256) {
    throw std::invalid_argument("variable '" + variable + "' has " + std::to_string(n) +
                                " entries; finite-difference Hessians are limited to 256");
  }
  const double h = cfg.step;
  const double denom = 4.0 * h * h;
  Matrix hess(n, n);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      const double pp = probe.eval({{p, h}, {q, h}});
      const double pm = probe.eval({{p, h}, {q, -h}});
      const double mp = probe.eval({{p, -h}, {q, h}});
      const double mm = probe.eval({{p, -h}, {q, -h}});
      hess(p, q) = (pp - pm - mp + mm) / denom;
    }
  }
  if (symmetrize_result) symmetrize(hess);
  return hess;
}

bool is_psd(const Matrix& h, double rel_tol) {
  return sym_eig_min(h) >= -rel_tol * frobenius_norm(h);
}

double relative_frobenius(const Matrix& a, const Matrix& reference, double floor) {
  return frobenius_norm(subtract(a, reference)) / std::max(frobenius_norm(reference), floor);
}

UntiedGraph untie_variable(const Graph& g, const std::string& variable) {
  const NodeId var = g.require(variable);
  if (g.node(var).kind != NodeKind::Parameter) throw GraphError("node '" + variable + "' is not a parameter");

  UntiedGraph out;
  GraphBuilder b;
  std::vector<NodeId> remap(g.size());
  std::size_t uses = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    Node n = g.nodes()[i];
    if (NodeId{i} == var) continue;
    for (NodeId& in : n.inputs) {
      if (in == var) {
        const std::string name = variable + "#" + std::to_string(uses++);
        in = b.parameter(name, g.node(var).shape);
        out.copies.push_back(name);
      } else {
        in = remap[index_of(in)];
      }
    }
    remap[i] = b.add(std::move(n));
  }
  out.graph = b.build();
  return out;
}

Matrix tree_hessian(const Graph& g, const Bindings& bindings, const std::string& variable,
                    const FunctionLibrary& lib) {
  const UntiedGraph untied = untie_variable(g, variable);
  const Matrix& value = bindings.at(variable);
  Bindings b = bindings;
  b.erase(variable);
  for (const auto& name : untied.copies) b[name] = value;

  Matrix sum(value.size(), value.size());
  for (const auto& name : untied.copies) {
    const auto circles = detect_circles(untied.graph, name);
    if (!circles.empty()) {
      throw CircleError(circles);
    }
    sum = add(sum, propagated_hessian(untied.graph, b, name, lib));
  }
  return sum;
}

std::vector<ResidualPoint> residual_ratio(const Graph& g, const Bindings& bindings, const std::string& variable,
                                          const std::vector<double>& deltas, FDConfig cfg,
                                          const FunctionLibrary& lib) {
  const Matrix& value = bindings.at(variable);
  if (value.size() > 256) {
    throw std::invalid_argument("variable '" + variable + "' is too large for finite-difference residuals");
  }
  std::vector<ResidualPoint> out;
  out.reserve(deltas.size());
  for (double delta : deltas) {
    const Graph scaled = apply_scale(g, uniform_plan(g, delta));
    const Matrix h_fd = fd_hessian(scaled, bindings, variable, cfg, true, lib);
    const Matrix h_tree = tree_hessian(scaled, bindings, variable, lib);
    out.push_back({delta, relative_frobenius(h_tree, h_fd, 1e-12)});
  }
  return out;
}

}  // namespace convexcert
