#pragma once

// Finite-difference ground truth for gradients and Hessians, and the circle
// residual ratio. Nothing here uses the curvature propagation except
// residual_ratio, which compares the two on purpose.

#include <string>
#include <vector>

#include "convexcert/graph.hpp"

namespace convexcert {

struct FDConfig {
  double step = 1e-4;

  static FDConfig gradient() { return {1e-5}; }
  static FDConfig hessian() { return {1e-4}; }

  /// Throws std::invalid_argument unless step lies in [1e-7, 1e-2].
  void validate() const;
};

/// Central differences of the scalar objective in every entry of `variable`.
Matrix fd_gradient(const Graph& g, const Bindings& bindings, const std::string& variable,
                   FDConfig cfg = FDConfig::gradient(),
                   const FunctionLibrary& lib = FunctionLibrary::builtin());

/// Four-point mixed differences over the row-major flattened variable. At most
/// 256 variable entries.
Matrix fd_hessian(const Graph& g, const Bindings& bindings, const std::string& variable,
                  FDConfig cfg = FDConfig::hessian(), bool symmetrize_result = true,
                  const FunctionLibrary& lib = FunctionLibrary::builtin());

/// lambda_min(h) >= -rel_tol * ||h||_F.
bool is_psd(const Matrix& h, double rel_tol = 1e-6);

/// Relative Frobenius distance ||a - b|| / max(||reference||, floor).
double relative_frobenius(const Matrix& a, const Matrix& reference, double floor = 1e-12);

/// Copy of `g` in which every use of `variable` reads its own Parameter node
/// named "<variable>#<k>", k counting uses in topological order.
struct UntiedGraph {
  Graph graph;
  std::vector<std::string> copies;
};
UntiedGraph untie_variable(const Graph& g, const std::string& variable);

/// Sum over uses of the propagated Hessian of each untied copy: the part of
/// the Hessian that treats every use of the shared variable as independent.
Matrix tree_hessian(const Graph& g, const Bindings& bindings, const std::string& variable,
                    const FunctionLibrary& lib = FunctionLibrary::builtin());

struct ResidualPoint {
  double delta = 1.0;
  double ratio = 0.0;
};

/// For each delta (applied to every Func node): ||H_fd - H_tree||_F / max(||H_fd||_F, 1e-12).
std::vector<ResidualPoint> residual_ratio(const Graph& g, const Bindings& bindings, const std::string& variable,
                                          const std::vector<double>& deltas, FDConfig cfg = FDConfig::hessian(),
                                          const FunctionLibrary& lib = FunctionLibrary::builtin());

}  // namespace convexcert
