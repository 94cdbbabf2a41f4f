#pragma once

// Backward propagation of per-sample curvature blocks from the loss to one
// variable, the function-node margin test, and certificate assembly.
//
// For a function node c = s(delta * a) with curvature block B_j for sample j,
// the pulled-back block is diag(s'_j) B_j diag(s'_j) + diag(g_j * s''_j) and
// it is positive semidefinite whenever
//
//     lambda_min(B_j) + min_i g_ij s''_ij / (s'_ij)^2 >= 0.
//
// That left-hand side is the margin reported per sample. Linear operators
// pull blocks back by congruence with their Jacobian, which preserves PSD.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "convexcert/graph.hpp"

namespace convexcert {

/// Raised when curvature propagation meets a node with several inputs that
/// depend on the variable.
class CircleError : public std::runtime_error {
 public:
  explicit CircleError(std::vector<CirclePath> circles);
  const std::vector<CirclePath>& circles() const { return circles_; }

 private:
  std::vector<CirclePath> circles_;
};

struct LossSeed {
  Matrix grad;
  PerSampleBlocks blocks;
};

/// First-order gradient and per-sample curvature of a loss at prediction y.
/// Square: identity blocks; absolute: zero blocks (sign(0) = 0);
/// cross entropy: diagonal yhat/y^2 + (1-yhat)/(1-y)^2, y strictly in (0,1).
LossSeed loss_seed(LossId id, const Matrix& y, const Matrix& yhat, double weight = 1.0);

struct CurvatureState {
  std::string variable;
  /// dE/d(node) for every node.
  std::vector<Matrix> grad;
  /// Blocks for every node on the loss -> variable path.
  std::map<NodeId, PerSampleBlocks> blocks;
  /// Nodes from the loss prediction down to the variable, both included.
  /// Empty when the variable does not reach the loss.
  std::vector<NodeId> path;
  /// Full Hessian over the row-major flattened variable, when assembled.
  std::optional<Matrix> variable_hessian;
};

struct BackpropOptions {
  /// Skip the final pullback into the variable itself; margins never need it
  /// and for wide weight matrices it is the most expensive block.
  bool assemble_variable = true;
  /// Largest flattened dimension allowed for a joint block.
  std::size_t max_joint_dim = 4096;
};

/// Throws CircleError if the graph is not tree-structured in `variable`.
CurvatureState backprop_blocks(const Graph& g, const Activations& acts, const std::string& variable,
                               BackpropOptions opts = {},
                               const FunctionLibrary& lib = FunctionLibrary::builtin());

struct MarginRecord {
  std::string node;
  std::vector<double> margin;
  std::vector<double> lambda_min;
  std::vector<double> correction;
  /// max(1, ||B_j||_F), the scale for the round-off allowance.
  std::vector<double> block_scale;

  /// True iff every margin is >= -tol * block_scale.
  bool nonnegative(double tol) const;
};

/// Margin of the convexification inequality at a Func node on the path.
/// A zero first derivative contributes 0 when the second derivative is also
/// zero there, and is rejected with std::domain_error otherwise.
MarginRecord function_margin(const Graph& g, NodeId node, const CurvatureState& state,
                             const Activations& acts,
                             const FunctionLibrary& lib = FunctionLibrary::builtin());

enum class Verdict { Certified, MarginViolated, CircleUncertified };

std::string_view to_string(Verdict v);

struct CertificateReport {
  std::string variable;
  std::string point_id;
  std::vector<MarginRecord> margins;  // ordered from the loss toward the variable
  std::vector<CirclePath> circles;
  Verdict verdict = Verdict::Certified;
  std::string offending_node;  // violated Func node or circle meet node

  /// Smallest margin over all nodes and samples; +inf when there are none.
  double min_margin() const;
};

struct CertifyOptions {
  std::string point_id = "p0";
  /// Relative round-off allowance for "margin >= 0".
  double margin_tol = 1e-10;
  const FunctionLibrary* lib = &FunctionLibrary::builtin();
};

CertificateReport certify(const Graph& g, const Bindings& bindings, const std::string& variable,
                          const CertifyOptions& opts = {});

/// Propagated Hessian of the objective with respect to `variable`.
Matrix propagated_hessian(const Graph& g, const Bindings& bindings, const std::string& variable,
                          const FunctionLibrary& lib = FunctionLibrary::builtin());

// ---------------------------------------------------------------------------
// Sampling domains

struct SamplerSpec {
  enum class Mode {
    Grid,       // every entry of the listed nodes set to lo + k (hi - lo) / (points - 1)
    Hypercube,  // every entry drawn uniformly from [lo, hi]
    Dataset,    // node bound to successive column batches of `data`
  };
  Mode mode = Mode::Hypercube;
  std::vector<std::string> nodes;
  double lo = -2.0;
  double hi = 2.0;
  std::size_t points = 16;
  std::uint64_t seed = 0;
  Matrix data;               // Dataset mode
  std::size_t batch = 1;     // Dataset mode
};

/// Binding points derived from `base` by overwriting the sampled nodes.
std::vector<Bindings> sample_points(const Bindings& base, const SamplerSpec& spec);

// ---------------------------------------------------------------------------
// Scale search

struct DeltaRow {
  double delta = 1.0;
  double min_margin = 0.0;  // +inf when no margin was evaluated
  std::size_t certified = 0;
  std::size_t violated = 0;
  std::size_t circle = 0;
  std::size_t total = 0;

  /// No point reported MarginViolated.
  bool violation_free() const { return violated == 0; }
};

struct DeltaSearchResult {
  double delta = 1.0;
  /// False is the NotCertified flag: no grid value certified every point.
  bool certified = false;
  bool has_circles = false;
  std::map<std::string, double> plan;
  std::vector<DeltaRow> table;
};

/// Largest uniform delta from a descending grid under which every sampled
/// point certifies for every listed variable. Variables with circles cannot
/// certify; for them only the absence of margin violations is required, and
/// the result keeps the NotCertified flag. When no grid value qualifies, the
/// one with the largest minimum margin is returned.
DeltaSearchResult search_delta(const Graph& g, const std::vector<Bindings>& points,
                               const std::vector<std::string>& variables, const std::vector<double>& grid,
                               const CertifyOptions& opts = {});

}  // namespace convexcert
