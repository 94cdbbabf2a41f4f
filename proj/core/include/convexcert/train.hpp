#pragma once

// Desk-scale training harness: AdaDelta with momentum and L2, small MLP and
// unrolled-RNN models expressed as graphs, and multi-seed experiments over
// scale factors.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "convexcert/datasets.hpp"
#include "convexcert/graph.hpp"
#include "convexcert/random.hpp"

namespace convexcert {

struct OptimConfig {
  double rho = 0.95;
  double eps = 1e-6;
  double momentum = 0.6;
  double l2 = 1e-6;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;

  void validate() const;
};

class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdaDeltaState {
  Matrix mean_sq_grad;
  Matrix mean_sq_update;
  Matrix velocity;
};

/// One AdaDelta update of every parameter in `params` using `grads`
/// (same keys). L2 is added to the gradient as l2 * theta, and the AdaDelta
/// step feeds a momentum buffer v <- momentum * v + delta, theta <- theta + v.
/// Throws DivergedError on a non-finite gradient before touching anything.
void adadelta_step(Bindings& params, const std::map<std::string, Matrix>& grads,
                   std::map<std::string, AdaDeltaState>& state, const OptimConfig& cfg);

struct ModelSpec {
  enum class Kind { Mlp, Rnn };
  Kind kind = Kind::Mlp;
  std::vector<std::size_t> hidden = {32, 16};  // Mlp layer widths (empty: linear); Rnn uses hidden[0]
  FunctionId activation = FunctionId::Sigmoid;
};

/// A model graph together with the names it binds.
class Model {
 public:
  /// `input_dim` is the feature count (for Rnn: the sequence length).
  Model(ModelSpec spec, std::size_t input_dim, std::size_t classes, double delta);

  const Graph& graph() const { return graph_; }
  const ModelSpec& spec() const { return spec_; }
  const std::vector<std::string>& parameter_names() const { return params_; }
  /// First-layer weight: the variable certified after training.
  const std::string& first_weight() const { return params_.front(); }

  /// Weights uniform in [-1/fan_in, 1/fan_in]; biases zero.
  Bindings init_parameters(Rng& rng) const;

  /// Parameters plus data bindings for the given dataset columns.
  Bindings bind(const Bindings& params, const Dataset& data, std::span<const std::size_t> columns) const;

  /// Network output (classes x |columns|).
  Matrix predict(const Bindings& params, const Dataset& data, std::span<const std::size_t> columns) const;
  double accuracy(const Bindings& params, const Dataset& data) const;

 private:
  ModelSpec spec_;
  std::size_t input_dim_;
  std::size_t classes_;
  Graph graph_;
  std::vector<std::string> params_;
  std::map<std::string, std::size_t> fan_in_;
  std::string output_;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  double delta = 1.0;
  std::vector<EpochMetrics> epochs;
  double final_accuracy = 0.0;
  /// First epoch whose accuracy reaches 99% of the final accuracy; 0 if none.
  std::size_t convergence_epoch = 0;
  bool diverged = false;
  std::string error;
  /// Fraction of (function node, sample) margins that are nonnegative for
  /// the first-layer weight on a held-out batch; absent if not certifiable.
  std::optional<double> margin_fraction;
  std::optional<double> min_margin;
};

/// First 1-based epoch with accuracy >= 0.99 * final, or 0 for an empty list.
std::size_t convergence_epoch(const std::vector<EpochMetrics>& epochs);

struct ExperimentSpec {
  ModelSpec model;
  OptimConfig optim;
  std::vector<double> deltas = {1.0, 0.5};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t certify_batch = 16;
  unsigned threads = 0;  // 0: hardware concurrency
};

/// Trains one model from scratch. Never throws for divergence; the record is
/// flagged instead.
RunRecord train_run(const ModelSpec& model, const DatasetSplit& data, double delta, std::uint64_t seed,
                    const OptimConfig& cfg, std::size_t certify_batch = 16);

struct SummaryRow {
  double delta = 1.0;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // sample standard deviation over non-diverged runs
  double max_acc = 0.0;
  double min_acc = 0.0;
  double mean_conv_epoch = 0.0;
  std::optional<double> mean_margin_fraction;
  std::size_t runs = 0;
  std::size_t diverged = 0;
};

struct ExperimentResult {
  std::vector<RunRecord> runs;  // ordered by (delta index, seed index)
  std::vector<SummaryRow> summary;

  /// Mean eval accuracy per epoch for each delta, in delta order.
  std::vector<std::vector<double>> mean_curves() const;
};

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs, const std::vector<double>& deltas);

/// Variance study: every (delta, seed) pair trained to the epoch cap.
ExperimentResult run_variance_experiment(const ExperimentSpec& spec, const DatasetSplit& data);

/// Convergence study: the same runs, read for per-epoch curves and
/// convergence epochs.
ExperimentResult run_convergence_experiment(const ExperimentSpec& spec, const DatasetSplit& data);

}  // namespace convexcert
