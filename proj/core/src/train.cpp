#include "convexcert/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "convexcert/curvature.hpp"

namespace convexcert {

void OptimConfig::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(l2 >= 0.0)) throw std::invalid_argument("l2 must be nonnegative");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

void adadelta_step(Bindings& params, const std::map<std::string, Matrix>& grads,
                   std::map<std::string, AdaDeltaState>& state, const OptimConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!all_finite(g)) throw DivergedError("non-finite gradient for '" + name + "'");
    const Matrix& theta = params.at(name);
    if (g.rows() != theta.rows() || g.cols() != theta.cols()) {
      throw ShapeError("gradient for '" + name + "' has shape " + g.shape_string() + ", parameter " +
                       theta.shape_string());
    }
  }
  for (const auto& [name, g] : grads) {
    Matrix& theta = params.at(name);
    auto [it, fresh] = state.try_emplace(name);
    AdaDeltaState& s = it->second;
    if (fresh) {
      s.mean_sq_grad = Matrix(theta.rows(), theta.cols());
      s.mean_sq_update = Matrix(theta.rows(), theta.cols());
      s.velocity = Matrix(theta.rows(), theta.cols());
    }
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g.data()[k] + cfg.l2 * theta.data()[k];
      double& eg2 = s.mean_sq_grad.data()[k];
      double& edx2 = s.mean_sq_update.data()[k];
      double& v = s.velocity.data()[k];
      eg2 = cfg.rho * eg2 + (1.0 - cfg.rho) * gk * gk;
      const double dx = -std::sqrt(edx2 + cfg.eps) / std::sqrt(eg2 + cfg.eps) * gk;
      edx2 = cfg.rho * edx2 + (1.0 - cfg.rho) * dx * dx;
      v = cfg.momentum * v + dx;
      theta.data()[k] += v;
    }
  }
}

// ---------------------------------------------------------------------------
// Models

Model::Model(ModelSpec spec, std::size_t input_dim, std::size_t classes, double delta)
    : spec_(std::move(spec)), input_dim_(input_dim), classes_(classes) {
  if (input_dim_ == 0 || classes_ < 2) throw std::invalid_argument("model needs inputs and at least two classes");
  if (spec_.kind == ModelSpec::Kind::Rnn && spec_.hidden.empty()) {
    throw std::invalid_argument("recurrent model needs a hidden width");
  }
  GraphBuilder b;
  auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    params_.push_back(name);
    fan_in_[name] = cols;
    return b.parameter(name, std::make_pair(rows, cols));
  };
  auto bias = [&](const std::string& name, std::size_t rows) {
    params_.push_back(name);
    fan_in_[name] = 0;
    return b.parameter(name, std::make_pair(rows, std::size_t{1}));
  };

  NodeId out{};
  if (spec_.kind == ModelSpec::Kind::Mlp) {
    NodeId h = b.input("x");
    std::size_t width = input_dim_;
    for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
      const std::string k = std::to_string(l + 1);
      const NodeId w = weight("W" + k, spec_.hidden[l], width);
      const NodeId bb = bias("b" + k, spec_.hidden[l]);
      const NodeId z = b.plus("z" + k, b.matmul("a" + k, w, h), bb);
      h = b.func("h" + k, spec_.activation, z, delta);
      width = spec_.hidden[l];
    }
    const NodeId w = weight("Wout", classes_, width);
    const NodeId bb = bias("bout", classes_);
    out = b.plus("out", b.matmul("aout", w, h), bb);
  } else {
    const std::size_t hidden = spec_.hidden.front();
    const NodeId w = weight("W", hidden, hidden);
    const NodeId u = weight("U", hidden, 1);
    const NodeId bb = bias("b", hidden);
    NodeId h = b.input("h0");
    for (std::size_t t = 0; t < input_dim_; ++t) {
      const std::string k = std::to_string(t + 1);
      const NodeId x = b.input("x" + std::to_string(t));
      const NodeId pre = b.plus("r" + k, b.matmul("wh" + k, w, h), b.matmul("ux" + k, u, x));
      h = b.func("h" + k, spec_.activation, b.plus("z" + k, pre, bb), delta);
    }
    const NodeId v = weight("V", classes_, hidden);
    const NodeId c = bias("c", classes_);
    out = b.plus("out", b.matmul("vout", v, h), c);
  }
  b.loss("E", LossId::Square, out, b.input("y"));
  graph_ = b.build();
  output_ = "out";
}

Bindings Model::init_parameters(Rng& rng) const {
  Bindings p;
  for (const auto& name : params_) {
    const Node& n = graph_.node(graph_.require(name));
    Matrix m(n.shape->first, n.shape->second);
    const std::size_t fan_in = fan_in_.at(name);
    if (fan_in > 0) {
      const double a = 1.0 / static_cast<double>(fan_in);
      for (double& x : m.data()) x = rng.uniform(-a, a);
    }
    p[name] = std::move(m);
  }
  return p;
}

Bindings Model::bind(const Bindings& params, const Dataset& data, std::span<const std::size_t> columns) const {
  Bindings b = params;
  const std::size_t n = columns.size();
  if (spec_.kind == ModelSpec::Kind::Mlp) {
    Matrix x(data.dim(), n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < data.dim(); ++i) x(i, j) = data.features(i, columns[j]);
    b["x"] = std::move(x);
  } else {
    b["h0"] = Matrix(spec_.hidden.front(), n);
    for (std::size_t t = 0; t < input_dim_; ++t) {
      Matrix x(1, n);
      for (std::size_t j = 0; j < n; ++j) x(0, j) = data.features(t, columns[j]);
      b["x" + std::to_string(t)] = std::move(x);
    }
  }
  b["y"] = data.one_hot(columns);
  return b;
}

Matrix Model::predict(const Bindings& params, const Dataset& data, std::span<const std::size_t> columns) const {
  const Activations acts = forward(graph_, bind(params, data, columns));
  return acts[index_of(graph_.require(output_))];
}

double Model::accuracy(const Bindings& params, const Dataset& data) const {
  std::vector<std::size_t> cols(data.size());
  std::iota(cols.begin(), cols.end(), 0);
  const Matrix out = predict(params, data, cols);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < out.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.rows(); ++i)
      if (out(i, j) > out(best, j)) best = i;
    correct += best == data.labels[j];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Runs

std::size_t convergence_epoch(const std::vector<EpochMetrics>& epochs) {
  if (epochs.empty()) return 0;
  const double target = 0.99 * epochs.back().eval_accuracy;
  for (const auto& e : epochs)
    if (e.eval_accuracy >= target) return e.epoch;
  return epochs.back().epoch;
}

namespace {

void certify_after_training(const Model& model, const Bindings& params, const Dataset& test, std::size_t batch,
                            RunRecord& rec) {
  if (batch == 0 || test.size() == 0) return;
  std::vector<std::size_t> cols(std::min(batch, test.size()));
  std::iota(cols.begin(), cols.end(), 0);
  const Bindings b = model.bind(params, test, cols);
  const CertificateReport rep = certify(model.graph(), b, model.first_weight());
  if (rep.verdict == Verdict::CircleUncertified) return;
  std::size_t total = 0;
  std::size_t ok = 0;
  for (const auto& m : rep.margins)
    for (std::size_t j = 0; j < m.margin.size(); ++j) {
      ++total;
      ok += m.margin[j] >= -1e-10 * m.block_scale[j];
    }
  rec.margin_fraction = total == 0 ? 1.0 : static_cast<double>(ok) / static_cast<double>(total);
  if (total > 0) rec.min_margin = rep.min_margin();
}

}  // namespace

RunRecord train_run(const ModelSpec& model_spec, const DatasetSplit& data, double delta, std::uint64_t seed,
                    const OptimConfig& cfg, std::size_t certify_batch) {
  cfg.validate();
  if (data.train.size() == 0 || data.test.size() == 0) throw std::invalid_argument("empty dataset");
  RunRecord rec;
  rec.seed = seed;
  rec.delta = delta;

  const Model model(model_spec, data.train.dim(), data.train.classes, delta);
  Rng init_rng = Rng::stream(seed, "init");
  Rng shuffle_rng = Rng::stream(seed, "shuffle");
  Bindings params = model.init_parameters(init_rng);
  std::map<std::string, AdaDeltaState> state;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  try {
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        const std::span<const std::size_t> cols(order.data() + start, stop - start);
        const Bindings b = model.bind(params, data.train, cols);
        const Activations acts = forward(model.graph(), b);
        loss_sum += acts[index_of(model.graph().loss())](0, 0);
        const std::vector<Matrix> grads = backward_gradients(model.graph(), acts);
        std::map<std::string, Matrix> pg;
        for (const auto& name : model.parameter_names()) {
          pg[name] = scale(grads[index_of(model.graph().require(name))], 1.0 / static_cast<double>(cols.size()));
        }
        adadelta_step(params, pg, state, cfg);
      }
      const double train_loss = loss_sum / static_cast<double>(order.size());
      if (!std::isfinite(train_loss)) throw DivergedError("training loss is not finite");
      rec.epochs.push_back({epoch, train_loss, model.accuracy(params, data.test)});
    }
  } catch (const DivergedError& e) {
    rec.diverged = true;
    rec.error = e.what();
  }
  rec.final_accuracy = rec.epochs.empty() ? 0.0 : rec.epochs.back().eval_accuracy;
  rec.convergence_epoch = convergence_epoch(rec.epochs);
  if (!rec.diverged) {
    try {
      certify_after_training(model, params, data.test, certify_batch, rec);
    } catch (const std::exception& e) {
      rec.error = std::string("certification failed: ") + e.what();
    }
  }
  return rec;
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs, const std::vector<double>& deltas) {
  std::vector<SummaryRow> rows;
  for (double delta : deltas) {
    SummaryRow row;
    row.delta = delta;
    std::vector<double> acc;
    double conv = 0.0;
    double frac = 0.0;
    std::size_t frac_n = 0;
    for (const auto& r : runs) {
      if (r.delta != delta) continue;
      ++row.runs;
      if (r.diverged) {
        ++row.diverged;
        continue;
      }
      acc.push_back(r.final_accuracy);
      conv += static_cast<double>(r.convergence_epoch);
      if (r.margin_fraction) {
        frac += *r.margin_fraction;
        ++frac_n;
      }
    }
    if (!acc.empty()) {
      const double n = static_cast<double>(acc.size());
      row.mean_acc = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
      double ss = 0.0;
      for (double a : acc) ss += (a - row.mean_acc) * (a - row.mean_acc);
      row.std_acc = acc.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      row.max_acc = *std::max_element(acc.begin(), acc.end());
      row.min_acc = *std::min_element(acc.begin(), acc.end());
      row.mean_conv_epoch = conv / n;
    }
    if (frac_n > 0) row.mean_margin_fraction = frac / static_cast<double>(frac_n);
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::vector<double>> ExperimentResult::mean_curves() const {
  std::vector<std::vector<double>> curves;
  for (const auto& row : summary) {
    std::vector<double> sum;
    std::vector<std::size_t> count;
    for (const auto& r : runs) {
      if (r.delta != row.delta || r.diverged) continue;
      if (sum.size() < r.epochs.size()) {
        sum.resize(r.epochs.size(), 0.0);
        count.resize(r.epochs.size(), 0);
      }
      for (std::size_t e = 0; e < r.epochs.size(); ++e) {
        sum[e] += r.epochs[e].eval_accuracy;
        ++count[e];
      }
    }
    for (std::size_t e = 0; e < sum.size(); ++e) sum[e] /= static_cast<double>(count[e]);
    curves.push_back(std::move(sum));
  }
  return curves;
}

namespace {

void validate_experiment(const ExperimentSpec& spec, const DatasetSplit& data) {
  spec.optim.validate();
  if (spec.deltas.empty()) throw std::invalid_argument("experiment needs at least one delta");
  for (double d : spec.deltas)
    if (!(d > 0.0 && d <= 1.0)) throw std::invalid_argument("experiment delta outside (0, 1]");
  if (spec.seeds.size() < 2) throw std::invalid_argument("experiment needs at least two seeds");
  for (std::size_t i = 0; i < spec.seeds.size(); ++i)
    for (std::size_t j = i + 1; j < spec.seeds.size(); ++j)
      if (spec.seeds[i] == spec.seeds[j]) throw std::invalid_argument("experiment seeds must be distinct");
  if (data.train.size() == 0 || data.test.size() == 0) throw std::invalid_argument("experiment dataset is empty");
}

ExperimentResult run_all(const ExperimentSpec& spec, const DatasetSplit& data) {
  validate_experiment(spec, data);
  const std::size_t n = spec.deltas.size() * spec.seeds.size();
  std::vector<RunRecord> runs(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const double delta = spec.deltas[i / spec.seeds.size()];
      const std::uint64_t seed = spec.seeds[i % spec.seeds.size()];
      runs[i] = train_run(spec.model, data, delta, seed, spec.optim, spec.certify_batch);
    }
  };
  unsigned threads = spec.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : spec.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::exception_ptr> errors(threads);
  auto guarded = [&](unsigned t) {
    try {
      worker();
    } catch (...) {
      errors[t] = std::current_exception();
      next = n;
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(guarded, t);
  guarded(0);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  ExperimentResult result;
  result.runs = std::move(runs);
  result.summary = summarize(result.runs, spec.deltas);
  return result;
}

}  // namespace

ExperimentResult run_variance_experiment(const ExperimentSpec& spec, const DatasetSplit& data) {
  return run_all(spec, data);
}

ExperimentResult run_convergence_experiment(const ExperimentSpec& spec, const DatasetSplit& data) {
  return run_all(spec, data);
}

}  // namespace convexcert
