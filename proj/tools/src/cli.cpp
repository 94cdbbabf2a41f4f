#include "convexcert/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "convexcert/curvature.hpp"
#include "convexcert/datasets.hpp"
#include "convexcert/graph_io.hpp"
#include "convexcert/oracle.hpp"
#include "convexcert/report.hpp"
#include "convexcert/train.hpp"
#include "json.hpp"

#ifndef CONVEXCERT_DEFAULT_DIGITS
#define CONVEXCERT_DEFAULT_DIGITS "assets/data/digits8x8.csv"
#endif
#ifndef CONVEXCERT_VERSION
#define CONVEXCERT_VERSION "0.0.0"
#endif

namespace convexcert::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kCommands = {"certify", "scale-search", "gradcheck", "demo-sin2", "variance", "converge"};

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Configuration

json default_sampler() {
  return {{"mode", "hypercube"}, {"nodes", json::array()}, {"lo", -2.0}, {"hi", 2.0},
          {"points", 16},        {"batch", 1},             {"data", ""}};
}

json default_experiment(const std::string& command) {
  const bool variance = command == "variance";
  return {{"dataset", variance ? "blobs" : "parity"},
          {"data_path", CONVEXCERT_DEFAULT_DIGITS},
          {"count", variance ? 600 : 512},
          {"classes", 4},
          {"dim", 8},
          {"spread", 2.0},
          {"noise", 0.15},
          {"length", 6},
          {"test_fraction", 0.25},
          {"data_seed", 7},
          {"model", variance ? "mlp" : "rnn"},
          {"hidden", variance ? json::array({32, 16}) : json::array({8})},
          {"activation", variance ? "sigmoid" : "tanh"},
          {"epochs", 100},
          {"batch_size", 32},
          {"rho", 0.95},
          {"eps", 1e-6},
          {"momentum", 0.6},
          {"l2", 1e-6},
          {"seeds", json::array({1, 2, 3, 4, 5})},
          {"certify_batch", 16},
          {"threads", 0}};
}

json default_config(const std::string& command) {
  json c;
  c["graph"] = "";
  c["variables"] = json::array();
  c["seed"] = 0;
  c["fd_step"] = 1e-4;
  c["grad_fd_step"] = 1e-5;
  if (command == "certify") {
    c["delta"] = nullptr;
    c["sampler"] = default_sampler();
  } else if (command == "scale-search") {
    c["deltas"] = {1.0, 0.5, 0.3, 0.1};
    c["sampler"] = default_sampler();
  } else if (command == "demo-sin2") {
    c["deltas"] = {1.0, 0.3};
    c["lo"] = -2.0;
    c["hi"] = 2.0;
    c["points"] = 81;
  } else if (command == "variance" || command == "converge") {
    c["deltas"] = {1.0, 0.5};
    c["experiment"] = default_experiment(command);
  }
  return c;
}

/// Overlays `patch` on `base`, rejecting keys the defaults do not define.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw InputError(where + " must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw InputError("unknown configuration key '" + where + key + "'");
    if (base[key].is_object() && value.is_object()) {
      overlay(base[key], value, where + key + ".");
    } else {
      base[key] = value;
    }
  }
}

std::string resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

std::string hash_hex(const json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config.dump())));
  return buf;
}

std::vector<double> parse_delta_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw InputError("--deltas: '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw InputError("--deltas is empty");
  return out;
}

void check_delta(double d, const std::string& what) {
  if (!(d > 0.0 && d <= 1.0)) throw InputError(what + " " + format_number(d) + " lies outside (0, 1]");
}

void validate_config(const std::string& command, const json& c) {
  if (c.contains("deltas")) {
    const auto deltas = c["deltas"].get<std::vector<double>>();
    if (deltas.empty()) throw InputError("deltas is empty");
    for (double d : deltas) check_delta(d, "delta");
  }
  if (c.contains("delta") && !c["delta"].is_null()) check_delta(c["delta"].get<double>(), "delta");
  if (command == "certify" || command == "scale-search" || command == "gradcheck") {
    const std::string graph = c["graph"].get<std::string>();
    if (graph.empty()) throw InputError(command + " needs a graph file (--graph)");
    if (!fs::exists(graph)) throw InputError("graph file '" + graph + "' does not exist");
  }
  if (c.contains("sampler")) {
    const std::string data = c["sampler"]["data"].get<std::string>();
    if (!data.empty() && !fs::exists(data)) throw InputError("sampler data '" + data + "' does not exist");
  }
  if (c.contains("experiment")) {
    const json& e = c["experiment"];
    const auto seeds = e["seeds"].get<std::vector<std::uint64_t>>();
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
      throw InputError("experiment seeds must be distinct");
    }
    if (e["dataset"] == "digits" && !fs::exists(e["data_path"].get<std::string>())) {
      throw InputError("digits file '" + e["data_path"].get<std::string>() + "' does not exist");
    }
  }
}

// ---------------------------------------------------------------------------
// Shared helpers

struct Run {
  std::string command;
  json config;
  fs::path out;
  const Context* ctx = nullptr;
  std::vector<std::string> outputs;

  std::ostream& say() const { return *ctx->out; }
  std::ostream& warn() const { return *ctx->err; }

  void write(const std::string& name, const std::string& text) {
    write_text_file(out / name, text);
    outputs.push_back(name);
  }
};

std::vector<std::string> variables_of(const Graph& g, const json& c) {
  auto vars = c["variables"].get<std::vector<std::string>>();
  if (vars.empty()) {
    for (NodeId id : g.parameters()) vars.push_back(g.node(id).name);
  }
  if (vars.empty()) throw InputError("graph has no parameters to certify");
  for (const auto& v : vars) {
    const auto id = g.find(v);
    if (!id || g.node(*id).kind != NodeKind::Parameter) throw InputError("'" + v + "' is not a parameter node");
  }
  return vars;
}

Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    bool numeric = true;
    for (std::string cell; std::getline(ss, cell, ',');) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) numeric = false;
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty()) continue;  // header
      throw InputError("non-numeric row in '" + path + "'");
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw InputError("ragged rows in '" + path + "'");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("'" + path + "' has no rows");
  Matrix m(rows.front().size(), rows.size());  // one sample per column
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < rows[j].size(); ++i) m(i, j) = rows[j][i];
  return m;
}

std::vector<Bindings> sample(const Bindings& base, const json& c, const std::vector<std::string>& vars) {
  const json& s = c["sampler"];
  const std::string mode = s["mode"].get<std::string>();
  if (mode == "none") return {base};
  SamplerSpec spec;
  if (mode == "grid") {
    spec.mode = SamplerSpec::Mode::Grid;
  } else if (mode == "hypercube") {
    spec.mode = SamplerSpec::Mode::Hypercube;
  } else if (mode == "dataset") {
    spec.mode = SamplerSpec::Mode::Dataset;
    const std::string data = s["data"].get<std::string>();
    if (data.empty()) throw InputError("dataset sampling needs sampler.data");
    spec.data = read_matrix_csv(data);
    spec.batch = s["batch"].get<std::size_t>();
  } else {
    throw InputError("unknown sampler mode '" + mode + "' (grid, hypercube, dataset, none)");
  }
  spec.nodes = s["nodes"].get<std::vector<std::string>>();
  if (spec.nodes.empty()) spec.nodes = vars;
  spec.lo = s["lo"].get<double>();
  spec.hi = s["hi"].get<double>();
  spec.points = s["points"].get<std::size_t>();
  spec.seed = c["seed"].get<std::uint64_t>();
  return sample_points(base, spec);
}

std::map<std::string, double> plan_of(const Graph& g) {
  std::map<std::string, double> plan;
  for (NodeId id : g.func_nodes()) plan[g.node(id).name] = g.node(id).delta;
  return plan;
}

void report_circles(const Run& run, const std::vector<CirclePath>& circles) {
  for (const auto& c : circles) {
    run.warn() << "circle: variable " << c.variable << " meets at " << c.meet_node << "\n";
    for (const auto& b : c.branches) run.warn() << "  " << b << "\n";
  }
}

// ---------------------------------------------------------------------------
// Commands

int cmd_certify(Run& run) {
  const json& c = run.config;
  GraphDocument doc = load_graph_file(c["graph"].get<std::string>());
  Graph g = doc.graph;
  if (!c["delta"].is_null()) g = apply_scale(g, uniform_plan(g, c["delta"].get<double>()));
  const auto vars = variables_of(g, c);
  const auto points = sample(doc.bindings, c, vars);

  CertifyOptions opts;
  opts.lib = run.ctx->lib;
  std::vector<VariableCertificate> certs;
  std::vector<CirclePath> circles;
  bool all_certified = true;
  for (const auto& v : vars) {
    VariableCertificate vc{v, {}};
    for (std::size_t k = 0; k < points.size(); ++k) {
      opts.point_id = "p" + std::to_string(k);
      vc.points.push_back(certify(g, points[k], v, opts));
    }
    std::size_t ok = 0;
    double worst = std::numeric_limits<double>::infinity();
    std::string offender;
    for (const auto& r : vc.points) {
      ok += r.verdict == Verdict::Certified;
      if (r.min_margin() < worst) {
        worst = r.min_margin();
        offender = r.offending_node;
      }
      if (r.verdict == Verdict::MarginViolated && offender.empty()) offender = r.offending_node;
    }
    const auto& first = vc.points.front();
    if (first.verdict == Verdict::CircleUncertified) {
      circles.insert(circles.end(), first.circles.begin(), first.circles.end());
      run.say() << v << ": CircleUncertified at " << first.offending_node << "\n";
    } else {
      run.say() << v << ": " << ok << "/" << vc.points.size() << " points certified, min margin "
                << format_number(worst);
      if (ok < vc.points.size()) run.say() << ", violated at " << offender;
      run.say() << "\n";
    }
    all_certified = all_certified && ok == vc.points.size();
    certs.push_back(std::move(vc));
  }
  run.write("certificate.json", certificate_json(certs, plan_of(g)));
  run.write("margins.csv", margins_csv(certs));
  if (!circles.empty()) {
    report_circles(run, circles);
    return kCircle;
  }
  return all_certified ? kOk : kCheckFailed;
}

int cmd_scale_search(Run& run) {
  const json& c = run.config;
  GraphDocument doc = load_graph_file(c["graph"].get<std::string>());
  const Graph& g = doc.graph;
  const auto vars = variables_of(g, c);
  const auto points = sample(doc.bindings, c, vars);
  const auto grid = c["deltas"].get<std::vector<double>>();

  CertifyOptions opts;
  opts.lib = run.ctx->lib;
  const DeltaSearchResult r = search_delta(g, points, vars, grid, opts);
  run.write("delta_plan.json", delta_plan_json(r));
  run.write("delta_table.csv", delta_table_csv(r));
  run.say() << "selected delta " << format_number(r.delta) << (r.certified ? "" : " (NotCertified)") << "\n";
  for (const auto& row : r.table) {
    run.say() << "  delta " << format_number(row.delta) << ": min margin " << format_number(row.min_margin) << ", "
              << row.certified << "/" << row.total << " certified\n";
  }
  if (!r.has_circles) return r.certified ? kOk : kCheckFailed;

  std::vector<ResidualRow> rows;
  for (const auto& v : vars) {
    const auto circles = detect_circles(g, v);
    if (circles.empty()) continue;
    report_circles(run, circles);
    if (points.front().at(v).size() > 256) {
      run.warn() << "residual ratio skipped for " << v << ": more than 256 entries\n";
      continue;
    }
    for (const auto& p : residual_ratio(g, points.front(), v, grid, FDConfig{c["fd_step"].get<double>()}, *run.ctx->lib)) {
      rows.push_back({p.delta, p.ratio, c["seed"].get<std::uint64_t>(), fs::path(c["graph"].get<std::string>()).stem().string()});
    }
  }
  if (!rows.empty()) {
    run.write("residual_ratio.csv", residual_csv(rows));
    run.say() << "circle present: the tree certificate does not apply; residual ratio vs delta written to "
                 "residual_ratio.csv\n";
  } else {
    run.say() << "circle present: the tree certificate does not apply; run a residual-ratio study\n";
  }
  return kCircle;
}

struct Worst {
  double rel = 0.0;
  std::string where;
};

int cmd_gradcheck(Run& run) {
  const json& c = run.config;
  const GraphDocument doc = load_graph_file(c["graph"].get<std::string>());
  const Graph& g = doc.graph;
  const auto vars = variables_of(g, c);
  const FDConfig grad_cfg{c["grad_fd_step"].get<double>()};
  const FDConfig hess_cfg{c["fd_step"].get<double>()};
  grad_cfg.validate();
  hess_cfg.validate();
  constexpr double kGradTol = 1e-5;
  constexpr double kHessTol = 1e-4;

  const FunctionLibrary& lib = *run.ctx->lib;
  const std::vector<Matrix> grads = backward_gradients(g, forward(g, doc.bindings, lib), lib);
  std::ostringstream csv;
  csv << "variable,check,rel_error,tolerance,pass,worst_entry\n";
  bool pass = true;
  Worst worst_grad;
  Worst worst_hess;
  for (const auto& v : vars) {
    const Matrix& theta = doc.bindings.at(v);
    if (theta.size() > 256) throw InputError("gradcheck: '" + v + "' has more than 256 entries");
    const Matrix fd = fd_gradient(g, doc.bindings, v, grad_cfg);
    const Matrix& an = grads[index_of(g.require(v))];
    Worst gw;
    for (std::size_t k = 0; k < fd.size(); ++k) {
      const double a = an.data()[k];
      const double f = fd.data()[k];
      const double rel = std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-4});
      if (rel >= gw.rel) {
        gw.rel = rel;
        gw.where = v + "(" + std::to_string(k / theta.cols()) + "," + std::to_string(k % theta.cols()) + ")";
      }
    }
    const bool gok = gw.rel <= kGradTol;
    csv << v << ",gradient," << format_number(gw.rel) << "," << format_number(kGradTol) << "," << (gok ? 1 : 0) << ","
        << gw.where << "\n";
    run.say() << v << ": gradient rel " << format_number(gw.rel) << (gok ? " ok" : " FAIL") << "\n";
    pass = pass && gok;
    if (gw.rel >= worst_grad.rel) worst_grad = gw;

    const auto circles = detect_circles(g, v);
    if (!circles.empty()) {
      run.say() << v << ": hessian skipped, circle at " << circles.front().meet_node << "\n";
      continue;
    }
    const Matrix h = propagated_hessian(g, doc.bindings, v, lib);
    const Matrix hfd = fd_hessian(g, doc.bindings, v, hess_cfg);
    const double rel = relative_frobenius(h, hfd);
    std::size_t wi = 0;
    std::size_t wj = 0;
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < h.cols(); ++j)
        if (std::abs(h(i, j) - hfd(i, j)) > std::abs(h(wi, wj) - hfd(wi, wj))) {
          wi = i;
          wj = j;
        }
    const bool hok = rel <= kHessTol;
    const std::string where = v + "[" + std::to_string(wi) + "," + std::to_string(wj) + "]";
    csv << v << ",hessian," << format_number(rel) << "," << format_number(kHessTol) << "," << (hok ? 1 : 0) << ","
        << where << "\n";
    run.say() << v << ": hessian rel " << format_number(rel) << (hok ? " ok" : " FAIL") << "\n";
    pass = pass && hok;
    if (rel >= worst_hess.rel) worst_hess = {rel, where};
  }
  run.write("gradcheck.csv", csv.str());
  if (!pass) {
    if (worst_grad.rel > kGradTol) {
      run.warn() << "worst gradient entry " << worst_grad.where << ": rel " << format_number(worst_grad.rel) << "\n";
    }
    if (worst_hess.rel > kHessTol) {
      run.warn() << "worst hessian entry " << worst_hess.where << ": rel " << format_number(worst_hess.rel) << "\n";
    }
    return kCheckFailed;
  }
  return kOk;
}

Graph sin_squared_graph() {
  GraphBuilder b;
  const NodeId s = b.func("s", FunctionId::Sin, b.parameter("x", std::make_pair(1, 1)));
  b.loss("E", LossId::Square, s, b.input("zero", std::make_pair(1, 1)), 2.0);
  return b.build();
}

int cmd_demo_sin2(Run& run) {
  const json& c = run.config;
  Graph base = sin_squared_graph();
  std::string variable = "x";
  Bindings bind = {{"x", Matrix{{0.0}}}, {"zero", Matrix{{0.0}}}};
  if (!c["graph"].get<std::string>().empty()) {
    GraphDocument doc = load_graph_file(c["graph"].get<std::string>());
    base = doc.graph;
    bind = doc.bindings;
    variable = variables_of(base, c).front();
  }
  const double lo = c["lo"].get<double>();
  const double hi = c["hi"].get<double>();
  const std::size_t n = c["points"].get<std::size_t>();
  if (n < 2 || !(hi > lo)) throw InputError("demo-sin2 needs at least two points on a nonempty interval");
  const auto deltas = c["deltas"].get<std::vector<double>>();

  std::ostringstream csv;
  csv << "delta,x,f,f_second,margin,inequality\n";
  LineChart fchart{"f(x) = sin^2(delta x)", "x", "f", {}, std::nullopt};
  LineChart mchart{"convexification margin", "x", "margin", {}, 0.0};
  LineChart hchart{"f''(x)", "x", "f''", {}, 0.0};
  for (double d : deltas) {
    const Graph g = apply_scale(base, uniform_plan(base, d));
    ChartSeries fs{"delta " + format_number(d), {}, {}};
    ChartSeries ms = fs;
    ChartSeries hs = fs;
    double min_h = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      const double x = k + 1 == n ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
      bind[variable] = Matrix{{x}};
      const double f = loss_value(g, bind, *run.ctx->lib);
      const double f2 = propagated_hessian(g, bind, variable, *run.ctx->lib)(0, 0);
      CertifyOptions opts;
      opts.lib = run.ctx->lib;
      const double margin = certify(g, bind, variable, opts).min_margin();
      const double t = std::tan(x);
      const double inequality = 2.0 - 2.0 * t * t;
      csv << format_number(d) << "," << format_number(x) << "," << format_number(f) << "," << format_number(f2) << ","
          << format_number(margin) << "," << format_number(inequality) << "\n";
      fs.x.push_back(x);
      fs.y.push_back(f);
      ms.x.push_back(x);
      ms.y.push_back(margin);
      hs.x.push_back(x);
      hs.y.push_back(f2);
      min_h = std::min(min_h, f2);
    }
    run.say() << "delta " << format_number(d) << ": margin at " << format_number(lo) << " is "
              << format_number(ms.y.front()) << ", min f'' " << format_number(min_h)
              << ", min margin " << format_number(*std::min_element(ms.y.begin(), ms.y.end())) << "\n";
    fchart.series.push_back(std::move(fs));
    mchart.series.push_back(std::move(ms));
    hchart.series.push_back(std::move(hs));
  }
  run.write("demo_sin2.csv", csv.str());
  run.write("demo_sin2_f.svg", render_svg(fchart));
  run.write("demo_sin2_margin.svg", render_svg(mchart));
  run.write("demo_sin2_second.svg", render_svg(hchart));
  return kOk;
}

FunctionId activation_from(const std::string& name) {
  for (FunctionId f : kAllFunctions)
    if (to_string(f) == name) return f;
  throw InputError("unknown activation '" + name + "'");
}

DatasetSplit experiment_data(const json& e) {
  const std::string name = e["dataset"].get<std::string>();
  const auto seed = e["data_seed"].get<std::uint64_t>();
  Dataset d;
  if (name == "blobs") {
    d = make_blobs(e["count"].get<std::size_t>(), e["classes"].get<std::size_t>(), e["dim"].get<std::size_t>(),
                   e["spread"].get<double>(), seed);
  } else if (name == "moons") {
    d = make_two_moons(e["count"].get<std::size_t>(), e["noise"].get<double>(), seed);
  } else if (name == "parity") {
    d = make_parity(e["length"].get<std::size_t>(), e["count"].get<std::size_t>(), seed);
  } else if (name == "digits") {
    d = load_digits_csv(e["data_path"].get<std::string>());
  } else {
    throw InputError("unknown dataset '" + name + "' (blobs, moons, parity, digits)");
  }
  return split_dataset(d, e["test_fraction"].get<double>(), seed);
}

int cmd_experiment(Run& run) {
  const json& c = run.config;
  const json& e = c["experiment"];
  ExperimentSpec spec;
  const std::string model = e["model"].get<std::string>();
  if (model != "mlp" && model != "rnn") throw InputError("unknown model '" + model + "' (mlp, rnn)");
  spec.model.kind = model == "mlp" ? ModelSpec::Kind::Mlp : ModelSpec::Kind::Rnn;
  spec.model.hidden = e["hidden"].get<std::vector<std::size_t>>();
  spec.model.activation = activation_from(e["activation"].get<std::string>());
  spec.optim.rho = e["rho"].get<double>();
  spec.optim.eps = e["eps"].get<double>();
  spec.optim.momentum = e["momentum"].get<double>();
  spec.optim.l2 = e["l2"].get<double>();
  spec.optim.epochs = e["epochs"].get<std::size_t>();
  spec.optim.batch_size = e["batch_size"].get<std::size_t>();
  spec.deltas = c["deltas"].get<std::vector<double>>();
  spec.seeds = e["seeds"].get<std::vector<std::uint64_t>>();
  spec.certify_batch = e["certify_batch"].get<std::size_t>();
  spec.threads = e["threads"].get<unsigned>();
  const DatasetSplit data = experiment_data(e);

  const ExperimentResult r = run.command == "variance" ? run_variance_experiment(spec, data)
                                                       : run_convergence_experiment(spec, data);

  run.write("runs.csv", runs_csv(r.runs));
  run.write("summary.csv", summary_csv(r.summary));

  json summary = json::array();
  for (const auto& row : r.summary) {
    json mins = json::array();
    for (const auto& rec : r.runs)
      if (rec.delta == row.delta && rec.min_margin) mins.push_back(*rec.min_margin);
    summary.push_back({{"delta", row.delta},
                       {"runs", row.runs},
                       {"diverged", row.diverged},
                       {"mean_acc", row.mean_acc},
                       {"std_acc", row.std_acc},
                       {"max_acc", row.max_acc},
                       {"min_acc", row.min_acc},
                       {"mean_conv_epoch", row.mean_conv_epoch},
                       {"mean_margin_fraction", row.mean_margin_fraction ? json(*row.mean_margin_fraction) : json()},
                       {"min_margins", mins}});
  }
  json errors = json::array();
  for (const auto& rec : r.runs)
    if (!rec.error.empty()) errors.push_back({{"delta", rec.delta}, {"seed", rec.seed}, {"error", rec.error}});
  json report = {{"command", run.command}, {"summary", summary}, {"run_errors", errors}};
  // Full-scale reference trends; informational only.
  report["reference_trend"] = run.command == "variance"
                                  ? json{{"std_acc_delta_1.0", 4.649e-3}, {"std_acc_delta_0.5", 1.006e-3}}
                                  : json{{"conv_epoch_delta_1.0", 12}, {"conv_epoch_scaled", json::array({10, 11, 11})}};
  run.write("summary.json", report.dump(2) + "\n");

  LineChart chart{run.command == "variance" ? "mean eval accuracy" : "mean eval accuracy per epoch", "epoch",
                  "accuracy", {}, std::nullopt};
  const auto curves = r.mean_curves();
  for (std::size_t i = 0; i < curves.size(); ++i) {
    ChartSeries s{"delta " + format_number(r.summary[i].delta), {}, curves[i]};
    for (std::size_t k = 0; k < curves[i].size(); ++k) s.x.push_back(static_cast<double>(k + 1));
    chart.series.push_back(std::move(s));
  }
  run.write("curves.svg", render_svg(chart));

  std::size_t diverged = 0;
  for (const auto& row : r.summary) {
    diverged += row.diverged;
    run.say() << "delta " << format_number(row.delta) << ": mean acc " << format_number(row.mean_acc) << ", std "
              << format_number(row.std_acc) << ", conv epoch " << format_number(row.mean_conv_epoch);
    if (row.mean_margin_fraction) run.say() << ", margin fraction " << format_number(*row.mean_margin_fraction);
    run.say() << "\n";
  }
  return diverged == r.runs.size() ? kCheckFailed : kOk;
}

int dispatch(Run& run) {
  const std::string& cmd = run.command;
  if (cmd == "certify") return cmd_certify(run);
  if (cmd == "scale-search") return cmd_scale_search(run);
  if (cmd == "gradcheck") return cmd_gradcheck(run);
  if (cmd == "demo-sin2") return cmd_demo_sin2(run);
  return cmd_experiment(run);
}

int execute(Run& run) {
  validate_config(run.command, run.config);
  const int code = dispatch(run);
  json manifest;
  manifest["command"] = run.command;
  manifest["version"] = CONVEXCERT_VERSION;
  manifest["config"] = run.config;
  manifest["config_hash"] = hash_hex(run.config);
  manifest["exit_code"] = code;
  manifest["outputs"] = run.outputs;
  write_text_file(run.out / "manifest.json", manifest.dump(2) + "\n");
  return code;
}

// ---------------------------------------------------------------------------
// Argument handling

struct Flags {
  std::string config;
  std::string graph;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string deltas;
  std::optional<std::size_t> grid_points;
  std::optional<double> fd_step;
  std::vector<std::string> variables;
};

void add_flags(CLI::App& sub, Flags& f) {
  sub.add_option("--config", f.config, "JSON configuration file")->check(CLI::ExistingFile);
  sub.add_option("--graph", f.graph, "Graph description file");
  sub.add_option("--out", f.out, "Output directory (CONVEXCERT_OUT takes precedence)");
  sub.add_option("--seed", f.seed, "Master seed");
  sub.add_option("--deltas", f.deltas, "Comma-separated scale factors");
  sub.add_option("--grid-points", f.grid_points, "Sample count (grid points per sampled node)");
  sub.add_option("--fd-step", f.fd_step, "Finite-difference step for Hessian probes");
  sub.add_option("--variable", f.variables, "Parameter to certify (repeatable; default all)");
}

/// Defaults, then the config file (already parsed, "out" removed), then flags.
json resolve_config(const std::string& command, const Flags& f, const json& file, const fs::path& base) {
  json c = default_config(command);
  if (!file.is_null()) {
    overlay(c, file, "");
    c["graph"] = resolve_path(c["graph"].get<std::string>(), base);
    if (c.contains("sampler")) c["sampler"]["data"] = resolve_path(c["sampler"]["data"].get<std::string>(), base);
    if (c.contains("experiment") && file.contains("experiment") && file["experiment"].contains("data_path")) {
      c["experiment"]["data_path"] = resolve_path(c["experiment"]["data_path"].get<std::string>(), base);
    }
  }
  if (!f.graph.empty()) c["graph"] = f.graph;
  if (!f.variables.empty()) c["variables"] = f.variables;
  if (f.seed) {
    c["seed"] = *f.seed;
    if (c.contains("experiment")) {
      const std::size_t k = c["experiment"]["seeds"].size();
      json seeds = json::array();
      for (std::size_t i = 0; i < k; ++i) seeds.push_back(*f.seed + i);
      c["experiment"]["seeds"] = seeds;
    }
  }
  if (!f.deltas.empty()) {
    const auto d = parse_delta_list(f.deltas);
    if (command == "certify") {
      c["delta"] = d.front();
    } else if (command == "gradcheck") {
      throw InputError("gradcheck does not take --deltas");
    } else {
      c["deltas"] = d;
    }
  }
  if (f.grid_points) {
    if (c.contains("sampler")) {
      c["sampler"]["points"] = *f.grid_points;
    } else if (command == "demo-sin2") {
      c["points"] = *f.grid_points;
    } else {
      throw InputError(command + " does not take --grid-points");
    }
  }
  if (f.fd_step) c["fd_step"] = *f.fd_step;
  if (c.contains("fd_step")) FDConfig{c["fd_step"].get<double>()}.validate();
  return c;
}

int run_replay(const std::string& path, const std::string& out_flag, const Context& ctx) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest '" + path + "'");
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("manifest '" + path + "': " + e.what());
  }
  for (const char* key : {"command", "config", "config_hash"})
    if (!m.contains(key)) throw InputError(std::string("manifest lacks '") + key + "'");
  const std::string command = m["command"].get<std::string>();
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
    throw InputError("manifest names unknown command '" + command + "'");
  }
  const std::string expected = m["config_hash"].get<std::string>();
  const std::string actual = hash_hex(m["config"]);
  if (expected != actual) {
    throw InputError("manifest config hash mismatch: recorded " + expected + ", computed " + actual);
  }
  Run run;
  run.command = command;
  run.config = m["config"];
  run.ctx = &ctx;
  run.out = !ctx.env_out.empty() ? fs::path(ctx.env_out)
            : !out_flag.empty()  ? fs::path(out_flag)
                                 : fs::path(path).parent_path();
  *ctx.out << "replaying " << command << " (config " << actual << ")\n";
  return execute(run);
}

}  // namespace

int run(const std::vector<std::string>& args, const Context& ctx_in) {
  Context ctx = ctx_in;
  if (ctx.out == nullptr) ctx.out = &std::cout;
  if (ctx.err == nullptr) ctx.err = &std::cerr;

  CLI::App app{"Per-variable convexity certificates for neural-graph objectives"};
  app.require_subcommand(0, 1);
  std::string replay;
  std::string replay_out;
  app.add_option("--replay", replay, "Re-run a manifest after verifying its config hash");
  app.add_option("--out", replay_out, "Output directory for --replay");
  app.set_version_flag("--version", CONVEXCERT_VERSION);

  std::map<std::string, Flags> flags;
  std::map<std::string, CLI::App*> subs;
  const std::map<std::string, std::string> descriptions = {
      {"certify", "Certify per-variable convexity at sampled points"},
      {"scale-search", "Choose the largest scale factor that certifies"},
      {"gradcheck", "Compare analytic gradients and Hessians with finite differences"},
      {"demo-sin2", "Tabulate and chart the scaled sin^2 example"},
      {"variance", "Multi-seed final-accuracy study over scale factors"},
      {"converge", "Multi-seed convergence study over scale factors"}};
  for (const auto& name : kCommands) {
    subs[name] = app.add_subcommand(name, descriptions.at(name));
    add_flags(*subs[name], flags[name]);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, *ctx.out, *ctx.err) == 0 ? kOk : kInputError;
  }

  try {
    std::string command;
    for (const auto& name : kCommands)
      if (subs[name]->parsed()) command = name;
    if (!replay.empty()) {
      if (!command.empty()) throw InputError("--replay cannot be combined with a subcommand");
      return run_replay(replay, replay_out, ctx);
    }
    if (command.empty()) {
      *ctx.err << app.help();
      return kInputError;
    }
    const Flags& f = flags[command];
    json file;
    fs::path base;
    std::string file_out;
    if (!f.config.empty()) {
      std::ifstream in(f.config);
      file = json::parse(in, nullptr, false);
      if (file.is_discarded()) throw InputError("config '" + f.config + "' is not valid JSON");
      if (!file.is_object()) throw InputError("config '" + f.config + "' must be a JSON object");
      base = fs::path(f.config).parent_path();
      if (file.contains("out")) {
        file_out = resolve_path(file["out"].get<std::string>(), base);
        file.erase("out");
      }
    }
    Run run;
    run.command = command;
    run.ctx = &ctx;
    run.config = resolve_config(command, f, file, base);
    run.out = !ctx.env_out.empty() ? fs::path(ctx.env_out)
              : !f.out.empty()     ? fs::path(f.out)
              : !file_out.empty()  ? fs::path(file_out)
                                   : fs::path("results") / command;
    return execute(run);
  } catch (const CircleError& e) {
    *ctx.err << "error: " << e.what() << "\n";
    return kCircle;
  } catch (const std::domain_error& e) {
    *ctx.err << "check failed: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const json::exception& e) {
    *ctx.err << "error: configuration: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    *ctx.err << "error: " << e.what() << "\n";
    return kInputError;
  }
}

int main(int argc, char** argv) {
  Context ctx;
  if (const char* env = std::getenv("CONVEXCERT_OUT")) ctx.env_out = env;
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, ctx);
}

}  // namespace convexcert::cli
