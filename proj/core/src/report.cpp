#include "convexcert/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace convexcert {

using nlohmann::ordered_json;

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace {

ordered_json finite_or_null(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr); }

ordered_json circles_json(const std::vector<CirclePath>& circles) {
  ordered_json out = ordered_json::array();
  for (const auto& c : circles) {
    out.push_back({{"variable", c.variable}, {"meet_node", c.meet_node}, {"branches", c.branches}});
  }
  return out;
}

}  // namespace

std::string certificate_json(const std::vector<VariableCertificate>& certs,
                             const std::map<std::string, double>& delta_plan) {
  ordered_json plan = ordered_json::object();
  for (const auto& [node, d] : delta_plan) plan[node] = d;
  ordered_json out = ordered_json::array();
  for (const auto& cert : certs) {
    ordered_json points = ordered_json::array();
    for (const auto& rep : cert.points) {
      ordered_json margins = ordered_json::array();
      for (const auto& m : rep.margins) {
        margins.push_back({{"node", m.node},
                           {"per_sample", m.margin},
                           {"lambda_min", m.lambda_min},
                           {"correction", m.correction}});
      }
      points.push_back({{"point_id", rep.point_id},
                        {"verdict", std::string(to_string(rep.verdict))},
                        {"offending_node", rep.offending_node},
                        {"min_margin", finite_or_null(rep.min_margin())},
                        {"circles", circles_json(rep.circles)},
                        {"margins", margins}});
    }
    out.push_back({{"variable", cert.variable}, {"points", points}, {"delta_plan", plan}});
  }
  return out.dump(2) + "\n";
}

std::string margins_csv(const std::vector<VariableCertificate>& certs) {
  std::ostringstream os;
  os << "variable,point_id,node,sample,lambda_min,correction,margin\n";
  for (const auto& cert : certs)
    for (const auto& rep : cert.points)
      for (const auto& m : rep.margins)
        for (std::size_t j = 0; j < m.margin.size(); ++j) {
          os << cert.variable << ',' << rep.point_id << ',' << m.node << ',' << j << ','
             << format_number(m.lambda_min[j]) << ',' << format_number(m.correction[j]) << ','
             << format_number(m.margin[j]) << '\n';
        }
  return os.str();
}

std::string delta_plan_json(const DeltaSearchResult& r) {
  ordered_json plan = ordered_json::object();
  for (const auto& [node, d] : r.plan) plan[node] = d;
  ordered_json table = ordered_json::array();
  for (const auto& row : r.table) {
    table.push_back({{"delta", row.delta},
                     {"min_margin", finite_or_null(row.min_margin)},
                     {"certified", row.certified},
                     {"violated", row.violated},
                     {"circle", row.circle},
                     {"total", row.total}});
  }
  ordered_json out = {{"delta", r.delta},
                      {"certified", r.certified},
                      {"not_certified", !r.certified},
                      {"has_circles", r.has_circles},
                      {"plan", plan},
                      {"table", table}};
  return out.dump(2) + "\n";
}

std::string delta_table_csv(const DeltaSearchResult& r) {
  std::ostringstream os;
  os << "delta,min_margin,certified,violated,circle,total\n";
  for (const auto& row : r.table) {
    os << format_number(row.delta) << ',' << format_number(row.min_margin) << ',' << row.certified << ','
       << row.violated << ',' << row.circle << ',' << row.total << '\n';
  }
  return os.str();
}

std::string residual_csv(const std::vector<ResidualRow>& rows) {
  std::ostringstream os;
  os << "delta,ratio,seed,graph_id\n";
  for (const auto& r : rows)
    os << format_number(r.delta) << ',' << format_number(r.ratio) << ',' << r.seed << ',' << r.graph_id << '\n';
  return os.str();
}

std::string runs_csv(const std::vector<RunRecord>& runs) {
  std::ostringstream os;
  os << "delta,seed,epoch,train_loss,eval_acc\n";
  for (const auto& r : runs)
    for (const auto& e : r.epochs) {
      os << format_number(r.delta) << ',' << r.seed << ',' << e.epoch << ',' << format_number(e.train_loss) << ','
         << format_number(e.eval_accuracy) << '\n';
    }
  return os.str();
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "delta,mean_acc,std_acc,max_acc,min_acc,mean_conv_epoch\n";
  for (const auto& r : rows) {
    os << format_number(r.delta) << ',' << format_number(r.mean_acc) << ',' << format_number(r.std_acc) << ','
       << format_number(r.max_acc) << ',' << format_number(r.min_acc) << ',' << format_number(r.mean_conv_epoch)
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double x, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::string tick_label(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(x) < 1e-12 ? 0.0 : x);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

std::string render_svg(const LineChart& chart) {
  double x0 = std::numeric_limits<double>::infinity();
  double x1 = -x0;
  double y0 = x0;
  double y1 = -x0;
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("chart series '" + s.name + "' has ragged data");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (chart.reference_y) {
    y0 = std::min(y0, *chart.reference_y);
    y1 = std::max(y1, *chart.reference_y);
  }
  if (!std::isfinite(x0)) x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double left = 70, right = 150, top = 40, bottom = 50;
  const double pw = chart.width - left - right;
  const double ph = chart.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << chart.width << "\" height=\"" << chart.height
     << "\" viewBox=\"0 0 " << chart.width << ' ' << chart.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fixed(chart.width / 2.0) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << escape_xml(chart.title) << "</text>\n";
  os << "<rect x=\"" << fixed(left) << "\" y=\"" << fixed(top) << "\" width=\"" << fixed(pw) << "\" height=\""
     << fixed(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";

  constexpr int kTicks = 5;
  for (int t = 0; t <= kTicks; ++t) {
    const double xv = x0 + (x1 - x0) * t / kTicks;
    const double yv = y0 + (y1 - y0) * t / kTicks;
    os << "<line x1=\"" << fixed(px(xv)) << "\" y1=\"" << fixed(top + ph) << "\" x2=\"" << fixed(px(xv))
       << "\" y2=\"" << fixed(top + ph + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fixed(px(xv)) << "\" y=\"" << fixed(top + ph + 18) << "\" text-anchor=\"middle\">"
       << tick_label(xv) << "</text>\n";
    os << "<line x1=\"" << fixed(left - 5) << "\" y1=\"" << fixed(py(yv)) << "\" x2=\"" << fixed(left) << "\" y2=\""
       << fixed(py(yv)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fixed(left - 8) << "\" y=\"" << fixed(py(yv) + 4) << "\" text-anchor=\"end\">"
       << tick_label(yv) << "</text>\n";
  }
  os << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"" << fixed(chart.height - 10.0)
     << "\" text-anchor=\"middle\">" << escape_xml(chart.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << fixed(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << fixed(top + ph / 2) << ")\">" << escape_xml(chart.y_label) << "</text>\n";

  if (chart.reference_y) {
    os << "<line x1=\"" << fixed(left) << "\" y1=\"" << fixed(py(*chart.reference_y)) << "\" x2=\""
       << fixed(left + pw) << "\" y2=\"" << fixed(py(*chart.reference_y))
       << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << (first ? "" : " ") << fixed(px(s.x[i])) << ',' << fixed(py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    const double ly = top + 12 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << fixed(left + pw + 10) << "\" y1=\"" << fixed(ly) << "\" x2=\"" << fixed(left + pw + 30)
       << "\" y2=\"" << fixed(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fixed(left + pw + 35) << "\" y=\"" << fixed(ly + 4) << "\">" << escape_xml(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace convexcert
