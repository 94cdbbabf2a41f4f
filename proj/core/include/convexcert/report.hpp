#pragma once

// Result files: certificate JSON, margin and table CSVs, and standalone SVG
// line charts. Numbers are printed with a fixed format so that identical runs
// produce byte-identical files.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "convexcert/curvature.hpp"
#include "convexcert/oracle.hpp"
#include "convexcert/train.hpp"

namespace convexcert {

/// Shortest round-trip decimal form ("%.17g" trimmed where exact).
std::string format_number(double x);

/// Per-variable certificate: [{variable, points:[{point_id, verdict,
/// offending_node, min_margin, circles, margins:[{node, per_sample,
/// lambda_min, correction}]}], delta_plan}].
struct VariableCertificate {
  std::string variable;
  std::vector<CertificateReport> points;
};
std::string certificate_json(const std::vector<VariableCertificate>& certs,
                             const std::map<std::string, double>& delta_plan);

/// variable,point_id,node,sample,lambda_min,correction,margin
std::string margins_csv(const std::vector<VariableCertificate>& certs);

/// {delta, certified, not_certified, has_circles, plan, table:[...]}
std::string delta_plan_json(const DeltaSearchResult& r);

/// delta,min_margin,certified,violated,circle,total
std::string delta_table_csv(const DeltaSearchResult& r);

struct ResidualRow {
  double delta = 1.0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::string graph_id;
};
/// delta,ratio,seed,graph_id
std::string residual_csv(const std::vector<ResidualRow>& rows);

/// delta,seed,epoch,train_loss,eval_acc
std::string runs_csv(const std::vector<RunRecord>& runs);

/// delta,mean_acc,std_acc,max_acc,min_acc,mean_conv_epoch
std::string summary_csv(const std::vector<SummaryRow>& rows);

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ChartSeries> series;
  /// Draw a dashed horizontal rule at this y value.
  std::optional<double> reference_y;
  int width = 640;
  int height = 400;
};

/// Self-contained SVG: axes, ticks, one polyline per series and a legend.
std::string render_svg(const LineChart& chart);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace convexcert
