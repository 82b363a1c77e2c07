#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "msdepth/metrics.hpp"

namespace msdepth {

inline constexpr const char* kMetricsCsvHeader = "modality,condition,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3,n_pixels";

/// One row per report, columns in kMetricsCsvHeader order. Reals use the
/// shortest representation that parses back to the same double.
std::string render_csv(const std::vector<MetricReport>& reports);

/// Inverse of render_csv; throws InterfaceError on a bad header or row.
std::vector<MetricReport> parse_csv(std::string_view text);

/// Aligned plain-text table grouped by condition. Within a group the best
/// value of each metric column is wrapped in asterisks, unless every row ties.
std::string render_table(const std::vector<MetricReport>& reports);

/// Fused rows against the best single spectrum of the same condition, each
/// value followed by its signed difference, e.g. "3.120 (-0.234)". Empty when
/// the reports hold no fused rows.
std::string render_comparison(const std::vector<MetricReport>& reports);

/// Per-condition bar charts of rmse and d1 across modalities. Returns the files written.
std::vector<std::filesystem::path> write_plots(const std::vector<MetricReport>& reports,
                                               const std::filesystem::path& dir);

struct ReportFiles {
  std::filesystem::path table;
  std::filesystem::path csv;
  std::vector<std::filesystem::path> plots;
};

/// Writes report.txt, metrics.csv and plots/*.png into `out_dir`.
ReportFiles render_report(const std::vector<MetricReport>& reports, const std::filesystem::path& out_dir);

std::vector<MetricReport> read_metrics_csv(const std::filesystem::path& path);
void write_metrics_csv(const std::vector<MetricReport>& reports, const std::filesystem::path& path);

}  // namespace msdepth
