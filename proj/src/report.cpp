#include "msdepth/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

struct Column {
  const char* name;
  double MetricReport::*field;
  bool lower_is_better;
};

constexpr std::array<Column, 7> kColumns{{
    {"abs_rel", &MetricReport::abs_rel, true},
    {"sq_rel", &MetricReport::sq_rel, true},
    {"rmse", &MetricReport::rmse, true},
    {"rmse_log", &MetricReport::rmse_log, true},
    {"d1", &MetricReport::d1, false},
    {"d2", &MetricReport::d2, false},
    {"d3", &MetricReport::d3, false},
}};

bool is_single_spectrum(const std::string& modality) {
  return modality == "rgb" || modality == "nir" || modality == "thr";
}

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string signed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%+.3f", v);
  return buf;
}

// Conditions in table order: day, night, rain, Avg, then anything else as first seen.
std::vector<std::string> condition_order(const std::vector<MetricReport>& reports) {
  std::vector<std::string> order;
  for (const char* c : {"day", "night", "rain", kAverageCondition}) {
    if (std::any_of(reports.begin(), reports.end(), [&](const MetricReport& r) { return r.condition == c; })) {
      order.emplace_back(c);
    }
  }
  for (const auto& r : reports) {
    if (std::find(order.begin(), order.end(), r.condition) == order.end()) order.push_back(r.condition);
  }
  return order;
}

std::vector<const MetricReport*> rows_of(const std::vector<MetricReport>& reports, const std::string& condition) {
  std::vector<const MetricReport*> rows;
  for (const auto& r : reports) {
    if (r.condition == condition) rows.push_back(&r);
  }
  return rows;
}

std::string pad(const std::string& s, std::size_t width, bool right) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return right ? fill + s : s + fill;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& field, std::size_t line_no) {
  T v{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw InterfaceError("metrics CSV line " + std::to_string(line_no) + ": bad number '" + field + "'");
  }
  return v;
}

void draw_bars(const std::vector<std::pair<std::string, double>>& bars, const std::string& title, double y_max,
               const std::filesystem::path& path) {
  constexpr int kWidth = 520, kHeight = 340, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  cv::Mat img(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  const int plot_w = kWidth - kLeft - kRight;
  const int plot_h = kHeight - kTop - kBottom;
  const cv::Scalar black(0, 0, 0);
  cv::line(img, {kLeft, kTop}, {kLeft, kTop + plot_h}, black, 1);
  cv::line(img, {kLeft, kTop + plot_h}, {kLeft + plot_w, kTop + plot_h}, black, 1);
  cv::putText(img, title, {kLeft, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.6, black, 1, cv::LINE_AA);
  for (int t = 0; t <= 4; ++t) {
    const double v = y_max * t / 4.0;
    const int y = kTop + plot_h - static_cast<int>(plot_h * t / 4.0);
    cv::line(img, {kLeft - 4, y}, {kLeft, y}, black, 1);
    cv::putText(img, fixed3(v), {4, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, black, 1, cv::LINE_AA);
  }
  static const std::array<cv::Scalar, 4> kColors{cv::Scalar(60, 60, 220), cv::Scalar(60, 160, 60),
                                                 cv::Scalar(200, 120, 40), cv::Scalar(40, 40, 40)};
  const int slot = bars.empty() ? plot_w : plot_w / static_cast<int>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double frac = y_max > 0.0 ? std::clamp(bars[i].second / y_max, 0.0, 1.0) : 0.0;
    const int x0 = kLeft + static_cast<int>(i) * slot + slot / 5;
    const int x1 = kLeft + static_cast<int>(i + 1) * slot - slot / 5;
    const int y0 = kTop + plot_h - static_cast<int>(plot_h * frac);
    cv::rectangle(img, {x0, y0}, {x1, kTop + plot_h}, kColors[i % kColors.size()], cv::FILLED);
    cv::putText(img, fixed3(bars[i].second), {x0, std::max(kTop, y0 - 5)}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1,
                cv::LINE_AA);
    cv::putText(img, bars[i].first, {x0, kTop + plot_h + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1, cv::LINE_AA);
  }
  if (!cv::imwrite(path.string(), img)) throw IoError("cannot write plot " + path.string());
}

std::string file_stem(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
    return std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_';
  });
  return s;
}

}  // namespace

std::string render_csv(const std::vector<MetricReport>& reports) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : reports) {
    for (const std::string* s : {&r.modality, &r.condition}) {
      if (s->find_first_of(",\n\r\"") != std::string::npos) {
        throw InterfaceError("report label '" + *s + "' cannot be written to CSV");
      }
    }
    out += r.modality + "," + r.condition;
    for (const Column& c : kColumns) out += "," + shortest(r.*c.field);
    out += "," + std::to_string(r.n_pixels) + "\n";
  }
  return out;
}

std::vector<MetricReport> parse_csv(std::string_view text) {
  std::vector<MetricReport> out;
  std::size_t line_no = 0;
  bool header_seen = false;
  for (std::string line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kMetricsCsvHeader) throw InterfaceError("metrics CSV header must be: " + std::string(kMetricsCsvHeader));
      header_seen = true;
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() != 10) {
      throw InterfaceError("metrics CSV line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                           " fields, expected 10");
    }
    MetricReport r;
    r.modality = fields[0];
    r.condition = fields[1];
    for (std::size_t i = 0; i < kColumns.size(); ++i) r.*kColumns[i].field = parse_number<double>(fields[2 + i], line_no);
    r.n_pixels = parse_number<std::int64_t>(fields[9], line_no);
    out.push_back(std::move(r));
  }
  if (!header_seen) throw InterfaceError("metrics CSV is empty");
  return out;
}

std::string render_table(const std::vector<MetricReport>& reports) {
  std::vector<std::vector<std::string>> cells;
  std::vector<bool> group_start;
  for (const std::string& cond : condition_order(reports)) {
    const auto rows = rows_of(reports, cond);
    std::vector<std::vector<std::string>> group(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) group[i] = {rows[i]->modality, rows[i]->condition};
    for (const Column& c : kColumns) {
      double best = rows.front()->*c.field;
      bool all_tie = true;
      for (const MetricReport* r : rows) {
        const double v = r->*c.field;
        if (v != rows.front()->*c.field) all_tie = false;
        best = c.lower_is_better ? std::min(best, v) : std::max(best, v);
      }
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = rows[i]->*c.field;
        std::string s = fixed3(v);
        if (!all_tie && v == best) s = "*" + s + "*";
        group[i].push_back(s);
      }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      group[i].push_back(std::to_string(rows[i]->n_pixels));
      group_start.push_back(i == 0);
      cells.push_back(std::move(group[i]));
    }
  }

  std::vector<std::string> header{"modality", "condition"};
  for (const Column& c : kColumns) header.emplace_back(c.name);
  header.emplace_back("n_pixels");
  std::vector<std::size_t> width(header.size());
  for (std::size_t k = 0; k < header.size(); ++k) width[k] = header[k].size();
  for (const auto& row : cells) {
    for (std::size_t k = 0; k < row.size(); ++k) width[k] = std::max(width[k], row[k].size());
  }

  const auto line = [&](const std::vector<std::string>& row) {
    std::string s;
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k > 0) s += "  ";
      s += pad(row[k], width[k], k >= 2);
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (group_start[i] && i > 0) out += "\n";
    out += line(cells[i]);
  }
  return out;
}

std::string render_comparison(const std::vector<MetricReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  for (const std::string& cond : condition_order(reports)) {
    const auto group = rows_of(reports, cond);
    const auto fused = std::find_if(group.begin(), group.end(),
                                    [](const MetricReport* r) { return r->modality == kFusedModality; });
    if (fused == group.end()) continue;
    std::vector<std::string> row{cond};
    bool any_single = false;
    for (const Column& c : kColumns) {
      std::optional<double> best;
      for (const MetricReport* r : group) {
        if (!is_single_spectrum(r->modality)) continue;
        const double v = r->*c.field;
        best = !best ? v : (c.lower_is_better ? std::min(*best, v) : std::max(*best, v));
      }
      if (!best) break;
      any_single = true;
      const double v = (*fused)->*c.field;
      row.push_back(fixed3(v) + " (" + signed3(v - *best) + ")");
    }
    if (any_single) rows.push_back(std::move(row));
  }
  if (rows.empty()) return {};

  std::vector<std::string> header{"condition"};
  for (const Column& c : kColumns) header.emplace_back(c.name);
  std::vector<std::size_t> width(header.size());
  for (std::size_t k = 0; k < header.size(); ++k) width[k] = header[k].size();
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) width[k] = std::max(width[k], row[k].size());
  }
  const auto line = [&](const std::vector<std::string>& row) {
    std::string s;
    for (std::size_t k = 0; k < row.size(); ++k) s += (k ? "  " : "") + pad(row[k], width[k], k > 0);
    return s + "\n";
  };
  std::string out = "fused vs best single spectrum (difference in parentheses)\n" + line(header);
  for (const auto& row : rows) out += line(row);
  return out;
}

std::vector<std::filesystem::path> write_plots(const std::vector<MetricReport>& reports,
                                               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (const std::string& cond : condition_order(reports)) {
    const auto rows = rows_of(reports, cond);
    std::vector<std::pair<std::string, double>> rmse, d1;
    double rmse_max = 0.0;
    for (const MetricReport* r : rows) {
      rmse.emplace_back(r->modality, r->rmse);
      d1.emplace_back(r->modality, r->d1);
      rmse_max = std::max(rmse_max, r->rmse);
    }
    const std::string stem = file_stem(cond);
    files.push_back(dir / ("rmse_" + stem + ".png"));
    draw_bars(rmse, "RMSE (m), " + cond, rmse_max > 0.0 ? rmse_max * 1.15 : 1.0, files.back());
    files.push_back(dir / ("d1_" + stem + ".png"));
    draw_bars(d1, "delta < 1.25, " + cond, 1.0, files.back());
  }
  return files;
}

ReportFiles render_report(const std::vector<MetricReport>& reports, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  ReportFiles files;
  files.table = out_dir / "report.txt";
  {
    std::ofstream out(files.table);
    if (!out) throw IoError("cannot write " + files.table.string());
    out << render_table(reports);
    const std::string cmp = render_comparison(reports);
    if (!cmp.empty()) out << "\n" << cmp;
  }
  files.csv = out_dir / "metrics.csv";
  write_metrics_csv(reports, files.csv);
  files.plots = write_plots(reports, out_dir / "plots");
  return files;
}

std::vector<MetricReport> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

void write_metrics_csv(const std::vector<MetricReport>& reports, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << render_csv(reports);
}

}  // namespace msdepth
