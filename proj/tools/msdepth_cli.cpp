// msdepth: command-line driver over the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "msdepth/msdepth.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitContract = 3;
constexpr int kExitCorruption = 4;

int exit_code(msd_status s) {
  switch (s) {
    case MSD_OK: return kExitOk;
    case MSD_ERR_CONFIG:
    case MSD_ERR_INVALID_ARGUMENT: return kExitUsage;
    case MSD_ERR_CONTRACT: return kExitContract;
    case MSD_ERR_CORRUPTION: return kExitCorruption;
    default: return kExitFailure;
  }
}

int report_failure(msd_status s) {
  std::cerr << "msdepth: " << msd_status_name(s) << ": " << msd_last_error() << "\n";
  return exit_code(s);
}

void print_line(const char* line, void*) { std::cerr << line << "\n"; }

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

// Owns a config handle built from the global flags.
class Config {
 public:
  ~Config() { msd_config_free(cfg_); }
  msd_status load(const Globals& g) {
    msd_status s = g.config ? msd_config_load(g.config->c_str(), &cfg_) : msd_config_default(&cfg_);
    if (s == MSD_OK && g.seed) s = msd_config_set_seed(cfg_, *g.seed);
    return s;
  }
  const msd_config* get() const { return cfg_; }

 private:
  msd_config* cfg_ = nullptr;
};

// Owns a report list handle.
class Reports {
 public:
  ~Reports() { msd_reports_free(r_); }
  msd_reports** out() { return &r_; }
  const msd_reports* get() const { return r_; }

 private:
  msd_reports* r_ = nullptr;
};

void print_reports(const msd_reports* reports) {
  std::printf("%-9s %-9s %8s %8s %8s %8s %7s %7s %7s\n", "modality", "condition", "abs_rel", "sq_rel", "rmse",
              "rmse_log", "d1", "d2", "d3");
  for (size_t i = 0; i < msd_reports_count(reports); ++i) {
    msd_metrics m{};
    if (msd_reports_get(reports, i, &m) != MSD_OK) continue;
    std::printf("%-9s %-9s %8.3f %8.3f %8.3f %8.3f %7.3f %7.3f %7.3f\n", m.modality, m.condition, m.abs_rel,
                m.sq_rel, m.rmse, m.rmse_log, m.d1, m.d2, m.d3);
  }
}

std::string summary_line(const msd_train_summary& s) {
  return "best epoch " + std::to_string(s.best_epoch) + ", " + std::to_string(s.steps) + " steps, val rmse " +
         std::to_string(s.best_val_rmse);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-spectral depth estimation: data generation, two-stage training, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON config covering every module");
  app.add_option("--seed", g.seed, "Seed for weight init, shuffling and augmentation");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "Export the train, val and test splits");
  auto* align = app.add_subcommand("train-align", "Align stage: backbone with contrastive losses");

  auto* fuse = app.add_subcommand("train-fuse", "Fuse stage: fusion block on a frozen backbone");
  std::string fuse_align_ckpt;
  fuse->add_option("--align-ckpt", fuse_align_ckpt, "Checkpoint written by train-align")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate on the test split and write metrics.csv");
  std::string eval_align_ckpt;
  std::optional<std::string> eval_fuse_ckpt;
  std::string mode = "per-spectrum";
  std::string split = "all";
  eval->add_option("--align-ckpt", eval_align_ckpt, "Checkpoint written by train-align")->required();
  eval->add_option("--fuse-ckpt", eval_fuse_ckpt, "Checkpoint written by train-fuse (fused mode)");
  eval->add_option("--mode", mode, "per-spectrum or fused")
      ->check(CLI::IsMember({"per-spectrum", "fused"}))
      ->capture_default_str();
  eval->add_option("--split", split, "day, night, rain or all")
      ->check(CLI::IsMember({"day", "night", "rain", "all"}))
      ->capture_default_str();

  auto* report = app.add_subcommand("report", "Render report.txt and plots from metrics.csv");
  std::optional<std::string> metrics_path;
  report->add_option("--metrics", metrics_path, "metrics.csv to render (default: <out>/metrics.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "msdepth: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const std::filesystem::path out_dir(g.out);

  if (report->parsed()) {
    const std::string csv = metrics_path.value_or((out_dir / "metrics.csv").string());
    Reports reports;
    if (const msd_status s = msd_reports_read_csv(csv.c_str(), reports.out()); s != MSD_OK) return report_failure(s);
    if (const msd_status s = msd_render_report(reports.get(), g.out.c_str()); s != MSD_OK) return report_failure(s);
    std::cerr << "wrote " << (out_dir / "report.txt").string() << " and " << (out_dir / "plots").string() << "\n";
    return kExitOk;
  }

  Config cfg;
  if (const msd_status s = cfg.load(g); s != MSD_OK) return report_failure(s);

  if (gen->parsed()) {
    if (const msd_status s = msd_generate_data(cfg.get(), g.out.c_str()); s != MSD_OK) return report_failure(s);
    std::cerr << "wrote train, val and test splits under " << g.out << "\n";
    return kExitOk;
  }
  if (align->parsed()) {
    msd_train_summary summary{};
    if (const msd_status s = msd_train_align(cfg.get(), g.out.c_str(), print_line, nullptr, &summary); s != MSD_OK) {
      return report_failure(s);
    }
    std::cerr << "align stage done: " << summary_line(summary) << "\n";
    return kExitOk;
  }
  if (fuse->parsed()) {
    msd_train_summary summary{};
    const msd_status s =
        msd_train_fuse(cfg.get(), fuse_align_ckpt.c_str(), g.out.c_str(), print_line, nullptr, &summary);
    if (s != MSD_OK) return report_failure(s);
    std::cerr << "fuse stage done: " << summary_line(summary) << "\n";
    return kExitOk;
  }
  if (eval->parsed()) {
    const msd_eval_mode m = mode == "fused" ? MSD_FUSED : MSD_PER_SPECTRUM;
    if (m == MSD_FUSED && !eval_fuse_ckpt) {
      std::cerr << "msdepth: --mode fused requires --fuse-ckpt\n\n" << eval->help();
      return kExitUsage;
    }
    msd_condition c = MSD_ALL_CONDITIONS;
    if (split == "day") c = MSD_DAY;
    if (split == "night") c = MSD_NIGHT;
    if (split == "rain") c = MSD_RAIN;
    Reports reports;
    const msd_status s = msd_evaluate(cfg.get(), eval_align_ckpt.c_str(),
                                      eval_fuse_ckpt ? eval_fuse_ckpt->c_str() : nullptr, m, c, print_line, nullptr,
                                      reports.out());
    if (s != MSD_OK) return report_failure(s);
    const std::string csv = (out_dir / "metrics.csv").string();
    std::filesystem::create_directories(out_dir);
    if (const msd_status w = msd_reports_write_csv(reports.get(), csv.c_str()); w != MSD_OK) return report_failure(w);
    print_reports(reports.get());
    std::cerr << "wrote " << csv << "\n";
    return kExitOk;
  }
  return kExitUsage;
}
