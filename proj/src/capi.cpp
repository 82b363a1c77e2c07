#include "msdepth/msdepth.h"

#include <cstring>
#include <new>
#include <string>

#include "msdepth/config.hpp"
#include "msdepth/errors.hpp"
#include "msdepth/metrics.hpp"
#include "msdepth/report.hpp"
#include "msdepth/trainer.hpp"

struct msd_config {
  msdepth::AppConfig cfg;
};

struct msd_model {
  msdepth::LoadedModels models;
};

struct msd_reports {
  std::vector<msdepth::MetricReport> rows;
};

namespace {

thread_local std::string g_last_error;

msd_status fail(msd_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs `fn`, translating library exceptions into status codes.
template <typename F>
msd_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    fn();
    return MSD_OK;
  } catch (const msdepth::ConfigError& e) {
    return fail(MSD_ERR_CONFIG, e.what());
  } catch (const msdepth::ContractViolation& e) {
    return fail(MSD_ERR_CONTRACT, e.what());
  } catch (const msdepth::CorruptionError& e) {
    return fail(MSD_ERR_CORRUPTION, e.what());
  } catch (const msdepth::CalibrationError& e) {
    return fail(MSD_ERR_CALIBRATION, e.what());
  } catch (const msdepth::DomainError& e) {
    return fail(MSD_ERR_DOMAIN, e.what());
  } catch (const msdepth::InterfaceError& e) {
    return fail(MSD_ERR_INTERFACE, e.what());
  } catch (const msdepth::IoError& e) {
    return fail(MSD_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(MSD_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MSD_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MSD_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(MSD_ERR_INTERNAL, "unknown error");
  }
}

msd_status null_arg(const char* name) { return fail(MSD_ERR_INVALID_ARGUMENT, std::string(name) + " is null"); }

void copy_label(char (&dst)[16], const std::string& src) {
  std::memset(dst, 0, sizeof(dst));
  std::strncpy(dst, src.c_str(), sizeof(dst) - 1);
}

msd_metrics to_c(const msdepth::MetricReport& r) {
  msd_metrics m{};
  copy_label(m.modality, r.modality);
  copy_label(m.condition, r.condition);
  m.abs_rel = r.abs_rel;
  m.sq_rel = r.sq_rel;
  m.rmse = r.rmse;
  m.rmse_log = r.rmse_log;
  m.d1 = r.d1;
  m.d2 = r.d2;
  m.d3 = r.d3;
  m.n_pixels = r.n_pixels;
  return m;
}

msdepth::LogSink sink(msd_log_fn log, void* user) {
  if (log == nullptr) return {};
  return [log, user](const std::string& line) { log(line.c_str(), user); };
}

void fill(msd_train_summary* s, const msdepth::TrainOutcome& o) {
  if (s == nullptr) return;
  s->best_epoch = o.best_epoch;
  s->steps = o.steps;
  s->best_val_rmse = o.best_val_rmse;
  s->val_shared_cosine = o.val_shared_cosine;
  s->val_consistency = o.val_consistency;
}

}  // namespace

extern "C" {

const char* msd_last_error(void) { return g_last_error.c_str(); }

const char* msd_status_name(msd_status status) {
  switch (status) {
    case MSD_OK: return "ok";
    case MSD_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MSD_ERR_CONFIG: return "config error";
    case MSD_ERR_CONTRACT: return "contract violation";
    case MSD_ERR_CORRUPTION: return "corruption";
    case MSD_ERR_CALIBRATION: return "calibration error";
    case MSD_ERR_DOMAIN: return "domain error";
    case MSD_ERR_INTERFACE: return "interface error";
    case MSD_ERR_IO: return "io error";
    case MSD_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* msd_version(void) { return "0.1.0"; }

msd_status msd_config_default(msd_config** out) {
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = new msd_config{}; });
}

msd_status msd_config_load(const char* path, msd_config** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = new msd_config{msdepth::load_config(path)}; });
}

msd_status msd_config_from_json(const char* json, msd_config** out) {
  if (json == nullptr) return null_arg("json");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
      throw msdepth::ConfigError(std::string("cannot parse config: ") + e.what());
    }
    *out = new msd_config{msdepth::config_from_json(j)};
  });
}

msd_status msd_config_set_seed(msd_config* cfg, uint64_t seed) {
  if (cfg == nullptr) return null_arg("cfg");
  cfg->cfg.seed = seed;
  return MSD_OK;
}

msd_status msd_config_to_json(const msd_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (cfg == nullptr) return null_arg("cfg");
  std::string s;
  if (const msd_status st = guarded([&] { s = msdepth::to_json(cfg->cfg).dump(2); }); st != MSD_OK) return st;
  if (needed != nullptr) *needed = s.size() + 1;
  if (buf == nullptr) return needed != nullptr ? MSD_OK : null_arg("buf");
  if (cap < s.size() + 1) return fail(MSD_ERR_INVALID_ARGUMENT, "buffer too small");
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return MSD_OK;
}

void msd_config_free(msd_config* cfg) { delete cfg; }

msd_status msd_generate_data(const msd_config* cfg, const char* out_dir) {
  if (cfg == nullptr) return null_arg("cfg");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] {
    const std::filesystem::path root(out_dir);
    msdepth::export_dataset(msdepth::make_split(cfg->cfg, msdepth::Split::Train), root / "train");
    msdepth::export_dataset(msdepth::make_split(cfg->cfg, msdepth::Split::Val), root / "val");
    msdepth::export_dataset(msdepth::make_split(cfg->cfg, msdepth::Split::Test), root / "test");
  });
}

msd_status msd_train_align(const msd_config* cfg, const char* out_dir, msd_log_fn log, void* user,
                           msd_train_summary* summary) {
  if (cfg == nullptr) return null_arg("cfg");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] {
    msdepth::TrainOptions opts;
    opts.out_dir = out_dir;
    opts.log = sink(log, user);
    const auto outcome = msdepth::train_align(cfg->cfg, msdepth::make_split(cfg->cfg, msdepth::Split::Train),
                                              msdepth::make_split(cfg->cfg, msdepth::Split::Val), opts);
    fill(summary, outcome);
  });
}

msd_status msd_train_fuse(const msd_config* cfg, const char* align_ckpt, const char* out_dir, msd_log_fn log,
                          void* user, msd_train_summary* summary) {
  if (cfg == nullptr) return null_arg("cfg");
  if (align_ckpt == nullptr) return null_arg("align_ckpt");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] {
    msdepth::TrainOptions opts;
    opts.out_dir = out_dir;
    opts.log = sink(log, user);
    const auto outcome =
        msdepth::train_fuse(cfg->cfg, align_ckpt, msdepth::make_split(cfg->cfg, msdepth::Split::Train),
                            msdepth::make_split(cfg->cfg, msdepth::Split::Val), opts);
    fill(summary, outcome);
  });
}

msd_status msd_evaluate(const msd_config* cfg, const char* align_ckpt, const char* fuse_ckpt, msd_eval_mode mode,
                        msd_condition split, msd_log_fn log, void* user, msd_reports** out) {
  if (cfg == nullptr) return null_arg("cfg");
  if (align_ckpt == nullptr) return null_arg("align_ckpt");
  if (out == nullptr) return null_arg("out");
  if (mode != MSD_PER_SPECTRUM && mode != MSD_FUSED) return fail(MSD_ERR_INVALID_ARGUMENT, "unknown eval mode");
  if (split < MSD_ALL_CONDITIONS || split > MSD_RAIN) return fail(MSD_ERR_INVALID_ARGUMENT, "unknown split");
  if (mode == MSD_FUSED && fuse_ckpt == nullptr) {
    return fail(MSD_ERR_CONFIG, "fused evaluation needs a fuse checkpoint");
  }
  return guarded([&] {
    msdepth::LoadedModels models =
        msdepth::load_models(align_ckpt, fuse_ckpt != nullptr ? std::optional<std::filesystem::path>(fuse_ckpt)
                                                              : std::nullopt);
    msdepth::SampleSource data = msdepth::make_split(cfg->cfg, msdepth::Split::Test);
    if (split != MSD_ALL_CONDITIONS) {
      const msdepth::Condition keep[1] = {static_cast<msdepth::Condition>(split)};
      data = data.filtered(keep);
    }
    auto rows = msdepth::evaluate_model(models.net, models.fusion.is_empty() ? nullptr : &models.fusion, data,
                                        mode == MSD_FUSED ? msdepth::EvalMode::Fused : msdepth::EvalMode::PerSpectrum,
                                        cfg->cfg.eval, sink(log, user));
    *out = new msd_reports{std::move(rows)};
  });
}

msd_status msd_compute_metrics(const float* pred, const float* gt, const uint8_t* valid, size_t n, double min_depth,
                               double depth_cap, msd_metrics* out) {
  if (pred == nullptr) return null_arg("pred");
  if (gt == nullptr) return null_arg("gt");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    const auto count = static_cast<std::int64_t>(n);
    const torch::Tensor p = torch::from_blob(const_cast<float*>(pred), {count}, torch::kFloat32);
    const torch::Tensor g = torch::from_blob(const_cast<float*>(gt), {count}, torch::kFloat32);
    const torch::Tensor m = valid != nullptr
                                ? torch::from_blob(const_cast<uint8_t*>(valid), {count}, torch::kUInt8).ne(0)
                                : torch::ones({count}, torch::kBool);
    msdepth::EvalConfig ec;
    ec.min_depth = min_depth;
    ec.depth_cap = depth_cap;
    *out = to_c(msdepth::compute_metrics(p, g, m, ec));
  });
}

size_t msd_reports_count(const msd_reports* reports) { return reports == nullptr ? 0 : reports->rows.size(); }

msd_status msd_reports_get(const msd_reports* reports, size_t index, msd_metrics* out) {
  if (reports == nullptr) return null_arg("reports");
  if (out == nullptr) return null_arg("out");
  if (index >= reports->rows.size()) return fail(MSD_ERR_INVALID_ARGUMENT, "report index out of range");
  *out = to_c(reports->rows[index]);
  return MSD_OK;
}

msd_status msd_reports_write_csv(const msd_reports* reports, const char* path) {
  if (reports == nullptr) return null_arg("reports");
  if (path == nullptr) return null_arg("path");
  return guarded([&] { msdepth::write_metrics_csv(reports->rows, path); });
}

msd_status msd_reports_read_csv(const char* path, msd_reports** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = new msd_reports{msdepth::read_metrics_csv(path)}; });
}

msd_status msd_render_report(const msd_reports* reports, const char* out_dir) {
  if (reports == nullptr) return null_arg("reports");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] { msdepth::render_report(reports->rows, out_dir); });
}

void msd_reports_free(msd_reports* reports) { delete reports; }

msd_status msd_model_load(const char* align_ckpt, const char* fuse_ckpt, msd_model** out) {
  if (align_ckpt == nullptr) return null_arg("align_ckpt");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    auto m = std::make_unique<msd_model>();
    m->models = msdepth::load_models(
        align_ckpt, fuse_ckpt != nullptr ? std::optional<std::filesystem::path>(fuse_ckpt) : std::nullopt);
    *out = m.release();
  });
}

msd_status msd_model_predict(msd_model* model, msd_spectrum spectrum, const float* image, int channels, int height,
                             int width, float* depth) {
  if (model == nullptr) return null_arg("model");
  if (image == nullptr) return null_arg("image");
  if (depth == nullptr) return null_arg("depth");
  if (spectrum < MSD_RGB || spectrum > MSD_THR) return fail(MSD_ERR_INVALID_ARGUMENT, "unknown spectrum");
  if (channels != msdepth::native_channels(static_cast<msdepth::Spectrum>(spectrum))) {
    return fail(MSD_ERR_INVALID_ARGUMENT, "channel count does not match the spectrum");
  }
  if (height <= 0 || width <= 0) return fail(MSD_ERR_INVALID_ARGUMENT, "image size must be positive");
  return guarded([&] {
    torch::NoGradGuard no_grad;
    const torch::Tensor img =
        torch::from_blob(const_cast<float*>(image), {1, channels, height, width}, torch::kFloat32);
    const auto [enc, pred] = model->models.net->forward_single(img);
    const torch::Tensor d = pred.depth.reshape({height, width}).contiguous();
    std::memcpy(depth, d.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(height * width));
  });
}

void msd_model_free(msd_model* model) { delete model; }

}  // extern "C"
