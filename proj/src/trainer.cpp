#include "msdepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c),
                    static_cast<std::uint32_t>(c >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct PlaneGeometry {
  std::vector<CameraModel> tgt, ref;
  std::vector<RigidTransform> tgt_to_ref;
};

PlaneGeometry geometry_of(const std::vector<CameraRig>& rigs, Spectrum tgt, Spectrum ref) {
  PlaneGeometry g;
  for (const CameraRig& rig : rigs) {
    g.tgt.push_back(rig.camera(tgt));
    g.ref.push_back(rig.camera(ref));
    g.tgt_to_ref.push_back(rig.calib.transform(tgt, ref));
  }
  return g;
}

Batch load_batch(const std::vector<MultiSpectralSample>& samples, const std::vector<std::size_t>& order,
                 std::size_t start, std::size_t size, const AugmentConfig& aug, std::uint64_t seed, int epoch) {
  std::vector<MultiSpectralSample> picked;
  for (std::size_t i = start; i < std::min(order.size(), start + size); ++i) {
    picked.push_back(augment(samples[order[i]], aug, derive_seed(seed, static_cast<std::uint64_t>(epoch), order[i])));
  }
  return collate(picked);
}

std::vector<MultiSpectralSample> render_all(const SampleSource& src) {
  std::vector<MultiSpectralSample> out;
  out.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out.push_back(src.render(i));
  return out;
}

double average_rmse(const std::vector<MetricReport>& reports, bool fused_only) {
  double sum = 0.0;
  int n = 0;
  for (const MetricReport& r : reports) {
    if (r.condition != kAverageCondition) continue;
    if (fused_only != (r.modality == kFusedModality)) continue;
    sum += r.rmse;
    ++n;
  }
  if (n == 0) throw DomainError("validation produced no average rows");
  return sum / n;
}

nlohmann::json report_json(const MetricReport& r) {
  return {{"modality", r.modality}, {"condition", r.condition}, {"abs_rel", r.abs_rel}, {"sq_rel", r.sq_rel},
          {"rmse", r.rmse},         {"rmse_log", r.rmse_log},   {"d1", r.d1},           {"d2", r.d2},
          {"d3", r.d3},             {"n_pixels", r.n_pixels}};
}

class JsonLog {
 public:
  explicit JsonLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
    if (!out_) throw IoError("cannot open " + path.string());
  }
  void write(const nlohmann::json& j) { out_ << j.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

void check_finite(const LossReport& r, std::int64_t step) {
  if (!std::isfinite(r.total)) {
    throw ContractViolation("training diverged: non-finite loss at step " + std::to_string(step));
  }
}

void require_finite(const torch::Tensor& depth, const char* what) {
  if (!torch::isfinite(depth.detach()).all().item<bool>()) {
    throw ContractViolation(std::string("training diverged: non-finite ") + what + " depth");
  }
}

void say(const TrainOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

}  // namespace

SampleSource make_split(const AppConfig& cfg, Split split) {
  const auto& d = cfg.data;
  const int n = split == Split::Train ? d.train_samples : split == Split::Val ? d.val_samples : d.test_samples;
  const auto& mix = split == Split::Train ? d.train_mix : split == Split::Val ? d.val_mix : d.test_mix;
  return make_dataset(n, d.split_seed, mix, split, cfg.rig(), d.corruption);
}

void seed_everything(std::uint64_t seed) {
  torch::manual_seed(seed);
  at::globalContext().setDeterministicAlgorithms(true, true);
}

LossReport align_losses(DepthNet& net, const Batch& batch, const ContrastiveConfig& cfg) {
  const SinglePass single = run_single_pass(net, batch.image);
  std::array<torch::Tensor, 3> sup;
  for (Spectrum s : kSpectra) {
    const std::size_t k = index_of(s);
    require_finite(single.depth[k].depth, "predicted");
    sup[k] = supervised_depth_loss(single.depth[k].depth, batch.depth[k], batch.valid[k]);
  }

  const GlobalEmbedding rgb_sh = global_embed(single.enc(Spectrum::Rgb).bottleneck.shared());
  const torch::Tensor positives = torch::stack({global_embed(single.enc(Spectrum::Nir).bottleneck.shared()).vector,
                                                global_embed(single.enc(Spectrum::Thr).bottleneck.shared()).vector},
                                               1);
  const torch::Tensor negatives =
      torch::stack({global_embed(single.enc(Spectrum::Rgb).bottleneck.specific()).vector,
                    global_embed(single.enc(Spectrum::Nir).bottleneck.specific()).vector,
                    global_embed(single.enc(Spectrum::Thr).bottleneck.specific()).vector},
                   1);
  const torch::Tensor l_global = global_contrastive(rgb_sh.vector, positives, negatives, cfg.tau);

  // Dense term in the thermal plane, warped with the thermal prediction.
  const int stride = net->config().scale;
  const torch::Tensor thr_depth = subsample_to_stride(single.pred(Spectrum::Thr).depth.detach(), stride);
  std::array<torch::Tensor, 3> aligned;
  torch::Tensor valid = torch::ones({thr_depth.size(0), thr_depth.size(2), thr_depth.size(3)}, torch::kBool);
  for (Spectrum s : {Spectrum::Rgb, Spectrum::Nir}) {
    const PlaneGeometry g = geometry_of(batch.rigs, Spectrum::Thr, s);
    WarpResult w = align_to_plane(single.enc(s).bottleneck.full, thr_depth, g.tgt, g.ref, g.tgt_to_ref);
    aligned[index_of(s)] = w.data;
    valid = valid & w.valid;
  }
  aligned[index_of(Spectrum::Thr)] = single.enc(Spectrum::Thr).bottleneck.full;
  const torch::Tensor l_local = dense_local_contrastive(aligned[0], aligned[1], aligned[2], valid, cfg.tau,
                                                        cfg.negatives);
  return align_objective(sup, l_global, l_local, cfg);
}

std::array<torch::Tensor, 3> fused_depths(DepthNet& net, FusionModule& fusion, const Batch& batch) {
  SinglePass single;
  {
    torch::NoGradGuard no_grad;
    single = run_single_pass(net, batch.image);
  }
  std::array<torch::Tensor, 3> out;
  for (Spectrum plane : kSpectra) {
    out[index_of(plane)] = fuse_in_plane(plane, single, batch.rigs, net, fusion).depth.depth;
  }
  return out;
}

std::vector<torch::Tensor> geometric_pair_losses(const std::array<torch::Tensor, 3>& depth, const Batch& batch) {
  std::vector<torch::Tensor> out;
  for (Spectrum tgt : kSpectra) {
    for (Spectrum ref : kSpectra) {
      if (tgt == ref) continue;
      const PlaneGeometry g = geometry_of(batch.rigs, tgt, ref);
      const FlowField flow = project_flow(depth[index_of(tgt)], g.tgt, g.ref, g.tgt_to_ref);
      const WarpResult warped = inverse_warp(depth[index_of(ref)], flow);
      if (!warped.valid.any().item<bool>()) continue;
      out.push_back(geometric_consistency(warped.data, flow.projected_depth, warped.valid));
    }
  }
  return out;
}

LossReport fuse_losses(DepthNet& net, FusionModule& fusion, const Batch& batch, const FuseLossConfig& cfg) {
  const std::array<torch::Tensor, 3> depth = fused_depths(net, fusion, batch);
  std::vector<torch::Tensor> sup;
  for (Spectrum s : kSpectra) {
    const std::size_t k = index_of(s);
    require_finite(depth[k], "fused");
    sup.push_back(supervised_depth_loss(depth[k], batch.depth[k], batch.valid[k]));
  }
  return fuse_objective(torch::stack(sup).mean(), geometric_pair_losses(depth, batch), cfg);
}

double shared_embedding_cosine(DepthNet& net, const SampleSource& data, int batch_size) {
  torch::NoGradGuard no_grad;
  net->eval();
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<MultiSpectralSample> samples;
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      samples.push_back(data.render(i));
    }
    const Batch batch = collate(samples);
    const SinglePass single = run_single_pass(net, batch.image);
    std::array<torch::Tensor, 3> e;
    for (Spectrum s : kSpectra) e[index_of(s)] = global_embed(single.enc(s).bottleneck.shared()).vector;
    const torch::Tensor cos = ((e[0] * e[1]).sum(1) + (e[0] * e[2]).sum(1) + (e[1] * e[2]).sum(1)) / 3.0;
    sum += cos.sum().item<double>();
    n += cos.size(0);
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

double cross_plane_consistency(DepthNet& net, FusionModule& fusion, const SampleSource& data, int batch_size) {
  torch::NoGradGuard no_grad;
  net->eval();
  fusion->eval();
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<MultiSpectralSample> samples;
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      samples.push_back(data.render(i));
    }
    const Batch batch = collate(samples);
    const auto pairs = geometric_pair_losses(fused_depths(net, fusion, batch), batch);
    for (const auto& p : pairs) sum += p.item<double>() * static_cast<double>(batch.size());
    n += static_cast<std::int64_t>(pairs.size()) * batch.size();
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

TrainOutcome train_align(const AppConfig& cfg, const SampleSource& train, const SampleSource& val,
                         const TrainOptions& options) {
  cfg.validate();
  const TrainConfig& tc = cfg.align;
  std::filesystem::create_directories(options.out_dir);
  seed_everything(cfg.seed);
  DepthNet net(cfg.backbone);
  torch::optim::AdamW opt(net->parameters(), torch::optim::AdamWOptions(tc.lr).weight_decay(tc.weight_decay));

  JsonLog train_log(options.out_dir / "train_log.jsonl");
  JsonLog val_log(options.out_dir / "val_log.jsonl");
  say(options, "rendering " + std::to_string(train.size()) + " training samples");
  const std::vector<MultiSpectralSample> samples = render_all(train);
  SampleSource val_cached = val;
  val_cached.cache_all();

  TrainOutcome outcome;
  outcome.checkpoint = options.out_dir / "align.ckpt";
  std::optional<double> best;
  const auto validate = [&](int epoch) {
    const auto reports = evaluate_model(net, nullptr, val_cached, EvalMode::PerSpectrum, cfg.eval);
    const double rmse = average_rmse(reports, false);
    const double cosine = shared_embedding_cosine(net, val_cached, cfg.eval.batch_size);
    for (const MetricReport& r : reports) {
      if (r.condition != kAverageCondition) continue;
      nlohmann::json j = report_json(r);
      j["stage"] = "align";
      j["epoch"] = epoch;
      j["shared_cosine"] = cosine;
      val_log.write(j);
    }
    say(options, "epoch " + std::to_string(epoch) + " val rmse " + std::to_string(rmse) + " shared cosine " +
                     std::to_string(cosine));
    if (!best || rmse < *best) {
      best = rmse;
      outcome.best_epoch = epoch;
      outcome.best_val_rmse = rmse;
      outcome.val_shared_cosine = cosine;
      outcome.val_reports = reports;
      Checkpoint ckpt;
      ckpt.stage = Stage::Align;
      ckpt.seed = cfg.seed;
      ckpt.epoch = epoch;
      ckpt.config = to_json(cfg);
      ckpt.config_digest = config_digest(cfg);
      ckpt.tensors = module_state(*net);
      save_checkpoint(outcome.checkpoint, ckpt);
    }
  };

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  bool stop = false;
  if (tc.epochs == 0) validate(0);
  for (int epoch = 1; epoch <= tc.epochs && !stop; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5817, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    net->train();
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const Batch batch =
          load_batch(samples, order, start, static_cast<std::size_t>(tc.batch_size), cfg.data.augment, cfg.seed, epoch);
      opt.zero_grad();
      const LossReport report = align_losses(net, batch, cfg.contrastive);
      check_finite(report, outcome.steps);
      report.graph.backward();
      opt.step();
      if (options.after_step) options.after_step(outcome.steps, net, nullptr);
      outcome.step_totals.push_back(report.total);
      if (outcome.steps % tc.log_every == 0) train_log.write(report.to_json(outcome.steps, "align"));
      ++outcome.steps;
      if (options.max_steps >= 0 && outcome.steps >= options.max_steps) {
        stop = true;
        break;
      }
    }
    validate(epoch);
  }
  return outcome;
}

TrainOutcome train_fuse(const AppConfig& cfg, const std::filesystem::path& align_ckpt, const SampleSource& train,
                        const SampleSource& val, const TrainOptions& options) {
  cfg.validate();
  const TrainConfig& tc = cfg.fuse;
  const Checkpoint align = load_checkpoint(align_ckpt, Stage::Align);
  const AppConfig align_cfg = config_from_json(align.config);
  if (align_cfg.backbone.bottleneck_channels != cfg.fusion.channels) {
    throw ConfigError("fusion.channels does not match the align checkpoint's bottleneck width");
  }
  std::filesystem::create_directories(options.out_dir);
  seed_everything(cfg.seed);
  DepthNet net(align_cfg.backbone);
  load_module_state(*net, align.tensors);
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  net->eval();

  FusionModule fusion(cfg.fusion);
  torch::optim::AdamW opt(fusion->parameters(), torch::optim::AdamWOptions(tc.lr).weight_decay(tc.weight_decay));

  JsonLog train_log(options.out_dir / "train_log.jsonl");
  JsonLog val_log(options.out_dir / "val_log.jsonl");
  say(options, "rendering " + std::to_string(train.size()) + " training samples");
  const std::vector<MultiSpectralSample> samples = render_all(train);
  SampleSource val_cached = val;
  val_cached.cache_all();

  const auto check_frozen = [&] {
    if (payload_digest(module_state(*net)) != align.payload_digest) {
      throw ContractViolation("frozen backbone was modified during fuse-stage training");
    }
  };

  TrainOutcome outcome;
  outcome.checkpoint = options.out_dir / "fuse.ckpt";
  std::optional<double> best;
  const auto validate = [&](int epoch) {
    const auto reports = evaluate_model(net, &fusion, val_cached, EvalMode::Fused, cfg.eval);
    const double rmse = average_rmse(reports, true);
    const double consistency = cross_plane_consistency(net, fusion, val_cached, cfg.eval.batch_size);
    for (const MetricReport& r : reports) {
      if (r.condition != kAverageCondition) continue;
      nlohmann::json j = report_json(r);
      j["stage"] = "fuse";
      j["epoch"] = epoch;
      j["geo_consistency"] = consistency;
      val_log.write(j);
    }
    say(options, "epoch " + std::to_string(epoch) + " val fused rmse " + std::to_string(rmse) + " consistency " +
                     std::to_string(consistency));
    if (!best || rmse < *best) {
      check_frozen();
      best = rmse;
      outcome.best_epoch = epoch;
      outcome.best_val_rmse = rmse;
      outcome.val_consistency = consistency;
      outcome.val_reports = reports;
      Checkpoint ckpt;
      ckpt.stage = Stage::Fuse;
      ckpt.seed = cfg.seed;
      ckpt.epoch = epoch;
      ckpt.config = to_json(cfg);
      ckpt.config_digest = config_digest(cfg);
      ckpt.align_ckpt_hash = align.file_digest;
      ckpt.tensors = module_state(*fusion);
      save_checkpoint(outcome.checkpoint, ckpt);
    }
  };

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  bool stop = false;
  if (tc.epochs == 0) validate(0);
  for (int epoch = 1; epoch <= tc.epochs && !stop; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0xF05E, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    fusion->train();
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const Batch batch =
          load_batch(samples, order, start, static_cast<std::size_t>(tc.batch_size), cfg.data.augment, cfg.seed, epoch);
      opt.zero_grad();
      const LossReport report = fuse_losses(net, fusion, batch, cfg.fuse_loss);
      check_finite(report, outcome.steps);
      report.graph.backward();
      opt.step();
      if (options.after_step) options.after_step(outcome.steps, net, &fusion);
      outcome.step_totals.push_back(report.total);
      if (outcome.steps % tc.log_every == 0) train_log.write(report.to_json(outcome.steps, "fuse"));
      ++outcome.steps;
      if (options.max_steps >= 0 && outcome.steps >= options.max_steps) {
        stop = true;
        break;
      }
    }
    validate(epoch);
  }
  check_frozen();
  return outcome;
}

LoadedModels load_models(const std::filesystem::path& align_ckpt,
                         const std::optional<std::filesystem::path>& fuse_ckpt) {
  LoadedModels m;
  m.align = load_checkpoint(align_ckpt, Stage::Align);
  const AppConfig align_cfg = config_from_json(m.align.config);
  m.net = DepthNet(align_cfg.backbone);
  load_module_state(*m.net, m.align.tensors);
  m.net->eval();
  if (fuse_ckpt) {
    m.fuse = load_checkpoint(*fuse_ckpt, Stage::Fuse);
    verify_provenance(*m.fuse, m.align);
    const AppConfig fuse_cfg = config_from_json(m.fuse->config);
    m.fusion = FusionModule(fuse_cfg.fusion);
    load_module_state(*m.fusion, m.fuse->tensors);
    m.fusion->eval();
  }
  return m;
}

}  // namespace msdepth
