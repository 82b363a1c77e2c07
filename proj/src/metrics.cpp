#include "msdepth/metrics.hpp"

#include <cmath>
#include <map>

#include "msdepth/batch.hpp"
#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

const std::array<std::string, 4> kModalityOrder{"rgb", "nir", "thr", kFusedModality};

struct Buckets {
  std::array<MetricAccumulator, 3> by_condition;
  MetricAccumulator all;

  void add(Condition c, const MetricReport& r) {
    by_condition[index_of(c)].add(r);
    all.add(r);
  }
};

}  // namespace

MetricReport compute_metrics(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& valid,
                             const EvalConfig& cfg) {
  cfg.validate();
  if (pred.numel() != gt.numel() || pred.numel() != valid.numel()) {
    throw InterfaceError("prediction, ground truth and mask sizes differ");
  }
  const torch::Tensor p = pred.detach().reshape(-1).to(torch::kDouble);
  const torch::Tensor g = gt.detach().reshape(-1).to(torch::kDouble);
  const torch::Tensor m = valid.reshape(-1).to(torch::kBool) & g.ge(cfg.min_depth) & g.le(cfg.depth_cap);
  const std::int64_t n = m.sum().item<std::int64_t>();
  if (n == 0) throw DomainError("no valid pixels to evaluate");
  const torch::Tensor pv = p.masked_select(m);
  const torch::Tensor gv = g.masked_select(m);
  if (pv.le(0.0).any().item<bool>()) throw DomainError("predicted depth must be positive");

  const torch::Tensor diff = pv - gv;
  const torch::Tensor ratio = torch::maximum(pv / gv, gv / pv);
  MetricReport r;
  r.abs_rel = (diff.abs() / gv).mean().item<double>();
  r.sq_rel = (diff.square() / gv).mean().item<double>();
  r.rmse = std::sqrt(diff.square().mean().item<double>());
  r.rmse_log = std::sqrt((pv.log() - gv.log()).square().mean().item<double>());
  r.d1 = ratio.lt(1.25).to(torch::kDouble).mean().item<double>();
  r.d2 = ratio.lt(1.25 * 1.25).to(torch::kDouble).mean().item<double>();
  r.d3 = ratio.lt(1.25 * 1.25 * 1.25).to(torch::kDouble).mean().item<double>();
  r.n_pixels = n;
  return r;
}

void MetricAccumulator::add(const MetricReport& r) {
  const std::array<double, 7> v{r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.d1, r.d2, r.d3};
  for (std::size_t i = 0; i < v.size(); ++i) sum_[i] += v[i];
  pixels_ += r.n_pixels;
  ++count_;
}

MetricReport MetricAccumulator::mean(std::string modality, std::string condition) const {
  if (count_ == 0) throw DomainError("no reports to average");
  const double k = static_cast<double>(count_);
  MetricReport r;
  r.modality = std::move(modality);
  r.condition = std::move(condition);
  r.abs_rel = sum_[0] / k;
  r.sq_rel = sum_[1] / k;
  r.rmse = sum_[2] / k;
  r.rmse_log = sum_[3] / k;
  r.d1 = sum_[4] / k;
  r.d2 = sum_[5] / k;
  r.d3 = sum_[6] / k;
  r.n_pixels = pixels_;
  return r;
}

EvalMode parse_eval_mode(std::string_view name) {
  if (name == "per-spectrum") return EvalMode::PerSpectrum;
  if (name == "fused") return EvalMode::Fused;
  throw ConfigError("unknown eval mode '" + std::string(name) + "'");
}

std::vector<MetricReport> evaluate_model(DepthNet& net, FusionModule* fusion, const SampleSource& data,
                                         EvalMode mode, const EvalConfig& cfg, const WarningSink& warn) {
  cfg.validate();
  if (mode == EvalMode::Fused && (fusion == nullptr || fusion->is_empty())) {
    throw InterfaceError("fused evaluation needs a fusion checkpoint");
  }
  torch::NoGradGuard no_grad;
  net->eval();
  if (fusion != nullptr && !fusion->is_empty()) (*fusion)->eval();

  std::map<std::string, Buckets> acc;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    std::vector<MultiSpectralSample> samples;
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i) {
      samples.push_back(data.render(i));
    }
    const Batch batch = collate(samples);
    const SinglePass single = run_single_pass(net, batch.image);
    std::array<torch::Tensor, 3> fused_depth;
    if (mode == EvalMode::Fused) {
      for (Spectrum plane : kSpectra) {
        fused_depth[index_of(plane)] = fuse_in_plane(plane, single, batch.rigs, net, *fusion).depth.depth;
      }
    }
    for (std::int64_t b = 0; b < batch.size(); ++b) {
      const Condition cond = batch.conditions[static_cast<std::size_t>(b)];
      MetricAccumulator fused_planes;
      for (Spectrum s : kSpectra) {
        const std::size_t k = index_of(s);
        acc[std::string(to_string(s))].add(
            cond, compute_metrics(single.depth[k].depth[b], batch.depth[k][b], batch.valid[k][b], cfg));
        if (mode == EvalMode::Fused) {
          fused_planes.add(compute_metrics(fused_depth[k][b], batch.depth[k][b], batch.valid[k][b], cfg));
        }
      }
      if (mode == EvalMode::Fused) acc[kFusedModality].add(cond, fused_planes.mean(kFusedModality, ""));
    }
  }

  std::vector<MetricReport> out;
  for (const std::string& modality : kModalityOrder) {
    const auto it = acc.find(modality);
    if (it == acc.end()) continue;
    for (Condition c : kConditions) {
      const MetricAccumulator& a = it->second.by_condition[index_of(c)];
      if (a.empty()) {
        if (warn) warn("no " + std::string(to_string(c)) + " samples for " + modality + "; row omitted");
        continue;
      }
      out.push_back(a.mean(modality, std::string(to_string(c))));
    }
    if (!it->second.all.empty()) out.push_back(it->second.all.mean(modality, kAverageCondition));
  }
  return out;
}

}  // namespace msdepth
