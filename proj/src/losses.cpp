#include "msdepth/losses.hpp"

#include <cmath>

#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

namespace F = torch::nn::functional;

constexpr double kSilogVariance = 0.85;

torch::Tensor batched_map(const torch::Tensor& t) {
  if (t.dim() == 2) return t.unsqueeze(0);
  if (t.dim() == 3) return t;
  if (t.dim() == 4 && t.size(1) == 1) return t.squeeze(1);
  throw InterfaceError("depth maps must be [H, W], [B, H, W] or [B, 1, H, W]");
}

torch::Tensor normalized(const torch::Tensor& x, std::int64_t dim) {
  return F::normalize(x, F::NormalizeFuncOptions().dim(dim).eps(1e-12));
}

// -log(sum exp(pos) / sum exp(all)) along `dim`, stabilized by logsumexp.
torch::Tensor info_nce(const torch::Tensor& pos_logits, const torch::Tensor& neg_logits, std::int64_t dim) {
  return torch::logsumexp(torch::cat({pos_logits, neg_logits}, dim), dim) - torch::logsumexp(pos_logits, dim);
}

double scalar(const torch::Tensor& t) { return t.defined() ? t.detach().to(torch::kDouble).item<double>() : 0.0; }

}  // namespace

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!std::isfinite(lambda_cont)) throw ConfigError("lambda_cont must be finite");
}

void FuseLossConfig::validate() const {
  if (!(lambda_geo >= 0.0) || !std::isfinite(lambda_geo)) throw ConfigError("lambda_geo must be >= 0");
}

nlohmann::json LossReport::to_json(std::int64_t step, const std::string& stage) const {
  return {{"step", step}, {"stage", stage},       {"l_sup", l_sup}, {"l_global", l_global},
          {"l_local", l_local}, {"l_geo", l_geo}, {"total", total}};
}

torch::Tensor supervised_depth_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& valid) {
  const torch::Tensor p = batched_map(pred);
  const torch::Tensor g = batched_map(gt).to(p.scalar_type());
  const torch::Tensor m = batched_map(valid).to(torch::kBool);
  if (p.sizes() != g.sizes() || p.sizes() != m.sizes()) {
    throw InterfaceError("prediction, ground truth and mask shapes differ");
  }
  std::vector<torch::Tensor> per_element;
  for (std::int64_t b = 0; b < p.size(0); ++b) {
    const torch::Tensor mb = m[b];
    if (!mb.any().item<bool>()) continue;
    const torch::Tensor diff = torch::log(p[b].masked_select(mb)) - torch::log(g[b].masked_select(mb));
    const torch::Tensor mean = diff.mean();
    per_element.push_back(diff.square().mean() - kSilogVariance * mean.square());
  }
  if (per_element.empty()) throw DomainError("supervised loss needs at least one valid pixel");
  return torch::stack(per_element).mean();
}

torch::Tensor global_contrastive(const torch::Tensor& q, const torch::Tensor& positives,
                                 const torch::Tensor& negatives, double tau) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive");
  const bool batched = q.dim() == 2;
  const torch::Tensor query = (batched ? q : q.unsqueeze(0)).detach();
  const torch::Tensor pos = batched ? positives : positives.unsqueeze(0);
  const torch::Tensor neg = batched ? negatives : negatives.unsqueeze(0);
  if (pos.dim() != 3 || neg.dim() != 3) throw InterfaceError("keys must be [P, D] or [B, P, D]");
  if (pos.size(1) < 1) throw DomainError("global contrastive loss needs at least one positive");
  if (neg.size(1) < 1) throw DomainError("global contrastive loss needs at least one negative");
  const torch::Tensor qv = query.unsqueeze(2);  // [B, D, 1]
  const torch::Tensor pos_logits = torch::bmm(pos, qv).squeeze(2) / tau;
  const torch::Tensor neg_logits = torch::bmm(neg, qv).squeeze(2) / tau;
  return info_nce(pos_logits, neg_logits, 1).mean();
}

torch::Tensor dense_local_contrastive(const torch::Tensor& rgb, const torch::Tensor& nir, const torch::Tensor& thr,
                                      const torch::Tensor& valid, double tau, DenseNegatives mode) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive");
  if (rgb.dim() != 4 || rgb.sizes() != nir.sizes() || rgb.sizes() != thr.sizes()) {
    throw InterfaceError("dense contrastive inputs must be aligned [B, C, H, W] maps of one shape");
  }
  const std::int64_t half = rgb.size(1) / 2;
  const torch::Tensor mask = valid.to(torch::kBool).expand({rgb.size(0), rgb.size(2), rgb.size(3)});

  const torch::Tensor query = normalized(rgb.narrow(1, 0, half), 1).detach();
  const std::array<torch::Tensor, 2> pos{normalized(nir.narrow(1, 0, half), 1), normalized(thr.narrow(1, 0, half), 1)};
  const std::array<torch::Tensor, 3> neg{normalized(rgb.narrow(1, half, half), 1),
                                         normalized(nir.narrow(1, half, half), 1),
                                         normalized(thr.narrow(1, half, half), 1)};

  std::vector<torch::Tensor> per_element;
  if (mode == DenseNegatives::Local) {
    std::vector<torch::Tensor> pl, nl;
    for (const auto& k : pos) pl.push_back((query * k).sum(1) / tau);  // [B, H, W]
    for (const auto& k : neg) nl.push_back((query * k).sum(1) / tau);
    const torch::Tensor loss_map = info_nce(torch::stack(pl, 1), torch::stack(nl, 1), 1);  // [B, H, W]
    for (std::int64_t b = 0; b < rgb.size(0); ++b) {
      if (!mask[b].any().item<bool>()) continue;
      per_element.push_back(loss_map[b].masked_select(mask[b]).mean());
    }
  } else {
    for (std::int64_t b = 0; b < rgb.size(0); ++b) {
      const torch::Tensor mb = mask[b].reshape(-1);
      if (!mb.any().item<bool>()) continue;
      const auto gather = [&](const torch::Tensor& map) {  // [V, D]
        return map[b].reshape({half, -1}).t().index({mb});
      };
      const torch::Tensor r = gather(query);
      const torch::Tensor pos_logits = torch::stack({(r * gather(pos[0])).sum(1), (r * gather(pos[1])).sum(1)}, 1) / tau;
      const torch::Tensor pool = torch::cat({gather(neg[0]), gather(neg[1]), gather(neg[2])}, 0);  // [3V, D]
      const torch::Tensor neg_logits = torch::matmul(r, pool.t()) / tau;
      per_element.push_back(info_nce(pos_logits, neg_logits, 1).mean());
    }
  }
  if (per_element.empty()) throw DomainError("dense contrastive loss needs at least one valid location");
  return torch::stack(per_element).mean();
}

LossReport align_objective(const std::array<torch::Tensor, 3>& l_sup, const torch::Tensor& l_global,
                           const torch::Tensor& l_local, const ContrastiveConfig& cfg) {
  cfg.validate();
  LossReport r;
  torch::Tensor sup = l_sup[0] + l_sup[1] + l_sup[2];
  for (const auto& t : l_sup) r.l_sup += scalar(t);
  r.l_global = scalar(l_global);
  r.l_local = scalar(l_local);
  r.total = r.l_sup + cfg.lambda_cont * ((1.0 - cfg.gamma) * r.l_global + cfg.gamma * r.l_local);
  torch::Tensor graph = sup;
  if (cfg.lambda_cont != 0.0) {
    if (cfg.gamma != 1.0 && l_global.defined()) graph = graph + cfg.lambda_cont * (1.0 - cfg.gamma) * l_global;
    if (cfg.gamma != 0.0 && l_local.defined()) graph = graph + cfg.lambda_cont * cfg.gamma * l_local;
  }
  r.graph = graph;
  return r;
}

torch::Tensor geometric_consistency(const torch::Tensor& d_warped, const torch::Tensor& d_pred,
                                    const torch::Tensor& valid) {
  const torch::Tensor a = batched_map(d_warped);
  const torch::Tensor b = batched_map(d_pred).to(a.scalar_type());
  const torch::Tensor m = batched_map(valid).to(torch::kBool);
  if (a.sizes() != b.sizes() || a.sizes() != m.sizes()) throw InterfaceError("depth maps and mask shapes differ");
  if (!m.any().item<bool>()) throw DomainError("geometric consistency needs at least one valid pixel");
  const torch::Tensor wa = a.masked_select(m);
  const torch::Tensor wb = b.masked_select(m);
  return ((wa - wb).abs() / (wa + wb)).mean();
}

LossReport fuse_objective(const torch::Tensor& l_sup_fused, const std::vector<torch::Tensor>& l_geo_pairs,
                          const FuseLossConfig& cfg) {
  cfg.validate();
  LossReport r;
  r.l_sup = scalar(l_sup_fused);
  torch::Tensor graph = l_sup_fused;
  if (!l_geo_pairs.empty()) {
    double sum = 0.0;
    for (const auto& t : l_geo_pairs) sum += scalar(t);
    r.l_geo = sum / static_cast<double>(l_geo_pairs.size());
    if (cfg.lambda_geo != 0.0) graph = graph + cfg.lambda_geo * torch::stack(l_geo_pairs).mean();
  }
  r.total = r.l_sup + cfg.lambda_geo * r.l_geo;
  r.graph = graph;
  return r;
}

}  // namespace msdepth
