#pragma once

#include <torch/torch.h>

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace msdepth {

enum class DenseNegatives : std::uint8_t {
  Local,       // the three spectral-specific vectors at the query's own location
  GlobalPool,  // specific vectors at every valid location of the element
};

struct ContrastiveConfig {
  double tau = 0.2;
  double lambda_cont = 0.01;
  double gamma = 0.5;
  DenseNegatives negatives = DenseNegatives::Local;

  void validate() const;
};

struct FuseLossConfig {
  double lambda_geo = 0.5;

  void validate() const;
};

/// Scalar breakdown of one step's objective. `total` is composed from the
/// other fields in double precision; `graph` carries the differentiable total.
struct LossReport {
  double l_sup = 0.0;
  double l_global = 0.0;
  double l_local = 0.0;
  double l_geo = 0.0;
  double total = 0.0;
  torch::Tensor graph;

  nlohmann::json to_json(std::int64_t step, const std::string& stage) const;
};

/// Scale-invariant log loss, mean(g^2) - 0.85 mean(g)^2 with g = log(pred) -
/// log(gt) over valid pixels. Inputs are [H, W] or [B, 1, H, W]; batched
/// inputs are evaluated per element and averaged over elements that have
/// valid pixels. Throws DomainError when no pixel is valid.
torch::Tensor supervised_depth_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& valid);

/// InfoNCE with several positives:
///   -log( sum_+ exp(q.k+/tau) / (sum_+ exp(q.k+/tau) + sum_- exp(q.k-/tau)) ).
/// q is [D] or [B, D]; keys are [P, D] / [N, D] or [B, P, D] / [B, N, D].
/// The query is detached. Batched inputs return the batch mean.
torch::Tensor global_contrastive(const torch::Tensor& q, const torch::Tensor& positives,
                                 const torch::Tensor& negatives, double tau);

/// Dense per-location InfoNCE on feature maps aligned to one plane. Query:
/// normalized rgb shared vector (detached); positives: nir and thr shared;
/// negatives per `mode`. Maps are [B, C, H, W] bundles (shared = first C/2
/// channels), `valid` is [B, H, W]. Mean over valid locations of each
/// element, then over elements with at least one valid location.
torch::Tensor dense_local_contrastive(const torch::Tensor& rgb, const torch::Tensor& nir,
                                      const torch::Tensor& thr, const torch::Tensor& valid, double tau,
                                      DenseNegatives mode = DenseNegatives::Local);

/// total = sum of per-spectrum supervised terms + lambda_cont ((1 - gamma) l_g + gamma l_l).
LossReport align_objective(const std::array<torch::Tensor, 3>& l_sup, const torch::Tensor& l_global,
                           const torch::Tensor& l_local, const ContrastiveConfig& cfg);

/// mean over valid pixels of |a - b| / (a + b).
torch::Tensor geometric_consistency(const torch::Tensor& d_warped, const torch::Tensor& d_pred,
                                    const torch::Tensor& valid);

/// total = l_sup + lambda_geo * mean(l_geo_pairs); an empty pair list contributes zero.
LossReport fuse_objective(const torch::Tensor& l_sup_fused, const std::vector<torch::Tensor>& l_geo_pairs,
                          const FuseLossConfig& cfg);

}  // namespace msdepth
