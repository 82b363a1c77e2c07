#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msdepth/batch.hpp"
#include "msdepth/checkpoint.hpp"
#include "msdepth/config.hpp"
#include "msdepth/fusion.hpp"
#include "msdepth/losses.hpp"
#include "msdepth/metrics.hpp"
#include "msdepth/model.hpp"

namespace msdepth {

/// Deterministic dataset of one split as described by the config.
SampleSource make_split(const AppConfig& cfg, Split split);

/// Seeds torch and requests deterministic kernels.
void seed_everything(std::uint64_t seed);

/// Align-stage objective for one batch: supervised loss per spectrum, global
/// contrastive loss on pooled shared embeddings, and dense contrastive loss on
/// bundles warped into the thermal plane. Throws ContractViolation when the
/// network predicts non-finite depth.
LossReport align_losses(DepthNet& net, const Batch& batch, const ContrastiveConfig& cfg);

/// Fused depth of every plane for one batch.
std::array<torch::Tensor, 3> fused_depths(DepthNet& net, FusionModule& fusion, const Batch& batch);

/// Consistency loss of each ordered (target, reference) pair of distinct
/// spectra: the reference depth warped into the target plane against the
/// target points' depth seen from the reference camera. Pairs without a
/// co-visible pixel are skipped.
std::vector<torch::Tensor> geometric_pair_losses(const std::array<torch::Tensor, 3>& depth, const Batch& batch);

/// Fuse-stage objective for one batch: mean supervised loss over the three
/// fused planes plus the weighted mean pair consistency. Throws
/// ContractViolation on non-finite fused depth.
LossReport fuse_losses(DepthNet& net, FusionModule& fusion, const Batch& batch, const FuseLossConfig& cfg);

/// Mean pairwise cosine between the pooled shared embeddings of the three spectra.
double shared_embedding_cosine(DepthNet& net, const SampleSource& data, int batch_size);

/// Mean pair consistency of the fused depths.
double cross_plane_consistency(DepthNet& net, FusionModule& fusion, const SampleSource& data, int batch_size);

using LogSink = std::function<void(const std::string&)>;
using StepHook = std::function<void(std::int64_t step, DepthNet& net, FusionModule* fusion)>;

struct TrainOptions {
  std::filesystem::path out_dir;
  LogSink log;                  // progress lines
  StepHook after_step;          // runs after every optimizer step
  std::int64_t max_steps = -1;  // stop early after this many steps when >= 0
};

struct TrainOutcome {
  std::filesystem::path checkpoint;  // best epoch by validation rmse
  int best_epoch = 0;
  double best_val_rmse = 0.0;
  double val_shared_cosine = 0.0;  // at the best epoch (align)
  double val_consistency = 0.0;    // at the best epoch (fuse)
  std::vector<MetricReport> val_reports;
  std::vector<double> step_totals;
  std::int64_t steps = 0;
};

/// Writes align.ckpt, train_log.jsonl and val_log.jsonl into options.out_dir.
/// Throws ContractViolation on a non-finite loss.
TrainOutcome train_align(const AppConfig& cfg, const SampleSource& train, const SampleSource& val,
                         const TrainOptions& options);

/// Loads the align checkpoint, freezes the backbone and trains only the fusion
/// block. Writes fuse.ckpt and the logs. Throws ContractViolation if the
/// backbone changed or the loss stops being finite.
TrainOutcome train_fuse(const AppConfig& cfg, const std::filesystem::path& align_ckpt, const SampleSource& train,
                        const SampleSource& val, const TrainOptions& options);

struct LoadedModels {
  DepthNet net{nullptr};
  FusionModule fusion{nullptr};
  Checkpoint align;
  std::optional<Checkpoint> fuse;
};

/// Rebuilds the backbone (and fusion block) from checkpoints, checking stages
/// and that the fuse checkpoint was trained on this align checkpoint.
LoadedModels load_models(const std::filesystem::path& align_ckpt,
                         const std::optional<std::filesystem::path>& fuse_ckpt = std::nullopt);

}  // namespace msdepth
