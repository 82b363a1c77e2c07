#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msdepth/config.hpp"
#include "msdepth/fusion.hpp"
#include "msdepth/model.hpp"
#include "msdepth/synthdata.hpp"

namespace msdepth {

inline constexpr const char* kFusedModality = "fused";
inline constexpr const char* kAverageCondition = "Avg";

struct MetricReport {
  std::string modality;   // rgb, nir, thr or fused
  std::string condition;  // day, night, rain or Avg
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
  std::int64_t n_pixels = 0;

  bool operator==(const MetricReport&) const = default;
};

/// Seven depth metrics over pixels that are valid and whose ground truth lies
/// in [min_depth, depth_cap]. Tensors may have any shape with equal element
/// counts. Throws DomainError when no pixel survives.
MetricReport compute_metrics(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& valid,
                             const EvalConfig& cfg = {});

/// Image-weighted running mean of reports; pixel counts add up.
class MetricAccumulator {
 public:
  void add(const MetricReport& r);
  bool empty() const { return count_ == 0; }
  std::int64_t count() const { return count_; }
  MetricReport mean(std::string modality, std::string condition) const;

 private:
  std::array<double, 7> sum_{};
  std::int64_t pixels_ = 0;
  std::int64_t count_ = 0;
};

enum class EvalMode : std::uint8_t { PerSpectrum, Fused };

EvalMode parse_eval_mode(std::string_view name);

using WarningSink = std::function<void(const std::string&)>;

/// Rows grouped by modality (rgb, nir, thr, then fused in fused mode) and
/// condition (day, night, rain, then Avg over every image of the modality).
/// Empty condition buckets are left out and reported through `warn`.
/// The fused modality averages each image's metrics over the three planes'
/// fused predictions. Fused mode also produces the per-spectrum rows so the
/// two can be compared. `fusion` is required in fused mode.
std::vector<MetricReport> evaluate_model(DepthNet& net, FusionModule* fusion, const SampleSource& data,
                                         EvalMode mode, const EvalConfig& cfg, const WarningSink& warn = {});

}  // namespace msdepth
