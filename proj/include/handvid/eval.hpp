#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "handvid/detector.hpp"
#include "handvid/motion_area.hpp"

namespace handvid::eval {

inline constexpr double kPsnrCap = 99.0;

struct HandStructure {
  double hs_err = 0;
  /// Fraction of joints visible in the ground truth that are also detected in
  /// the generated video (1 when the ground truth has none). HS-Err ignores
  /// one-sided misses, so a video with no detectable hands scores 0 there.
  double detected_hand_rate = 1;
};

/// HS-Err between two equally long videos (context frame excluded by the caller).
HandStructure hs_err(const torch::Tensor& gen_video, const torch::Tensor& gt_video,
                     const pose::DetectorModel& detector);
/// Same metric on already detected keypoint sequences.
HandStructure hs_err(const pose::KeypointSequence& gen, const pose::KeypointSequence& gt);

/// 1 - mIoU loss on binary masks.
double mask_iou(const motion::MaskVideo& pred, const motion::MaskVideo& gt);

/// Mean cosine similarity of consecutive rows of (F, D) features. A zero
/// vector has similarity 1 with another zero vector and 0 with anything else.
double consistency(const torch::Tensor& features);
/// Features from the frozen detector backbone.
double consistency(const torch::Tensor& video, const pose::DetectorModel& detector);

enum class Scope { full, ma };
std::string_view scope_name(Scope scope);
Scope parse_scope(std::string_view name);

struct PixelMetrics {
  double mse = 0;
  double psnr = 0;
  bool exact = false;  // mse == 0; psnr holds the cap
};

/// MSE / PSNR (peak 1) over all pixels (full) or only pixels inside the
/// binary union mask (ma). An empty MA scope is rejected.
PixelMetrics scoped_pixel_metrics(const torch::Tensor& gen, const torch::Tensor& gt, Scope scope,
                                  const torch::Tensor& union_mask);
/// MSE over pixels outside the union mask; 0 when the mask covers everything.
double mse_off_ma(const torch::Tensor& gen, const torch::Tensor& gt, const torch::Tensor& union_mask);

struct MotionFlow {
  torch::Tensor pairs;      // (F-1, H, W) in [0,1]
  torch::Tensor aggregate;  // (H, W), max over pairs
};

/// Per-pixel absolute temporal difference averaged over channels, optionally
/// box-blurred, normalized by the global maximum (all-zero stays zero).
MotionFlow motion_flow(const torch::Tensor& video, int blur_radius = 0);
/// (H, W) in [0,1] -> (3, H, W) heat colormap (black, red, yellow, white).
torch::Tensor colorize(const torch::Tensor& heat);

struct SampleMetrics {
  std::string id;
  double hs_err = 0;
  double detected_hand_rate = 1;
  std::optional<double> mask_iou;  // only when a predicted motion area exists
  double consistency = 0;
  PixelMetrics full;
  PixelMetrics ma;
  double mse_off_ma = 0;
};

/// gen / gt are the L generated and target frames; union_mask (H, W).
SampleMetrics evaluate_sample(const std::string& id, const torch::Tensor& gen,
                              const torch::Tensor& gt, const torch::Tensor& union_mask,
                              const std::optional<motion::MaskVideo>& pred_mask,
                              const pose::DetectorModel& detector);

/// Metric fields the report reserves for scores produced by external tooling.
const std::vector<std::string>& reserved_metric_fields();

struct EvalReport {
  std::map<std::string, std::string> header;  // config hash, checkpoint ids, labels
  std::vector<SampleMetrics> samples;

  std::map<std::string, double> aggregate() const;
  /// Deterministic text form: header block, one block per sample, aggregate block.
  std::string to_text() const;
  /// Writes the report and a `.meta` sidecar holding the wall-clock timestamp.
  void write(const std::filesystem::path& path) const;
};

}  // namespace handvid::eval
