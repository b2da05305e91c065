#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "handvid/config.hpp"
#include "handvid/pipeline.hpp"

namespace handvid::pipeline {

/// One line of the metrics log. `gen_detect` is the fraction of generated
/// frames with at least one detected joint, NaN when V^gen was not decoded.
struct MetricsRow {
  std::int64_t iteration = 0;
  denoiser::Stage stage = denoiser::Stage::stage1;
  double noise = 0;
  double miou = 0;
  double hrl = 0;
  double total = 0;
  double gen_detect = 0;
};

void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Everything needed to continue training bit-for-bit: parameters, optimizer
/// moments, counters, the sampling generator and the current epoch order.
class TrainState {
 public:
  TrainState(const RunConfig& config, denoiser::Stage stage);

  denoiser::PredictorModel model;
  std::unique_ptr<torch::optim::Adam> optimizer;
  std::int64_t iteration = 0;
  std::int64_t epoch = 0;
  mutable at::Generator generator;  // state reads need the generator mutex
  torch::Tensor order;      // current epoch permutation (int64), undefined before the first batch
  std::int64_t cursor = 0;  // next position in `order`

  /// Next batch of sample indices; draws a fresh permutation at epoch ends.
  std::vector<std::int64_t> next_batch(std::int64_t dataset_size, int batch_size);

  void save(const std::filesystem::path& path) const;
  static TrainState load(const std::filesystem::path& path, const RunConfig& config,
                         denoiser::Stage stage);
  /// Hash over parameters, optimizer state, counters and generator state.
  std::uint64_t fingerprint() const;
};

std::int64_t planned_iterations(const RunConfig& config, denoiser::Stage stage,
                                std::size_t dataset_size);

struct TrainOptions {
  std::filesystem::path metrics_path;     // empty = not written
  std::filesystem::path checkpoint_path;  // final TrainState; empty = not written
  std::optional<std::int64_t> iterations;  // overrides the configured count
  std::function<void(const MetricsRow&)> on_step;
};

struct TrainResult {
  denoiser::PredictorModel model;
  std::vector<MetricsRow> log;
};

/// Stage 1: denoise the encoded union-mask video conditioned on the context
/// latent, text and prior mask; loss noise + alpha * mIoU on the decoded z'_0.
TrainResult train_stage1(std::span<const synth::SynthSample> train,
                         const std::optional<motion::MaskVideo>& prior, const FrozenModels& frozen,
                         const RunConfig& config, const TrainOptions& options = {});

/// Stage 2: denoise the video conditioned on the configured mask source; loss
/// noise + eta * HRL through the frozen detector when enabled.
TrainResult train_stage2(std::span<const synth::SynthSample> train,
                         const std::optional<motion::MaskVideo>& prior, const FrozenModels& frozen,
                         const denoiser::PredictorModel* stage1, const RunConfig& config,
                         const TrainOptions& options = {});

/// Fills stage1_mask / stage1_latent of every prepared sample (batched
/// inference, per-sample seeds derived from config.seed). Empty stage-1
/// outputs fall back to the prior support.
void cache_stage1_masks(std::span<const synth::SynthSample> samples,
                        std::span<PreparedSample> prepared, const Models& models,
                        const RunConfig& config);

}  // namespace handvid::pipeline
