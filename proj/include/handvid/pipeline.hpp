#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "handvid/codec.hpp"
#include "handvid/config.hpp"
#include "handvid/dataset.hpp"
#include "handvid/detector.hpp"
#include "handvid/diffusion.hpp"
#include "handvid/motion_area.hpp"
#include "handvid/text_embedder.hpp"
#include "handvid/unet.hpp"

namespace handvid::pipeline {

diffusion::NoiseSchedule make_schedule(const RunConfig& config);
denoiser::UNetConfig unet_config(const RunConfig& config);
synth::DatasetOptions dataset_options(const RunConfig& config);

/// Pretrained pieces that never change during diffusion training.
struct FrozenModels {
  codec::LatentCodec codec;
  text::TextEmbedder text;
  pose::DetectorModel detector;

  std::uint64_t hash() const;
};

/// Per-sample tensors computed once with the frozen models.
struct PreparedSample {
  torch::Tensor video_latent;  // (L+1, c, h, w)
  torch::Tensor mask_latent;   // (c, h, w) encoded union mask; the stage-1 target of every frame
  torch::Tensor union_mask;    // (H, W) binary ground-truth motion area
  torch::Tensor union_latent;  // (h, w) binary, downsampled
  torch::Tensor embedding;     // (N, d)
  pose::KeypointSequence train_keypoints;  // detector output on frames 1..L (only if requested)
  torch::Tensor stage1_mask;    // (H, W) cached stage-1 mask; undefined until generated
  torch::Tensor stage1_latent;  // (h, w) downsampled stage1_mask
};

std::vector<PreparedSample> prepare_samples(std::span<const synth::SynthSample> samples,
                                            const FrozenModels& frozen, bool with_keypoints);

/// Stacks the clean context latent as frame 0 in front of the L noisy frames
/// and appends the mask channel to every frame:
/// context (B, c, h, w), noisy (B, L, c, h, w), masks (B, h, w) -> (B, L+1, c+1, h, w).
torch::Tensor assemble_input(const torch::Tensor& context, const torch::Tensor& noisy,
                             const torch::Tensor& masks);

/// out[l] = mask * gen[l] + (1 - mask) * context, selecting rather than
/// blending so background pixels are bitwise copies of the context.
/// gen (L, 3, H, W); mask binary with 1 or L frames; context (3, H, W).
torch::Tensor enforce_mask(const torch::Tensor& gen, const motion::MaskVideo& mask,
                           const torch::Tensor& context);

/// Rounds to the nearest 8-bit level so outputs survive lossless frame files.
torch::Tensor quantize_video(const torch::Tensor& video);

struct Models {
  const FrozenModels* frozen = nullptr;
  const denoiser::PredictorModel* stage1 = nullptr;
  const denoiser::PredictorModel* stage2 = nullptr;
  motion::MaskVideo prior;  // single-frame soft prior
};

struct InferRequest {
  torch::Tensor context;  // (3, H, W)
  std::string prompt;
  std::uint64_t seed = 0;
  torch::Tensor gt_union;  // (H, W); required for MaskSource::gt
};

struct InferResult {
  torch::Tensor video;                       // (L, 3, H, W), context frame excluded
  motion::MaskVideo mask;                    // binary enforcement mask, L frames
  std::optional<motion::MaskVideo> stage1;   // post-processed stage-1 mask when generated
  bool fell_back_to_prior = false;
};

/// Stage-1 masks for a batch: (B) binary masks of L frames (kind generated).
/// Entries that come out all-zero are returned as-is; callers decide the fallback.
std::vector<motion::MaskVideo> generate_stage1_masks(std::span<const InferRequest> requests,
                                                     const Models& models, const RunConfig& config);

/// Full two-stage inference for a batch of requests (batched through the UNet).
std::vector<InferResult> infer_batch(std::span<const InferRequest> requests, const Models& models,
                                     const RunConfig& config, MaskSource source);
InferResult infer(const InferRequest& request, const Models& models, const RunConfig& config,
                  MaskSource source);

}  // namespace handvid::pipeline
