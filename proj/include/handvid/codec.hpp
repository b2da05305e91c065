#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>

#include "handvid/dataset.hpp"

namespace handvid::codec {

struct CodecConfig {
  int latent_channels = 4;  // c
  int downsample = 4;       // s, fixed by the two stride-2 stages
  int width = 64;           // widest hidden layer

  std::map<std::string, std::string> descriptor() const;
};

class CodecNetImpl : public torch::nn::Module {
 public:
  explicit CodecNetImpl(const CodecConfig& config);
  torch::Tensor encode(const torch::Tensor& frames);  // (N,3,H,W) -> (N,c,H/4,W/4), unnormalized
  torch::Tensor decode(const torch::Tensor& latent);  // inverse, unclamped

 private:
  torch::nn::Conv2d e1{nullptr}, e2{nullptr}, e3{nullptr}, e4{nullptr}, e5{nullptr};
  torch::nn::Conv2d d1{nullptr}, d2{nullptr}, d3{nullptr}, d4{nullptr};
  // Linear pooled-color shortcuts; without them training stalls on smooth backgrounds.
  torch::nn::Conv2d enc_skip{nullptr}, dec_skip{nullptr};
};
TORCH_MODULE(CodecNet);

/// Per-frame convolutional autoencoder. Latents are normalized per channel
/// with statistics gathered after training so diffusion sees roughly unit scale.
class LatentCodec {
 public:
  explicit LatentCodec(CodecConfig config = {}, std::uint64_t seed = 0);

  const CodecConfig& config() const { return config_; }
  int latent_channels() const { return config_.latent_channels; }
  int downsample() const { return config_.downsample; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  /// (F,3,H,W) or (B,F,3,H,W) -> (..., c, H/s, W/s). No temporal mixing.
  torch::Tensor encode(const torch::Tensor& video) const;
  /// Inverse of encode, clamped to [0,1]. Differentiable in the latent.
  torch::Tensor decode(const torch::Tensor& latent) const;

  void freeze();
  void set_normalization(const torch::Tensor& mean, const torch::Tensor& std);
  CodecNet& net() { return net_; }
  const CodecNet& net() const { return net_; }
  void to(torch::Dtype dtype);
  std::uint64_t parameter_hash() const;

  void save(const std::filesystem::path& path) const;
  static LatentCodec load(const std::filesystem::path& path);

 private:
  CodecConfig config_;
  mutable CodecNet net_{nullptr};
  torch::Tensor mean_;  // (c)
  torch::Tensor std_;   // (c)
  bool trained_ = false;
};

struct CodecTrainConfig {
  int epochs = 12;
  int batch_size = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
  double mask_fraction = 0.5;  // replicated masks added per video frame
  std::filesystem::path curve_path;
  bool verbose = false;
};

/// Trains on video frames mixed with 3-channel replicated masks (the stage-1
/// targets), then fixes the latent normalization and freezes.
LatentCodec train_codec(std::span<const synth::SynthSample> samples, const CodecTrainConfig& train,
                        const CodecConfig& config = {});

/// Mean reconstruction PSNR (dB) over all frames of `samples`.
double reconstruction_psnr(const LatentCodec& codec, std::span<const synth::SynthSample> samples);

/// Binary (F,H,W) mask -> (F,3,H,W) for encoding.
torch::Tensor mask_to_rgb(const torch::Tensor& mask);
/// Decoded (..., 3, H, W) mask video -> (..., H, W) soft mask in [0,1].
torch::Tensor rgb_to_soft_mask(const torch::Tensor& decoded);

}  // namespace handvid::codec
