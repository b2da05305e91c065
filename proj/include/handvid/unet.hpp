#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "handvid/diffusion.hpp"
#include "handvid/motion_area.hpp"
#include "handvid/text_embedder.hpp"

namespace handvid::denoiser {

enum class Stage { stage1, stage2 };
std::string_view stage_name(Stage stage);

struct UNetConfig {
  int latent_channels = 4;  // c; the network input has c + 1 channels
  int downsample = 4;       // s of the codec the latents come from
  int text_dim = 64;        // d
  int base_channels = 32;
  int mid_channels = 64;
  int time_dim = 128;

  std::map<std::string, std::string> descriptor() const;
};

/// GroupNorm + SiLU + conv, twice; the step embedding scales and shifts the second norm.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in, int out, int time_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear time_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Residual 1-D convolution along the frame axis at every spatial location.
class TemporalConvImpl : public torch::nn::Module {
 public:
  explicit TemporalConvImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x, std::int64_t frames);

 private:
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv1d conv{nullptr};
};
TORCH_MODULE(TemporalConv);

/// Residual self-attention across all frames at every spatial location.
class TemporalAttentionImpl : public torch::nn::Module {
 public:
  explicit TemporalAttentionImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x, std::int64_t frames);

 private:
  int heads_;
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear qkv{nullptr}, out{nullptr};
};
TORCH_MODULE(TemporalAttention);

/// Residual attention from pixels (queries) to text tokens (keys/values).
class CrossAttentionImpl : public torch::nn::Module {
 public:
  CrossAttentionImpl(int channels, int text_dim);
  torch::Tensor forward(const torch::Tensor& x, std::int64_t frames, const torch::Tensor& text,
                        const torch::Tensor& valid);

 private:
  int heads_;
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};
};
TORCH_MODULE(CrossAttention);

/// Two-level 3-D UNet: spatial res blocks, temporal conv, temporal attention
/// and text cross-attention at each level, skip concatenation on the way up.
class UNet3DImpl : public torch::nn::Module {
 public:
  explicit UNet3DImpl(const UNetConfig& config);
  /// x (B, F, c+1, h, w), steps (B,), text (B, N, d), valid (B, N) -> (B, F, c, h, w).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& steps,
                        const torch::Tensor& text, const torch::Tensor& valid);

 private:
  UNetConfig config_;
  torch::nn::Linear time1{nullptr}, time2{nullptr};
  torch::nn::Conv2d conv_in{nullptr}, down{nullptr}, up{nullptr}, conv_out{nullptr};
  ResBlock res0{nullptr}, mid_res1{nullptr}, mid_res2{nullptr}, up_res{nullptr};
  TemporalConv tconv0{nullptr}, mid_tconv{nullptr}, up_tconv{nullptr};
  TemporalAttention tattn0{nullptr}, mid_tattn{nullptr};
  CrossAttention xattn0{nullptr}, mid_xattn{nullptr}, up_xattn{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
};
TORCH_MODULE(UNet3D);

/// Sinusoidal features of (possibly fractional) steps: (B,) -> (B, dim).
torch::Tensor step_embedding(const torch::Tensor& steps, int dim);

/// Noise predictor for one stage. Both stages use the same architecture.
class PredictorModel {
 public:
  PredictorModel(UNetConfig config, Stage stage, std::uint64_t seed = 0);

  const UNetConfig& config() const { return config_; }
  Stage stage() const { return stage_; }
  /// Forward passes are non-const in libtorch; inference callers hold const models.
  UNet3D& net() const { return net_; }
  void to(torch::Dtype dtype) { net_->to(dtype); }

  /// (name, shape) of every parameter, in registration order.
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> parameter_inventory() const;
  std::uint64_t parameter_hash() const;
  std::map<std::string, std::string> descriptor() const;

  void save(const std::filesystem::path& path) const;
  /// Verifies the stored descriptor equals `expected` built for `stage`.
  static PredictorModel load(const std::filesystem::path& path, const UNetConfig& expected,
                             Stage stage);

 private:
  UNetConfig config_;
  Stage stage_;
  mutable UNet3D net_{nullptr};
};

/// Batched: z_t (B, F, c+1, h, w), steps (B,) -> (B, F, c, h, w).
torch::Tensor predict_noise(const PredictorModel& model, const torch::Tensor& z_t,
                            const torch::Tensor& steps, const text::TextBatch& text);
/// Noise estimate used by training and sampling. The network output F is
/// combined with the noisy latent as
///   eps_hat = sqrt(1 - alpha_bar_t) z_t + sqrt(alpha_bar_t) F,
/// so the implied clean estimate is sqrt(alpha_bar_t) z_t - sqrt(1 - alpha_bar_t) F
/// and stays bounded at large t, where a raw eps output drifts during sampling.
torch::Tensor predict_noise(const PredictorModel& model, const torch::Tensor& z_t,
                            const torch::Tensor& steps, const text::TextBatch& text,
                            const diffusion::NoiseSchedule& schedule);
/// Single video: z_t (F, c+1, h, w), embedding (N, d) -> (F, c, h, w).
torch::Tensor predict_noise(const PredictorModel& model, const torch::Tensor& z_t, int t,
                            const torch::Tensor& embedding);

/// Appends the mask as the last channel: latent (..., F, c, h, w) and mask
/// (F, h, w) -> (..., F, c+1, h, w).
torch::Tensor concat_mask_channel(const torch::Tensor& latent, const torch::Tensor& mask);
torch::Tensor concat_mask_channel(const torch::Tensor& latent, const motion::MaskVideo& mask);

}  // namespace handvid::denoiser
