#pragma once

#include <torch/torch.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "handvid/config.hpp"
#include "handvid/pipeline.hpp"
#include "handvid/synth_scene.hpp"

namespace testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("handvid_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Small run config that keeps every tensor tiny: 32x32 frames, L = 3.
inline handvid::RunConfig tiny_config() {
  handvid::RunConfig c;
  c.samples = 4;
  c.heldout = 2;
  c.frames = 3;
  c.height = 32;
  c.width = 32;
  c.tau = 50;
  c.inference_steps = 5;
  c.batch_size = 2;
  c.base_channels = 32;
  c.mid_channels = 32;
  c.codec_width = 16;
  c.log_every = 0;
  return c;
}

inline std::vector<handvid::synth::SynthSample> tiny_samples(const handvid::RunConfig& config) {
  auto options = handvid::pipeline::dataset_options(config);
  auto specs = handvid::synth::dataset_specs(options);
  return handvid::synth::generate_samples(specs);
}

/// Frozen models with random weights; the codec is flagged trained so the
/// inference path accepts it.
inline handvid::pipeline::FrozenModels tiny_frozen(const handvid::RunConfig& config) {
  handvid::codec::CodecConfig cc;
  cc.latent_channels = config.latent_channels;
  cc.width = config.codec_width;
  handvid::codec::LatentCodec codec(cc, 3);
  codec.mark_trained();
  codec.freeze();
  handvid::pose::DetectorConfig dc;
  dc.height = config.height;
  dc.width = config.width;
  dc.channels = 4;
  handvid::pose::DetectorModel detector(dc, 5);
  detector.freeze();
  return {std::move(codec), handvid::text::TextEmbedder::for_action_prompts(config.text_dim),
          std::move(detector)};
}

/// Central finite difference of a scalar function of a double tensor, per element.
template <typename F>
torch::Tensor numeric_gradient(F&& f, torch::Tensor x, double h = 1e-6) {
  auto grad = torch::zeros_like(x);
  auto flat = x.view(-1);
  auto g = grad.view(-1);
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double up = f(x);
    flat[i] = orig - h;
    const double down = f(x);
    flat[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return grad;
}

/// max |a - b| / max(max |b|, floor)
inline double relative_error(const torch::Tensor& a, const torch::Tensor& b, double floor = 1e-12) {
  const double scale = std::max(b.abs().max().item<double>(), floor);
  return (a - b).abs().max().item<double>() / scale;
}

}  // namespace testing
