#include "handvid/codec.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include "handvid/error.hpp"
#include "handvid/io.hpp"

namespace handvid::codec {

namespace fs = std::filesystem;

namespace {

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

// Collapses leading dims so the per-frame network sees (N, C, H, W).
torch::Tensor flatten_frames(const torch::Tensor& x) {
  return x.reshape({-1, x.size(-3), x.size(-2), x.size(-1)});
}

torch::Tensor restore_frames(const torch::Tensor& y, const torch::Tensor& like) {
  std::vector<std::int64_t> shape(like.sizes().begin(), like.sizes().end() - 3);
  shape.insert(shape.end(), {y.size(1), y.size(2), y.size(3)});
  return y.reshape(shape);
}

}  // namespace

std::map<std::string, std::string> CodecConfig::descriptor() const {
  return {{"latent_channels", std::to_string(latent_channels)},
          {"downsample", std::to_string(downsample)},
          {"width", std::to_string(width)}};
}

CodecNetImpl::CodecNetImpl(const CodecConfig& config) {
  const int w = config.width, h = config.width / 2, c = config.latent_channels;
  e1 = register_module("e1", conv(3, h, 3));
  e2 = register_module("e2", conv(h, w, 3, 2));
  e3 = register_module("e3", conv(w, w, 3, 2));
  e4 = register_module("e4", conv(w, w, 3));
  e5 = register_module("e5", conv(w, c, 1));
  d1 = register_module("d1", conv(c, w, 3));
  d2 = register_module("d2", conv(w, w, 3));
  d3 = register_module("d3", conv(w, h, 3));
  d4 = register_module("d4", conv(h, 12, 3));
  enc_skip = register_module("enc_skip", conv(3, c, 1));
  dec_skip = register_module("dec_skip", conv(c, 3, 1));
}

torch::Tensor CodecNetImpl::encode(const torch::Tensor& frames) {
  auto x = torch::silu(e1(frames));
  x = torch::silu(e2(x));
  x = torch::silu(e3(x));
  x = torch::silu(e4(x));
  return e5(x) + enc_skip(torch::avg_pool2d(frames, 4));
}

torch::Tensor CodecNetImpl::decode(const torch::Tensor& latent) {
  auto x = torch::silu(d1(latent));
  x = torch::silu(d2(x));
  x = torch::upsample_nearest2d(x, std::vector<std::int64_t>{x.size(2) * 2, x.size(3) * 2});
  x = torch::silu(d3(x));
  auto smooth = torch::upsample_bilinear2d(dec_skip(latent),
                                           std::vector<std::int64_t>{x.size(2) * 2, x.size(3) * 2},
                                           false);
  return torch::pixel_shuffle(d4(x), 2) + smooth;
}

LatentCodec::LatentCodec(CodecConfig config, std::uint64_t seed) : config_(config) {
  require(config_.downsample == 4, "CodecConfig: only downsample factor 4 is supported");
  require(config_.latent_channels >= 1 && config_.width >= 2 && config_.width % 2 == 0,
          "CodecConfig: invalid widths");
  torch::manual_seed(seed);
  net_ = CodecNet(config_);
  net_->eval();
  mean_ = torch::zeros({config_.latent_channels});
  std_ = torch::ones({config_.latent_channels});
}

namespace {

torch::Tensor channel_view(const torch::Tensor& v, std::int64_t dims) {
  std::vector<std::int64_t> shape(dims, 1);
  shape[dims - 3] = v.size(0);
  return v.view(shape);
}

}  // namespace

torch::Tensor LatentCodec::encode(const torch::Tensor& video) const {
  if (video.dim() < 4 || video.size(-3) != 3 || video.size(-2) % config_.downsample != 0 ||
      video.size(-1) % config_.downsample != 0) {
    std::ostringstream msg;
    msg << "encode_video: expected (..., 3, H, W) with H, W divisible by " << config_.downsample
        << ", got " << video.sizes();
    throw ValidationError(msg.str());
  }
  auto z = restore_frames(net_->encode(flatten_frames(video)), video);
  auto mean = channel_view(mean_.to(z.scalar_type()), z.dim());
  auto std = channel_view(std_.to(z.scalar_type()), z.dim());
  return (z - mean) / std;
}

torch::Tensor LatentCodec::decode(const torch::Tensor& latent) const {
  if (latent.dim() < 4 || latent.size(-3) != config_.latent_channels) {
    std::ostringstream msg;
    msg << "decode_video: expected (..., " << config_.latent_channels << ", h, w), got "
        << latent.sizes();
    throw ValidationError(msg.str());
  }
  auto mean = channel_view(mean_.to(latent.scalar_type()), latent.dim());
  auto std = channel_view(std_.to(latent.scalar_type()), latent.dim());
  auto raw = latent * std + mean;
  return restore_frames(net_->decode(flatten_frames(raw)), latent).clamp(0.0, 1.0);
}

void LatentCodec::freeze() {
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  net_->eval();
}

void LatentCodec::set_normalization(const torch::Tensor& mean, const torch::Tensor& std) {
  require(mean.numel() == config_.latent_channels && std.numel() == config_.latent_channels,
          "LatentCodec: normalization needs one value per latent channel");
  require((std > 0).all().item<bool>(), "LatentCodec: normalization std must be positive");
  mean_ = mean.detach().to(torch::kFloat32).flatten().clone();
  std_ = std.detach().to(torch::kFloat32).flatten().clone();
}

void LatentCodec::to(torch::Dtype dtype) { net_->to(dtype); }

std::uint64_t LatentCodec::parameter_hash() const {
  return io::hash_module(*net_) ^ io::hash_tensors({mean_, std_});
}

void LatentCodec::save(const fs::path& path) const {
  io::Checkpoint ckpt;
  ckpt.kind = "codec";
  ckpt.descriptor = config_.descriptor();
  ckpt.descriptor["trained"] = trained_ ? "1" : "0";
  ckpt.tensors = io::module_state(*net_);
  ckpt.tensors.emplace_back("latent_mean", mean_);
  ckpt.tensors.emplace_back("latent_std", std_);
  io::save_checkpoint(path, ckpt);
}

LatentCodec LatentCodec::load(const fs::path& path) {
  auto ckpt = io::load_checkpoint(path);
  if (ckpt.kind != "codec") throw ValidationError("not a codec checkpoint: " + path.string());
  CodecConfig config;
  config.latent_channels = std::stoi(ckpt.descriptor.at("latent_channels"));
  config.downsample = std::stoi(ckpt.descriptor.at("downsample"));
  config.width = std::stoi(ckpt.descriptor.at("width"));
  LatentCodec codec(config);
  io::load_module_state(*codec.net_, ckpt);
  codec.set_normalization(ckpt.tensor("latent_mean"), ckpt.tensor("latent_std"));
  codec.trained_ = ckpt.descriptor["trained"] == "1";
  codec.freeze();
  return codec;
}

torch::Tensor mask_to_rgb(const torch::Tensor& mask) {
  require(mask.dim() >= 2, "mask_to_rgb: expects (..., H, W)");
  auto m = mask.to(torch::kFloat32).unsqueeze(-3);
  std::vector<std::int64_t> shape(m.sizes().begin(), m.sizes().end());
  shape[shape.size() - 3] = 3;
  return m.expand(shape).contiguous();
}

torch::Tensor rgb_to_soft_mask(const torch::Tensor& decoded) {
  require(decoded.dim() >= 3 && decoded.size(-3) == 3, "rgb_to_soft_mask: expects (..., 3, H, W)");
  return decoded.mean(-3).clamp(0.0, 1.0);
}

LatentCodec train_codec(std::span<const synth::SynthSample> samples, const CodecTrainConfig& train,
                        const CodecConfig& config) {
  if (samples.empty()) throw ValidationError("train_codec: dataset is empty");
  LatentCodec codec(config, train.seed);

  // Items: (sample, frame, kind) with kind 0 = video frame, 1 = per-frame
  // mask, 2 = union mask.
  struct Item {
    int sample, frame, kind;
  };
  std::vector<Item> items;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const int f = static_cast<int>(samples[s].video.size(0));
    for (int k = 0; k < f; ++k) items.push_back({static_cast<int>(s), k, 0});
    const int masks = static_cast<int>(std::lround(train.mask_fraction * f));
    if (masks >= 1) items.push_back({static_cast<int>(s), 0, 2});
    for (int m = 1; m < masks; ++m) items.push_back({static_cast<int>(s), m * f / masks, 1});
  }
  std::vector<torch::Tensor> unions(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) unions[s] = samples[s].union_mask().values[0];

  auto fetch = [&](const Item& item) {
    const auto& s = samples[item.sample];
    switch (item.kind) {
      case 0:
        return s.video[item.frame];
      case 1:
        return mask_to_rgb(s.frame_masks.values[item.frame]);
      default:
        return mask_to_rgb(unions[item.sample]);
    }
  };

  auto& net = codec.net();
  if (train.epochs > 0) {
    net->train();
    torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(train.learning_rate));
    auto generator = at::make_generator<at::CPUGeneratorImpl>(train.seed + 1);
    const auto n = static_cast<std::int64_t>(items.size());
    const std::int64_t total = ((n + train.batch_size - 1) / train.batch_size) * train.epochs;
    std::int64_t step = 0;
    std::ofstream curve;
    if (!train.curve_path.empty()) {
      if (train.curve_path.has_parent_path()) fs::create_directories(train.curve_path.parent_path());
      curve.open(train.curve_path);
      curve << "# epoch mse\n";
    }
    for (int epoch = 0; epoch < train.epochs; ++epoch) {
      auto order = torch::randperm(n, generator, torch::kInt64);
      auto acc = order.accessor<std::int64_t, 1>();
      double epoch_mse = 0;
      for (std::int64_t begin = 0; begin < n; begin += train.batch_size) {
        const auto end = std::min<std::int64_t>(n, begin + train.batch_size);
        std::vector<torch::Tensor> batch;
        for (auto k = begin; k < end; ++k) batch.push_back(fetch(items[acc[k]]));
        auto x = torch::stack(batch);
        const double progress = static_cast<double>(step) / std::max<std::int64_t>(1, total);
        const double lr =
            train.learning_rate * (0.02 + 0.98 * 0.5 * (1 + std::cos(std::numbers::pi * progress)));
        for (auto& group : optimizer.param_groups()) {
          static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
        auto loss = torch::mse_loss(net->decode(net->encode(x)), x);
        optimizer.zero_grad();
        loss.backward();
        optimizer.step();
        ++step;
        epoch_mse += loss.item<double>() * static_cast<double>(end - begin) / n;
      }
      if (curve.is_open()) curve << epoch << ' ' << epoch_mse << '\n';
      if (train.verbose) {
        std::cerr << "[codec] epoch " << epoch << " mse " << epoch_mse << " psnr "
                  << 10.0 * std::log10(1.0 / std::max(epoch_mse, 1e-12)) << '\n';
      }
    }
    net->eval();
    codec.mark_trained();
  }

  {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> latents;
    for (std::size_t begin = 0; begin < items.size(); begin += 256) {
      std::vector<torch::Tensor> batch;
      for (std::size_t k = begin; k < std::min(items.size(), begin + 256); ++k) {
        batch.push_back(fetch(items[k]));
      }
      latents.push_back(net->encode(torch::stack(batch)));
    }
    auto z = torch::cat(latents).transpose(0, 1).reshape({config.latent_channels, -1});
    codec.set_normalization(z.mean(1), z.std(1).clamp_min(1e-6));
  }
  codec.freeze();
  return codec;
}

double reconstruction_psnr(const LatentCodec& codec, std::span<const synth::SynthSample> samples) {
  torch::NoGradGuard no_grad;
  require(!samples.empty(), "reconstruction_psnr: no samples");
  double total = 0;
  std::int64_t frames = 0;
  for (const auto& s : samples) {
    auto rec = codec.decode(codec.encode(s.video));
    auto mse = (rec - s.video).pow(2).mean({1, 2, 3}).to(torch::kFloat64);
    auto psnr = 10.0 * torch::log10(1.0 / mse.clamp_min(1e-10));
    total += psnr.sum().item<double>();
    frames += s.video.size(0);
  }
  return total / static_cast<double>(frames);
}

}  // namespace handvid::codec
