#include "handvid/unet.hpp"

#include <cmath>

#include "handvid/error.hpp"
#include "handvid/io.hpp"

namespace handvid::denoiser {

namespace {

int groups_for(int channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

int heads_for(int channels) {
  const int heads = std::max(1, channels / 32);
  return channels % heads == 0 ? heads : 1;
}

torch::nn::Conv2d conv3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::GroupNorm group_norm(int channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups_for(channels), channels));
}

// q (N, Lq, C), k/v (N, Lk, C) -> (N, Lq, C). `mask` (N, Lk) bool, true = attend.
torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                        int heads, const torch::Tensor& mask = {}) {
  const auto n = q.size(0), lq = q.size(1), lk = k.size(1), c = q.size(2);
  const auto dh = c / heads;
  auto qh = q.view({n, lq, heads, dh}).transpose(1, 2);
  auto kh = k.view({n, lk, heads, dh}).transpose(1, 2);
  auto vh = v.view({n, lk, heads, dh}).transpose(1, 2);
  auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
  if (mask.defined()) {
    scores = scores.masked_fill(mask.logical_not().view({n, 1, 1, lk}),
                                -std::numeric_limits<double>::infinity());
  }
  auto o = torch::matmul(torch::softmax(scores, -1), vh);
  return o.transpose(1, 2).reshape({n, lq, c});
}

}  // namespace

std::string_view stage_name(Stage stage) { return stage == Stage::stage1 ? "stage1" : "stage2"; }

std::map<std::string, std::string> UNetConfig::descriptor() const {
  return {{"latent_channels", std::to_string(latent_channels)},
          {"downsample", std::to_string(downsample)},
          {"text_dim", std::to_string(text_dim)},
          {"base_channels", std::to_string(base_channels)},
          {"mid_channels", std::to_string(mid_channels)},
          {"time_dim", std::to_string(time_dim)}};
}

ResBlockImpl::ResBlockImpl(int in, int out, int time_dim) {
  norm1 = register_module("norm1", group_norm(in));
  conv1 = register_module("conv1", conv3(in, out));
  time_proj = register_module("time_proj", torch::nn::Linear(time_dim, 2 * out));
  norm2 = register_module("norm2", group_norm(out));
  conv2 = register_module("conv2", conv3(out, out));
  if (in != out) {
    skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1(torch::silu(norm1(x)));
  // Scale and shift after the norm; an additive shift before it is erased
  // whenever a group holds a single channel.
  auto film = time_proj(temb).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
  h = norm2(h) * (1 + film[0]) + film[1];
  h = conv2(torch::silu(h));
  return (skip ? skip(x) : x) + h;
}

TemporalConvImpl::TemporalConvImpl(int channels) {
  norm = register_module("norm", group_norm(channels));
  conv = register_module("conv",
                         torch::nn::Conv1d(torch::nn::Conv1dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor TemporalConvImpl::forward(const torch::Tensor& x, std::int64_t frames) {
  const auto bf = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto b = bf / frames;
  auto seq = x.view({b, frames, c, h, w}).permute({0, 3, 4, 2, 1}).reshape({b * h * w, c, frames});
  auto y = conv(torch::silu(norm(seq)));
  y = y.view({b, h, w, c, frames}).permute({0, 4, 3, 1, 2}).reshape({bf, c, h, w});
  return x + y;
}

TemporalAttentionImpl::TemporalAttentionImpl(int channels) : heads_(heads_for(channels)) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  qkv = register_module("qkv", torch::nn::Linear(channels, 3 * channels));
  out = register_module("out", torch::nn::Linear(channels, channels));
}

torch::Tensor TemporalAttentionImpl::forward(const torch::Tensor& x, std::int64_t frames) {
  const auto bf = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto b = bf / frames;
  auto tokens = x.view({b, frames, c, h, w}).permute({0, 3, 4, 1, 2}).reshape({b * h * w, frames, c});
  auto parts = qkv(norm(tokens)).chunk(3, -1);
  auto y = out(attention(parts[0], parts[1], parts[2], heads_));
  y = y.view({b, h, w, frames, c}).permute({0, 3, 4, 1, 2}).reshape({bf, c, h, w});
  return x + y;
}

CrossAttentionImpl::CrossAttentionImpl(int channels, int text_dim) : heads_(heads_for(channels)) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  q = register_module("q", torch::nn::Linear(channels, channels));
  k = register_module("k", torch::nn::Linear(text_dim, channels));
  v = register_module("v", torch::nn::Linear(text_dim, channels));
  out = register_module("out", torch::nn::Linear(channels, channels));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, std::int64_t frames,
                                          const torch::Tensor& text, const torch::Tensor& valid) {
  const auto bf = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto tokens = x.view({bf, c, h * w}).transpose(1, 2);
  auto ctx = text.repeat_interleave(frames, 0);
  auto ctx_valid = valid.repeat_interleave(frames, 0);
  auto y = out(attention(q(norm(tokens)), k(ctx), v(ctx), heads_, ctx_valid));
  return x + y.transpose(1, 2).reshape({bf, c, h, w});
}

torch::Tensor step_embedding(const torch::Tensor& steps, int dim) {
  require(dim % 2 == 0, "step_embedding: dimension must be even");
  const int half = dim / 2;
  auto s = steps.to(torch::kFloat64).view({-1, 1});
  auto k = torch::arange(half, torch::kFloat64);
  auto freqs = torch::exp(-std::log(10000.0) * k / half).view({1, half});
  auto args = s * freqs;
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

UNet3DImpl::UNet3DImpl(const UNetConfig& config) : config_(config) {
  const int c = config.latent_channels, b = config.base_channels, m = config.mid_channels;
  const int td = config.time_dim, d = config.text_dim;
  time1 = register_module("time1", torch::nn::Linear(td / 4 * 2, td));
  time2 = register_module("time2", torch::nn::Linear(td, td));
  conv_in = register_module("conv_in", conv3(c + 1, b));
  res0 = register_module("res0", ResBlock(b, b, td));
  tconv0 = register_module("tconv0", TemporalConv(b));
  tattn0 = register_module("tattn0", TemporalAttention(b));
  xattn0 = register_module("xattn0", CrossAttention(b, d));
  down = register_module("down", conv3(b, m, 2));
  mid_res1 = register_module("mid_res1", ResBlock(m, m, td));
  mid_tconv = register_module("mid_tconv", TemporalConv(m));
  mid_tattn = register_module("mid_tattn", TemporalAttention(m));
  mid_xattn = register_module("mid_xattn", CrossAttention(m, d));
  mid_res2 = register_module("mid_res2", ResBlock(m, m, td));
  up = register_module("up", conv3(m, b));
  up_res = register_module("up_res", ResBlock(2 * b, b, td));
  up_tconv = register_module("up_tconv", TemporalConv(b));
  up_xattn = register_module("up_xattn", CrossAttention(b, d));
  norm_out = register_module("norm_out", group_norm(b));
  conv_out = register_module("conv_out", conv3(b, c));
}

torch::Tensor UNet3DImpl::forward(const torch::Tensor& x, const torch::Tensor& steps,
                                  const torch::Tensor& text, const torch::Tensor& valid) {
  const auto bsz = x.size(0), frames = x.size(1), h = x.size(3), w = x.size(4);
  const auto dtype = conv_in->weight.scalar_type();

  auto temb = step_embedding(steps, config_.time_dim / 4 * 2).to(dtype);
  temb = time2(torch::silu(time1(temb))).repeat_interleave(frames, 0);
  auto ctx = text.to(dtype);

  auto h0 = conv_in(x.reshape({bsz * frames, x.size(2), h, w}));
  h0 = res0(h0, temb);
  h0 = tconv0(h0, frames);
  h0 = tattn0(h0, frames);
  h0 = xattn0(h0, frames, ctx, valid);

  auto h1 = down(h0);
  h1 = mid_res1(h1, temb);
  h1 = mid_tconv(h1, frames);
  h1 = mid_tattn(h1, frames);
  h1 = mid_xattn(h1, frames, ctx, valid);
  h1 = mid_res2(h1, temb);

  auto u = up(torch::upsample_nearest2d(h1, std::vector<std::int64_t>{h, w}));
  u = up_res(torch::cat({u, h0}, 1), temb);
  u = up_tconv(u, frames);
  u = up_xattn(u, frames, ctx, valid);

  auto y = conv_out(torch::silu(norm_out(u)));
  return y.view({bsz, frames, config_.latent_channels, h, w});
}

PredictorModel::PredictorModel(UNetConfig config, Stage stage, std::uint64_t seed)
    : config_(config), stage_(stage) {
  require(config_.latent_channels >= 1 && config_.text_dim >= 1 && config_.base_channels >= 1 &&
              config_.mid_channels >= 1 && config_.time_dim >= 4 && config_.time_dim % 4 == 0,
          "UNetConfig: invalid dimensions");
  torch::manual_seed(seed);
  net_ = UNet3D(config_);
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> PredictorModel::parameter_inventory()
    const {
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  for (const auto& item : net_->named_parameters()) {
    out.emplace_back(item.key(), item.value().sizes().vec());
  }
  return out;
}

std::uint64_t PredictorModel::parameter_hash() const { return io::hash_module(*net_); }

std::map<std::string, std::string> PredictorModel::descriptor() const {
  auto d = config_.descriptor();
  d["stage"] = std::string(stage_name(stage_));
  return d;
}

void PredictorModel::save(const std::filesystem::path& path) const {
  io::Checkpoint ckpt;
  ckpt.kind = "predictor";
  ckpt.descriptor = descriptor();
  ckpt.tensors = io::module_state(*net_);
  io::save_checkpoint(path, ckpt);
}

PredictorModel PredictorModel::load(const std::filesystem::path& path, const UNetConfig& expected,
                                    Stage stage) {
  auto ckpt = io::load_checkpoint(path);
  PredictorModel model(expected, stage);
  io::require_descriptor(ckpt, "predictor", model.descriptor());
  io::load_module_state(*model.net_, ckpt);
  return model;
}

torch::Tensor predict_noise(const PredictorModel& model, const torch::Tensor& z_t,
                            const torch::Tensor& steps, const text::TextBatch& text) {
  const auto& cfg = model.config();
  if (z_t.dim() != 5 || z_t.size(2) != cfg.latent_channels + 1 || z_t.size(3) % 2 != 0 ||
      z_t.size(4) % 2 != 0) {
    std::ostringstream msg;
    msg << "predict_noise: expected (B, F, " << cfg.latent_channels + 1
        << ", h, w) with even h, w, got " << z_t.sizes();
    throw ValidationError(msg.str());
  }
  require(steps.dim() == 1 && steps.size(0) == z_t.size(0), "predict_noise: one step per batch item");
  require(text.tokens.dim() == 3 && text.tokens.size(0) == z_t.size(0) &&
              text.tokens.size(2) == cfg.text_dim,
          "predict_noise: text batch does not match the latent batch or text dimension");
  if (!torch::isfinite(z_t).all().item<bool>()) {
    throw NumericalError("predict_noise: input latent contains non-finite values");
  }
  return model.net()->forward(z_t, steps, text.tokens, text.valid);
}

torch::Tensor predict_noise(const PredictorModel& model, const torch::Tensor& z_t,
                            const torch::Tensor& steps, const text::TextBatch& text,
                            const diffusion::NoiseSchedule& schedule) {
  auto out = predict_noise(model, z_t, steps, text);
  auto ab = schedule.alpha_bar(steps).to(out.scalar_type()).view({-1, 1, 1, 1, 1});
  auto latent = z_t.slice(2, 0, model.config().latent_channels);
  return (1 - ab).sqrt() * latent + ab.sqrt() * out;
}

torch::Tensor predict_noise(const PredictorModel& model, const torch::Tensor& z_t, int t,
                            const torch::Tensor& embedding) {
  require(z_t.dim() == 4, "predict_noise: expected (F, c+1, h, w)");
  auto batch = text::batch_text({embedding});
  auto steps = torch::full({1}, t, torch::kInt64);
  return predict_noise(model, z_t.unsqueeze(0), steps, batch)[0];
}

torch::Tensor concat_mask_channel(const torch::Tensor& latent, const torch::Tensor& mask) {
  require(latent.dim() >= 4 && mask.dim() == 3, "concat_mask_channel: expects (..., F, c, h, w) and (F, h, w)");
  const auto frames = latent.size(-4);
  if (mask.size(0) != frames) {
    throw ValidationError("concat_mask_channel: mask has " + std::to_string(mask.size(0)) +
                          " frames, latent has " + std::to_string(frames));
  }
  require(mask.size(1) == latent.size(-2) && mask.size(2) == latent.size(-1),
          "concat_mask_channel: mask must be downsampled to latent resolution");
  std::vector<std::int64_t> shape(latent.sizes().begin(), latent.sizes().end());
  shape[shape.size() - 3] = 1;
  auto m = mask.to(latent.scalar_type()).unsqueeze(1).expand(shape);
  return torch::cat({latent, m}, -3);
}

torch::Tensor concat_mask_channel(const torch::Tensor& latent, const motion::MaskVideo& mask) {
  return concat_mask_channel(latent, mask.values);
}

}  // namespace handvid::denoiser
