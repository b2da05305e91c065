#include "handvid/pipeline.hpp"

#include <iostream>

#include "handvid/error.hpp"
#include "handvid/io.hpp"

namespace handvid::pipeline {

using motion::MaskKind;
using motion::MaskVideo;

diffusion::NoiseSchedule make_schedule(const RunConfig& config) {
  return diffusion::NoiseSchedule::linear(config.beta_start, config.beta_end, config.tau);
}

denoiser::UNetConfig unet_config(const RunConfig& config) {
  denoiser::UNetConfig u;
  u.latent_channels = config.latent_channels;
  u.downsample = synth::kCodecDownsample;
  u.text_dim = config.text_dim;
  u.base_channels = config.base_channels;
  u.mid_channels = config.mid_channels;
  return u;
}

synth::DatasetOptions dataset_options(const RunConfig& config) {
  synth::DatasetOptions o;
  o.count = config.samples + config.heldout;
  o.seed = config.data_seed;
  o.frames = config.frames + 1;
  o.height = config.height;
  o.width = config.width;
  o.prior_samples = config.samples;
  return o;
}

std::uint64_t FrozenModels::hash() const {
  return codec.parameter_hash() ^ (text.parameter_hash() * 31) ^ (detector.parameter_hash() * 131);
}

namespace {

torch::Tensor downsample_single(const torch::Tensor& hw, bool binary, int factor) {
  MaskVideo m{hw.unsqueeze(0), binary, binary ? MaskKind::union_all : MaskKind::prior};
  return motion::downsample_mask(m, factor)[0];
}

}  // namespace

std::vector<PreparedSample> prepare_samples(std::span<const synth::SynthSample> samples,
                                            const FrozenModels& frozen, bool with_keypoints) {
  torch::NoGradGuard no_grad;
  const int factor = frozen.codec.downsample();
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    PreparedSample p;
    p.video_latent = frozen.codec.encode(s.video);
    p.union_mask = s.union_mask().values[0].clone();
    p.mask_latent = frozen.codec.encode(codec::mask_to_rgb(p.union_mask.unsqueeze(0)))[0];
    p.union_latent = downsample_single(p.union_mask, true, factor);
    p.embedding = frozen.text.embed(s.prompt);
    if (with_keypoints) {
      auto kp = frozen.detector.detect(s.video.slice(0, 1));
      p.train_keypoints = {kp.coords.detach(), kp.visibility.detach()};
    }
    out.push_back(std::move(p));
  }
  return out;
}

torch::Tensor assemble_input(const torch::Tensor& context, const torch::Tensor& noisy,
                             const torch::Tensor& masks) {
  require(context.dim() == 4 && noisy.dim() == 5 && masks.dim() == 3,
          "assemble_input: expects context (B,c,h,w), noisy (B,L,c,h,w), masks (B,h,w)");
  require(context.size(0) == noisy.size(0) && masks.size(0) == noisy.size(0),
          "assemble_input: batch sizes differ");
  require(context.sizes().slice(1) == noisy.sizes().slice(2) &&
              masks.size(1) == noisy.size(3) && masks.size(2) == noisy.size(4),
          "assemble_input: context, noisy frames and masks must share (c,) h, w");
  auto frames = torch::cat({context.unsqueeze(1).to(noisy.scalar_type()), noisy}, 1);
  auto m = masks.to(noisy.scalar_type()).unsqueeze(1).unsqueeze(2);
  m = m.expand({frames.size(0), frames.size(1), 1, frames.size(3), frames.size(4)});
  return torch::cat({frames, m}, 2);
}

torch::Tensor enforce_mask(const torch::Tensor& gen, const MaskVideo& mask,
                           const torch::Tensor& context) {
  require(gen.dim() == 4 && gen.size(1) == 3, "enforce_mask: gen must be (L, 3, H, W)");
  require(context.dim() == 3 && context.sizes() == gen.sizes().slice(1),
          "enforce_mask: context must be (3, H, W) matching the video");
  require(mask.values.dim() == 3 && mask.height() == gen.size(2) && mask.width() == gen.size(3),
          "enforce_mask: mask resolution differs from the video");
  require(mask.frames() == 1 || mask.frames() == gen.size(0),
          "enforce_mask: mask must have 1 or L frames");
  if (!mask.binary || !((mask.values == 0) | (mask.values == 1)).all().item<bool>()) {
    throw ValidationError("enforce_mask: mask must be binary");
  }
  auto keep = (mask.values > 0.5).unsqueeze(1);  // (F|1, 1, H, W)
  auto ctx = context.to(gen.scalar_type()).unsqueeze(0);
  return torch::where(keep, gen, ctx.expand_as(gen));
}

torch::Tensor quantize_video(const torch::Tensor& video) {
  // Half-up like io::quantize_unit; round() would go half-to-even.
  return torch::floor(video.clamp(0.0, 1.0) * 255.0 + 0.5) / 255.0;
}

namespace {

struct BatchConditioning {
  torch::Tensor context_latent;  // (B, c, h, w)
  text::TextBatch text;
};

BatchConditioning condition_batch(std::span<const InferRequest> requests, const FrozenModels& frozen,
                                  const RunConfig& config) {
  require(!requests.empty(), "infer: no requests");
  std::vector<torch::Tensor> contexts, embeddings;
  for (const auto& r : requests) {
    if (r.context.dim() != 3 || r.context.size(0) != 3 || r.context.size(1) != config.height ||
        r.context.size(2) != config.width) {
      std::ostringstream msg;
      msg << "infer: context image must be (3, " << config.height << ", " << config.width
          << "), got " << r.context.sizes();
      throw ValidationError(msg.str());
    }
    contexts.push_back(r.context.to(torch::kFloat32));
    embeddings.push_back(frozen.text.embed(r.prompt));
  }
  return {frozen.codec.encode(torch::stack(contexts).unsqueeze(1)).squeeze(1),
          text::batch_text(embeddings)};
}

// Initial latent: the duplicated context latent pushed to step tau with
// per-request noise, so each request's result is independent of batching.
torch::Tensor initial_latent(std::span<const InferRequest> requests, const torch::Tensor& context,
                             int frames, const diffusion::NoiseSchedule& schedule, int stage) {
  std::vector<torch::Tensor> inits;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(requests[i].seed * 2 + stage);
    auto ctx = context[i].unsqueeze(0).expand({frames, -1, -1, -1});
    auto eps = torch::randn(ctx.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat32));
    inits.push_back(diffusion::add_noise(ctx.contiguous(), schedule.tau(), eps, schedule));
  }
  return torch::stack(inits);
}

torch::Tensor run_sampler(const denoiser::PredictorModel& model, const BatchConditioning& cond,
                          const torch::Tensor& masks, const torch::Tensor& init,
                          const diffusion::NoiseSchedule& schedule, int steps) {
  const auto b = init.size(0);
  diffusion::NoisePredictor predictor = [&](const torch::Tensor& z, int t) {
    auto input = assemble_input(cond.context_latent, z, masks);
    auto step = torch::full({b}, t, torch::kInt64);
    return denoiser::predict_noise(model, input, step, cond.text, schedule).slice(1, 1);
  };
  return diffusion::sample(predictor, init, schedule, steps);
}

}  // namespace

std::vector<MaskVideo> generate_stage1_masks(std::span<const InferRequest> requests,
                                             const Models& models, const RunConfig& config) {
  if (models.stage1 == nullptr) {
    throw ValidationError("stage-1 mask requested but no stage-1 model is loaded (run train-stage1)");
  }
  require(models.prior.values.defined(), "stage-1 inference needs the dataset prior mask");
  torch::NoGradGuard no_grad;
  const auto& frozen = *models.frozen;
  auto cond = condition_batch(requests, frozen, config);
  const auto b = static_cast<std::int64_t>(requests.size());
  auto prior_lat = downsample_single(models.prior.values[0], false, frozen.codec.downsample());
  auto masks = prior_lat.unsqueeze(0).expand({b, -1, -1});
  const auto schedule = make_schedule(config);
  auto init = initial_latent(requests, cond.context_latent, config.frames, schedule, 0);
  auto z0 = run_sampler(*models.stage1, cond, masks, init, schedule, config.inference_steps);
  auto soft = codec::rgb_to_soft_mask(frozen.codec.decode(z0));  // (B, L, H, W)
  std::vector<MaskVideo> out;
  for (std::int64_t i = 0; i < b; ++i) {
    MaskVideo m{soft[i].contiguous(), false, MaskKind::generated};
    out.push_back(motion::postprocess_soft_mask(m, config.mask_threshold, config.closing_radius));
  }
  return out;
}

std::vector<InferResult> infer_batch(std::span<const InferRequest> requests, const Models& models,
                                     const RunConfig& config, MaskSource source) {
  if (models.frozen == nullptr || models.stage2 == nullptr) {
    throw ValidationError("infer: stage-2 model not loaded (run train-stage2)");
  }
  if (!models.frozen->codec.trained()) {
    throw ValidationError("infer: codec is untrained (run train-codec)");
  }
  torch::NoGradGuard no_grad;
  const auto& frozen = *models.frozen;
  const int factor = frozen.codec.downsample();
  const int frames = config.frames;
  const auto b = static_cast<std::int64_t>(requests.size());

  std::vector<InferResult> results(b);
  std::vector<torch::Tensor> cond_masks(b);
  std::vector<MaskVideo> stage1;
  if (source == MaskSource::stage1) stage1 = generate_stage1_masks(requests, models, config);
  auto prior_cond = [&] { return downsample_single(models.prior.values[0], false, factor); };
  auto prior_enforce = [&] { return motion::prior_support(models.prior).with_frames(frames); };

  for (std::int64_t i = 0; i < b; ++i) {
    auto& res = results[i];
    switch (source) {
      case MaskSource::stage1:
        res.stage1 = stage1[i];
        if (stage1[i].values.sum().item<double>() == 0.0) {
          std::cerr << "warning: stage-1 mask for request " << i
                    << " is empty; conditioning on the prior mask instead\n";
          res.fell_back_to_prior = true;
          cond_masks[i] = prior_cond();
          res.mask = prior_enforce();
        } else {
          cond_masks[i] = downsample_single(stage1[i].values[0], true, factor);
          res.mask = stage1[i];
        }
        break;
      case MaskSource::gt: {
        const auto& gt = requests[i].gt_union;
        require(gt.defined() && gt.dim() == 2, "infer: mask source gt needs a ground-truth union mask");
        cond_masks[i] = downsample_single(gt.to(torch::kFloat32), true, factor);
        res.mask = MaskVideo{gt.to(torch::kFloat32).unsqueeze(0), true, MaskKind::union_all}.with_frames(frames);
        break;
      }
      case MaskSource::prior:
        require(models.prior.values.defined(), "infer: mask source prior needs the dataset prior");
        cond_masks[i] = prior_cond();
        res.mask = prior_enforce();
        break;
      case MaskSource::none:
        cond_masks[i] = torch::ones({config.height / factor, config.width / factor});
        res.mask = motion::full_mask(frames, config.height, config.width);
        break;
    }
  }

  auto cond = condition_batch(requests, frozen, config);
  const auto schedule = make_schedule(config);
  auto init = initial_latent(requests, cond.context_latent, frames, schedule, 1);
  auto z0 = run_sampler(*models.stage2, cond, torch::stack(cond_masks), init, schedule,
                        config.inference_steps);
  auto video = quantize_video(frozen.codec.decode(z0));
  for (std::int64_t i = 0; i < b; ++i) {
    results[i].video = enforce_mask(video[i], results[i].mask, requests[i].context.to(torch::kFloat32));
  }
  return results;
}

InferResult infer(const InferRequest& request, const Models& models, const RunConfig& config,
                  MaskSource source) {
  return infer_batch(std::span<const InferRequest>(&request, 1), models, config, source).front();
}

}  // namespace handvid::pipeline
