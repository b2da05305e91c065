#include "handvid/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "handvid/error.hpp"
#include "handvid/io.hpp"
#include "handvid/losses.hpp"

namespace handvid::pipeline {

namespace fs = std::filesystem;
using denoiser::Stage;
using motion::MaskKind;
using motion::MaskVideo;

void write_metrics(const fs::path& path, const std::vector<MetricsRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics log " + path.string());
  out << "# iteration\tstage\tnoise\tmiou\thrl\ttotal\tgen_detect\n";
  out << std::setprecision(9);
  for (const auto& r : rows) {
    out << r.iteration << '\t' << denoiser::stage_name(r.stage) << '\t' << r.noise << '\t' << r.miou
        << '\t' << r.hrl << '\t' << r.total << '\t' << r.gen_detect << '\n';
  }
}

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics log " + path.string());
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    MetricsRow r;
    std::string stage, gen_detect;
    fields >> r.iteration >> stage >> r.noise >> r.miou >> r.hrl >> r.total >> gen_detect;
    if (!fields) throw IoError("malformed metrics line: " + line);
    r.stage = stage == "stage1" ? Stage::stage1 : Stage::stage2;
    r.gen_detect = gen_detect == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(gen_detect);
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::uint64_t stage_seed(const RunConfig& config, Stage stage) {
  return config.seed * 2 + (stage == Stage::stage1 ? 0 : 1);
}

std::string optimizer_bytes(const torch::optim::Adam& optimizer) {
  torch::serialize::OutputArchive archive;
  optimizer.save(archive);
  std::ostringstream out;
  archive.save_to(out);
  return out.str();
}

// Moments in parameter order; the archive bytes are not reproducible.
std::vector<torch::Tensor> optimizer_tensors(const torch::optim::Adam& optimizer) {
  std::vector<torch::Tensor> out;
  const auto& state = optimizer.state();
  for (const auto& group : optimizer.param_groups()) {
    for (const auto& p : group.params()) {
      auto it = state.find(p.unsafeGetTensorImpl());
      if (it == state.end()) continue;
      const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
      out.push_back(torch::tensor({s.step()}, torch::kInt64));
      out.push_back(s.exp_avg());
      out.push_back(s.exp_avg_sq());
    }
  }
  return out;
}

}  // namespace

TrainState::TrainState(const RunConfig& config, Stage stage)
    : model(unet_config(config), stage, stage_seed(config, stage)),
      generator(at::make_generator<at::CPUGeneratorImpl>(stage_seed(config, stage) + 1000)) {
  optimizer = std::make_unique<torch::optim::Adam>(model.net()->parameters(),
                                                   torch::optim::AdamOptions(config.learning_rate));
}

std::vector<std::int64_t> TrainState::next_batch(std::int64_t dataset_size, int batch_size) {
  require(dataset_size >= 1, "training: empty dataset");
  if (!order.defined() || cursor >= order.size(0)) {
    if (order.defined()) ++epoch;
    order = torch::randperm(dataset_size, generator, torch::kInt64);
    cursor = 0;
  }
  const auto end = std::min<std::int64_t>(order.size(0), cursor + batch_size);
  auto acc = order.accessor<std::int64_t, 1>();
  std::vector<std::int64_t> batch;
  for (auto k = cursor; k < end; ++k) batch.push_back(acc[k]);
  cursor = end;
  return batch;
}

void TrainState::save(const fs::path& path) const {
  io::Checkpoint ckpt;
  ckpt.kind = "train_state";
  ckpt.descriptor = model.descriptor();
  ckpt.descriptor["iteration"] = std::to_string(iteration);
  ckpt.descriptor["epoch"] = std::to_string(epoch);
  ckpt.descriptor["cursor"] = std::to_string(cursor);
  ckpt.tensors = io::module_state(*model.net());
  ckpt.tensors.emplace_back("optimizer", io::bytes_to_tensor(optimizer_bytes(*optimizer)));
  {
    std::lock_guard<std::mutex> lock(generator.mutex());
    ckpt.tensors.emplace_back("generator", generator.get_state());
  }
  ckpt.tensors.emplace_back("order", order.defined() ? order : torch::empty({0}, torch::kInt64));
  io::save_checkpoint(path, ckpt);
}

TrainState TrainState::load(const fs::path& path, const RunConfig& config, Stage stage) {
  auto ckpt = io::load_checkpoint(path);
  TrainState state(config, stage);
  auto expected = state.model.descriptor();
  for (const char* key : {"iteration", "epoch", "cursor"}) {
    if (!ckpt.descriptor.count(key)) throw IoError("train state missing field " + std::string(key));
    expected[key] = ckpt.descriptor.at(key);
  }
  io::require_descriptor(ckpt, "train_state", expected);
  io::load_module_state(*state.model.net(), ckpt);
  std::istringstream in(io::tensor_to_bytes(ckpt.tensor("optimizer")));
  torch::serialize::InputArchive archive;
  archive.load_from(in);
  state.optimizer->load(archive);
  {
    std::lock_guard<std::mutex> lock(state.generator.mutex());
    state.generator.set_state(ckpt.tensor("generator"));
  }
  const auto& order = ckpt.tensor("order");
  if (order.numel() > 0) state.order = order.clone();
  state.iteration = std::stoll(ckpt.descriptor.at("iteration"));
  state.epoch = std::stoll(ckpt.descriptor.at("epoch"));
  state.cursor = std::stoll(ckpt.descriptor.at("cursor"));
  return state;
}

std::uint64_t TrainState::fingerprint() const {
  std::vector<torch::Tensor> parts;
  for (const auto& p : model.net()->parameters()) parts.push_back(p);
  for (auto& t : optimizer_tensors(*optimizer)) parts.push_back(t);
  {
    std::lock_guard<std::mutex> lock(generator.mutex());
    parts.push_back(generator.get_state());
  }
  if (order.defined()) parts.push_back(order);
  parts.push_back(torch::tensor({iteration, epoch, cursor}, torch::kInt64));
  return io::hash_tensors(parts);
}

std::int64_t planned_iterations(const RunConfig& config, Stage stage, std::size_t dataset_size) {
  if (config.epochs > 0) {
    const auto n = static_cast<std::int64_t>(dataset_size);
    return config.epochs * ((n + config.batch_size - 1) / config.batch_size);
  }
  return stage == Stage::stage1 ? config.stage1_iterations : config.stage2_iterations;
}

namespace {

torch::Tensor prior_latent(const MaskVideo& prior, int factor) {
  MaskVideo single{prior.values.slice(0, 0, 1), false, MaskKind::prior};
  return motion::downsample_mask(single, factor)[0];
}

template <typename Fn>
torch::Tensor gather(const std::vector<PreparedSample>& prepared, const std::vector<std::int64_t>& idx,
                     Fn&& field) {
  std::vector<torch::Tensor> parts;
  parts.reserve(idx.size());
  for (auto i : idx) parts.push_back(field(prepared[i]));
  return torch::stack(parts);
}

void optimize(TrainState& state, const torch::Tensor& loss, double clip) {
  state.optimizer->zero_grad();
  loss.backward();
  if (clip > 0) torch::nn::utils::clip_grad_norm_(state.model.net()->parameters(), clip);
  state.optimizer->step();
}

void report(const RunConfig& config, const MetricsRow& row, std::int64_t total) {
  if (config.log_every <= 0) return;
  if (row.iteration % config.log_every != 0 && row.iteration + 1 != total) return;
  std::cerr << "[" << denoiser::stage_name(row.stage) << "] iter " << row.iteration << "/" << total
            << " noise " << row.noise << " miou " << row.miou << " hrl " << row.hrl << " total "
            << row.total << '\n';
}

void finish(TrainState& state, const std::vector<MetricsRow>& log, const TrainOptions& options) {
  state.model.net()->eval();
  if (!options.metrics_path.empty()) write_metrics(options.metrics_path, log);
  if (!options.checkpoint_path.empty()) state.save(options.checkpoint_path);
}

}  // namespace

TrainResult train_stage1(std::span<const synth::SynthSample> train,
                         const std::optional<MaskVideo>& prior, const FrozenModels& frozen,
                         const RunConfig& config, const TrainOptions& options) {
  config.validate();
  if (train.empty()) throw ValidationError("train_stage1: dataset is empty");
  if (!prior) {
    throw ValidationError("train_stage1: dataset has no prior mask; rebuild it with `handvid synth`");
  }
  const losses::LossWeights weights{config.alpha, config.eta};
  const auto schedule = make_schedule(config);
  auto prepared = prepare_samples(train, frozen, false);
  const auto prior_lat = prior_latent(*prior, frozen.codec.downsample());
  const auto n = static_cast<std::int64_t>(prepared.size());
  const auto total = options.iterations.value_or(planned_iterations(config, Stage::stage1, train.size()));

  TrainState state(config, Stage::stage1);
  state.model.net()->train();
  std::vector<MetricsRow> log;
  for (std::int64_t it = 0; it < total; ++it) {
    auto idx = state.next_batch(n, config.batch_size);
    const auto b = static_cast<std::int64_t>(idx.size());
    const auto frames = prepared[idx[0]].video_latent.size(0) - 1;

    auto ctx = gather(prepared, idx, [](const auto& p) { return p.video_latent[0]; });
    auto target = gather(prepared, idx, [](const auto& p) { return p.mask_latent; });
    target = target.unsqueeze(1).expand({b, frames, -1, -1, -1}).contiguous();
    auto gt_mask = gather(prepared, idx, [](const auto& p) { return p.union_mask; });
    gt_mask = gt_mask.unsqueeze(1).expand({b, frames, -1, -1});
    auto masks = prior_lat.unsqueeze(0).expand({b, -1, -1});
    std::vector<torch::Tensor> emb;
    for (auto i : idx) emb.push_back(prepared[i].embedding);
    auto text = text::batch_text(emb);

    auto steps = torch::randint(1, schedule.tau() + 1, {b}, state.generator, torch::kInt64);
    auto eps = torch::randn(target.sizes(), state.generator, torch::TensorOptions().dtype(torch::kFloat32));
    auto z_t = diffusion::add_noise(target, steps, eps, schedule);
    auto eps_hat =
        denoiser::predict_noise(state.model, assemble_input(ctx, z_t, masks), steps, text, schedule).slice(1, 1);
    auto noise = losses::noise_loss(eps, eps_hat);

    torch::Tensor miou;
    if (weights.alpha > 0) {
      auto z0 = diffusion::recover_z0(z_t, steps, eps_hat, schedule);
      miou = losses::miou_loss(codec::rgb_to_soft_mask(frozen.codec.decode(z0)), gt_mask);
    } else {
      torch::NoGradGuard no_grad;
      auto z0 = diffusion::recover_z0(z_t, steps, eps_hat.detach(), schedule);
      miou = losses::miou_loss(codec::rgb_to_soft_mask(frozen.codec.decode(z0)), gt_mask);
    }
    auto loss = losses::stage1_loss(noise, weights.alpha > 0 ? miou : miou.detach(), weights);
    optimize(state, loss, config.grad_clip);
    ++state.iteration;

    MetricsRow row{it, Stage::stage1, noise.item<double>(), miou.item<double>(), 0.0,
                   loss.item<double>(), std::numeric_limits<double>::quiet_NaN()};
    log.push_back(row);
    report(config, row, total);
    if (options.on_step) options.on_step(row);
  }
  finish(state, log, options);
  return {std::move(state.model), std::move(log)};
}

void cache_stage1_masks(std::span<const synth::SynthSample> samples,
                        std::span<PreparedSample> prepared, const Models& models,
                        const RunConfig& config) {
  require(samples.size() == prepared.size(), "cache_stage1_masks: size mismatch");
  const int factor = models.frozen->codec.downsample();
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const auto end = std::min(samples.size(), begin + kChunk);
    std::vector<InferRequest> requests;
    for (auto i = begin; i < end; ++i) {
      requests.push_back({samples[i].video[0], samples[i].prompt, config.seed + i, {}});
    }
    auto masks = generate_stage1_masks(requests, models, config);
    for (auto i = begin; i < end; ++i) {
      auto& p = prepared[i];
      const auto& m = masks[i - begin];
      if (m.values.sum().item<double>() == 0.0) {
        p.stage1_mask = motion::prior_support(models.prior).values[0];
        p.stage1_latent = prior_latent(models.prior, factor);
      } else {
        p.stage1_mask = m.values[0].clone();
        MaskVideo single{p.stage1_mask.unsqueeze(0), true, MaskKind::generated};
        p.stage1_latent = motion::downsample_mask(single, factor)[0];
      }
    }
  }
}

TrainResult train_stage2(std::span<const synth::SynthSample> train,
                         const std::optional<MaskVideo>& prior, const FrozenModels& frozen,
                         const denoiser::PredictorModel* stage1, const RunConfig& config,
                         const TrainOptions& options) {
  config.validate();
  if (train.empty()) throw ValidationError("train_stage2: dataset is empty");
  const auto source = config.mask_source;
  if (source == MaskSource::stage1 && stage1 == nullptr) {
    throw ValidationError("train_stage2: mask source stage1 needs a trained stage-1 model (run train-stage1)");
  }
  if ((source == MaskSource::stage1 || source == MaskSource::prior) && !prior) {
    throw ValidationError("train_stage2: dataset has no prior mask; rebuild it with `handvid synth`");
  }
  if (config.hrl_enabled && !frozen.detector.frozen()) {
    throw ValidationError("train_stage2: the hand detector must be frozen");
  }
  const losses::LossWeights weights{config.alpha, config.eta};
  const auto schedule = make_schedule(config);
  const int factor = frozen.codec.downsample();
  auto prepared = prepare_samples(train, frozen, config.hrl_enabled);
  if (source == MaskSource::stage1) {
    Models models{&frozen, stage1, nullptr, *prior};
    cache_stage1_masks(train, prepared, models, config);
  }
  torch::Tensor fixed_mask;
  if (source == MaskSource::prior) fixed_mask = prior_latent(*prior, factor);
  if (source == MaskSource::none) {
    fixed_mask = torch::ones({config.height / factor, config.width / factor});
  }

  const auto n = static_cast<std::int64_t>(prepared.size());
  const auto total = options.iterations.value_or(planned_iterations(config, Stage::stage2, train.size()));
  TrainState state(config, Stage::stage2);
  state.model.net()->train();
  std::vector<MetricsRow> log;
  for (std::int64_t it = 0; it < total; ++it) {
    auto idx = state.next_batch(n, config.batch_size);
    const auto b = static_cast<std::int64_t>(idx.size());

    auto ctx = gather(prepared, idx, [](const auto& p) { return p.video_latent[0]; });
    auto target = gather(prepared, idx, [](const auto& p) { return p.video_latent.slice(0, 1); });
    torch::Tensor masks;
    switch (source) {
      case MaskSource::gt:
        masks = gather(prepared, idx, [](const auto& p) { return p.union_latent; });
        break;
      case MaskSource::stage1:
        masks = gather(prepared, idx, [](const auto& p) { return p.stage1_latent; });
        break;
      default:
        masks = fixed_mask.unsqueeze(0).expand({b, -1, -1});
    }
    std::vector<torch::Tensor> emb;
    for (auto i : idx) emb.push_back(prepared[i].embedding);
    auto text = text::batch_text(emb);

    auto steps = torch::randint(1, schedule.tau() + 1, {b}, state.generator, torch::kInt64);
    auto eps = torch::randn(target.sizes(), state.generator, torch::TensorOptions().dtype(torch::kFloat32));
    auto z_t = diffusion::add_noise(target, steps, eps, schedule);
    auto eps_hat =
        denoiser::predict_noise(state.model, assemble_input(ctx, z_t, masks), steps, text, schedule).slice(1, 1);
    auto noise = losses::noise_loss(eps, eps_hat);

    auto hrl = torch::zeros({}, noise.options());
    double gen_detect = std::numeric_limits<double>::quiet_NaN();
    if (config.hrl_enabled && it % config.hrl_every == 0) {
      auto z0 = diffusion::recover_z0(z_t, steps, eps_hat, schedule);
      auto gen_video = frozen.codec.decode(z0);  // (B, L, 3, H, W)
      auto gen_kp = frozen.detector.detect(gen_video);
      pose::KeypointSequence train_kp{
          gather(prepared, idx, [](const auto& p) { return p.train_keypoints.coords; }),
          gather(prepared, idx, [](const auto& p) { return p.train_keypoints.visibility; })};
      hrl = losses::hand_refinement_loss(gen_kp, train_kp);
      gen_detect = (gen_kp.visibility.amax(-1) > 0.5).to(torch::kFloat64).mean().item<double>();
    }
    auto loss = losses::stage2_loss(noise, hrl, weights);
    optimize(state, loss, config.grad_clip);
    ++state.iteration;

    MetricsRow row{it, Stage::stage2, noise.item<double>(), 0.0, hrl.item<double>(),
                   loss.item<double>(), gen_detect};
    log.push_back(row);
    report(config, row, total);
    if (options.on_step) options.on_step(row);
  }
  finish(state, log, options);
  return {std::move(state.model), std::move(log)};
}

}  // namespace handvid::pipeline
