#include "handvid/detector.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include "handvid/error.hpp"
#include "handvid/io.hpp"

namespace handvid::pose {

namespace fs = std::filesystem;

namespace {

torch::nn::Conv2dOptions conv3x3(int in, int out, int dilation = 1) {
  return torch::nn::Conv2dOptions(in, out, 3).padding(dilation).dilation(dilation);
}

torch::Tensor coordinate_planes(std::int64_t n, std::int64_t h, std::int64_t w,
                                const torch::TensorOptions& options) {
  auto ys = (torch::arange(h, options) + 0.5) / static_cast<double>(h);
  auto xs = (torch::arange(w, options) + 0.5) / static_cast<double>(w);
  auto grid_y = ys.view({1, 1, h, 1}).expand({n, 1, h, w});
  auto grid_x = xs.view({1, 1, 1, w}).expand({n, 1, h, w});
  return torch::cat({grid_x, grid_y}, 1);
}

std::map<std::string, std::string> descriptor(const DetectorConfig& c) {
  return {{"height", std::to_string(c.height)},
          {"width", std::to_string(c.width)},
          {"joints", std::to_string(c.joints)},
          {"window", std::to_string(c.window)},
          {"channels", std::to_string(c.channels)},
          {"topology", topology_descriptor(c.joints)}};
}

}  // namespace

DetectorNetImpl::DetectorNetImpl(const DetectorConfig& config) {
  const int c = config.channels;
  const int in = 3 * config.window + 2;
  conv1 = register_module("conv1", torch::nn::Conv2d(conv3x3(in, c)));
  conv2 = register_module("conv2", torch::nn::Conv2d(conv3x3(c, 2 * c)));
  conv3 = register_module("conv3", torch::nn::Conv2d(conv3x3(2 * c, 3 * c)));
  conv4 = register_module("conv4", torch::nn::Conv2d(conv3x3(3 * c, 4 * c, 2)));
  conv4b = register_module("conv4b", torch::nn::Conv2d(conv3x3(4 * c, 4 * c)));
  heatmap = register_module("heatmap", torch::nn::Conv2d(torch::nn::Conv2dOptions(4 * c, config.joints, 1)));
  visibility = register_module("visibility", torch::nn::Linear(4 * c, config.joints));
}

DetectorOutput DetectorNetImpl::forward(const torch::Tensor& input) {
  auto x = torch::silu(conv1(input));
  x = torch::avg_pool2d(x, 2);
  x = torch::silu(conv2(x));
  x = torch::avg_pool2d(x, 2);
  x = torch::silu(conv3(x));
  x = torch::silu(conv4(x));
  x = torch::silu(conv4b(x));

  const auto n = x.size(0), h = x.size(2), w = x.size(3);
  auto logits_map = heatmap(x);
  const auto joints = logits_map.size(1);
  auto prob = torch::softmax(logits_map.view({n, joints, h * w}), -1).view({n, joints, h, w});
  auto planes = coordinate_planes(1, h, w, x.options());
  auto px = (prob * planes.select(1, 0)).sum({2, 3});
  auto py = (prob * planes.select(1, 1)).sum({2, 3});

  auto pooled = x.mean({2, 3});
  return {torch::stack({px, py}, -1), visibility(pooled), pooled};
}

torch::Tensor temporal_window_input(const torch::Tensor& video, int window) {
  require(video.dim() == 4 && video.size(1) == 3, "temporal_window_input: expects (F,3,H,W)");
  require(window >= 1 && window % 2 == 1, "temporal_window_input: window must be odd");
  const auto f = video.size(0), h = video.size(2), w = video.size(3);
  const int r = window / 2;
  auto pad = torch::zeros({r, 3, h, w}, video.options());
  auto padded = torch::cat({pad, video, pad}, 0);
  std::vector<torch::Tensor> parts;
  for (int k = 0; k < window; ++k) parts.push_back(padded.slice(0, k, k + f));
  parts.push_back(coordinate_planes(f, h, w, video.options()));
  return torch::cat(parts, 1);
}

DetectorModel::DetectorModel(DetectorConfig config, std::uint64_t seed) : config_(config) {
  require(config_.height % 4 == 0 && config_.width % 4 == 0,
          "DetectorConfig: frame size must be divisible by 4");
  require(config_.joints >= 1 && config_.window >= 1 && config_.channels >= 1,
          "DetectorConfig: invalid dimensions");
  torch::manual_seed(seed);
  net_ = DetectorNet(config_);
  net_->eval();
}

void DetectorModel::freeze() {
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  frozen_ = true;
}

void DetectorModel::check_input(const torch::Tensor& video) const {
  if (video.dim() < 4 || video.size(-3) != 3 || video.size(-2) != config_.height ||
      video.size(-1) != config_.width) {
    std::ostringstream msg;
    msg << "detector expects frames of 3x" << config_.height << "x" << config_.width << ", got "
        << video.sizes();
    throw ValidationError(msg.str());
  }
}

DetectorOutput DetectorModel::run(const torch::Tensor& video) const {
  check_input(video);
  if (video.dim() == 4) return net_->forward(temporal_window_input(video, config_.window));
  require(video.dim() == 5, "detector: expects (F,3,H,W) or (B,F,3,H,W)");
  std::vector<torch::Tensor> inputs;
  for (std::int64_t b = 0; b < video.size(0); ++b) {
    inputs.push_back(temporal_window_input(video[b], config_.window));
  }
  return net_->forward(torch::cat(inputs, 0));
}

KeypointSequence DetectorModel::detect(const torch::Tensor& video) const {
  auto out = run(video);
  auto vis = (out.logits.detach() > 0).to(out.coords.scalar_type());
  std::vector<std::int64_t> lead(video.sizes().begin(), video.sizes().end() - 3);
  auto coord_shape = lead;
  coord_shape.insert(coord_shape.end(), {config_.joints, 2});
  auto vis_shape = lead;
  vis_shape.push_back(config_.joints);
  return zero_fill_missing({out.coords.view(coord_shape), vis.view(vis_shape)});
}

torch::Tensor DetectorModel::features(const torch::Tensor& video) const {
  require(video.dim() == 4, "detector features: expects (F,3,H,W)");
  return run(video).features;
}

std::uint64_t DetectorModel::parameter_hash() const { return io::hash_module(*net_); }

void DetectorModel::save(const fs::path& path) const {
  io::Checkpoint ckpt;
  ckpt.kind = "detector";
  ckpt.descriptor = descriptor(config_);
  ckpt.descriptor["trained"] = trained_ ? "1" : "0";
  ckpt.tensors = io::module_state(*net_);
  io::save_checkpoint(path, ckpt);
}

DetectorModel DetectorModel::load(const fs::path& path, const DetectorConfig& expected) {
  auto ckpt = io::load_checkpoint(path);
  io::require_descriptor(ckpt, "detector", descriptor(expected));
  DetectorModel model(expected);
  io::load_module_state(*model.net_, ckpt);
  model.trained_ = ckpt.descriptor["trained"] == "1";
  model.freeze();
  return model;
}

DetectorModel DetectorModel::load(const fs::path& path) {
  auto ckpt = io::load_checkpoint(path);
  if (ckpt.kind != "detector") throw ValidationError("not a detector checkpoint: " + path.string());
  DetectorConfig config;
  config.height = std::stoi(ckpt.descriptor.at("height"));
  config.width = std::stoi(ckpt.descriptor.at("width"));
  config.joints = std::stoi(ckpt.descriptor.at("joints"));
  config.window = std::stoi(ckpt.descriptor.at("window"));
  config.channels = std::stoi(ckpt.descriptor.at("channels"));
  return load(path, config);
}

DetectorModel train_detector(std::span<const synth::SynthSample> samples,
                             const DetectorTrainConfig& train, const DetectorConfig& config) {
  if (samples.empty()) throw ValidationError("train_detector: dataset is empty");
  require(train.epochs >= 0 && train.batch_size >= 1, "train_detector: invalid schedule");
  DetectorModel model(config, train.seed);
  if (train.epochs == 0) {
    model.freeze();
    return model;
  }

  struct Item {
    int sample;  // -1: blank frame
    int frame;
  };
  std::vector<Item> items;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    require(samples[s].keypoints.joints() == config.joints, "train_detector: joint count mismatch");
    for (int f = 0; f < samples[s].video.size(0); ++f) items.push_back({static_cast<int>(s), f});
  }
  const auto blanks = static_cast<std::size_t>(std::lround(train.blank_fraction * items.size()));
  for (std::size_t i = 0; i < blanks; ++i) items.push_back({-1, 0});

  const int r = config.window / 2;
  auto make_input = [&](const Item& item) {
    if (item.sample < 0) {
      auto zeros = torch::zeros({1, 3, config.height, config.width});
      return temporal_window_input(zeros, config.window)[0];
    }
    const auto& video = samples[item.sample].video;
    const auto f = video.size(0);
    std::vector<torch::Tensor> parts;
    for (int k = -r; k <= r; ++k) {
      const int idx = item.frame + k;
      parts.push_back(idx < 0 || idx >= f ? torch::zeros_like(video[0]) : video[idx]);
    }
    auto stack = torch::cat(parts, 0);
    auto coords = temporal_window_input(video[item.frame].unsqueeze(0), 1)[0].slice(0, 3, 5);
    return torch::cat({stack, coords}, 0);
  };

  auto& net = model.net();
  net->train();
  torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(train.learning_rate));
  auto generator = at::make_generator<at::CPUGeneratorImpl>(train.seed + 1);
  const auto n = static_cast<std::int64_t>(items.size());
  const std::int64_t steps_per_epoch = (n + train.batch_size - 1) / train.batch_size;
  const std::int64_t total_steps = steps_per_epoch * train.epochs;
  std::int64_t step = 0;

  std::ofstream curve;
  if (!train.curve_path.empty()) {
    if (train.curve_path.has_parent_path()) fs::create_directories(train.curve_path.parent_path());
    curve.open(train.curve_path);
    curve << "# epoch loss coord_mse visibility_bce\n";
  }

  constexpr double kCoordWeight = 100.0;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    auto order = torch::randperm(n, generator, torch::kInt64);
    auto order_acc = order.accessor<std::int64_t, 1>();
    double epoch_loss = 0, epoch_coord = 0, epoch_bce = 0;
    for (std::int64_t begin = 0; begin < n; begin += train.batch_size) {
      const auto end = std::min<std::int64_t>(n, begin + train.batch_size);
      std::vector<torch::Tensor> inputs, target_coords, target_vis;
      for (std::int64_t k = begin; k < end; ++k) {
        const auto& item = items[order_acc[k]];
        inputs.push_back(make_input(item));
        if (item.sample < 0) {
          target_coords.push_back(torch::zeros({config.joints, 2}));
          target_vis.push_back(torch::zeros({config.joints}));
        } else {
          const auto& kp = samples[item.sample].keypoints;
          target_coords.push_back(kp.coords[item.frame].to(torch::kFloat32));
          target_vis.push_back(kp.visibility[item.frame].to(torch::kFloat32));
        }
      }
      auto x = torch::stack(inputs);
      auto tc = torch::stack(target_coords);
      auto tv = torch::stack(target_vis);

      // Cosine decay to 5% of the base rate.
      const double progress = static_cast<double>(step) / std::max<std::int64_t>(1, total_steps);
      const double lr =
          train.learning_rate * (0.05 + 0.95 * 0.5 * (1 + std::cos(std::numbers::pi * progress)));
      for (auto& group : optimizer.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
      }

      auto out = net->forward(x);
      auto coord_mse = ((out.coords - tc).pow(2).sum(-1) * tv).sum() / tv.sum().clamp_min(1.0);
      auto bce = torch::binary_cross_entropy_with_logits(out.logits, tv);
      auto loss = kCoordWeight * coord_mse + bce;
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      ++step;

      const double w = static_cast<double>(end - begin) / n;
      epoch_loss += w * loss.item<double>();
      epoch_coord += w * coord_mse.item<double>();
      epoch_bce += w * bce.item<double>();
    }
    if (curve.is_open()) curve << epoch << ' ' << epoch_loss << ' ' << epoch_coord << ' ' << epoch_bce << '\n';
    if (train.verbose) {
      std::cerr << "[detector] epoch " << epoch << " loss " << epoch_loss << " coord_mse "
                << epoch_coord << " bce " << epoch_bce << '\n';
    }
  }
  net->eval();
  model.mark_trained();
  model.freeze();
  return model;
}

DetectorModel train_detector(const fs::path& dataset_root, const DetectorTrainConfig& train,
                             const DetectorConfig& config) {
  auto data = synth::load_dataset(dataset_root);
  return train_detector(data.samples, train, config);
}

double mean_joint_error(const DetectorModel& model, std::span<const synth::SynthSample> samples) {
  torch::NoGradGuard no_grad;
  double total = 0;
  std::int64_t count = 0;
  for (const auto& s : samples) {
    auto out = model.run(s.video);
    auto gt = s.keypoints.coords.to(torch::kFloat64);
    auto vis = s.keypoints.visibility.to(torch::kFloat64);
    auto dist = (out.coords.to(torch::kFloat64) - gt).pow(2).sum(-1).sqrt();
    total += (dist * vis).sum().item<double>();
    count += static_cast<std::int64_t>(vis.sum().item<double>());
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace handvid::pose
