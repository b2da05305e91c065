#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "handvid/dataset.hpp"
#include "handvid/hand_pose.hpp"

namespace handvid::pose {

inline constexpr double kVisibilityThreshold = 0.5;

struct DetectorConfig {
  int height = 64;
  int width = 64;
  int joints = kDefaultJoints;
  int window = 3;     // frames per input stack, centered, zero-padded at the ends
  int channels = 16;  // width of the first conv block; later blocks use 2x, 3x, 4x
};

struct DetectorOutput {
  torch::Tensor coords;    // (N, J, 2) soft-argmax positions in [0,1]
  torch::Tensor logits;    // (N, J) visibility logits
  torch::Tensor features;  // (N, D) globally pooled backbone features
};

/// Four conv blocks, then a per-joint heatmap read out by spatial soft-argmax
/// (a softmax-weighted global pooling of pixel positions) and a linear
/// visibility head on globally pooled features.
class DetectorNetImpl : public torch::nn::Module {
 public:
  explicit DetectorNetImpl(const DetectorConfig& config);
  DetectorOutput forward(const torch::Tensor& input);

 private:
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr},
      conv4b{nullptr}, heatmap{nullptr};
  torch::nn::Linear visibility{nullptr};
};
TORCH_MODULE(DetectorNet);

/// Stacks each frame with its temporal neighbours plus two coordinate planes:
/// (F, 3*window + 2, H, W).
torch::Tensor temporal_window_input(const torch::Tensor& video, int window);

class DetectorModel {
 public:
  explicit DetectorModel(DetectorConfig config = {}, std::uint64_t seed = 0);

  const DetectorConfig& config() const { return config_; }
  bool trained() const { return trained_; }
  bool frozen() const { return frozen_; }
  void mark_trained() { trained_ = true; }
  /// Parameters stop requiring gradients and may no longer be trained.
  void freeze();

  /// Raw network output for a video (F,3,H,W) or a batch (B,F,3,H,W); the
  /// leading batch dims are flattened into N = B*F.
  DetectorOutput run(const torch::Tensor& video) const;
  /// Visibility-thresholded, zero-filled keypoints. Coordinates stay
  /// differentiable with respect to the input pixels.
  KeypointSequence detect(const torch::Tensor& video) const;
  /// Pooled backbone features per frame, (F, D).
  torch::Tensor features(const torch::Tensor& video) const;

  DetectorNet& net() { return net_; }
  const DetectorNet& net() const { return net_; }
  void to(torch::Dtype dtype) { net_->to(dtype); }
  std::uint64_t parameter_hash() const;

  void save(const std::filesystem::path& path) const;
  static DetectorModel load(const std::filesystem::path& path, const DetectorConfig& expected);
  static DetectorModel load(const std::filesystem::path& path);

 private:
  void check_input(const torch::Tensor& video) const;

  DetectorConfig config_;
  mutable DetectorNet net_{nullptr};  // forward() is non-const in libtorch
  bool trained_ = false;
  bool frozen_ = false;
};

struct DetectorTrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
  double blank_fraction = 0.05;  // extra all-black frames labelled "no hands"
  std::filesystem::path curve_path;  // per-epoch loss log; empty = none
  bool verbose = false;
};

/// Supervised regression on ground-truth keypoints (coordinate MSE on visible
/// joints + visibility cross-entropy). Returns a frozen model; with zero
/// epochs the model stays flagged untrained.
DetectorModel train_detector(std::span<const synth::SynthSample> samples,
                             const DetectorTrainConfig& train, const DetectorConfig& config = {});
DetectorModel train_detector(const std::filesystem::path& dataset_root,
                             const DetectorTrainConfig& train, const DetectorConfig& config = {});

/// Mean Euclidean error (normalized units) over ground-truth-visible joints.
double mean_joint_error(const DetectorModel& model, std::span<const synth::SynthSample> samples);

}  // namespace handvid::pose
