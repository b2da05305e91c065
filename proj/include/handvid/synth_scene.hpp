#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "handvid/hand_pose.hpp"
#include "handvid/motion_area.hpp"

namespace handvid::synth {

/// Spatial downsampling of the latent codec; frame sizes must be multiples of it.
inline constexpr int kCodecDownsample = 4;

enum class Action { still, move_left, move_right, lift, pinch, wave };

const std::vector<Action>& all_actions();
std::string_view action_name(Action action);
Action parse_action(std::string_view name);
/// Fixed prompt template per action; the mapping is one-to-one.
std::string_view action_prompt(Action action);
Action action_from_prompt(std::string_view prompt);

/// Seeded 64-bit engine with distribution code written out explicitly, so
/// sequences do not depend on the standard library's distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int frames = 16;  // L + 1, including the context frame
  int height = 64;
  int width = 64;
  Action action = Action::move_left;
  int n_hands = 1;
  int clutter_level = 3;

  void validate() const;
};

struct Vec2 {
  double x = 0;
  double y = 0;
};

/// Pose of one hand. Positions are normalized image coordinates (y down);
/// rotation 0 points the fingers up.
struct HandPose {
  Vec2 root;
  double scale = 0.16;
  double rotation = 0;
  double pinch = 0;  // 0 open, 1 thumb and index tips meet
  bool mirrored = false;
};

using HandJoints = std::array<Vec2, pose::kJointsPerHand>;
using ScenePose = std::vector<HandPose>;  // one entry per present hand

HandJoints hand_joints(const HandPose& pose);

struct TrajectoryOptions {
  double velocity_cap = 0.05;  // max per-joint displacement per frame, normalized units
};

/// Poses for every frame. The hands are placed randomly (from `rng`) so the
/// whole trajectory stays inside the frame; the action then drives the motion.
std::vector<ScenePose> action_trajectory(Action action, int frames, int n_hands, Rng& rng,
                                         const TrajectoryOptions& options = {});

/// Largest displacement of any joint between consecutive frames.
double max_joint_step(const std::vector<ScenePose>& trajectory);

struct SynthSample {
  SceneSpec spec;
  std::string prompt;
  torch::Tensor video;               // (F, 3, H, W) float32, 8-bit levels
  pose::KeypointSequence keypoints;  // (F, 42, 2) float64, 6-decimal values
  motion::MaskVideo frame_masks;     // per-frame binary hull masks

  const torch::Tensor context() const { return video[0]; }
  motion::MaskVideo union_mask() const { return motion::union_over_frames(frame_masks); }
};

SynthSample generate_sample(const SceneSpec& spec);

/// Pose sequence -> keypoints at 6-decimal precision; absent slots and
/// out-of-frame joints are invisible with zero coordinates.
pose::KeypointSequence keypoints_from_trajectory(const std::vector<ScenePose>& trajectory);

}  // namespace handvid::synth
