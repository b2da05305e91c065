#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>
#include <utility>

namespace handvid::pose {

// Skeleton topology: 21 joints per hand in the common landmark order
// (wrist, then thumb/index/middle/ring/pinky, base to tip), two hand slots.
inline constexpr int kJointsPerHand = 21;
inline constexpr int kMaxHands = 2;
inline constexpr int kDefaultJoints = kJointsPerHand * kMaxHands;
inline constexpr int kWrist = 0;
inline constexpr int kFingers = 5;

/// Index of joint `k` (0 = base, 3 = tip) of finger `f` (0 = thumb) within one hand.
constexpr int finger_joint(int f, int k) { return 1 + 4 * f + k; }
constexpr int hand_joint(int hand, int joint) { return hand * kJointsPerHand + joint; }

/// Parent/child pairs of the 20 bones of one hand.
const std::array<std::pair<int, int>, 20>& hand_bones();

/// Descriptor embedded into detector checkpoints.
std::string topology_descriptor(int joints);

/// Per-frame 2-D joint positions, normalized by frame size to [0,1], plus
/// visibility flags. Invisible joints carry coordinates exactly (0, 0).
struct KeypointSequence {
  torch::Tensor coords;      // (F, J, 2): x = column / W, y = row / H
  torch::Tensor visibility;  // (F, J), values in {0, 1}, same dtype as coords

  std::int64_t frames() const { return coords.size(0); }
  std::int64_t joints() const { return coords.size(1); }

  static KeypointSequence zeros(std::int64_t frames, std::int64_t joints,
                                torch::Dtype dtype = torch::kFloat64);
  KeypointSequence slice_frames(std::int64_t begin, std::int64_t end) const;
  /// Checks shapes, {0,1} visibility, [0,1] visible coordinates, zeroed missing joints.
  void validate() const;
};

/// Sets coordinates of invisible joints to exactly 0 and leaves everything
/// else untouched. Differentiable with respect to visible coordinates.
KeypointSequence zero_fill_missing(const KeypointSequence& sequence);

}  // namespace handvid::pose
