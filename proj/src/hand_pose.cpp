#include "handvid/hand_pose.hpp"

#include "handvid/error.hpp"

namespace handvid::pose {

const std::array<std::pair<int, int>, 20>& hand_bones() {
  static const std::array<std::pair<int, int>, 20> bones = [] {
    std::array<std::pair<int, int>, 20> b{};
    int n = 0;
    for (int f = 0; f < kFingers; ++f) {
      b[n++] = {kWrist, finger_joint(f, 0)};
      for (int k = 0; k < 3; ++k) b[n++] = {finger_joint(f, k), finger_joint(f, k + 1)};
    }
    return b;
  }();
  return bones;
}

std::string topology_descriptor(int joints) {
  return "landmark21x" + std::to_string(joints / kJointsPerHand) + ":J=" + std::to_string(joints);
}

KeypointSequence KeypointSequence::zeros(std::int64_t frames, std::int64_t joints,
                                         torch::Dtype dtype) {
  auto options = torch::TensorOptions().dtype(dtype);
  return {torch::zeros({frames, joints, 2}, options), torch::zeros({frames, joints}, options)};
}

KeypointSequence KeypointSequence::slice_frames(std::int64_t begin, std::int64_t end) const {
  return {coords.slice(0, begin, end), visibility.slice(0, begin, end)};
}

void KeypointSequence::validate() const {
  require(coords.defined() && visibility.defined(), "KeypointSequence: undefined tensors");
  require(coords.dim() == 3 && coords.size(2) == 2, "KeypointSequence: coords must be (F,J,2)");
  require(visibility.dim() == 2 && visibility.size(0) == coords.size(0) &&
              visibility.size(1) == coords.size(1),
          "KeypointSequence: visibility must be (F,J)");
  auto vis = visibility.detach();
  require(((vis == 0) | (vis == 1)).all().item<bool>(),
          "KeypointSequence: visibility must be 0 or 1");
  auto c = coords.detach();
  auto visible = vis.unsqueeze(-1).expand_as(c) > 0.5;
  require((c.masked_select(visible) >= 0).all().item<bool>() &&
              (c.masked_select(visible) <= 1).all().item<bool>(),
          "KeypointSequence: visible coordinates must lie in [0,1]");
  require((c.masked_select(~visible) == 0).all().item<bool>(),
          "KeypointSequence: missing joints must have zero coordinates");
}

KeypointSequence zero_fill_missing(const KeypointSequence& sequence) {
  require(sequence.coords.dim() >= 3 && sequence.coords.size(-1) == 2 &&
              sequence.visibility.dim() == sequence.coords.dim() - 1,
          "zero_fill_missing: malformed sequence");
  auto keep = (sequence.visibility.detach() > 0.5).unsqueeze(-1);
  // where() rather than multiplication: keeps NaN-free exact zeros and
  // passes gradients through untouched for visible joints.
  auto coords = torch::where(keep, sequence.coords, torch::zeros_like(sequence.coords));
  return {coords, sequence.visibility};
}

}  // namespace handvid::pose
