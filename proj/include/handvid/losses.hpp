#pragma once

#include <torch/torch.h>

#include "handvid/hand_pose.hpp"
#include "handvid/motion_area.hpp"

namespace handvid::losses {

struct LossWeights {
  double alpha = 0.1;  // stage-1 mIoU weight
  double eta = 0.1;    // stage-2 hand refinement weight

  void validate() const;
};

/// Mean squared error over all elements.
torch::Tensor noise_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat);

/// 1 - mean over frames of soft IoU. Inputs (L,H,W) or (B,L,H,W); `gen` may be
/// soft, `train` binary. A frame where both masks are empty has IoU 1.
torch::Tensor miou_loss(const torch::Tensor& gen, const torch::Tensor& train);
double miou_loss(const motion::MaskVideo& gen, const motion::MaskVideo& train);

/// Mean over frames of (1/J) * squared Frobenius distance, counting only
/// joints visible in both sequences. Coordinates (..., L, J, 2), visibility
/// (..., L, J). The 1/J normalizer uses the full joint count.
torch::Tensor hand_refinement_loss(const pose::KeypointSequence& gen,
                                   const pose::KeypointSequence& train);

template <typename T>
T stage1_loss(const T& noise, const T& miou, const LossWeights& w) {
  return noise + w.alpha * miou;
}

template <typename T>
T stage2_loss(const T& noise, const T& hrl, const LossWeights& w) {
  return noise + w.eta * hrl;
}

}  // namespace handvid::losses
