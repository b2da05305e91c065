#include "handvid/losses.hpp"

#include "handvid/error.hpp"

namespace handvid::losses {

void LossWeights::validate() const {
  require(alpha >= 0 && eta >= 0, "LossWeights: alpha and eta must be non-negative");
}

torch::Tensor noise_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat) {
  require(eps.sizes() == eps_hat.sizes(), "noise_loss: shape mismatch between eps and eps_hat");
  return (eps - eps_hat).pow(2).mean();
}

torch::Tensor miou_loss(const torch::Tensor& gen, const torch::Tensor& train) {
  require(gen.sizes() == train.sizes(), "miou_loss: mask shapes differ");
  require(gen.dim() == 3 || gen.dim() == 4, "miou_loss: expects (L,H,W) or (B,L,H,W)");
  auto t = train.to(gen.scalar_type());
  auto inter = (gen * t).sum({-2, -1});
  auto uni = (gen + t - gen * t).sum({-2, -1});
  auto nonempty = uni > 0;
  auto safe = torch::where(nonempty, uni, torch::ones_like(uni));
  auto iou = torch::where(nonempty, inter / safe, torch::ones_like(uni));
  return 1.0 - iou.mean();
}

double miou_loss(const motion::MaskVideo& gen, const motion::MaskVideo& train) {
  require(train.binary, "miou_loss: training mask must be binary");
  if (gen.values.sizes() != train.values.sizes()) {
    throw ValidationError("miou_loss: mask shapes differ");
  }
  return miou_loss(gen.values, train.values).item<double>();
}

torch::Tensor hand_refinement_loss(const pose::KeypointSequence& gen,
                                   const pose::KeypointSequence& train) {
  if (gen.coords.sizes() != train.coords.sizes()) {
    throw ValidationError("hand_refinement_loss: sequences differ in length or joint count");
  }
  require(gen.coords.size(-1) == 2 && gen.visibility.sizes() == train.visibility.sizes(),
          "hand_refinement_loss: malformed keypoint sequences");
  const auto joints = static_cast<double>(gen.coords.size(-2));
  auto active = (gen.visibility.detach() > 0.5) & (train.visibility.detach() > 0.5);
  auto diff2 = (gen.coords - train.coords.to(gen.coords.scalar_type())).pow(2).sum(-1);
  auto masked = torch::where(active, diff2, torch::zeros_like(diff2));
  auto per_frame = masked.sum(-1) / joints;
  return per_frame.mean();
}

}  // namespace handvid::losses
