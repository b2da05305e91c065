#include "handvid/diffusion.hpp"

#include <cmath>
#include <string>

#include "handvid/error.hpp"

namespace handvid::diffusion {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  require(!betas_.empty(), "NoiseSchedule: tau must be >= 1");
  bool all_zero = true;
  for (double b : betas_) {
    if (!(b >= 0.0 && b < 1.0)) {
      throw ValidationError("NoiseSchedule: beta must lie in [0,1), got " + std::to_string(b));
    }
    all_zero = all_zero && b == 0.0;
  }
  alpha_bar_.resize(betas_.size() + 1);
  alpha_bar_[0] = 1.0;
  for (std::size_t t = 1; t <= betas_.size(); ++t) {
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - betas_[t - 1]);
    if (!all_zero && !(alpha_bar_[t] < alpha_bar_[t - 1])) {
      throw ValidationError("NoiseSchedule: alpha_bar must be strictly decreasing (beta_" +
                            std::to_string(t) + " = 0)");
    }
  }
}

NoiseSchedule NoiseSchedule::linear(double beta_start, double beta_end, int tau) {
  require(tau >= 1, "NoiseSchedule::linear: tau must be >= 1");
  std::vector<double> betas(tau);
  for (int i = 0; i < tau; ++i) {
    betas[i] = tau == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (tau - 1);
  }
  return NoiseSchedule(std::move(betas));
}

double NoiseSchedule::beta(int t) const {
  require(t >= 1 && t <= tau(), "NoiseSchedule: step out of range");
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > tau()) {
    throw ValidationError("step " + std::to_string(t) + " outside [0, " + std::to_string(tau()) + "]");
  }
  return alpha_bar_[t];
}

torch::Tensor NoiseSchedule::alpha_bar(const torch::Tensor& steps) const {
  auto s = steps.to(torch::kInt64);
  require((s >= 1).all().item<bool>() && (s <= tau()).all().item<bool>(),
          "noise step out of range [1, tau]");
  auto table = torch::tensor(alpha_bar_, torch::kFloat64);
  return table.index_select(0, s.flatten()).view(s.sizes());
}

namespace {

void check_step(int t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.tau()) {
    throw ValidationError("noise step " + std::to_string(t) + " outside [1, " +
                          std::to_string(schedule.tau()) + "]");
  }
}

// Per-leading-index coefficients broadcast over the remaining dims.
torch::Tensor broadcast_coeff(const torch::Tensor& per_item, const torch::Tensor& like) {
  std::vector<std::int64_t> shape(like.dim(), 1);
  shape[0] = per_item.size(0);
  return per_item.to(like.scalar_type()).view(shape);
}

}  // namespace

torch::Tensor add_noise(const torch::Tensor& z0, int t, const torch::Tensor& eps,
                        const NoiseSchedule& schedule) {
  check_step(t, schedule);
  require(z0.sizes() == eps.sizes(), "add_noise: noise shape must match latent shape");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& steps,
                        const torch::Tensor& eps, const NoiseSchedule& schedule) {
  require(z0.sizes() == eps.sizes(), "add_noise: noise shape must match latent shape");
  require(steps.dim() == 1 && steps.size(0) == z0.size(0), "add_noise: one step per batch item");
  auto ab = schedule.alpha_bar(steps);
  return broadcast_coeff(ab.sqrt(), z0) * z0 + broadcast_coeff((1.0 - ab).sqrt(), z0) * eps;
}

torch::Tensor recover_z0(const torch::Tensor& z_t, int t, const torch::Tensor& eps,
                         const NoiseSchedule& schedule) {
  check_step(t, schedule);
  require(z_t.sizes() == eps.sizes(), "recover_z0: noise shape must match latent shape");
  const double ab = schedule.alpha_bar(t);
  if (ab < kMinAlphaBar) {
    throw NumericalError("recover_z0: alpha_bar(" + std::to_string(t) + ") = " +
                         std::to_string(ab) + " is below 1e-8; the schedule destroys all signal");
  }
  return (z_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

torch::Tensor recover_z0(const torch::Tensor& z_t, const torch::Tensor& steps,
                         const torch::Tensor& eps, const NoiseSchedule& schedule) {
  require(z_t.sizes() == eps.sizes(), "recover_z0: noise shape must match latent shape");
  require(steps.dim() == 1 && steps.size(0) == z_t.size(0), "recover_z0: one step per batch item");
  auto ab = schedule.alpha_bar(steps);
  if ((ab < kMinAlphaBar).any().item<bool>()) {
    throw NumericalError("recover_z0: alpha_bar below 1e-8; the schedule destroys all signal");
  }
  return (z_t - broadcast_coeff((1.0 - ab).sqrt(), z_t) * eps) / broadcast_coeff(ab.sqrt(), z_t);
}

torch::Tensor sampler_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, int t,
                           int t_prev, const NoiseSchedule& schedule) {
  check_step(t, schedule);
  require(t_prev >= 0 && t_prev < t, "sampler_step: previous step must lie in [0, t)");
  if (!torch::isfinite(eps_hat).all().item<bool>()) {
    throw NumericalError("sampler_step: predicted noise contains non-finite values");
  }
  auto z0_hat = recover_z0(z_t, t, eps_hat, schedule);
  if (t_prev == 0) return z0_hat;
  const double ab_prev = schedule.alpha_bar(t_prev);
  return std::sqrt(ab_prev) * z0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
}

std::vector<int> strided_steps(int tau, int steps) {
  require(steps >= 1 && steps <= tau, "strided_steps: need 1 <= steps <= tau");
  if (steps == 1) return {tau};
  std::vector<int> out(steps);
  for (int k = 0; k < steps; ++k) {
    const double pos = 1.0 + static_cast<double>(tau - 1) * (steps - 1 - k) / (steps - 1);
    out[k] = static_cast<int>(std::lround(pos));
  }
  return out;
}

torch::Tensor sample(const NoisePredictor& predictor, const torch::Tensor& init,
                     const NoiseSchedule& schedule, int steps) {
  const auto order = strided_steps(schedule.tau(), steps);
  auto z = init;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int t = order[k];
    const int t_prev = k + 1 < order.size() ? order[k + 1] : 0;
    auto eps_hat = predictor(z, t);
    require(eps_hat.sizes() == z.sizes(), "sample: predictor output shape mismatch");
    z = sampler_step(z, eps_hat, t, t_prev, schedule);
  }
  return z;
}

}  // namespace handvid::diffusion
