#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

namespace handvid::diffusion {

/// Noise coefficients beta_1..beta_tau and their cumulative products
/// alpha_bar_t = prod_{i<=t} (1 - beta_i). Steps are 1-based; alpha_bar(0) == 1.
class NoiseSchedule {
 public:
  /// Requires beta_i in [0,1) and alpha_bar strictly decreasing, except for
  /// the all-zero (identity) schedule which is accepted as a whole.
  explicit NoiseSchedule(std::vector<double> betas);

  static NoiseSchedule linear(double beta_start, double beta_end, int tau);
  static NoiseSchedule identity(int tau) { return NoiseSchedule(std::vector<double>(tau, 0.0)); }

  int tau() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha_bar(int t) const;
  const std::vector<double>& betas() const { return betas_; }

  /// alpha_bar(t) for each entry of an int64 step tensor, as float64.
  torch::Tensor alpha_bar(const torch::Tensor& steps) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bar_;  // index 0 holds alpha_bar(0) = 1
};

inline constexpr double kMinAlphaBar = 1e-8;

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
torch::Tensor add_noise(const torch::Tensor& z0, int t, const torch::Tensor& eps,
                        const NoiseSchedule& schedule);
/// Batched form: `steps` is int64 of shape (B,), one step per leading index.
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& steps,
                        const torch::Tensor& eps, const NoiseSchedule& schedule);

/// z'_0 = (z_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t).
/// Throws NumericalError when alpha_bar_t < kMinAlphaBar.
torch::Tensor recover_z0(const torch::Tensor& z_t, int t, const torch::Tensor& eps,
                         const NoiseSchedule& schedule);
torch::Tensor recover_z0(const torch::Tensor& z_t, const torch::Tensor& steps,
                         const torch::Tensor& eps, const NoiseSchedule& schedule);

/// Deterministic first-order update from step t to `t_prev` (< t):
/// re-noise the clean estimate with the predicted noise at alpha_bar(t_prev).
torch::Tensor sampler_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, int t,
                           int t_prev, const NoiseSchedule& schedule);
inline torch::Tensor sampler_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, int t,
                                  const NoiseSchedule& schedule) {
  return sampler_step(z_t, eps_hat, t, t - 1, schedule);
}

/// Descending visiting order of `steps` steps out of tau: uniform integer
/// spacing that includes tau and (for steps >= 2) step 1.
std::vector<int> strided_steps(int tau, int steps);

/// Predicts the noise in `z_t` at step t. Conditioning (text, mask channel,
/// context frame) is bound inside the callable.
using NoisePredictor = std::function<torch::Tensor(const torch::Tensor& z_t, int t)>;

/// Runs the sampler from `init` (a latent at step tau) down to a clean latent.
torch::Tensor sample(const NoisePredictor& predictor, const torch::Tensor& init,
                     const NoiseSchedule& schedule, int steps);

}  // namespace handvid::diffusion
