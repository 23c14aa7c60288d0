#pragma once

#include "liverdiff/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace liverdiff {

/// Discrete noise schedule over timesteps t = 1..T. alpha_bar(0) is 1 (clean).
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0;
  double beta_end = 0;
  Eigen::VectorXd betas;       ///< betas(t - 1) = beta_t
  Eigen::VectorXd alpha_bars;  ///< alpha_bars(t - 1) = prod_{s<=t} (1 - beta_s)

  [[nodiscard]] double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > T) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0,T]");
    return alpha_bars(t - 1);
  }
  [[nodiscard]] double snr(int t) const {
    const double ab = alpha_bar(t);
    return ab / (1.0 - ab);
  }
};

inline constexpr int kDefaultTimesteps = 1000;
inline constexpr double kDefaultBetaStart = 0.0015;
inline constexpr double kDefaultBetaEnd = 0.0195;

/// Linear betas from beta_start to beta_end; alpha_bars by cumulative product.
NoiseSchedule build_schedule(int T = kDefaultTimesteps, double beta_start = kDefaultBetaStart,
                             double beta_end = kDefaultBetaEnd);

/// Closed-form marginal sqrt(ab_t) z + sqrt(1 - ab_t) eps.
template <typename DerivedZ, typename DerivedE>
auto forward_diffuse(const Eigen::MatrixBase<DerivedZ>& z, int t, const Eigen::MatrixBase<DerivedE>& eps,
                     const NoiseSchedule& schedule) {
  using S = typename DerivedZ::Scalar;
  if (z.rows() != eps.rows() || z.cols() != eps.cols())
    throw std::invalid_argument("forward_diffuse: eps shape differs from z");
  if (t < 1 || t > schedule.T) throw std::out_of_range("forward_diffuse: t outside [1,T]");
  const double ab = schedule.alpha_bar(t);
  using Out = Eigen::Matrix<S, DerivedZ::RowsAtCompileTime, DerivedZ::ColsAtCompileTime>;
  Out out = static_cast<S>(std::sqrt(ab)) * z + static_cast<S>(std::sqrt(1.0 - ab)) * eps;
  return out;
}

/// Batched marginal with one timestep per sample.
template <typename S>
nn::FeatureMap<S> forward_diffuse(const nn::FeatureMap<S>& z, const std::vector<int>& t,
                                  const nn::FeatureMap<S>& eps, const NoiseSchedule& schedule) {
  if (!z.same_shape(eps)) throw std::invalid_argument("forward_diffuse: eps shape differs from z");
  if (static_cast<int>(t.size()) != z.batch) throw std::invalid_argument("forward_diffuse: one timestep per sample");
  nn::FeatureMap<S> out = z;
  for (int b = 0; b < z.batch; ++b) out.sample(b) = forward_diffuse(z.sample(b), t[b], eps.sample(b), schedule);
  return out;
}

template <typename S>
nn::FeatureMap<S> standard_normal_like(int channels, int batch, int height, int width, std::mt19937_64& rng) {
  nn::FeatureMap<S> eps(channels, batch, height, width);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < eps.data.size(); ++i) eps.data.data()[i] = static_cast<S>(n(rng));
  return eps;
}

/// Interface every denoiser satisfies: noise prediction and its backward pass.
template <typename M, typename S, typename Cond>
concept NoisePredictor = requires(M m, const nn::FeatureMap<S>& z, const std::vector<int>& t, const Cond& c) {
  { m.predict_noise(z, t, c) } -> std::same_as<nn::FeatureMap<S>>;
  m.backward(z);
};

template <typename S>
struct LossResult {
  S loss = 0;
  std::vector<int> timesteps;
  nn::FeatureMap<S> eps;
};

/// Denoising objective on already-encoded latents: draws t ~ U{1..T} and
/// eps ~ N(0, I) per sample, returns mean ||eps - eps_theta(z_t, t, c)||^2 per
/// element. With `backprop` the model receives dL/dprediction.
template <typename S, typename Model, typename Cond>
  requires NoisePredictor<Model, S, Cond>
LossResult<S> ldm_loss(const nn::FeatureMap<S>& latents, const Cond& cond, Model& model,
                       const NoiseSchedule& schedule, std::mt19937_64& rng, bool backprop) {
  if (latents.batch == 0) throw std::invalid_argument("ldm_loss: empty batch");
  LossResult<S> r;
  std::uniform_int_distribution<int> pick_t(1, schedule.T);
  r.timesteps.resize(static_cast<std::size_t>(latents.batch));
  for (auto& t : r.timesteps) t = pick_t(rng);
  r.eps = standard_normal_like<S>(latents.channels(), latents.batch, latents.height, latents.width, rng);
  const nn::FeatureMap<S> z_t = forward_diffuse(latents, r.timesteps, r.eps, schedule);
  const nn::FeatureMap<S> pred = model.predict_noise(z_t, r.timesteps, cond);
  const nn::Mat<S> diff = pred.data - r.eps.data;
  const auto n = static_cast<S>(diff.size());
  r.loss = diff.squaredNorm() / n;
  if (!std::isfinite(static_cast<double>(r.loss))) throw std::runtime_error("ldm_loss: non-finite loss (training diverged)");
  if (backprop) {
    nn::FeatureMap<S> grad(diff * (S(2) / n), pred.batch, pred.height, pred.width);
    model.backward(grad);
  }
  return r;
}

}  // namespace liverdiff
