#pragma once

#include "liverdiff/dataset.hpp"
#include "liverdiff/diffusion.hpp"
#include "liverdiff/ldm_train.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace liverdiff {

struct SamplerConfig {
  int inference_steps = 500;
  double guidance_scale = 1.2;
  double eta = 0.0;
  std::uint64_t seed = 0;
};

/// Classifier-free guidance, eps_u + s (eps_c - eps_u), evaluated as
/// s eps_c + (1 - s) eps_u so that s = 1 and s = 0 return an input exactly.
template <typename DerivedC, typename DerivedU>
auto cfg_combine(const Eigen::MatrixBase<DerivedC>& eps_cond, const Eigen::MatrixBase<DerivedU>& eps_uncond, double s) {
  using S = typename DerivedC::Scalar;
  if (eps_cond.rows() != eps_uncond.rows() || eps_cond.cols() != eps_uncond.cols())
    throw std::invalid_argument("cfg_combine: shape mismatch");
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> out = static_cast<S>(s) * eps_cond + static_cast<S>(1.0 - s) * eps_uncond;
  return out;
}

/// sigma_t of the DDIM update for stochasticity eta.
double ddim_sigma(const NoiseSchedule& schedule, int t, int t_prev, double eta);

/// One DDIM update from t to t_prev (t_prev = 0 denotes the clean latent).
/// `noise` is required only when eta > 0.
template <typename DerivedZ, typename DerivedE>
auto ddim_step(const Eigen::MatrixBase<DerivedZ>& z_t, int t, int t_prev, const Eigen::MatrixBase<DerivedE>& eps_hat,
               const NoiseSchedule& schedule, double eta, std::mt19937_64* noise = nullptr) {
  using S = typename DerivedZ::Scalar;
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  if (!(t > t_prev && t_prev >= 0)) throw std::invalid_argument("ddim_step: need t > t_prev >= 0");
  const double ab_t = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const double sigma = ddim_sigma(schedule, t, t_prev, eta);
  const M z0 = (z_t - static_cast<S>(std::sqrt(1.0 - ab_t)) * eps_hat) / static_cast<S>(std::sqrt(ab_t));
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  M out = static_cast<S>(std::sqrt(ab_prev)) * z0 + static_cast<S>(dir) * eps_hat;
  if (sigma > 0.0) {
    if (!noise) throw std::invalid_argument("ddim_step: eta > 0 needs a noise source");
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += static_cast<S>(sigma * n(*noise));
  }
  return out;
}

/// Evenly spaced DDIM timesteps T-1, T-1-k, ... with k = floor(T / n).
std::vector<int> ddim_timesteps(int T, int inference_steps);

/// Latent trajectory of a batch from initial noise to t = 0. Exposed for tests.
nn::FeatureMap<float> ddim_sample_latents(LdmModel& model, const std::vector<ConditioningInput>& conds,
                                          nn::FeatureMap<float> z, const SamplerConfig& config);

/// Generates one image per (condition, seed) pair: initial latents are drawn
/// from N(0, I) with each item's own seed, denoised by DDIM with guidance,
/// decoded, and clamped to [-1, 1].
std::vector<Plane> sample_batch(LdmModel& model, const std::vector<ConditioningInput>& conds,
                                const std::vector<std::uint64_t>& seeds, const SamplerConfig& config);

Plane sample(LdmModel& model, const ConditioningInput& cond, const SamplerConfig& config);

/// Same trajectory without the unconditional branch.
Plane sample_conditional_only(LdmModel& model, const ConditioningInput& cond, const SamplerConfig& config);

struct Provenance {
  std::string file;  ///< image filename within the set directory
  int fold_id = 0;
  ModelVariant variant = ModelVariant::semantic;
  std::uint64_t seed = 0;
  std::string condition_ref;  ///< source image id for semantic maps, "label:<0|1>" otherwise
  std::string source_patient;  ///< empty for class-to-image items
  ClassLabel intended_label = ClassLabel::healthy;
};

struct SyntheticSet {
  int fold_id = 0;
  ModelVariant variant = ModelVariant::semantic;
  std::vector<Plane> images;  ///< [-1, 1]
  std::vector<Provenance> provenance;
};

/// One semantic-map source drawn from a fold's training patients.
struct MapSource {
  SemanticMap map;
  std::string patient_id;
  ClassLabel label = ClassLabel::healthy;
};

struct GenerateOptions {
  int n = 2000;
  double distortion_strength = 0.02;
  int batch_size = 8;
  SamplerConfig sampler;
};

/// Per-fold synthetic set. Semantic models draw distorted maps from
/// `map_sources` (labels inherited from the source patient); class models use
/// ceil(n/2) unhealthy then floor(n/2) healthy labels, interleaved.
SyntheticSet generate_set(LdmModel& model, int fold_id, const std::vector<MapSource>& map_sources,
                          const GenerateOptions& options);

/// Fold-provenance audit: every item was made for `fold_id` and every source
/// patient is a training patient of that fold. Returns the violations.
std::vector<std::string> audit_synthetic_set(const SyntheticSet& set, const FoldAssignment& folds, int fold_id);

/// Writes `<dir>/<file>.png` per image and `<dir>/provenance.csv`.
void save_synthetic_set(const SyntheticSet& set, const std::filesystem::path& dir);
SyntheticSet load_synthetic_set(const std::filesystem::path& dir);

}  // namespace liverdiff
