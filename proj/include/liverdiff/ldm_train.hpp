#pragma once

#include "liverdiff/autoencoder.hpp"
#include "liverdiff/dataset.hpp"
#include "liverdiff/denoiser.hpp"
#include "liverdiff/diffusion.hpp"
#include "liverdiff/optim.hpp"
#include "liverdiff/preprocess.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace liverdiff {

/// LDM training hyperparameters. Serialized with every field explicit;
/// from_json rejects documents with missing fields.
struct TrainConfig {
  int steps = 20000;
  int batch_size = 32;
  double learning_rate = 2.4e-4;
  int warmup_steps = 100;
  double weight_decay = 0.01;
  double p_uncond = 0.1;
  int timesteps = kDefaultTimesteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  bool full_width = true;  ///< clinical-size denoiser preset
  int image_side = 256;
  CropRange crop_range;
  std::uint64_t seed = 0;

  static TrainConfig clinical();
  static TrainConfig phantom();

  [[nodiscard]] WarmupCosine lr_schedule() const { return {learning_rate, warmup_steps, steps}; }
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// One preprocessed (ROI-cropped, center-cropped, [-1,1]) training image.
struct TrainingExample {
  std::string image_id;
  std::string patient_id;
  ClassLabel label = ClassLabel::healthy;
  ImageTensor prepared;
};

/// A trained latent diffusion model with everything needed to sample from it.
struct LdmModel {
  ModelVariant variant = ModelVariant::semantic;
  int fold_id = 0;
  NoiseSchedule schedule;
  Denoiser denoiser;
  std::shared_ptr<const Autoencoder> autoencoder;
  TrainConfig config;
  std::vector<double> loss_curve;
  std::vector<std::string> training_patients;  ///< leakage audit trail
};

using TrainProgress = std::function<void(int step, double loss)>;

/// Fits the frozen autoencoder on the fold's training images, then trains the
/// denoiser from scratch with AdamW on a warm-up + cosine schedule, dropping the
/// condition to Null with probability p_uncond.
LdmModel train_ldm(const TrainConfig& config, int fold_id, ModelVariant variant,
                   const std::vector<TrainingExample>& examples, const TrainProgress& progress = {});

/// Builds the model input for one batch: random resized crops, their
/// conditions (semantic maps or patient labels), and latents.
struct LdmBatch {
  nn::FeatureMap<float> latents;
  EncodedCondition<float> cond;
};
LdmBatch make_ldm_batch(const LdmModel& model, const std::vector<TrainingExample>& examples,
                        const std::vector<std::size_t>& picks, std::mt19937_64& rng, double p_uncond);

void save_checkpoint(const LdmModel& model, const std::filesystem::path& path);
LdmModel load_checkpoint(const std::filesystem::path& path);

}  // namespace liverdiff
