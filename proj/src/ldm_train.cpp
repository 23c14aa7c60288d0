#include "liverdiff/ldm_train.hpp"

#include "liverdiff/checkpoint.hpp"
#include "liverdiff/hash.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace liverdiff {

TrainConfig TrainConfig::clinical() { return TrainConfig{}; }

TrainConfig TrainConfig::phantom() {
  TrainConfig c;
  c.steps = 2000;
  c.batch_size = 16;
  c.learning_rate = 2.4e-4 * 4;
  c.warmup_steps = 100;
  c.full_width = false;
  c.image_side = 64;
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"warmup_steps", c.warmup_steps},
          {"weight_decay", c.weight_decay},
          {"p_uncond", c.p_uncond},
          {"timesteps", c.timesteps},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"full_width", c.full_width},
          {"image_side", c.image_side},
          {"crop_scale", {c.crop_range.scale_lo, c.crop_range.scale_hi}},
          {"crop_ratio", {c.crop_range.ratio_lo, c.crop_range.ratio_hi}},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw std::runtime_error(std::string("train config: missing field '") + key + "'");
    return j.at(key);
  };
  c.steps = field("steps");
  c.batch_size = field("batch_size");
  c.learning_rate = field("learning_rate");
  c.warmup_steps = field("warmup_steps");
  c.weight_decay = field("weight_decay");
  c.p_uncond = field("p_uncond");
  c.timesteps = field("timesteps");
  c.beta_start = field("beta_start");
  c.beta_end = field("beta_end");
  c.full_width = field("full_width");
  c.image_side = field("image_side");
  c.crop_range.scale_lo = field("crop_scale").at(0);
  c.crop_range.scale_hi = field("crop_scale").at(1);
  c.crop_range.ratio_lo = field("crop_ratio").at(0);
  c.crop_range.ratio_hi = field("crop_ratio").at(1);
  c.seed = field("seed");
  if (c.steps < 1 || c.batch_size < 1) throw std::runtime_error("train config: steps and batch_size must be positive");
  if (c.p_uncond < 0 || c.p_uncond > 1) throw std::runtime_error("train config: p_uncond outside [0,1]");
  return c;
}

LdmBatch make_ldm_batch(const LdmModel& model, const std::vector<TrainingExample>& examples,
                        const std::vector<std::size_t>& picks, std::mt19937_64& rng, double p_uncond) {
  std::vector<Plane> crops;
  std::vector<ConditioningInput> conds;
  crops.reserve(picks.size());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t i : picks) {
    const TrainingExample& ex = examples.at(i);
    const ImageTensor crop = random_resized_crop(ex.prepared, model.config.image_side, model.config.crop_range, rng());
    if (coin(rng) < p_uncond) {
      conds.emplace_back(NullCondition{});
    } else if (model.variant == ModelVariant::semantic) {
      conds.emplace_back(make_semantic_map(crop, model.denoiser.config().semantic_classes, ex.image_id));
    } else {
      conds.emplace_back(ex.label);
    }
    crops.push_back(crop.gray());
  }
  std::vector<const Plane*> ptrs;
  for (const auto& c : crops) ptrs.push_back(&c);
  return {model.autoencoder->encode(ptrs), model.denoiser.encode_conditions(conds)};
}

LdmModel train_ldm(const TrainConfig& config, int fold_id, ModelVariant variant,
                   const std::vector<TrainingExample>& examples, const TrainProgress& progress) {
  if (examples.empty()) throw std::invalid_argument("train_ldm: no training images for fold " + std::to_string(fold_id));
  LdmModel model;
  model.variant = variant;
  model.fold_id = fold_id;
  model.config = config;
  model.schedule = build_schedule(config.timesteps, config.beta_start, config.beta_end);

  std::set<std::string> patients;
  std::vector<Plane> resized;
  resized.reserve(examples.size());
  for (const auto& ex : examples) {
    patients.insert(ex.patient_id);
    resized.push_back(random_resized_crop(ex.prepared, config.image_side, CropRange{1, 1, 1, 1}, 0).gray());
  }
  model.training_patients.assign(patients.begin(), patients.end());

  const LatentSpec spec = latent_spec_for(variant, config.image_side);
  std::vector<const Plane*> ptrs;
  for (const auto& r : resized) ptrs.push_back(&r);
  model.autoencoder = std::make_shared<PatchPcaAutoencoder>(
      PatchPcaAutoencoder::fit(ptrs, spec.downsampling_factor, spec.channels));

  model.denoiser = Denoiser(denoiser_preset(variant, config.image_side, config.full_width), derive_seed(config.seed, "ldm-init-fold" + std::to_string(fold_id)));
  auto params = model.denoiser.parameters();
  AdamW<float> opt(params, {.weight_decay = config.weight_decay});
  const WarmupCosine lr = config.lr_schedule();

  std::mt19937_64 rng(derive_seed(config.seed, "ldm-batches-fold" + std::to_string(fold_id)));
  std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
  model.loss_curve.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> picks(static_cast<std::size_t>(config.batch_size));
    for (auto& p : picks) p = pick(rng);
    const LdmBatch batch = make_ldm_batch(model, examples, picks, rng, config.p_uncond);
    nn::zero_grads(params);
    const auto r = ldm_loss(batch.latents, batch.cond, model.denoiser, model.schedule, rng, /*backprop=*/true);
    opt.step(lr(step));
    model.loss_curve.push_back(static_cast<double>(r.loss));
    if (progress) progress(step, static_cast<double>(r.loss));
  }
  return model;
}

void save_checkpoint(const LdmModel& model, const std::filesystem::path& path) {
  Container c;
  const auto& dc = model.denoiser.config();
  c.meta["format"] = "liverdiff-ldm";
  c.meta["variant"] = to_string(model.variant);
  c.meta["fold_id"] = model.fold_id;
  c.meta["schedule"] = {{"T", model.schedule.T}, {"beta_start", model.schedule.beta_start},
                        {"beta_end", model.schedule.beta_end}, {"kind", "linear"}};
  c.meta["latent"] = {{"channels", dc.latent.channels}, {"height", dc.latent.height},
                      {"width", dc.latent.width}, {"downsampling_factor", dc.latent.downsampling_factor}};
  c.meta["denoiser"] = {{"width", dc.width}, {"time_dim", dc.time_dim}, {"context_dim", dc.context_dim},
                        {"attn_dim", dc.attn_dim}, {"semantic_classes", dc.semantic_classes}};
  c.meta["train_config"] = to_json(model.config);
  c.meta["seed"] = model.config.seed;
  c.meta["loss_curve"] = model.loss_curve;
  c.meta["training_patients"] = model.training_patients;
  model.autoencoder->save(c, "autoencoder");
  for (const auto* p : model.denoiser.parameters()) c.blobs["denoiser." + p->name] = p->value;
  write_container(path, c);
}

LdmModel load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.meta.value("format", "") != "liverdiff-ldm") throw std::runtime_error(path.string() + " is not an LDM checkpoint");
  LdmModel model;
  model.variant = variant_from_string(c.meta.at("variant"));
  model.fold_id = c.meta.at("fold_id");
  const auto& s = c.meta.at("schedule");
  model.schedule = build_schedule(s.at("T"), s.at("beta_start"), s.at("beta_end"));
  model.config = train_config_from_json(c.meta.at("train_config"));
  model.loss_curve = c.meta.at("loss_curve").get<std::vector<double>>();
  model.training_patients = c.meta.at("training_patients").get<std::vector<std::string>>();
  model.autoencoder = std::make_shared<PatchPcaAutoencoder>(PatchPcaAutoencoder::load(c, "autoencoder"));

  DenoiserConfig dc;
  dc.variant = model.variant;
  const auto& l = c.meta.at("latent");
  dc.latent = {l.at("channels"), l.at("height"), l.at("width"), l.at("downsampling_factor")};
  const auto& d = c.meta.at("denoiser");
  dc.width = d.at("width");
  dc.time_dim = d.at("time_dim");
  dc.context_dim = d.at("context_dim");
  dc.attn_dim = d.at("attn_dim");
  dc.semantic_classes = d.at("semantic_classes");
  model.denoiser = Denoiser(dc, 0);
  for (auto* p : model.denoiser.parameters()) {
    const auto it = c.blobs.find("denoiser." + p->name);
    if (it == c.blobs.end()) throw std::runtime_error("checkpoint lacks parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw std::runtime_error("checkpoint parameter " + p->name + " has the wrong shape");
    p->value = it->second;
  }
  return model;
}

}  // namespace liverdiff
