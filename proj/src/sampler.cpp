#include "liverdiff/sampler.hpp"

#include "liverdiff/hash.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace liverdiff {

double ddim_sigma(const NoiseSchedule& schedule, int t, int t_prev, double eta) {
  if (eta < 0.0) throw std::invalid_argument("eta must be non-negative");
  if (eta == 0.0) return 0.0;
  const double ab_t = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
}

std::vector<int> ddim_timesteps(int T, int inference_steps) {
  if (inference_steps < 1 || inference_steps > T)
    throw std::invalid_argument("inference_steps must be in [1, T]");
  const int stride = T / inference_steps;
  if (T - 1 - (inference_steps - 1) * stride < 1)
    throw std::invalid_argument("inference_steps too large for T: the subsequence would reach t = 0");
  std::vector<int> ts(static_cast<std::size_t>(inference_steps));
  for (int i = 0; i < inference_steps; ++i) ts[static_cast<std::size_t>(i)] = T - 1 - i * stride;
  return ts;
}

namespace {

nn::FeatureMap<float> denoise(LdmModel& model, const std::vector<ConditioningInput>& conds, nn::FeatureMap<float> z,
                              const SamplerConfig& config, bool use_uncond) {
  const auto ts = ddim_timesteps(model.schedule.T, config.inference_steps);
  const auto enc = model.denoiser.encode_conditions(conds);
  const auto enc_null = model.denoiser.encode_conditions(std::vector<ConditioningInput>(conds.size(), NullCondition{}));
  std::mt19937_64 noise(derive_seed(config.seed, "ddim-noise"));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const std::vector<int> tvec(static_cast<std::size_t>(z.batch), t);
    nn::FeatureMap<float> eps = model.denoiser.predict_noise(z, tvec, enc);
    if (use_uncond) {
      const nn::FeatureMap<float> eps_u = model.denoiser.predict_noise(z, tvec, enc_null);
      eps.data = cfg_combine(eps.data, eps_u.data, config.guidance_scale);
    }
    z.data = ddim_step(z.data, t, t_prev, eps.data, model.schedule, config.eta, &noise);
    if (!z.data.allFinite()) throw std::runtime_error("sampling produced a non-finite latent at t=" + std::to_string(t));
  }
  return z;
}

nn::FeatureMap<float> initial_latents(const LdmModel& model, const std::vector<std::uint64_t>& seeds) {
  const auto& spec = model.denoiser.config().latent;
  nn::FeatureMap<float> z(spec.channels, static_cast<int>(seeds.size()), spec.height, spec.width);
  for (std::size_t b = 0; b < seeds.size(); ++b) {
    std::mt19937_64 rng(seeds[b]);
    z.sample(static_cast<int>(b)) =
        standard_normal_like<float>(spec.channels, 1, spec.height, spec.width, rng).data;
  }
  return z;
}

std::vector<Plane> decode_clamped(const LdmModel& model, const nn::FeatureMap<float>& z) {
  auto images = model.autoencoder->decode(z);
  for (auto& img : images) img = img.cwiseMax(-1.0f).cwiseMin(1.0f);
  return images;
}

}  // namespace

nn::FeatureMap<float> ddim_sample_latents(LdmModel& model, const std::vector<ConditioningInput>& conds,
                                          nn::FeatureMap<float> z, const SamplerConfig& config) {
  return denoise(model, conds, std::move(z), config, config.guidance_scale != 1.0);
}

std::vector<Plane> sample_batch(LdmModel& model, const std::vector<ConditioningInput>& conds,
                                const std::vector<std::uint64_t>& seeds, const SamplerConfig& config) {
  if (conds.size() != seeds.size()) throw std::invalid_argument("sample_batch: one seed per condition");
  const auto z = ddim_sample_latents(model, conds, initial_latents(model, seeds), config);
  return decode_clamped(model, z);
}

Plane sample(LdmModel& model, const ConditioningInput& cond, const SamplerConfig& config) {
  return sample_batch(model, {cond}, {config.seed}, config).front();
}

Plane sample_conditional_only(LdmModel& model, const ConditioningInput& cond, const SamplerConfig& config) {
  const auto z = denoise(model, {cond}, initial_latents(model, {config.seed}), config, false);
  return decode_clamped(model, z).front();
}

SyntheticSet generate_set(LdmModel& model, int fold_id, const std::vector<MapSource>& map_sources,
                          const GenerateOptions& options) {
  if (options.n <= 0) throw std::invalid_argument("generate_set: n must be positive");
  if (model.fold_id != fold_id)
    throw std::invalid_argument("generate_set: checkpoint was trained on fold " + std::to_string(model.fold_id) +
                                ", not fold " + std::to_string(fold_id));
  if (model.variant == ModelVariant::semantic && map_sources.empty())
    throw std::invalid_argument("generate_set: semantic model needs training-patient maps");
  for (const auto& src : map_sources)
    if (!std::binary_search(model.training_patients.begin(), model.training_patients.end(), src.patient_id))
      throw std::invalid_argument("generate_set: map source patient " + src.patient_id +
                                  " is not a training patient of fold " + std::to_string(fold_id));

  SyntheticSet set;
  set.fold_id = fold_id;
  set.variant = model.variant;
  std::mt19937_64 pick_rng(derive_seed(options.sampler.seed, "map-picks-fold" + std::to_string(fold_id)));
  std::uniform_int_distribution<std::size_t> pick(0, map_sources.empty() ? 0 : map_sources.size() - 1);

  std::vector<ConditioningInput> conds;
  std::vector<std::uint64_t> seeds;
  auto flush = [&] {
    if (conds.empty()) return;
    for (auto& img : sample_batch(model, conds, seeds, options.sampler)) set.images.push_back(std::move(img));
    conds.clear();
    seeds.clear();
  };
  for (int i = 0; i < options.n; ++i) {
    Provenance p;
    std::ostringstream file;
    file << "syn_f" << fold_id << "_" << std::setw(5) << std::setfill('0') << i << ".png";
    p.file = file.str();
    p.fold_id = fold_id;
    p.variant = model.variant;
    p.seed = derive_seed(options.sampler.seed, "synthetic-fold" + std::to_string(fold_id) + "-" + std::to_string(i));
    if (model.variant == ModelVariant::semantic) {
      const MapSource& src = map_sources[pick(pick_rng)];
      conds.emplace_back(piecewise_affine_distort(src.map, options.distortion_strength, p.seed));
      p.condition_ref = src.map.source_image_id;
      p.source_patient = src.patient_id;
      p.intended_label = src.label;
    } else {
      p.intended_label = i % 2 == 0 ? ClassLabel::unhealthy : ClassLabel::healthy;
      conds.emplace_back(p.intended_label);
      p.condition_ref = "label:" + std::to_string(to_int(p.intended_label));
    }
    seeds.push_back(p.seed);
    set.provenance.push_back(std::move(p));
    if (static_cast<int>(conds.size()) == options.batch_size) flush();
  }
  flush();
  return set;
}

std::vector<std::string> audit_synthetic_set(const SyntheticSet& set, const FoldAssignment& folds, int fold_id) {
  std::vector<std::string> violations;
  if (set.fold_id != fold_id) violations.push_back("set made for fold " + std::to_string(set.fold_id));
  for (const auto& p : set.provenance) {
    if (p.fold_id != fold_id) violations.push_back(p.file + ": provenance fold " + std::to_string(p.fold_id));
    if (p.source_patient.empty()) continue;
    const auto it = folds.fold_of_patient.find(p.source_patient);
    if (it == folds.fold_of_patient.end())
      violations.push_back(p.file + ": unknown source patient " + p.source_patient);
    else if (it->second == fold_id)
      violations.push_back(p.file + ": source patient " + p.source_patient + " is held out in fold " + std::to_string(fold_id));
  }
  return violations;
}

void save_synthetic_set(const SyntheticSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "provenance.csv");
  if (!out) throw std::runtime_error("cannot write " + (dir / "provenance.csv").string());
  out << "file,fold,variant,seed,condition_ref,source_patient,intended_label\n";
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const auto& p = set.provenance[i];
    write_png_gray(dir / p.file, to_raw(set.images[i]));
    out << p.file << ',' << p.fold_id << ',' << to_string(p.variant) << ',' << p.seed << ',' << p.condition_ref << ','
        << p.source_patient << ',' << to_int(p.intended_label) << '\n';
  }
}

SyntheticSet load_synthetic_set(const std::filesystem::path& dir) {
  std::ifstream in(dir / "provenance.csv");
  if (!in) throw std::runtime_error("synthetic set not found: " + (dir / "provenance.csv").string());
  SyntheticSet set;
  std::string line;
  std::getline(in, line);
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() == 6) f.emplace_back();
    if (f.size() != 7) throw std::runtime_error("malformed provenance line: " + line);
    Provenance p{f[0], std::stoi(f[1]), variant_from_string(f[2]), std::stoull(f[3]), f[4], f[5],
                 label_from_int(std::stoi(f[6]))};
    if (first) {
      set.fold_id = p.fold_id;
      set.variant = p.variant;
      first = false;
    }
    set.images.push_back(((read_png_gray(dir / p.file).array() / 127.5f) - 1.0f).matrix());
    set.provenance.push_back(std::move(p));
  }
  return set;
}

}  // namespace liverdiff
