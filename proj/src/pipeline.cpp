#include "liverdiff/pipeline.hpp"

#include "liverdiff/hash.hpp"
#include "liverdiff/phantom.hpp"
#include "liverdiff/turing_http.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace liverdiff {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Preset p) { return p == Preset::phantom ? "phantom" : "clinical"; }

Preset preset_from_string(const std::string& s) {
  if (s == "phantom") return Preset::phantom;
  if (s == "clinical") return Preset::clinical;
  throw ConfigError("preset: expected \"phantom\" or \"clinical\", got \"" + s + "\"");
}

json preset_document(Preset preset) {
  const bool clinical = preset == Preset::clinical;
  TrainConfig ldm = clinical ? TrainConfig::clinical() : TrainConfig::phantom();
  json ldm_doc = to_json(ldm);
  ldm_doc.erase("seed");
  return {
      {"preset", to_string(preset)},
      {"seed", 0},
      {"paths", {{"data_root", clinical ? "data" : "phantom_data"}, {"work_dir", "work"}}},
      {"phantom", {{"n_patients", 55}, {"images_per_patient", 4}}},
      {"folds", {{"k", 5}}},
      {"preprocess", {{"crop_size", clinical ? 320 : 96}, {"out_size", clinical ? 256 : 64}}},
      {"semantic_classes", 5},
      {"ldm", ldm_doc},
      {"variants", {"semantic", "class2img"}},
      {"sampler", {{"inference_steps", clinical ? 500 : 50}, {"guidance_scale", 1.2}, {"eta", 0.0}}},
      {"generate", {{"n", clinical ? 2000 : 200}, {"distortion_strength", 0.02}, {"batch_size", 8}}},
      {"geneval", {{"extractor", "stub"}, {"n_splits", 10}}},
      {"grid",
       {{"r_values", clinical ? json{0.0, 0.5, 1.0, 1.5, 2.0} : json{0.0, 1.0}},
        {"sources", clinical ? json{"semantic", "class2img", "geometric"} : json{"semantic"}},
        {"n_seeds", clinical ? 25 : 5},
        {"backbones",
         {{{"architecture", clinical ? "resnet50" : "tiny_cnn"}, {"freeze", "partial"}, {"pretrained", clinical}}}},
        {"steps", clinical ? 1000 : 300},
        {"learning_rate", clinical ? 2e-5 : 5e-4},
        {"batch_size", 32},
        {"weight_decay", 0.01},
        {"oversample", false}}},
      {"shap",
       {{"r", clinical ? 1.5 : 1.0},
        {"source", "semantic"},
        {"seed_index", 0},
        {"fold", 0},
        {"n_regions", 12},
        {"n_images", 4},
        {"n_samples", 200},
        {"method", "grid"}}},
      {"turing", {{"host", "127.0.0.1"}, {"port", 8080}}},
  };
}

namespace {

void reject_unknown(const json& defaults, const json& user, const std::string& prefix) {
  if (!user.is_object() || !defaults.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError(path + ": unknown field");
    reject_unknown(defaults.at(key), value, path);
  }
}

/// Typed field access with the dotted path in every error.
class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  const json& at(const std::string& path) const {
    const json* cur = &doc_;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!cur->is_object() || !cur->contains(part)) throw ConfigError(path + ": missing field");
      cur = &cur->at(part);
    }
    return *cur;
  }

  template <typename T>
  T get(const std::string& path) const {
    const json& v = at(path);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path + ": expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  int positive(const std::string& path) const {
    const int v = get<int>(path);
    if (v < 1) throw ConfigError(path + ": must be >= 1");
    return v;
  }

  template <typename Fn>
  auto parse(const std::string& path, Fn&& fn) const {
    try {
      return fn(at(path));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

 private:
  const json& doc_;
};

ModelVariant variant_field(const json& v) {
  const std::string s = v.get<std::string>();
  if (s == "class2img") return ModelVariant::class_label;
  return variant_from_string(s);
}

}  // namespace

PipelineConfig resolve_config(const json& overrides, std::optional<Preset> preset) {
  if (!overrides.is_object() && !overrides.is_null()) throw ConfigError("config: top level must be an object");
  Preset p = Preset::phantom;
  if (preset) {
    p = *preset;
  } else if (overrides.is_object() && overrides.contains("preset")) {
    if (!overrides.at("preset").is_string()) throw ConfigError("preset: expected a string");
    p = preset_from_string(overrides.at("preset"));
  }
  json doc = preset_document(p);
  if (overrides.is_object()) {
    reject_unknown(doc, overrides, "");
    doc.merge_patch(overrides);
    doc["preset"] = to_string(p);
  }
  const Reader r(doc);

  PipelineConfig c;
  c.preset = p;
  c.seed = r.get<std::uint64_t>("seed");
  c.data_root = r.get<std::string>("paths.data_root");
  c.work_dir = r.get<std::string>("paths.work_dir");
  c.phantom_patients = r.positive("phantom.n_patients");
  c.phantom_images_per_patient = r.positive("phantom.images_per_patient");
  c.k_folds = r.get<int>("folds.k");
  if (c.k_folds < 2) throw ConfigError("folds.k: must be >= 2");
  c.preprocess.crop_size = r.positive("preprocess.crop_size");
  c.preprocess.out_size = r.positive("preprocess.out_size");
  c.semantic_classes = r.get<int>("semantic_classes");
  if (c.semantic_classes < 2 || c.semantic_classes > 16) throw ConfigError("semantic_classes: must be in [2, 16]");

  r.positive("ldm.steps");
  r.positive("ldm.batch_size");
  r.positive("ldm.timesteps");
  r.positive("ldm.image_side");
  if (r.get<double>("ldm.learning_rate") <= 0) throw ConfigError("ldm.learning_rate: must be > 0");
  if (r.get<int>("ldm.warmup_steps") < 0) throw ConfigError("ldm.warmup_steps: must be >= 0");
  if (const double pu = r.get<double>("ldm.p_uncond"); pu < 0 || pu > 1) throw ConfigError("ldm.p_uncond: must be in [0, 1]");
  json ldm_doc = r.at("ldm");
  ldm_doc["seed"] = 0;
  c.ldm = r.parse("ldm", [&](const json&) { return train_config_from_json(ldm_doc); });
  if (c.ldm.image_side != c.preprocess.out_size)
    throw ConfigError("ldm.image_side: must equal preprocess.out_size (" + std::to_string(c.preprocess.out_size) + ")");
  c.preprocess.crop_range = c.ldm.crop_range;
  c.variants = r.parse("variants", [](const json& v) {
    std::vector<ModelVariant> out;
    for (const auto& e : v) out.push_back(variant_field(e));
    return out;
  });

  c.generate.sampler.inference_steps = r.positive("sampler.inference_steps");
  c.generate.sampler.guidance_scale = r.get<double>("sampler.guidance_scale");
  c.generate.sampler.eta = r.get<double>("sampler.eta");
  if (c.generate.sampler.eta < 0) throw ConfigError("sampler.eta: must be >= 0");
  if (c.generate.sampler.inference_steps > c.ldm.timesteps)
    throw ConfigError("sampler.inference_steps: exceeds ldm.timesteps");
  c.generate.n = r.positive("generate.n");
  c.generate.distortion_strength = r.get<double>("generate.distortion_strength");
  c.generate.batch_size = r.positive("generate.batch_size");

  c.extractor = r.get<std::string>("geneval.extractor");
  if (c.extractor != "stub" && c.extractor != "brightness")
    throw ConfigError("geneval.extractor: \"" + c.extractor +
                      "\" is not available; this build provides \"stub\" and \"brightness\"");
  c.n_splits = r.positive("geneval.n_splits");

  c.grid.r_values = r.parse("grid.r_values", [](const json& v) {
    auto out = v.get<std::vector<double>>();
    for (double x : out)
      if (!(x >= 0)) throw std::invalid_argument("mixing rates must be >= 0");
    return out;
  });
  c.grid.sources = r.parse("grid.sources", [](const json& v) {
    std::vector<MixSource> out;
    for (const auto& e : v) out.push_back(mix_source_from_string(e.get<std::string>()));
    return out;
  });
  c.grid.n_seeds = r.positive("grid.n_seeds");
  c.grid.backbones = r.parse("grid.backbones", [](const json& v) {
    std::vector<BackboneConfig> out;
    for (const auto& e : v) {
      BackboneConfig b;
      b.architecture = architecture_from_string(e.at("architecture").get<std::string>());
      b.freeze = freeze_policy_from_string(e.at("freeze").get<std::string>());
      b.pretrained = e.at("pretrained").get<bool>();
      if (e.contains("weights_path")) b.weights_path = e.at("weights_path").get<std::string>();
      out.push_back(b);
    }
    if (out.empty()) throw std::invalid_argument("at least one backbone is required");
    return out;
  });
  c.grid.hyper.steps = r.positive("grid.steps");
  c.grid.hyper.learning_rate = r.get<double>("grid.learning_rate");
  c.grid.hyper.batch_size = r.positive("grid.batch_size");
  c.grid.hyper.weight_decay = r.get<double>("grid.weight_decay");
  c.grid.oversample = r.get<bool>("grid.oversample");
  c.grid.image_side = static_cast<int>(c.preprocess.out_size);

  c.shap.r = r.get<double>("shap.r");
  c.shap.source = r.parse("shap.source", [](const json& v) { return mix_source_from_string(v.get<std::string>()); });
  c.shap.seed_index = r.get<int>("shap.seed_index");
  c.shap.fold = r.get<int>("shap.fold");
  if (c.shap.fold < 0 || c.shap.fold >= c.k_folds) throw ConfigError("shap.fold: outside [0, folds.k)");
  c.shap.n_regions = r.positive("shap.n_regions");
  c.shap.n_images = r.positive("shap.n_images");
  c.shap.n_samples = r.positive("shap.n_samples");
  c.shap.method = r.parse("shap.method", [](const json& v) {
    const auto s = v.get<std::string>();
    if (s == "grid") return PartitionMethod::grid;
    if (s == "brightness") return PartitionMethod::brightness;
    throw std::invalid_argument("expected \"grid\" or \"brightness\"");
  });
  c.turing.host = r.get<std::string>("turing.host");
  c.turing.port = r.get<int>("turing.port");
  c.resolved = doc;
  return c;
}

PipelineConfig load_config(const std::optional<fs::path>& path, std::optional<Preset> preset) {
  json overrides = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("config: cannot open " + path->string());
    try {
      overrides = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config: " + path->string() + " is not valid JSON: " + e.what());
    }
  }
  return resolve_config(overrides, preset);
}

json hash_tree(const fs::path& dir) {
  json out = json::object();
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = sha256_file(f);
  return out;
}

namespace {

std::string variant_dir_name(ModelVariant v) { return to_string(v); }

MixSource source_of(ModelVariant v) { return v == ModelVariant::semantic ? MixSource::semantic : MixSource::class2img; }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifact("missing artifact " + p.string());
  return json::parse(in);
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
  }
  fs::rename(tmp, p);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config, RunOptions options, std::ostream& log)
    : config_(std::move(config)), options_(options), log_(log) {}

fs::path Pipeline::stage_dir(const std::string& stage) const { return config_.work_dir / stage; }

std::uint64_t Pipeline::stage_seed(const std::string& stage) const {
  if (options_.stage_seed) return *options_.stage_seed;
  return derive_seed(config_.seed, stage);
}

fs::path Pipeline::checkpoint_path(ModelVariant v, int fold) const {
  return stage_dir("train-ldm") / variant_dir_name(v) / ("fold" + std::to_string(fold) + ".ckpt");
}

fs::path Pipeline::synthetic_dir(ModelVariant v, int fold) const {
  return stage_dir("sample") / variant_dir_name(v) / ("fold" + std::to_string(fold));
}

std::vector<std::string> Pipeline::upstream(const std::string& stage) const {
  if (stage == "prepare" || stage == "report") return {};
  if (stage == "folds") return {"prepare"};
  if (stage == "train-ldm") return {"prepare", "folds"};
  if (stage == "sample") return {"prepare", "folds", "train-ldm"};
  if (stage == "eval-gen") return {"prepare", "folds", "sample"};
  if (stage == "grid" || stage == "shap") {
    const auto& sources = stage == "grid" ? config_.grid.sources : std::vector<MixSource>{config_.shap.source};
    const bool needs_synthetic = std::any_of(sources.begin(), sources.end(), [](MixSource s) {
      return s == MixSource::semantic || s == MixSource::class2img;
    });
    if (needs_synthetic) return {"prepare", "folds", "sample"};
    return {"prepare", "folds"};
  }
  throw std::invalid_argument("unknown stage \"" + stage + "\"");
}

json Pipeline::stage_config(const std::string& stage) const {
  const json& d = config_.resolved;
  if (stage == "prepare")
    return {{"preset", d["preset"]}, {"data_root", d["paths"]["data_root"]}, {"phantom", d["phantom"]},
            {"preprocess", d["preprocess"]}, {"semantic_classes", d["semantic_classes"]},
            {"crop_scale", d["ldm"]["crop_scale"]}, {"crop_ratio", d["ldm"]["crop_ratio"]}};
  if (stage == "folds") return d["folds"];
  if (stage == "train-ldm") return {{"ldm", d["ldm"]}, {"variants", d["variants"]}, {"semantic_classes", d["semantic_classes"]}};
  if (stage == "sample") return {{"sampler", d["sampler"]}, {"generate", d["generate"]}, {"variants", d["variants"]}};
  if (stage == "eval-gen") return {{"geneval", d["geneval"]}, {"variants", d["variants"]}};
  if (stage == "grid") return d["grid"];
  if (stage == "shap") return {{"shap", d["shap"]}, {"grid", d["grid"]}};
  return json::object();
}

void Pipeline::require_file(const fs::path& p, const std::string& producer) const {
  if (!fs::exists(p))
    throw MissingArtifact("missing upstream artifact " + p.string() + " (produced by `liverdiff " + producer + "`)");
}

std::string Pipeline::fingerprint(const std::string& stage) const {
  json up = json::object();
  for (const auto& u : upstream(stage)) {
    const fs::path m = stage_dir(u) / "run_manifest.json";
    require_file(m, u);
    up[u] = read_json(m).at("outputs_digest");
  }
  const json j = {{"stage", stage}, {"config", stage_config(stage)}, {"seed", stage_seed(stage)}, {"upstream", up}};
  return sha256_hex(j.dump());
}

StageOutcome Pipeline::run(const std::string& stage) {
  if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
    throw std::invalid_argument("unknown stage \"" + stage + "\"");

  // Specific artifacts first, so the error names what is missing.
  if (stage == "sample")
    for (auto v : config_.variants)
      for (int f = 0; f < config_.k_folds; ++f) require_file(checkpoint_path(v, f), "train-ldm");
  if (stage == "eval-gen")
    for (auto v : config_.variants)
      for (int f = 0; f < config_.k_folds; ++f) require_file(synthetic_dir(v, f) / "provenance.csv", "sample");
  if (stage == "train-ldm" || stage == "sample" || stage == "eval-gen" || stage == "grid" || stage == "shap")
    require_file(stage_dir("folds") / "folds.json", "folds");

  const fs::path dir = stage_dir(stage);
  const fs::path manifest = dir / "run_manifest.json";
  const std::string fp = fingerprint(stage);
  if (stage != "report" && fs::exists(manifest)) {
    const json m = read_json(manifest);
    if (m.value("fingerprint", "") == fp && m.at("outputs") == hash_tree(dir)) {
      log_ << "[" << stage << "] up to date\n";
      return StageOutcome::up_to_date;
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  log_ << "[" << stage << "] running\n";
  fs::create_directories(dir);
  if (stage == "prepare") stage_prepare();
  else if (stage == "folds") stage_folds();
  else if (stage == "train-ldm") stage_train_ldm();
  else if (stage == "sample") stage_sample();
  else if (stage == "eval-gen") stage_eval_gen();
  else if (stage == "grid") stage_grid();
  else if (stage == "shap") stage_shap();
  else stage_report();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const json outputs = hash_tree(dir);
  const json m = {{"stage", stage},
                  {"fingerprint", fp},
                  {"seed", stage_seed(stage)},
                  {"global_seed", config_.seed},
                  {"config", stage_config(stage)},
                  {"outputs", outputs},
                  {"outputs_digest", sha256_hex(outputs.dump())},
                  {"duration_s", seconds}};
  write_text(manifest, m.dump(2) + "\n");
  std::ostringstream took;
  took << std::fixed << std::setprecision(1) << seconds;
  log_ << "[" << stage << "] done in " << took.str() << " s\n";
  return StageOutcome::ran;
}

// ---------------------------------------------------------------- prepare

DatasetIndex Pipeline::dataset() const {
  const fs::path manifest = config_.data_root / "manifest.csv";
  require_file(manifest, "prepare");
  return load_manifest(manifest);
}

void Pipeline::stage_prepare() {
  const fs::path manifest = config_.data_root / "manifest.csv";
  if (!fs::exists(manifest)) {
    if (config_.preset != Preset::phantom)
      throw MissingArtifact("missing dataset manifest " + manifest.string());
    log_ << "[prepare] generating phantom dataset in " << config_.data_root << "\n";
    generate_phantom_dataset(config_.phantom_patients, config_.phantom_images_per_patient,
                             derive_seed(config_.seed, "phantom-data"), config_.data_root);
  }
  const DatasetIndex index = dataset();
  const fs::path dir = stage_dir("prepare");
  fs::remove_all(dir / "prepared");
  fs::remove_all(dir / "model_input");
  PreprocessCache prepared(dir / "prepared");
  PreprocessCache model_input(dir / "model_input");
  json data_hashes = json::object();
  data_hashes["manifest.csv"] = sha256_file(manifest);
  for (const auto& p : index.patients) {
    for (const auto& id : p.image_ids) {
      const fs::path path = index.image_path(id);
      data_hashes[id] = sha256_file(path);
      const Plane raw = read_png_gray(path);
      prepared.put(id, prepare_scaled(raw, config_.preprocess));
      const ImageTensor input = prepare_classifier_input(raw, config_.preprocess);
      const SemanticMap map = make_semantic_map(input, config_.semantic_classes, id);
      model_input.put(id, input, &map);
    }
  }
  prepared.flush();
  model_input.flush();
  write_text(dir / "dataset.json",
             json{{"data_root", config_.data_root.string()}, {"n_patients", index.patients.size()},
                  {"n_images", index.num_images()}, {"healthy", index.count(ClassLabel::healthy)},
                  {"unhealthy", index.count(ClassLabel::unhealthy)}, {"source_hashes", data_hashes}}
                     .dump(2) + "\n");
  log_ << "[prepare] " << index.num_images() << " images from " << index.patients.size() << " patients\n";
}

// ---------------------------------------------------------------- folds

FoldAssignment Pipeline::folds() const {
  const fs::path p = stage_dir("folds") / "folds.json";
  require_file(p, "folds");
  return load_folds(p);
}

void Pipeline::stage_folds() {
  const DatasetIndex index = dataset();
  const FoldAssignment folds = assign_folds(index, config_.k_folds, stage_seed("folds"));
  save_folds(folds, stage_dir("folds") / "folds.json");
  for (int f = 0; f < folds.k; ++f) {
    const auto val = validation_patients(index, folds, f);
    int healthy = 0;
    for (const auto& id : val) healthy += index.patient(id).label == ClassLabel::healthy;
    log_ << "[folds] fold " << f << ": " << val.size() << " validation patients (" << healthy << " healthy)\n";
  }
}

// ---------------------------------------------------------------- train-ldm

void Pipeline::stage_train_ldm() {
  const DatasetIndex index = dataset();
  const FoldAssignment fa = folds();
  const PreprocessCache prepared(stage_dir("prepare") / "prepared");
  TrainConfig cfg = config_.ldm;
  cfg.seed = stage_seed("train-ldm");
  for (auto variant : config_.variants) {
    for (int f = 0; f < config_.k_folds; ++f) {
      const fs::path ckpt = checkpoint_path(variant, f);
      if (options_.resume && fs::exists(ckpt)) {
        const LdmModel existing = load_checkpoint(ckpt);
        if (to_json(existing.config) == to_json(cfg)) {
          log_ << "[train-ldm] " << to_string(variant) << " fold " << f << ": reusing " << ckpt << "\n";
          continue;
        }
      }
      std::vector<TrainingExample> examples;
      for (const auto& id : training_images(index, fa, f)) {
        const auto& owner = index.owner_of(id);
        examples.push_back({id, owner.patient_id, owner.label, prepared.image(id)});
      }
      log_ << "[train-ldm] " << to_string(variant) << " fold " << f << ": " << examples.size() << " images, "
           << cfg.steps << " steps\n";
      const int every = std::max(1, cfg.steps / 8);
      const LdmModel model = train_ldm(cfg, f, variant, examples, [&](int step, double loss) {
        if ((step + 1) % every == 0) log_ << "[train-ldm]   step " << step + 1 << " loss " << loss << "\n";
      });
      fs::create_directories(ckpt.parent_path());
      save_checkpoint(model, ckpt);
    }
  }
}

// ---------------------------------------------------------------- sample

void Pipeline::stage_sample() {
  const DatasetIndex index = dataset();
  const FoldAssignment fa = folds();
  const PreprocessCache model_input(stage_dir("prepare") / "model_input");
  for (auto variant : config_.variants) {
    for (int f = 0; f < config_.k_folds; ++f) {
      const fs::path out = synthetic_dir(variant, f);
      if (options_.resume && fs::exists(out / "provenance.csv")) {
        log_ << "[sample] " << to_string(variant) << " fold " << f << ": reusing " << out << "\n";
        continue;
      }
      LdmModel model = load_checkpoint(checkpoint_path(variant, f));
      std::vector<MapSource> sources;
      if (variant == ModelVariant::semantic)
        for (const auto& id : training_images(index, fa, f)) {
          const auto& owner = index.owner_of(id);
          sources.push_back({model_input.map(id), owner.patient_id, owner.label});
        }
      GenerateOptions opts = config_.generate;
      opts.sampler.seed = derive_seed(stage_seed("sample"), to_string(variant));
      log_ << "[sample] " << to_string(variant) << " fold " << f << ": " << opts.n << " images\n";
      const SyntheticSet set = generate_set(model, f, sources, opts);
      const auto violations = audit_synthetic_set(set, fa, f);
      if (!violations.empty()) throw std::runtime_error("synthetic set leakage: " + violations.front());
      fs::remove_all(out);
      save_synthetic_set(set, out);
    }
  }
}

// ---------------------------------------------------------------- items

std::vector<TrainingItem> Pipeline::items_for(const std::vector<std::string>& patient_ids) const {
  const DatasetIndex index = dataset();
  const PreprocessCache model_input(stage_dir("prepare") / "model_input");
  std::vector<TrainingItem> items;
  for (const auto& pid : patient_ids) {
    const auto& p = index.patient(pid);
    for (const auto& id : p.image_ids) {
      TrainingItem it;
      it.id = id;
      it.patient_id = pid;
      it.label = p.label;
      it.image = model_input.image(id).gray();
      items.push_back(std::move(it));
    }
  }
  return items;
}

std::vector<TrainingItem> Pipeline::validation_items(int fold) const {
  return items_for(validation_patients(dataset(), folds(), fold));
}

std::vector<TrainingItem> Pipeline::training_items(int fold) const {
  return items_for(training_patients(dataset(), folds(), fold));
}

// ---------------------------------------------------------------- eval-gen

void Pipeline::stage_eval_gen() {
  std::unique_ptr<FeatureExtractor> extractor;
  if (config_.extractor == "stub") extractor = std::make_unique<StubExtractor>(0);
  else extractor = std::make_unique<BrightnessExtractor>();
  GenEvalReport report;
  for (auto variant : config_.variants) {
    for (int f = 0; f < config_.k_folds; ++f) {
      const SyntheticSet set = load_synthetic_set(synthetic_dir(variant, f));
      const auto val = validation_items(f);
      std::vector<LabeledImage> real;
      for (const auto& v : val) real.push_back({&v.image, v.label});
      for (auto& row : evaluate_synthetic(set, real, *extractor, config_.n_splits)) {
        log_ << "[eval-gen] " << row.variant << " " << row.cls << " fold " << f << ": FID "
             << (row.fid ? std::to_string(*row.fid) : "n/a") << ", IS " << (row.is_mean ? std::to_string(*row.is_mean) : "n/a")
             << "\n";
        report.rows.push_back(std::move(row));
      }
    }
  }
  report.aggregates = aggregate_folds(report.rows);
  write_text(stage_dir("eval-gen") / "report.csv", report_csv(report));
}

// ---------------------------------------------------------------- grid

GridData Pipeline::grid_data() const {
  GridData data;
  data.folds = folds();
  json digest = json::object();
  for (const auto& u : upstream("grid")) digest[u] = read_json(stage_dir(u) / "run_manifest.json").at("outputs_digest");
  data.fingerprint = sha256_hex(digest.dump());
  for (int f = 0; f < config_.k_folds; ++f) data.per_fold.push_back({training_items(f), validation_items(f)});
  std::set<MixSource> wanted(config_.grid.sources.begin(), config_.grid.sources.end());
  wanted.insert(config_.shap.source);
  for (auto variant : {ModelVariant::semantic, ModelVariant::class_label}) {
    if (!wanted.count(source_of(variant))) continue;
    for (int f = 0; f < config_.k_folds; ++f) {
      const fs::path dir = synthetic_dir(variant, f);
      if (!fs::exists(dir / "provenance.csv")) continue;  // reported by run_grid if a cell needs it
      data.synthetic[{f, source_of(variant)}] = load_synthetic_set(dir);
    }
  }
  return data;
}

GridSpec Pipeline::grid_spec() const {
  GridSpec spec = config_.grid;
  const fs::path manifest = stage_dir("grid") / "run_manifest.json";
  spec.seed = fs::exists(manifest) ? read_json(manifest).at("seed").get<std::uint64_t>() : stage_seed("grid");
  return spec;
}

namespace {

std::string comparisons_csv(const std::vector<CellResult>& results) {
  std::ostringstream os;
  os << "backbone,source,r,metric,mean,ci_lo,ci_hi,n,t_vs_base,p_vs_base,degenerate\n";
  os.precision(10);
  for (const std::string metric : {"auc_image", "auc_foldavg", "auc_patient"})
    for (const auto& c : compare_to_base(results, metric)) {
      os << c.backbone << ',' << to_string(c.source) << ',' << c.r << ',' << metric << ',' << c.value.mean << ','
         << c.value.lo << ',' << c.value.hi << ',' << c.value.n << ',';
      if (c.vs_base) os << c.vs_base->t << ',' << c.vs_base->p << ',' << (c.vs_base->degenerate ? 1 : 0);
      else os << ",,";
      os << '\n';
    }
  return os.str();
}

}  // namespace

void Pipeline::stage_grid() {
  GridSpec spec = config_.grid;
  spec.seed = stage_seed("grid");
  const GridData data = grid_data();
  ResultStore store(stage_dir("grid") / "results.jsonl");
  const auto n_cells = enumerate_cells(spec).size();
  log_ << "[grid] " << n_cells << " cells, " << store.size() << " already stored\n";
  const auto results = run_grid(spec, data, store, [&](std::size_t done, std::size_t total, const CellResult& r, bool cached) {
    log_ << "[grid] " << done << "/" << total << " " << to_string(r.cell.backbone.architecture) << " "
         << to_string(r.cell.source) << " r=" << r.cell.r << " seed " << r.cell.seed_index << ": auc " << r.auc_image
         << (cached ? " (stored)" : "") << "\n";
  });
  std::size_t violations = 0;
  for (const auto& r : results) violations += r.leakage_violations.size();
  if (violations) throw std::runtime_error("grid: " + std::to_string(violations) + " leakage violations");
  write_text(stage_dir("grid") / "results.csv", results_csv(results));
  write_text(stage_dir("grid") / "predictions.csv", predictions_csv(results));
  write_text(stage_dir("grid") / "comparisons.csv", comparisons_csv(results));
}

// ---------------------------------------------------------------- shap

void Pipeline::stage_shap() {
  const GridSpec spec = grid_spec();
  const auto& sc = config_.shap;
  GridCell cell{spec.backbones.front(), sc.r == 0 ? MixSource::none : sc.source, sc.r, sc.seed_index,
                derive_seed(spec.seed, "grid-seed-" + std::to_string(sc.seed_index))};
  const GridData data = grid_data();
  const auto items = cell_training_set(cell, spec, data, sc.fold);
  Classifier clf = train_cell_fold(cell, spec, items, sc.fold);

  // Explain generated training images when the cell has them, real ones otherwise.
  std::vector<const TrainingItem*> unhealthy, healthy;
  const bool generated = std::any_of(items.begin(), items.end(), [](const auto& it) { return it.origin != ItemOrigin::real; });
  for (const auto& it : items) {
    if ((it.origin != ItemOrigin::real) != generated) continue;
    (it.label == ClassLabel::unhealthy ? unhealthy : healthy).push_back(&it);
  }
  std::vector<const TrainingItem*> chosen;
  const int n_unhealthy = (sc.n_images + 1) / 2;
  for (int i = 0; i < n_unhealthy && i < static_cast<int>(unhealthy.size()); ++i) chosen.push_back(unhealthy[static_cast<std::size_t>(i)]);
  for (int i = 0; static_cast<int>(chosen.size()) < sc.n_images && i < static_cast<int>(healthy.size()); ++i)
    chosen.push_back(healthy[static_cast<std::size_t>(i)]);

  double sum = 0;
  double count = 0;
  for (const auto& it : data.per_fold.at(static_cast<std::size_t>(sc.fold)).train) {
    sum += it.image.cast<double>().sum();
    count += static_cast<double>(it.image.size());
  }
  const float baseline_level = static_cast<float>(sum / count);
  const ImageModel model = [&](const Plane& x) { return clf.predict(x); };

  json summary = {{"cell", {{"backbone", to_string(cell.backbone.architecture)}, {"source", to_string(cell.source)},
                            {"r", cell.r}, {"seed_index", cell.seed_index}, {"fold", sc.fold}}},
                  {"baseline_level", baseline_level},
                  {"items", json::array()}};
  const fs::path dir = stage_dir("shap");
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const auto& it = *chosen[k];
    const auto partition = partition_regions(it.image, sc.n_regions, sc.method);
    const Plane baseline = Plane::Constant(it.image.rows(), it.image.cols(), baseline_level);
    const auto attr = shapley_attribution(model, it.image, partition, baseline, sc.n_samples,
                                          derive_seed(stage_seed("shap"), "item" + std::to_string(k)));
    const std::string stem = "item" + std::to_string(k);
    save_attribution(dir, stem, it.image, partition, attr);
    summary["items"].push_back({{"stem", stem}, {"id", it.id}, {"label", to_int(it.label)},
                                {"prediction", attr.model_output}, {"baseline_prediction", attr.baseline_output},
                                {"exact", attr.exact}});
    log_ << "[shap] " << it.id << ": f(x) " << attr.model_output << ", f(baseline) " << attr.baseline_output << "\n";
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------- report

void Pipeline::stage_report() {
  std::ostringstream md;
  md << "# Pipeline report\n\n";
  md << "Preset: " << to_string(config_.preset) << ", global seed " << config_.seed << ".\n\n";
  const fs::path out = stage_dir("report");
  const auto skip = [&](const std::string& section, const fs::path& missing) {
    log_ << "[report] skipping " << section << ": " << missing << " not found\n";
    md << "_Section skipped: " << missing.filename().string() << " not found._\n\n";
  };

  md << "## Synthetic image quality (IS / FID)\n\n";
  const fs::path geneval = stage_dir("eval-gen") / "report.csv";
  if (fs::exists(geneval)) {
    const std::string csv = read_text(geneval);
    write_text(out / "geneval.csv", csv);
    md << "Per fold and class, with fold means and 95% t-intervals: `geneval.csv`.\n\n```\n" << csv << "```\n\n";
  } else {
    skip("synthetic image quality", geneval);
  }

  md << "## Classification (ROC AUC vs mixing rate)\n\n";
  const fs::path comparisons = stage_dir("grid") / "comparisons.csv";
  if (fs::exists(comparisons)) {
    write_text(out / "grid_results.csv", read_text(stage_dir("grid") / "results.csv"));
    const std::string csv = read_text(comparisons);
    write_text(out / "grid_comparisons.csv", csv);
    md << "Per-seed AUCs: `grid_results.csv`. Means, 95% t-intervals and paired t-tests against r = 0:\n\n```\n"
       << csv << "```\n\n";
  } else {
    skip("classification", comparisons);
  }

  md << "## Attribution\n\n";
  const fs::path shap = stage_dir("shap") / "summary.json";
  if (fs::exists(shap)) {
    const json s = read_json(shap);
    md << "Classifier: " << s["cell"].dump() << "\n\n| image | label | prediction | baseline prediction |\n|---|---|---|---|\n";
    for (const auto& it : s["items"])
      md << "| " << it["id"].get<std::string>() << " | " << it["label"] << " | " << it["prediction"] << " | "
         << it["baseline_prediction"] << " |\n";
    md << "\nHeat maps: `" << stage_dir("shap").string() << "/item*_shap.png`.\n\n";
  } else {
    skip("attribution", shap);
  }

  md << "## Image Turing test\n\n";
  const fs::path turing_state = config_.work_dir / "turing";
  bool turing_done = false;
  if (fs::exists(turing_state / "definition.json")) {
    const turing::Service svc(turing_state);
    try {
      const auto rep = svc.report();
      const std::string csv = turing::report_csv(rep);
      write_text(out / "turing.csv", csv);
      md << rep.n_participants << " participants; " << rep.ci_method << ".\n\n```\n" << csv << "```\n\n";
      turing_done = true;
    } catch (const std::invalid_argument&) {
      // no complete sessions yet
    }
  }
  if (!turing_done) skip("Turing test", turing_state / "responses.jsonl");

  write_text(out / "summary.md", md.str());
}

// ---------------------------------------------------------------- turing

turing::TestDefinition Pipeline::build_turing_definition() const {
  using turing::Item;
  const DatasetIndex index = dataset();
  const PreprocessCache model_input(stage_dir("prepare") / "model_input");
  std::mt19937_64 rng(derive_seed(config_.seed, "turing"));
  const fs::path item_dir = config_.work_dir / "turing" / "items";
  fs::create_directories(item_dir);

  struct Candidate {
    Item item;
    Plane image;
  };
  std::vector<Candidate> chosen;
  const auto take = [&](std::vector<Candidate> pool, int n, const std::string& what) {
    if (static_cast<int>(pool.size()) < n)
      throw std::runtime_error("Turing test needs " + std::to_string(n) + " " + what + ", only " +
                               std::to_string(pool.size()) + " available");
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < n; ++i) chosen.push_back(std::move(pool[static_cast<std::size_t>(i)]));
  };

  for (auto label : {ClassLabel::unhealthy, ClassLabel::healthy}) {
    // One frame per patient first, then further frames if patients run out.
    std::vector<Candidate> first, rest;
    for (const auto& p : index.patients) {
      if (p.label != label) continue;
      for (std::size_t i = 0; i < p.image_ids.size(); ++i) {
        Item it{p.image_ids[i], turing::Truth::real, turing::Source::real, label, {}};
        (i == 0 ? first : rest).push_back({it, model_input.image(p.image_ids[i]).gray()});
      }
    }
    const int need = label == ClassLabel::unhealthy ? 13 : 7;
    std::shuffle(first.begin(), first.end(), rng);
    if (static_cast<int>(first.size()) < need) {
      std::shuffle(rest.begin(), rest.end(), rng);
      first.insert(first.end(), rest.begin(), rest.end());
    }
    first.resize(std::min(first.size(), static_cast<std::size_t>(need)));
    take(std::move(first), need, "real images");
  }

  for (auto variant : {ModelVariant::semantic, ModelVariant::class_label}) {
    std::vector<Candidate> unhealthy, healthy;
    for (int f = 0; f < config_.k_folds; ++f) {
      const fs::path dir = synthetic_dir(variant, f);
      require_file(dir / "provenance.csv", "sample");
      const SyntheticSet set = load_synthetic_set(dir);
      for (std::size_t i = 0; i < set.images.size(); ++i) {
        const auto& prov = set.provenance[i];
        Item it{to_string(variant) + "/fold" + std::to_string(f) + "/" + prov.file, turing::Truth::synthetic,
                variant == ModelVariant::semantic ? turing::Source::semantic : turing::Source::class2img,
                prov.intended_label, {}};
        (prov.intended_label == ClassLabel::unhealthy ? unhealthy : healthy).push_back({it, set.images[i]});
      }
    }
    take(std::move(unhealthy), 9, to_string(variant) + " unhealthy images");
    take(std::move(healthy), 6, to_string(variant) + " healthy images");
  }

  std::shuffle(chosen.begin(), chosen.end(), rng);
  turing::TestDefinition def;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    std::ostringstream name;
    name << "item_" << std::setw(2) << std::setfill('0') << k << ".png";
    chosen[k].item.image_path = fs::absolute(item_dir / name.str());
    write_png_gray(chosen[k].item.image_path, to_raw(chosen[k].image));
    def.items.push_back(chosen[k].item);
  }
  return def;
}

void Pipeline::turing_serve(const std::string& admin_secret) {
  turing::Service service(config_.work_dir / "turing");
  if (!service.published()) {
    const auto version = service.publish(build_turing_definition());
    log_ << "[turing] published test version " << version << "\n";
  }
  if (admin_secret.empty())
    log_ << "[turing] " << turing::kAdminSecretEnv << " is not set; admin endpoints are disabled\n";
  turing::HttpServer server(service, admin_secret);
  if (!server.bind(config_.turing.host, config_.turing.port))
    throw std::runtime_error("cannot bind " + config_.turing.host + ":" + std::to_string(config_.turing.port));
  log_ << "[turing] listening on http://" << config_.turing.host << ":" << config_.turing.port << "\n";
  server.listen_after_bind();
}

}  // namespace liverdiff
