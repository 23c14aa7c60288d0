#pragma once

#include "liverdiff/attribution.hpp"
#include "liverdiff/geneval.hpp"
#include "liverdiff/grid.hpp"
#include "liverdiff/ldm_train.hpp"
#include "liverdiff/sampler.hpp"
#include "liverdiff/turing.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace liverdiff {

/// Raised for invalid configuration; the message starts with the field path.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a stage's upstream artifact is absent; names the path.
class MissingArtifact : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Preset { phantom, clinical };
std::string to_string(Preset p);
Preset preset_from_string(const std::string& s);

struct ShapConfig {
  double r = 1.5;
  MixSource source = MixSource::semantic;
  int seed_index = 0;
  int fold = 0;
  int n_regions = 12;
  int n_images = 4;
  int n_samples = 200;
  PartitionMethod method = PartitionMethod::grid;
};

struct TuringServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
};

struct PipelineConfig {
  Preset preset = Preset::phantom;
  std::uint64_t seed = 0;
  std::filesystem::path data_root;
  std::filesystem::path work_dir;
  int phantom_patients = 55;
  int phantom_images_per_patient = 4;
  int k_folds = 5;
  PreprocessConfig preprocess;
  int semantic_classes = 5;
  TrainConfig ldm;
  std::vector<ModelVariant> variants;
  GenerateOptions generate;
  std::string extractor = "stub";
  int n_splits = 10;
  GridSpec grid;
  ShapConfig shap;
  TuringServeConfig turing;
  nlohmann::json resolved;  ///< fully merged document, echoed into run manifests
};

/// Default document of a preset. The clinical preset carries the full-scale
/// hyperparameters; the phantom preset is the desk-scale reduction.
nlohmann::json preset_document(Preset preset);

/// Merges `overrides` onto the preset named by overrides["preset"] (or
/// `preset` when given) and validates every field. Unknown keys are errors.
PipelineConfig resolve_config(const nlohmann::json& overrides, std::optional<Preset> preset = std::nullopt);
PipelineConfig load_config(const std::optional<std::filesystem::path>& path, std::optional<Preset> preset = std::nullopt);

struct RunOptions {
  std::optional<std::uint64_t> stage_seed;
  bool resume = false;
};

enum class StageOutcome { ran, up_to_date };

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"prepare", "folds", "train-ldm", "sample", "eval-gen",
                                              "grid",    "shap",  "report"};
  return names;
}

/// Stage runner over one work directory. Every stage directory receives a
/// run_manifest.json (config echo, seed, input fingerprint, output hashes,
/// timing); a stage whose fingerprint and outputs match is skipped.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, RunOptions options, std::ostream& log);

  StageOutcome run(const std::string& stage);

  /// Builds (once) and publishes the Turing test, then serves it until stopped.
  void turing_serve(const std::string& admin_secret);

  [[nodiscard]] const PipelineConfig& config() const { return config_; }
  [[nodiscard]] std::filesystem::path stage_dir(const std::string& stage) const;
  [[nodiscard]] std::uint64_t stage_seed(const std::string& stage) const;

  // Artifact accessors, shared with tests and the acceptance checks.
  [[nodiscard]] DatasetIndex dataset() const;
  [[nodiscard]] FoldAssignment folds() const;
  [[nodiscard]] std::filesystem::path checkpoint_path(ModelVariant v, int fold) const;
  [[nodiscard]] std::filesystem::path synthetic_dir(ModelVariant v, int fold) const;
  [[nodiscard]] GridData grid_data() const;
  /// Grid spec with the seed the grid stage ran with (from its manifest), or would run with.
  [[nodiscard]] GridSpec grid_spec() const;
  /// Real images of a fold's validation patients, model-input resolution.
  [[nodiscard]] std::vector<TrainingItem> validation_items(int fold) const;
  [[nodiscard]] std::vector<TrainingItem> training_items(int fold) const;
  /// The 50-item Turing test assembled from the prepared data and synthetic sets.
  [[nodiscard]] turing::TestDefinition build_turing_definition() const;

 private:
  void stage_prepare();
  void stage_folds();
  void stage_train_ldm();
  void stage_sample();
  void stage_eval_gen();
  void stage_grid();
  void stage_shap();
  void stage_report();

  [[nodiscard]] std::vector<std::string> upstream(const std::string& stage) const;
  [[nodiscard]] std::string fingerprint(const std::string& stage) const;
  [[nodiscard]] nlohmann::json stage_config(const std::string& stage) const;
  void require_file(const std::filesystem::path& p, const std::string& producer) const;
  [[nodiscard]] std::vector<TrainingItem> items_for(const std::vector<std::string>& patient_ids) const;

  PipelineConfig config_;
  RunOptions options_;
  std::ostream& log_;
};

/// Hashes of every regular file under `dir` except run_manifest.json, keyed by relative path.
nlohmann::json hash_tree(const std::filesystem::path& dir);

}  // namespace liverdiff
