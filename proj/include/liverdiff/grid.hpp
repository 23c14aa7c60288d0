#pragma once

#include "liverdiff/classifier.hpp"
#include "liverdiff/stats.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace liverdiff {

struct GridSpec {
  std::vector<double> r_values{0.0, 0.5, 1.0, 1.5, 2.0};
  std::vector<MixSource> sources{MixSource::semantic, MixSource::class2img, MixSource::geometric};
  int n_seeds = 25;
  std::uint64_t seed = 0;  ///< stage seed; per-cell seeds derive from it
  std::vector<BackboneConfig> backbones{BackboneConfig{Architecture::resnet50, FreezePolicy::partial, true, ""}};
  ClassifierHyper hyper;  ///< hyper.seed is replaced per cell and fold
  bool oversample = false;
  int image_side = 256;
};

struct GridCell {
  BackboneConfig backbone;
  MixSource source = MixSource::none;
  double r = 0.0;
  int seed_index = 0;
  std::uint64_t seed = 0;
};

/// Every (backbone, source, r, seed) cell; r = 0 appears once per backbone
/// with source none.
std::vector<GridCell> enumerate_cells(const GridSpec& spec);

/// Real images of one fold split into training items and validation items.
struct FoldData {
  std::vector<TrainingItem> train;
  std::vector<TrainingItem> validation;
};

struct GridData {
  FoldAssignment folds;
  std::vector<FoldData> per_fold;
  std::map<std::pair<int, MixSource>, SyntheticSet> synthetic;  ///< (fold, source)
  std::string fingerprint;  ///< content hash of the inputs, part of every cell key
};

struct FoldPrediction {
  int fold_id = 0;
  ImagePrediction prediction;
};

struct CellResult {
  std::string key;
  GridCell cell;
  std::vector<FoldPrediction> predictions;
  double auc_image = 0;    ///< over concatenated out-of-fold predictions
  double auc_foldavg = 0;  ///< mean of per-fold AUCs
  double auc_patient = 0;  ///< over per-patient mean predictions
  std::vector<std::string> leakage_violations;
};

nlohmann::json to_json(const CellResult& r);
CellResult cell_result_from_json(const nlohmann::json& j);

/// SHA-256 of the cell configuration, classifier hyperparameters and data fingerprint.
std::string cell_key(const GridCell& cell, const GridSpec& spec, const GridData& data);

/// Append-only JSON-lines result store keyed by cell hash.
class ResultStore {
 public:
  explicit ResultStore(std::filesystem::path path);
  [[nodiscard]] bool contains(const std::string& key) const;
  [[nodiscard]] const CellResult& get(const std::string& key) const;
  void append(const CellResult& result);
  [[nodiscard]] std::size_t size() const { return results_.size(); }

 private:
  std::filesystem::path path_;
  std::map<std::string, CellResult> results_;
  mutable std::mutex mutex_;
};

/// The training set a cell composes for one fold, after leakage audit and
/// optional oversampling.
std::vector<TrainingItem> cell_training_set(const GridCell& cell, const GridSpec& spec, const GridData& data, int fold);

/// The classifier a cell trains for one fold.
Classifier train_cell_fold(const GridCell& cell, const GridSpec& spec, const std::vector<TrainingItem>& items, int fold);

/// Trains one classifier per fold for a cell and scores its out-of-fold predictions.
CellResult run_cell(const GridCell& cell, const GridSpec& spec, const GridData& data);

using GridProgress = std::function<void(std::size_t done, std::size_t total, const CellResult&, bool cached)>;

/// Runs every cell not already in the store and returns all results in cell order.
std::vector<CellResult> run_grid(const GridSpec& spec, const GridData& data, ResultStore& store,
                                 const GridProgress& progress = {});

/// backbone,source,r,seed,auc_image,auc_foldavg,auc_patient
std::string results_csv(const std::vector<CellResult>& results);
/// backbone,source,r,seed,fold,image_id,patient_id,label,score
std::string predictions_csv(const std::vector<CellResult>& results);

struct Comparison {
  std::string backbone;
  MixSource source = MixSource::none;
  double r = 0;
  std::string metric;
  Interval value;
  std::optional<TTestResult> vs_base;  ///< paired over seeds against r = 0
};

/// Per (backbone, source, r) mean AUC with CI and paired t-test against the
/// real-only cell of the same backbone.
std::vector<Comparison> compare_to_base(const std::vector<CellResult>& results, const std::string& metric = "auc_image");

}  // namespace liverdiff
