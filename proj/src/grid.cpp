#include "liverdiff/grid.hpp"

#include "liverdiff/hash.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace liverdiff {

std::vector<GridCell> enumerate_cells(const GridSpec& spec) {
  if (spec.n_seeds < 1) throw std::invalid_argument("grid needs at least one seed");
  std::vector<GridCell> cells;
  for (const auto& bb : spec.backbones) {
    const auto add = [&](MixSource src, double r) {
      for (int s = 0; s < spec.n_seeds; ++s)
        cells.push_back({bb, src, r, s, derive_seed(spec.seed, "grid-seed-" + std::to_string(s))});
    };
    bool has_zero = false;
    for (double r : spec.r_values) has_zero |= r == 0.0;
    if (has_zero) add(MixSource::none, 0.0);
    for (auto src : spec.sources) {
      if (src == MixSource::none) continue;
      for (double r : spec.r_values)
        if (r > 0.0) add(src, r);
    }
  }
  return cells;
}

namespace {

nlohmann::json cell_json(const GridCell& c) {
  return {{"architecture", to_string(c.backbone.architecture)},
          {"freeze", to_string(c.backbone.freeze)},
          {"pretrained", c.backbone.pretrained},
          {"source", to_string(c.source)},
          {"r", c.r},
          {"seed_index", c.seed_index},
          {"seed", c.seed}};
}

GridCell cell_from_json(const nlohmann::json& j) {
  GridCell c;
  c.backbone.architecture = architecture_from_string(j.at("architecture"));
  c.backbone.freeze = freeze_policy_from_string(j.at("freeze"));
  c.backbone.pretrained = j.at("pretrained");
  c.source = mix_source_from_string(j.at("source"));
  c.r = j.at("r");
  c.seed_index = j.at("seed_index");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

std::string cell_key(const GridCell& cell, const GridSpec& spec, const GridData& data) {
  const nlohmann::json j = {{"cell", cell_json(cell)},
                            {"steps", spec.hyper.steps},
                            {"lr", spec.hyper.learning_rate},
                            {"batch", spec.hyper.batch_size},
                            {"weight_decay", spec.hyper.weight_decay},
                            {"oversample", spec.oversample},
                            {"image_side", spec.image_side},
                            {"data", data.fingerprint}};
  return sha256_hex(j.dump());
}

nlohmann::json to_json(const CellResult& r) {
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : r.predictions)
    preds.push_back({p.fold_id, p.prediction.image_id, p.prediction.patient_id, p.prediction.label, p.prediction.score});
  return {{"key", r.key},
          {"cell", cell_json(r.cell)},
          {"auc_image", r.auc_image},
          {"auc_foldavg", r.auc_foldavg},
          {"auc_patient", r.auc_patient},
          {"leakage_violations", r.leakage_violations},
          {"predictions", preds}};
}

CellResult cell_result_from_json(const nlohmann::json& j) {
  CellResult r;
  r.key = j.at("key");
  r.cell = cell_from_json(j.at("cell"));
  r.auc_image = j.at("auc_image");
  r.auc_foldavg = j.at("auc_foldavg");
  r.auc_patient = j.at("auc_patient");
  r.leakage_violations = j.at("leakage_violations").get<std::vector<std::string>>();
  for (const auto& p : j.at("predictions"))
    r.predictions.push_back({p.at(0).get<int>(), {p.at(1), p.at(2), p.at(3).get<int>(), p.at(4).get<double>()}});
  return r;
}

ResultStore::ResultStore(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto r = cell_result_from_json(nlohmann::json::parse(line));
      results_[r.key] = std::move(r);
    } catch (const nlohmann::json::exception&) {
      break;  // torn final line from an interrupted write
    }
  }
}

bool ResultStore::contains(const std::string& key) const {
  std::lock_guard lock(mutex_);
  return results_.count(key) != 0;
}

const CellResult& ResultStore::get(const std::string& key) const {
  std::lock_guard lock(mutex_);
  return results_.at(key);
}

void ResultStore::append(const CellResult& result) {
  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  out << to_json(result).dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot append to result store " + path_.string());
  results_[result.key] = result;
}

std::vector<TrainingItem> cell_training_set(const GridCell& cell, const GridSpec& spec, const GridData& data, int fold) {
  const SyntheticSet* pool = nullptr;
  if (cell.source == MixSource::semantic || cell.source == MixSource::class2img) {
    auto it = data.synthetic.find({fold, cell.source});
    if (it == data.synthetic.end())
      throw std::invalid_argument("missing synthetic set for fold " + std::to_string(fold) + ", source " + to_string(cell.source));
    pool = &it->second;
  }
  const MixSpec mix{cell.r, cell.source, cell.seed};
  auto items = compose_training_set(data.per_fold.at(static_cast<std::size_t>(fold)).train, pool, mix, fold, data.folds,
                                    spec.image_side);
  if (spec.oversample) items = oversample_minority(items);
  return items;
}

Classifier train_cell_fold(const GridCell& cell, const GridSpec& spec, const std::vector<TrainingItem>& items, int fold) {
  ClassifierHyper hyper = spec.hyper;
  hyper.seed = derive_seed(cell.seed, "fold" + std::to_string(fold));
  return train_classifier(cell.backbone, items, hyper);
}

CellResult run_cell(const GridCell& cell, const GridSpec& spec, const GridData& data) {
  CellResult res;
  res.key = cell_key(cell, spec, data);
  res.cell = cell;
  std::vector<ImagePrediction> all;
  std::vector<double> fold_aucs;
  for (std::size_t f = 0; f < data.per_fold.size(); ++f) {
    const int fold = static_cast<int>(f);
    const auto items = cell_training_set(cell, spec, data, fold);
    const auto violations = audit_training_set(items, data.folds, fold);
    res.leakage_violations.insert(res.leakage_violations.end(), violations.begin(), violations.end());
    Classifier clf = train_cell_fold(cell, spec, items, fold);

    std::vector<const Plane*> val_images;
    for (const auto& v : data.per_fold[f].validation) val_images.push_back(&v.image);
    const auto scores = clf.predict(val_images);
    std::vector<ScoredItem> fold_scored;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto& v = data.per_fold[f].validation[i];
      ImagePrediction p{v.id, v.patient_id, to_int(v.label), scores[i]};
      res.predictions.push_back({fold, p});
      all.push_back(p);
      fold_scored.push_back({p.score, p.label});
    }
    fold_aucs.push_back(roc_auc(fold_scored));
  }
  std::vector<ScoredItem> scored;
  for (const auto& p : all) scored.push_back({p.score, p.label});
  res.auc_image = roc_auc(scored);
  res.auc_foldavg = mean(fold_aucs);
  std::vector<ScoredItem> patient_scored;
  for (const auto& ps : patient_level_scores(all)) patient_scored.push_back({ps.score, ps.label});
  res.auc_patient = roc_auc(patient_scored);
  return res;
}

std::vector<CellResult> run_grid(const GridSpec& spec, const GridData& data, ResultStore& store,
                                 const GridProgress& progress) {
  const auto cells = enumerate_cells(spec);
  for (const auto& c : cells) {
    if (c.source != MixSource::semantic && c.source != MixSource::class2img) continue;
    for (std::size_t f = 0; f < data.per_fold.size(); ++f)
      if (!data.synthetic.count({static_cast<int>(f), c.source}))
        throw std::invalid_argument("missing synthetic set for fold " + std::to_string(f) + ", source " + to_string(c.source));
  }
  std::vector<CellResult> out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto key = cell_key(cells[i], spec, data);
    const bool cached = store.contains(key);
    if (!cached) store.append(run_cell(cells[i], spec, data));
    out.push_back(store.get(key));
    if (progress) progress(i + 1, cells.size(), out.back(), cached);
  }
  return out;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::string results_csv(const std::vector<CellResult>& results) {
  std::ostringstream os;
  os << "backbone,source,r,seed,auc_image,auc_foldavg,auc_patient\n";
  for (const auto& r : results)
    os << to_string(r.cell.backbone.architecture) << ',' << to_string(r.cell.source) << ',' << num(r.cell.r) << ','
       << r.cell.seed_index << ',' << num(r.auc_image) << ',' << num(r.auc_foldavg) << ',' << num(r.auc_patient) << '\n';
  return os.str();
}

std::string predictions_csv(const std::vector<CellResult>& results) {
  std::ostringstream os;
  os << "backbone,source,r,seed,fold,image_id,patient_id,label,score\n";
  for (const auto& r : results)
    for (const auto& p : r.predictions)
      os << to_string(r.cell.backbone.architecture) << ',' << to_string(r.cell.source) << ',' << num(r.cell.r) << ','
         << r.cell.seed_index << ',' << p.fold_id << ',' << p.prediction.image_id << ',' << p.prediction.patient_id
         << ',' << p.prediction.label << ',' << num(p.prediction.score) << '\n';
  return os.str();
}

std::vector<Comparison> compare_to_base(const std::vector<CellResult>& results, const std::string& metric) {
  const auto value = [&](const CellResult& r) {
    if (metric == "auc_image") return r.auc_image;
    if (metric == "auc_foldavg") return r.auc_foldavg;
    if (metric == "auc_patient") return r.auc_patient;
    throw std::invalid_argument("unknown metric " + metric);
  };
  using Key = std::tuple<std::string, MixSource, double>;
  std::map<Key, std::map<int, double>> by_cell;
  std::vector<Key> order;
  for (const auto& r : results) {
    const Key k{to_string(r.cell.backbone.architecture), r.cell.source, r.cell.r};
    if (!by_cell.count(k)) order.push_back(k);
    by_cell[k][r.cell.seed_index] = value(r);
  }
  std::vector<Comparison> out;
  for (const auto& k : order) {
    const auto& seeds = by_cell[k];
    std::vector<double> vals;
    for (const auto& [s, v] : seeds) vals.push_back(v);
    Comparison c{std::get<0>(k), std::get<1>(k), std::get<2>(k), metric, t_interval(vals), std::nullopt};
    const auto base = by_cell.find(Key{std::get<0>(k), MixSource::none, 0.0});
    if (std::get<1>(k) != MixSource::none && base != by_cell.end()) {
      std::vector<double> a, b;
      for (const auto& [s, v] : seeds)
        if (auto it = base->second.find(s); it != base->second.end()) {
          b.push_back(v);
          a.push_back(it->second);
        }
      if (a.size() >= 2) c.vs_base = paired_ttest(a, b);
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace liverdiff
