#include "liverdiff/dataset.hpp"

#include "liverdiff/image.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace liverdiff {

ClassLabel label_from_int(int v) {
  if (v != 0 && v != 1) throw std::invalid_argument("class label must be 0 or 1, got " + std::to_string(v));
  return static_cast<ClassLabel>(v);
}

const PatientRecord& DatasetIndex::patient(const std::string& id) const {
  for (const auto& p : patients)
    if (p.patient_id == id) return p;
  throw std::out_of_range("unknown patient " + id);
}

std::size_t DatasetIndex::num_images() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.image_ids.size();
  return n;
}

std::size_t DatasetIndex::count(ClassLabel label) const {
  return static_cast<std::size_t>(
      std::count_if(patients.begin(), patients.end(), [&](const auto& p) { return p.label == label; }));
}

std::filesystem::path DatasetIndex::image_path(const std::string& image_id) const {
  return image_store_root / image_id;
}

const PatientRecord& DatasetIndex::owner_of(const std::string& image_id) const {
  for (const auto& p : patients)
    if (std::find(p.image_ids.begin(), p.image_ids.end(), image_id) != p.image_ids.end()) return p;
  throw std::out_of_range("image " + image_id + " belongs to no patient");
}

void validate(const DatasetIndex& index) {
  if (index.patients.empty()) throw std::runtime_error("no patients");
  std::unordered_set<std::string> seen;
  for (const auto& p : index.patients) {
    if (!seen.insert(p.patient_id).second)
      throw std::runtime_error("duplicate patient_id " + p.patient_id);
    if (p.image_ids.empty()) throw std::runtime_error("patient " + p.patient_id + " has no images");
    if (p.fat_percent) {
      const double fat = *p.fat_percent;
      if (fat < 0.0 || fat > 100.0)
        throw std::runtime_error("patient " + p.patient_id + ": fat_percent outside [0,100]");
      const bool fatty = fat > kFattyThresholdPercent;
      if (fatty != (p.label == ClassLabel::unhealthy))
        throw std::runtime_error("patient " + p.patient_id + ": label " + std::to_string(to_int(p.label)) +
                                 " inconsistent with fat_percent " + std::to_string(fat));
    }
  }
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(s);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

DatasetIndex load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest not found: " + path.string());
  DatasetIndex index;
  index.image_store_root = path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("no patients");
  const auto header = split(trim(line), ',');
  if (header.size() != 4 || trim(header[0]) != "patient_id" || trim(header[1]) != "label" ||
      trim(header[2]) != "fat_percent" || trim(header[3]) != "image_paths")
    throw std::runtime_error("manifest header must be patient_id,label,fat_percent,image_paths");

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 4)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    PatientRecord p;
    p.patient_id = trim(fields[0]);
    try {
      p.label = label_from_int(std::stoi(trim(fields[1])));
      if (const auto fat = trim(fields[2]); !fat.empty()) p.fat_percent = std::stod(fat);
    } catch (const std::logic_error& e) {
      throw std::runtime_error("patient " + p.patient_id + ": " + e.what());
    }
    for (const auto& id : split(trim(fields[3]), ';'))
      if (!trim(id).empty()) p.image_ids.push_back(trim(id));
    index.patients.push_back(std::move(p));
  }
  validate(index);

  for (const auto& p : index.patients)
    for (const auto& id : p.image_ids)
      if (!std::filesystem::exists(index.image_path(id)))
        throw std::runtime_error("patient " + p.patient_id + ": missing image file " + id);

  const Plane first = read_png_gray(index.image_path(index.patients.front().image_ids.front()));
  index.pixel_geometry = {static_cast<int>(first.rows()), static_cast<int>(first.cols())};
  return index;
}

void write_manifest(const DatasetIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "patient_id,label,fat_percent,image_paths\n";
  for (const auto& p : index.patients) {
    out << p.patient_id << ',' << to_int(p.label) << ',';
    if (p.fat_percent) out << *p.fat_percent;
    out << ',';
    for (std::size_t i = 0; i < p.image_ids.size(); ++i) out << (i ? ";" : "") << p.image_ids[i];
    out << '\n';
  }
}

int FoldAssignment::fold_of(const std::string& patient_id) const {
  const auto it = fold_of_patient.find(patient_id);
  if (it == fold_of_patient.end()) throw std::out_of_range("patient " + patient_id + " has no fold");
  return it->second;
}

FoldAssignment assign_folds(const DatasetIndex& index, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k must be at least 2");
  FoldAssignment folds;
  folds.k = k;
  folds.seed = seed;

  std::mt19937_64 rng(seed);
  int next_fold = 0;
  for (ClassLabel label : {ClassLabel::healthy, ClassLabel::unhealthy}) {
    std::vector<std::string> ids;
    for (const auto& p : index.patients)
      if (p.label == label) ids.push_back(p.patient_id);
    if (ids.empty()) continue;
    if (ids.size() < static_cast<std::size_t>(k))
      throw std::invalid_argument("class " + std::to_string(to_int(label)) + " has " +
                                  std::to_string(ids.size()) + " patients, fewer than k=" +
                                  std::to_string(k));
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    for (const auto& id : ids) {
      folds.fold_of_patient[id] = next_fold;
      next_fold = (next_fold + 1) % k;
    }
  }
  return folds;
}

namespace {

void check_fold(const FoldAssignment& folds, int fold_id) {
  if (fold_id < 0 || fold_id >= folds.k)
    throw std::out_of_range("fold_id " + std::to_string(fold_id) + " outside [0," +
                            std::to_string(folds.k) + ")");
}

template <typename Pred>
std::vector<std::string> select_patients(const DatasetIndex& index, Pred&& keep) {
  std::vector<std::string> out;
  for (const auto& p : index.patients)
    if (keep(p)) out.push_back(p.patient_id);
  return out;
}

template <typename Pred>
std::vector<std::string> select_images(const DatasetIndex& index, Pred&& keep) {
  std::vector<std::string> out;
  for (const auto& p : index.patients)
    if (keep(p)) out.insert(out.end(), p.image_ids.begin(), p.image_ids.end());
  return out;
}

}  // namespace

std::vector<std::string> training_patients(const DatasetIndex& index, const FoldAssignment& folds,
                                           int fold_id) {
  check_fold(folds, fold_id);
  return select_patients(index, [&](const auto& p) { return folds.fold_of(p.patient_id) != fold_id; });
}

std::vector<std::string> validation_patients(const DatasetIndex& index,
                                             const FoldAssignment& folds, int fold_id) {
  check_fold(folds, fold_id);
  return select_patients(index, [&](const auto& p) { return folds.fold_of(p.patient_id) == fold_id; });
}

std::vector<std::string> training_images(const DatasetIndex& index, const FoldAssignment& folds,
                                          int fold_id) {
  check_fold(folds, fold_id);
  return select_images(index, [&](const auto& p) { return folds.fold_of(p.patient_id) != fold_id; });
}

std::vector<std::string> validation_images(const DatasetIndex& index, const FoldAssignment& folds,
                                           int fold_id) {
  check_fold(folds, fold_id);
  return select_images(index, [&](const auto& p) { return folds.fold_of(p.patient_id) == fold_id; });
}

void save_folds(const FoldAssignment& folds, const std::filesystem::path& path) {
  nlohmann::json j;
  j["k"] = folds.k;
  j["seed"] = folds.seed;
  j["fold_of_patient"] = folds.fold_of_patient;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

FoldAssignment load_folds(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("fold file not found: " + path.string());
  const auto j = nlohmann::json::parse(in);
  FoldAssignment folds;
  folds.k = j.at("k").get<int>();
  folds.seed = j.at("seed").get<std::uint64_t>();
  folds.fold_of_patient = j.at("fold_of_patient").get<std::map<std::string, int>>();
  return folds;
}

}  // namespace liverdiff
