#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace liverdiff {

/// Binary disease label: 0 healthy (non-fatty), 1 unhealthy (fatty).
enum class ClassLabel : int { healthy = 0, unhealthy = 1 };

inline int to_int(ClassLabel c) { return static_cast<int>(c); }
ClassLabel label_from_int(int v);

/// Fat fraction above this percentage is labelled fatty.
inline constexpr double kFattyThresholdPercent = 5.0;

struct PatientRecord {
  std::string patient_id;
  ClassLabel label = ClassLabel::healthy;
  std::optional<double> fat_percent;
  std::vector<std::string> image_ids;  ///< paths relative to the image store root
};

struct PixelGeometry {
  int height = 0;
  int width = 0;
};

struct DatasetIndex {
  std::vector<PatientRecord> patients;
  std::filesystem::path image_store_root;
  PixelGeometry pixel_geometry;

  [[nodiscard]] const PatientRecord& patient(const std::string& id) const;
  [[nodiscard]] std::size_t num_images() const;
  [[nodiscard]] std::size_t count(ClassLabel label) const;
  [[nodiscard]] std::filesystem::path image_path(const std::string& image_id) const;
  /// Owning patient of an image id; throws if unknown.
  [[nodiscard]] const PatientRecord& owner_of(const std::string& image_id) const;
};

/// Checks record-level invariants (label/fat consistency, at least one image,
/// unique ids). Errors name the offending patient.
void validate(const DatasetIndex& index);

/// Parses a manifest with header `patient_id,label,fat_percent,image_paths`.
/// image_paths are `;`-separated and relative to the manifest's directory.
DatasetIndex load_manifest(const std::filesystem::path& path);

void write_manifest(const DatasetIndex& index, const std::filesystem::path& path);

struct FoldAssignment {
  int k = 5;
  std::uint64_t seed = 0;
  std::map<std::string, int> fold_of_patient;

  [[nodiscard]] int fold_of(const std::string& patient_id) const;
};

/// Patient-level class-stratified k-fold split. Patients of each class are
/// shuffled by seed, then dealt round-robin with one pointer that carries over
/// between classes, so fold sizes and per-class counts both differ by at most 1.
FoldAssignment assign_folds(const DatasetIndex& index, int k, std::uint64_t seed);

std::vector<std::string> training_patients(const DatasetIndex& index, const FoldAssignment& folds,
                                           int fold_id);
std::vector<std::string> validation_patients(const DatasetIndex& index,
                                             const FoldAssignment& folds, int fold_id);
std::vector<std::string> training_images(const DatasetIndex& index, const FoldAssignment& folds,
                                          int fold_id);
std::vector<std::string> validation_images(const DatasetIndex& index, const FoldAssignment& folds,
                                           int fold_id);

void save_folds(const FoldAssignment& folds, const std::filesystem::path& path);
FoldAssignment load_folds(const std::filesystem::path& path);

}  // namespace liverdiff
