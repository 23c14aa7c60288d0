#pragma once

#include "liverdiff/image.hpp"

#include <Eigen/Dense>

#include <array>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace liverdiff {

/// Bounding-box crop of the largest 8-connected nonzero component. Pixels of
/// other components inside the box are zeroed. Throws on an all-zero image.
ImageTensor extract_roi(const ImageTensor& raw);

/// size x size center crop; dimensions smaller than `size` are zero-padded
/// symmetrically first (the odd pixel goes to the bottom/right).
ImageTensor center_crop(const ImageTensor& image, Eigen::Index size);

/// Fixed affine map v -> v / 127.5 - 1.
ImageTensor scale_intensity(const ImageTensor& raw);
ImageTensor unscale_intensity(const ImageTensor& scaled);

struct CropRange {
  double scale_lo = 0.8;
  double scale_hi = 1.0;
  double ratio_lo = 3.0 / 4.0;
  double ratio_hi = 4.0 / 3.0;
};

/// Random sub-window (area fraction in [scale_lo, scale_hi], aspect ratio
/// log-uniform in [ratio_lo, ratio_hi]) resized bilinearly to out_size.
ImageTensor random_resized_crop(const ImageTensor& image, Eigen::Index out_size,
                                const CropRange& range, std::uint64_t seed);

/// Per-pixel brightness classes, compact label form of a one-hot map.
struct SemanticMap {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> labels;
  int n_classes = 5;
  std::string source_image_id;
  bool degenerate = false;  ///< constant input; every pixel is class 0

  [[nodiscard]] Eigen::Index height() const { return labels.rows(); }
  [[nodiscard]] Eigen::Index width() const { return labels.cols(); }
  /// Binary plane of channel c of the one-hot encoding.
  [[nodiscard]] Plane one_hot(int c) const;
  friend bool operator==(const SemanticMap& a, const SemanticMap& b) {
    return a.n_classes == b.n_classes && a.labels == b.labels;
  }
};

inline constexpr int kHistogramBins = 256;

/// Histogram of a [-1, 1] image over kHistogramBins equal bins.
Eigen::VectorXd intensity_histogram(const Plane& scaled);

/// Multi-level Otsu: n_classes - 1 bin thresholds maximizing between-class
/// variance. Class k covers bins (t[k-1], t[k]]. Solved by dynamic programming.
std::vector<int> multi_otsu_thresholds(const Eigen::VectorXd& histogram, int n_classes);

/// Otsu brightness classes, downsampled by two with a 2x2 majority vote
/// (ties to the lower class). Requires even dimensions.
SemanticMap make_semantic_map(const ImageTensor& scaled, int n_classes = 5,
                              std::string source_image_id = {});

/// Piecewise-affine warp driven by a grid x grid lattice of control points
/// displaced by N(0, strength * side) pixels; nearest-neighbour sampling.
SemanticMap piecewise_affine_distort(const SemanticMap& map, double strength, std::uint64_t seed,
                                     int grid = 4);

/// Bilinear rotation about the image center; uncovered pixels take the
/// domain's black level.
ImageTensor rotate(const ImageTensor& image, double degrees);

struct AugmentResult {
  ImageTensor image;
  bool rotated = false;
  double angle_deg = 0.0;
};

inline constexpr double kRotationProbability = 0.25;
inline constexpr double kMaxRotationDeg = 5.0;

/// random_resized_crop followed, with probability 0.25, by a rotation
/// uniform in [-5, 5] degrees.
AugmentResult geometric_augment(const ImageTensor& image, std::uint64_t seed, Eigen::Index out_size,
                                const CropRange& range = {});

inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

/// Replicates a grayscale scaled image to 3 channels and applies ImageNet
/// per-channel standardization on the [0, 1] representation.
ImageTensor normalize_imagenet(const ImageTensor& scaled);

struct PreprocessConfig {
  Eigen::Index crop_size = 320;
  Eigen::Index out_size = 256;
  CropRange crop_range;
};

/// extract_roi -> center_crop -> scale_intensity.
ImageTensor prepare_scaled(const Plane& raw, const PreprocessConfig& config);

/// Deterministic classifier input: prepared, then resized to out_size.
ImageTensor prepare_classifier_input(const Plane& raw, const PreprocessConfig& config);

/// On-disk cache: `<dir>/<id>.png` images, `<dir>/<id>.map` label bytes and
/// `<dir>/index.json` listing shapes and provenance.
class PreprocessCache {
 public:
  explicit PreprocessCache(std::filesystem::path dir);

  void put(const std::string& image_id, const ImageTensor& scaled, const SemanticMap* map = nullptr);
  [[nodiscard]] bool contains(const std::string& image_id) const;
  [[nodiscard]] ImageTensor image(const std::string& image_id) const;
  [[nodiscard]] SemanticMap map(const std::string& image_id) const;
  [[nodiscard]] std::vector<std::string> image_ids() const;
  /// Rewrites index.json.
  void flush() const;

  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

 private:
  struct Entry {
    std::string stem;
    Eigen::Index height = 0;
    Eigen::Index width = 0;
    bool has_map = false;
    int map_classes = 5;
    bool map_degenerate = false;
  };
  [[nodiscard]] const Entry& entry(const std::string& image_id) const;

  std::filesystem::path dir_;
  std::map<std::string, Entry> entries_;
};

}  // namespace liverdiff
