#pragma once

#include "liverdiff/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace liverdiff {

struct RegionPartition {
  Eigen::MatrixXi region_of;  ///< H x W, ids 0..n_regions-1
  int n_regions = 0;
};

enum class PartitionMethod { grid, brightness };

/// Grid of rows x cols near-equal rectangles.
RegionPartition grid_partition(Eigen::Index height, Eigen::Index width, int rows, int cols);

/// Deterministic partition into n_regions: a near-square grid, or equal-count
/// brightness quantiles (ties broken by raster order).
RegionPartition partition_regions(const Plane& image, int n_regions, PartitionMethod method = PartitionMethod::grid);

/// Throws unless every pixel carries an id in [0, n) and every id is used.
void check_partition(const RegionPartition& p);

inline constexpr int kMaxExactRegions = 12;

/// Exact Shapley values of an n-player game given v over coalition bitmasks.
template <typename ValueFn>
Eigen::VectorXd exact_shapley(int n, ValueFn&& v) {
  if (n < 1 || n > 20) throw std::invalid_argument("exact_shapley: n out of range");
  const std::uint32_t full = 1u << n;
  Eigen::VectorXd values(full);
  for (std::uint32_t m = 0; m < full; ++m) values(m) = v(m);
  // weight(|S|) = |S|! (n - |S| - 1)! / n!
  Eigen::VectorXd weight(n);
  for (int s = 0; s < n; ++s)
    weight(s) = std::exp(std::lgamma(s + 1.0) + std::lgamma(n - s) - std::lgamma(n + 1.0));
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(n);
  for (std::uint32_t m = 0; m < full; ++m) {
    const int size = std::popcount(m);
    for (int i = 0; i < n; ++i) {
      if (m & (1u << i)) continue;
      phi(i) += weight(size) * (values(m | (1u << i)) - values(m));
    }
  }
  return phi;
}

struct ShapleyEstimate {
  Eigen::VectorXd values;
  Eigen::VectorXd standard_error;
};

/// Permutation-sampling Shapley estimator: mean marginal contribution over
/// random player orders, with the standard error of that mean.
template <typename ValueFn>
ShapleyEstimate sampled_shapley(int n, ValueFn&& v, int n_permutations, std::uint64_t seed) {
  if (n < 1 || n > 63) throw std::invalid_argument("sampled_shapley: n out of range");
  if (n_permutations < 2) throw std::invalid_argument("sampled_shapley: need at least 2 permutations");
  std::mt19937_64 rng(seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n), sum_sq = Eigen::VectorXd::Zero(n);
  for (int p = 0; p < n_permutations; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    std::uint64_t mask = 0;
    double prev = v(mask);
    for (int i : order) {
      mask |= std::uint64_t{1} << i;
      const double cur = v(mask);
      sum(i) += cur - prev;
      sum_sq(i) += (cur - prev) * (cur - prev);
      prev = cur;
    }
  }
  ShapleyEstimate est;
  const double k = n_permutations;
  est.values = sum / k;
  const Eigen::VectorXd var = ((sum_sq - k * est.values.cwiseAbs2()) / (k - 1)).cwiseMax(0.0);
  est.standard_error = (var / k).cwiseSqrt();
  return est;
}

/// Classifier output on a single scaled image.
using ImageModel = std::function<double(const Plane&)>;

struct AttributionMap {
  Plane pixel_values;             ///< region value spread evenly over its pixels
  Eigen::VectorXd region_values;
  Eigen::VectorXd standard_error;  ///< zeros on the exact path
  double baseline_output = 0;     ///< f(all regions masked)
  double model_output = 0;        ///< f(image)
  bool exact = true;
};

/// Image with the regions outside `keep` replaced by the baseline pixels.
Plane mask_regions(const Plane& image, const RegionPartition& partition, std::uint64_t keep, const Plane& baseline);

/// Shapley attribution of f(image) - f(baseline) to the partition's regions.
/// Exact for <= 12 regions; otherwise permutation sampling with n_samples orders.
AttributionMap shapley_attribution(const ImageModel& model, const Plane& image, const RegionPartition& partition,
                                   const Plane& baseline, int n_samples = 200, std::uint64_t seed = 0);

/// Diverging map: white at 0, red for positive, blue for negative, scaled by
/// the largest magnitude.
RgbImage render_heatmap(const AttributionMap& attr);

/// Writes <stem>_input.png, <stem>_shap.png and <stem>_shap.json.
void save_attribution(const std::filesystem::path& dir, const std::string& stem, const Plane& scaled_image,
                      const RegionPartition& partition, const AttributionMap& attr);

}  // namespace liverdiff
