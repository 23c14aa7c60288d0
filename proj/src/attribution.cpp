#include "liverdiff/attribution.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace liverdiff {

RegionPartition grid_partition(Eigen::Index height, Eigen::Index width, int rows, int cols) {
  if (rows < 1 || cols < 1 || rows > height || cols > width) throw std::invalid_argument("grid_partition: bad grid");
  RegionPartition p;
  p.n_regions = rows * cols;
  p.region_of.resize(height, width);
  for (Eigen::Index y = 0; y < height; ++y)
    for (Eigen::Index x = 0; x < width; ++x)
      p.region_of(y, x) = static_cast<int>(y * rows / height) * cols + static_cast<int>(x * cols / width);
  return p;
}

RegionPartition partition_regions(const Plane& image, int n_regions, PartitionMethod method) {
  if (n_regions < 1) throw std::invalid_argument("partition_regions: n_regions must be >= 1");
  if (n_regions > image.size()) throw std::invalid_argument("partition_regions: more regions than pixels");
  if (method == PartitionMethod::grid) {
    int rows = 1;
    for (int d = 1; d * d <= n_regions; ++d)
      if (n_regions % d == 0) rows = d;
    int cols = n_regions / rows;
    if (rows > image.rows() || cols > image.cols()) std::swap(rows, cols);
    return grid_partition(image.rows(), image.cols(), rows, cols);
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(image.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return image.data()[a] < image.data()[b]; });
  RegionPartition p;
  p.n_regions = n_regions;
  p.region_of.resize(image.rows(), image.cols());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto idx = order[rank];
    p.region_of(idx / image.cols(), idx % image.cols()) =
        static_cast<int>(rank * static_cast<std::size_t>(n_regions) / order.size());
  }
  return p;
}

void check_partition(const RegionPartition& p) {
  std::vector<bool> used(static_cast<std::size_t>(std::max(p.n_regions, 0)), false);
  for (Eigen::Index i = 0; i < p.region_of.size(); ++i) {
    const int r = p.region_of.data()[i];
    if (r < 0 || r >= p.n_regions) throw std::invalid_argument("partition: pixel with region id out of range");
    used[static_cast<std::size_t>(r)] = true;
  }
  for (std::size_t r = 0; r < used.size(); ++r)
    if (!used[r]) throw std::invalid_argument("partition: region " + std::to_string(r) + " is empty");
}

Plane mask_regions(const Plane& image, const RegionPartition& partition, std::uint64_t keep, const Plane& baseline) {
  Plane out = image;
  for (Eigen::Index y = 0; y < image.rows(); ++y)
    for (Eigen::Index x = 0; x < image.cols(); ++x)
      if (!(keep & (std::uint64_t{1} << partition.region_of(y, x)))) out(y, x) = baseline(y, x);
  return out;
}

AttributionMap shapley_attribution(const ImageModel& model, const Plane& image, const RegionPartition& partition,
                                   const Plane& baseline, int n_samples, std::uint64_t seed) {
  check_partition(partition);
  if (partition.region_of.rows() != image.rows() || partition.region_of.cols() != image.cols() ||
      baseline.rows() != image.rows() || baseline.cols() != image.cols())
    throw std::invalid_argument("shapley_attribution: image, partition and baseline shapes differ");
  if (partition.n_regions > 63) throw std::invalid_argument("shapley_attribution: at most 63 regions");
  const int n = partition.n_regions;
  const auto value = [&](std::uint64_t mask) {
    const double v = model(mask_regions(image, partition, mask, baseline));
    if (!std::isfinite(v)) throw std::runtime_error("shapley_attribution: model returned a non-finite value");
    return v;
  };

  AttributionMap attr;
  attr.model_output = value((std::uint64_t{1} << n) - 1);
  attr.baseline_output = value(0);
  if (n <= kMaxExactRegions) {
    attr.region_values = exact_shapley(n, value);
    attr.standard_error = Eigen::VectorXd::Zero(n);
    attr.exact = true;
  } else {
    auto est = sampled_shapley(n, value, std::max(2, n_samples), seed);
    attr.region_values = std::move(est.values);
    attr.standard_error = std::move(est.standard_error);
    attr.exact = false;
  }

  Eigen::VectorXd area = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < partition.region_of.size(); ++i) area(partition.region_of.data()[i]) += 1;
  attr.pixel_values.resize(image.rows(), image.cols());
  for (Eigen::Index y = 0; y < image.rows(); ++y)
    for (Eigen::Index x = 0; x < image.cols(); ++x) {
      const int r = partition.region_of(y, x);
      attr.pixel_values(y, x) = static_cast<float>(attr.region_values(r) / area(r));
    }
  return attr;
}

RgbImage render_heatmap(const AttributionMap& attr) {
  const Plane& v = attr.pixel_values;
  const float scale = v.size() ? v.cwiseAbs().maxCoeff() : 0.0f;
  RgbImage rgb;
  for (auto& c : rgb) c = Plane::Constant(v.rows(), v.cols(), 255.0f);
  if (scale == 0.0f) return rgb;
  for (Eigen::Index y = 0; y < v.rows(); ++y)
    for (Eigen::Index x = 0; x < v.cols(); ++x) {
      const float s = v(y, x) / scale;
      const float fade = 255.0f * (1.0f - std::abs(s));
      if (s > 0) {
        rgb[1](y, x) = fade;
        rgb[2](y, x) = fade;
      } else if (s < 0) {
        rgb[0](y, x) = fade;
        rgb[1](y, x) = fade;
      }
    }
  return rgb;
}

void save_attribution(const std::filesystem::path& dir, const std::string& stem, const Plane& scaled_image,
                      const RegionPartition& partition, const AttributionMap& attr) {
  std::filesystem::create_directories(dir);
  write_png_gray(dir / (stem + "_input.png"), to_raw(scaled_image));
  write_png_rgb(dir / (stem + "_shap.png"), render_heatmap(attr));
  nlohmann::json j;
  j["n_regions"] = partition.n_regions;
  j["exact"] = attr.exact;
  j["model_output"] = attr.model_output;
  j["baseline_output"] = attr.baseline_output;
  j["region_values"] = std::vector<double>(attr.region_values.data(), attr.region_values.data() + attr.region_values.size());
  j["standard_error"] =
      std::vector<double>(attr.standard_error.data(), attr.standard_error.data() + attr.standard_error.size());
  std::ofstream(dir / (stem + "_shap.json")) << j.dump(2) << '\n';
}

}  // namespace liverdiff
