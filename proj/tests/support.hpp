#pragma once

#include "liverdiff/dataset.hpp"
#include "liverdiff/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>
#include <unistd.h>

namespace testing {

/// Directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("liverdiff-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// In-memory index: `healthy` then `unhealthy` patients with `images` ids each.
inline liverdiff::DatasetIndex synthetic_index(int healthy, int unhealthy, int images = 10) {
  liverdiff::DatasetIndex index;
  for (int p = 0; p < healthy + unhealthy; ++p) {
    liverdiff::PatientRecord r;
    r.patient_id = "P" + std::to_string(p);
    r.label = p < healthy ? liverdiff::ClassLabel::healthy : liverdiff::ClassLabel::unhealthy;
    for (int i = 0; i < images; ++i) r.image_ids.push_back(r.patient_id + "_" + std::to_string(i) + ".png");
    index.patients.push_back(r);
  }
  return index;
}

/// Relative L2 error between backprop gradients and central differences.
/// `loss_and_backprop(true)` must accumulate gradients into `params`.
template <typename Loss>
inline double relative_gradient_error(liverdiff::nn::ParamList<double> params, Loss&& loss_and_backprop, double h = 1e-6) {
  liverdiff::nn::zero_grads(params);
  loss_and_backprop(true);
  std::vector<double> analytic, numeric;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double v = p->value.data()[i];
      p->value.data()[i] = v + h;
      const double up = loss_and_backprop(false);
      p->value.data()[i] = v - h;
      const double down = loss_and_backprop(false);
      p->value.data()[i] = v;
      analytic.push_back(p->grad.data()[i]);
      numeric.push_back((up - down) / (2 * h));
    }
  }
  const Eigen::Map<Eigen::VectorXd> a(analytic.data(), static_cast<Eigen::Index>(analytic.size()));
  const Eigen::Map<Eigen::VectorXd> n(numeric.data(), static_cast<Eigen::Index>(numeric.size()));
  return (a - n).norm() / std::max(a.norm(), n.norm());
}

}  // namespace testing
