#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace liverdiff {

/// One image channel, row-major so that (row, col) matches (y, x) of the PNG raster.
using Plane = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ValueDomain { raw, scaled, normalized };

std::string to_string(ValueDomain domain);

/// Grayscale or multi-channel image with a value-domain tag.
///
/// raw images live in [0, 255], scaled images in [-1, 1]. Normalized images
/// are unbounded. The tag is checked against the pixel range on construction.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(Plane gray, ValueDomain domain);
  ImageTensor(std::vector<Plane> channels, ValueDomain domain);

  [[nodiscard]] Eigen::Index height() const { return channels_.empty() ? 0 : channels_[0].rows(); }
  [[nodiscard]] Eigen::Index width() const { return channels_.empty() ? 0 : channels_[0].cols(); }
  [[nodiscard]] std::size_t num_channels() const { return channels_.size(); }
  [[nodiscard]] ValueDomain domain() const { return domain_; }

  [[nodiscard]] const Plane& channel(std::size_t c) const { return channels_.at(c); }
  [[nodiscard]] const Plane& gray() const { return channels_.at(0); }
  [[nodiscard]] const std::vector<Plane>& channels() const { return channels_; }

 private:
  static void check_domain(const std::vector<Plane>& channels, ValueDomain domain);

  std::vector<Plane> channels_;
  ValueDomain domain_ = ValueDomain::raw;
};

/// 8-bit grayscale PNG to a raw-domain plane.
Plane read_png_gray(const std::filesystem::path& path);

/// Writes a raw-domain plane (values rounded and clamped to [0, 255]).
void write_png_gray(const std::filesystem::path& path, const Plane& raw);

/// In-memory PNG encoding of a raw-domain plane.
std::string encode_png_gray(const Plane& raw);

using RgbImage = std::array<Plane, 3>;

void write_png_rgb(const std::filesystem::path& path, const RgbImage& rgb);

/// [-1, 1] -> [0, 255]
Plane to_raw(const Plane& scaled);

/// Bilinear lookup at fractional (y, x); out-of-bounds samples read `fill`.
float sample_bilinear(const Plane& img, double y, double x, float fill = 0.0f);

/// Bilinear resize of the sub-window [y0, y0 + h) x [x0, x0 + w) to out_h x out_w.
Plane resize_bilinear(const Plane& img, double y0, double x0, double h, double w,
                      Eigen::Index out_h, Eigen::Index out_w);

}  // namespace liverdiff
