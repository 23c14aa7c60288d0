#pragma once

#include "liverdiff/dataset.hpp"
#include "liverdiff/image.hpp"

#include <cstdint>
#include <filesystem>
#include <random>

namespace liverdiff {

struct Ellipse {
  double cy = 0, cx = 0, ry = 1, rx = 1;
  [[nodiscard]] bool contains(double y, double x) const {
    const double dy = (y - cy) / ry;
    const double dx = (x - cx) / rx;
    return dy * dy + dx * dx <= 1.0;
  }
};

/// Scene description of one synthetic B-mode frame.
struct PhantomScene {
  int height = 120;
  int width = 180;
  Ellipse organ1;  ///< liver-like region
  Ellipse organ2;  ///< kidney-like region
  double organ1_level = 90;
  double organ2_level = 85;
  double vein_blur = 0;  ///< box-blur radius applied to the internal line structures
};

/// Scene for a patient frame. Unhealthy scenes brighten organ 1 relative to
/// organ 2 in proportion to fat_percent and blur the vessel lines.
PhantomScene make_phantom_scene(ClassLabel label, double fat_percent, std::mt19937_64& rng);

/// Fan-masked frame with multiplicative speckle and a text-like annotation
/// block outside the fan. Values are raw [0, 255].
Plane render_phantom(const PhantomScene& scene, std::mt19937_64& rng);

/// round(17 n / 55) healthy patients, the rest unhealthy. Frames of a patient
/// share one scene up to a small probe shift.
/// Writes `out_dir/images/*.png`, `out_dir/manifest.csv` and
/// `out_dir/phantom_scenes.json` (organ geometry per image, for audits).
DatasetIndex generate_phantom_dataset(int n_patients, int images_per_patient, std::uint64_t seed,
                                      const std::filesystem::path& out_dir);

}  // namespace liverdiff
