#include "liverdiff/phantom.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace liverdiff {

PhantomScene make_phantom_scene(ClassLabel label, double fat_percent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  PhantomScene s;
  s.organ1 = {s.height * 0.42 + 4 * jitter(rng), s.width * 0.40 + 5 * jitter(rng),
              s.height * 0.26 + 2 * jitter(rng), s.width * 0.24 + 3 * jitter(rng)};
  s.organ2 = {s.height * 0.70 + 4 * jitter(rng), s.width * 0.64 + 5 * jitter(rng),
              s.height * 0.13 + 2 * jitter(rng), s.width * 0.11 + 2 * jitter(rng)};
  std::normal_distribution<double> spread(0.0, 0.12);
  std::uniform_real_distribution<double> gain(0.8, 1.2);  // per-scan gain setting
  s.organ2_level = (80 + 6 * jitter(rng)) * gain(rng);
  std::bernoulli_distribution coin(0.5);
  if (label == ClassLabel::unhealthy) {
    // Echogenicity grows with infiltration; saturates around 60%.
    const double severity = std::clamp(fat_percent / 60.0, 0.15, 1.0);
    s.organ1_level = s.organ2_level * (1.12 + 0.25 * severity + spread(rng));
    s.vein_blur = coin(rng) ? 2 : 1;
  } else {
    s.organ1_level = s.organ2_level * (1.02 + spread(rng));
    s.vein_blur = coin(rng) ? 1 : 0;
  }
  return s;
}

namespace {

Plane box_blur(const Plane& in, int radius) {
  if (radius <= 0) return in;
  Plane out = Plane::Zero(in.rows(), in.cols());
  for (Eigen::Index y = 0; y < in.rows(); ++y) {
    for (Eigen::Index x = 0; x < in.cols(); ++x) {
      double acc = 0;
      int n = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const auto yy = y + dy;
          const auto xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= in.rows() || xx >= in.cols()) continue;
          acc += in(yy, xx);
          ++n;
        }
      }
      out(y, x) = static_cast<float>(acc / n);
    }
  }
  return out;
}

}  // namespace

Plane render_phantom(const PhantomScene& s, std::mt19937_64& rng) {
  const double apex_y = -12.0;
  const double apex_x = s.width / 2.0;
  const double r_min = 18.0;
  const double r_max = s.height - 4.0;
  const double half_angle = 40.0 * std::numbers::pi / 180.0;

  // Vessel lines inside organ 1: a few dark chords, optionally blurred.
  Plane veins = Plane::Zero(s.height, s.width);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int v = 0; v < 3; ++v) {
    const double angle = (unit(rng) - 0.5) * std::numbers::pi * 0.8;
    const double oy = s.organ1.cy + (unit(rng) - 0.5) * s.organ1.ry;
    const double ox = s.organ1.cx + (unit(rng) - 0.5) * s.organ1.rx;
    for (double t = -s.organ1.rx; t <= s.organ1.rx; t += 0.5) {
      const auto y = static_cast<Eigen::Index>(std::lround(oy + t * std::sin(angle)));
      const auto x = static_cast<Eigen::Index>(std::lround(ox + t * std::cos(angle)));
      if (y >= 0 && x >= 0 && y < s.height && x < s.width && s.organ1.contains(y, x)) veins(y, x) = 1.0f;
    }
  }
  veins = box_blur(veins, static_cast<int>(s.vein_blur));
  if (veins.maxCoeff() > 0) veins /= veins.maxCoeff();

  std::normal_distribution<double> speckle(1.0, 0.25);
  Plane img = Plane::Zero(s.height, s.width);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const double dy = y - apex_y;
      const double dx = x - apex_x;
      const double r = std::hypot(dy, dx);
      const double theta = std::atan2(dx, dy);
      if (r < r_min || r > r_max || std::abs(theta) > half_angle) continue;
      double level = 55.0;
      if (s.organ1.contains(y, x)) level = s.organ1_level * (1.0 - 0.6 * veins(y, x));
      if (s.organ2.contains(y, x)) level = s.organ2_level;
      level *= 1.0 - 0.25 * (r - r_min) / (r_max - r_min);  // depth attenuation
      const double v = level * std::max(0.05, speckle(rng));
      img(y, x) = static_cast<float>(std::clamp(v, 1.0, 255.0));
    }
  }
  // Annotation text block in the corner, disconnected from the fan.
  for (int y = 3; y < 9; ++y)
    for (int x = 3; x < 22; ++x)
      if ((x / 2 + y) % 3 != 0) img(y, x) = 230.0f;
  return img;
}

DatasetIndex generate_phantom_dataset(int n_patients, int images_per_patient, std::uint64_t seed,
                                      const std::filesystem::path& out_dir) {
  if (n_patients < 4) throw std::invalid_argument("phantom dataset needs at least 4 patients");
  if (images_per_patient < 1) throw std::invalid_argument("images_per_patient must be at least 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());

  std::mt19937_64 rng(seed);
  const int n_healthy = std::max(1, static_cast<int>(std::lround(n_patients * 17.0 / 55.0)));
  DatasetIndex index;
  index.image_store_root = out_dir;
  nlohmann::json scenes = nlohmann::json::object();

  for (int p = 0; p < n_patients; ++p) {
    PatientRecord rec;
    std::ostringstream pid;
    pid << "P" << std::setw(3) << std::setfill('0') << p + 1;
    rec.patient_id = pid.str();
    const bool healthy = p < n_healthy;
    rec.label = healthy ? ClassLabel::healthy : ClassLabel::unhealthy;
    std::uniform_real_distribution<double> fat =
        healthy ? std::uniform_real_distribution<double>(0.0, 5.0)
                : std::uniform_real_distribution<double>(10.0, 60.0);
    rec.fat_percent = std::round(fat(rng) * 10.0) / 10.0;

    // Frames of one patient share anatomy and gain and differ by probe motion.
    const PhantomScene base = make_phantom_scene(rec.label, *rec.fat_percent, rng);
    std::uniform_real_distribution<double> motion(-2.0, 2.0);
    for (int f = 0; f < images_per_patient; ++f) {
      PhantomScene scene = base;
      const double dy = motion(rng), dx = motion(rng);
      scene.organ1.cy += dy;
      scene.organ1.cx += dx;
      scene.organ2.cy += dy;
      scene.organ2.cx += dx;
      const Plane img = render_phantom(scene, rng);
      std::ostringstream iid;
      iid << "images/" << rec.patient_id << "_" << std::setw(2) << std::setfill('0') << f << ".png";
      write_png_gray(out_dir / iid.str(), img);
      rec.image_ids.push_back(iid.str());
      scenes[iid.str()] = {{"organ1", {scene.organ1.cy, scene.organ1.cx, scene.organ1.ry, scene.organ1.rx}},
                           {"organ2", {scene.organ2.cy, scene.organ2.cx, scene.organ2.ry, scene.organ2.rx}}};
    }
    index.patients.push_back(std::move(rec));
  }
  index.pixel_geometry = {PhantomScene{}.height, PhantomScene{}.width};
  validate(index);
  write_manifest(index, out_dir / "manifest.csv");
  std::ofstream(out_dir / "phantom_scenes.json") << scenes.dump(1) << '\n';
  return index;
}

}  // namespace liverdiff
