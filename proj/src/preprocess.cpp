#include "liverdiff/preprocess.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace liverdiff {

namespace {

template <typename F>
ImageTensor map_channels(const ImageTensor& image, ValueDomain domain, F&& f) {
  std::vector<Plane> out;
  out.reserve(image.num_channels());
  for (const auto& c : image.channels()) out.push_back(f(c));
  return ImageTensor(std::move(out), domain);
}

float black_level(ValueDomain domain) { return domain == ValueDomain::scaled ? -1.0f : 0.0f; }

}  // namespace

ImageTensor extract_roi(const ImageTensor& raw) {
  const Plane& img = raw.gray();
  const Eigen::Index h = img.rows();
  const Eigen::Index w = img.cols();
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> label =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(h, w, -1);

  struct Box {
    Eigen::Index y0, x0, y1, x1;
    std::size_t count;
  };
  std::vector<Box> boxes;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      if (img(y, x) == 0.0f || label(y, x) >= 0) continue;
      const int id = static_cast<int>(boxes.size());
      Box box{y, x, y, x, 0};
      label(y, x) = id;
      stack.emplace_back(y, x);
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        ++box.count;
        box.y0 = std::min(box.y0, cy);
        box.y1 = std::max(box.y1, cy);
        box.x0 = std::min(box.x0, cx);
        box.x1 = std::max(box.x1, cx);
        for (Eigen::Index dy = -1; dy <= 1; ++dy) {
          for (Eigen::Index dx = -1; dx <= 1; ++dx) {
            const Eigen::Index ny = cy + dy;
            const Eigen::Index nx = cx + dx;
            if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
            if (img(ny, nx) == 0.0f || label(ny, nx) >= 0) continue;
            label(ny, nx) = id;
            stack.emplace_back(ny, nx);
          }
        }
      }
      boxes.push_back(box);
    }
  }
  if (boxes.empty()) throw std::invalid_argument("extract_roi: image has no nonzero pixel");

  // Largest component; the first one found wins ties.
  int best = 0;
  for (int i = 1; i < static_cast<int>(boxes.size()); ++i)
    if (boxes[static_cast<std::size_t>(i)].count > boxes[static_cast<std::size_t>(best)].count) best = i;
  const Box& b = boxes[static_cast<std::size_t>(best)];
  Plane crop = img.block(b.y0, b.x0, b.y1 - b.y0 + 1, b.x1 - b.x0 + 1);
  const auto lbl = label.block(b.y0, b.x0, crop.rows(), crop.cols());
  for (Eigen::Index y = 0; y < crop.rows(); ++y)
    for (Eigen::Index x = 0; x < crop.cols(); ++x)
      if (lbl(y, x) != best) crop(y, x) = 0.0f;
  return ImageTensor(std::move(crop), raw.domain());
}

ImageTensor center_crop(const ImageTensor& image, Eigen::Index size) {
  if (size <= 0) throw std::invalid_argument("center_crop size must be positive");
  const float fill = black_level(image.domain());
  return map_channels(image, image.domain(), [&](const Plane& c) {
    const Eigen::Index h = c.rows();
    const Eigen::Index w = c.cols();
    const Eigen::Index ph = std::max<Eigen::Index>(size, h);
    const Eigen::Index pw = std::max<Eigen::Index>(size, w);
    Plane padded = Plane::Constant(ph, pw, fill);
    padded.block((ph - h) / 2, (pw - w) / 2, h, w) = c;
    return Plane(padded.block((ph - size) / 2, (pw - size) / 2, size, size));
  });
}

ImageTensor scale_intensity(const ImageTensor& raw) {
  if (raw.domain() != ValueDomain::raw) throw std::invalid_argument("scale_intensity expects a raw image");
  return map_channels(raw, ValueDomain::scaled,
                      [](const Plane& c) { return Plane((c.array() / 127.5f - 1.0f).matrix()); });
}

ImageTensor unscale_intensity(const ImageTensor& scaled) {
  if (scaled.domain() != ValueDomain::scaled)
    throw std::invalid_argument("unscale_intensity expects a scaled image");
  return map_channels(scaled, ValueDomain::raw, [](const Plane& c) {
    return Plane(((c.array() + 1.0f) * 127.5f).cwiseMax(0.0f).cwiseMin(255.0f).matrix());
  });
}

ImageTensor random_resized_crop(const ImageTensor& image, Eigen::Index out_size,
                                const CropRange& range, std::uint64_t seed) {
  if (!(range.scale_lo > 0.0 && range.scale_lo <= range.scale_hi && range.scale_hi <= 1.0))
    throw std::invalid_argument("random_resized_crop: scale range must be a nonempty subset of (0,1]");
  if (!(range.ratio_lo > 0.0 && range.ratio_lo <= range.ratio_hi))
    throw std::invalid_argument("random_resized_crop: invalid aspect-ratio range");

  const auto h = static_cast<double>(image.height());
  const auto w = static_cast<double>(image.width());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale(range.scale_lo, range.scale_hi);
  std::uniform_real_distribution<double> log_ratio(std::log(range.ratio_lo), std::log(range.ratio_hi));

  double ch = 0, cw = 0, y0 = -1, x0 = -1;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = h * w * scale(rng);
    const double ratio = std::exp(log_ratio(rng));
    const double tw = std::round(std::sqrt(area * ratio));
    const double th = std::round(std::sqrt(area / ratio));
    if (tw > 0 && th > 0 && tw <= w && th <= h) {
      ch = th;
      cw = tw;
      y0 = std::floor(std::uniform_real_distribution<double>(0.0, h - th + 1.0)(rng));
      x0 = std::floor(std::uniform_real_distribution<double>(0.0, w - tw + 1.0)(rng));
      y0 = std::min(y0, h - th);
      x0 = std::min(x0, w - tw);
      break;
    }
  }
  if (y0 < 0) {
    // Fall back to a center crop at the nearest admissible aspect ratio.
    const double in_ratio = w / h;
    if (in_ratio < range.ratio_lo) {
      cw = w;
      ch = std::round(cw / range.ratio_lo);
    } else if (in_ratio > range.ratio_hi) {
      ch = h;
      cw = std::round(ch * range.ratio_hi);
    } else {
      ch = h;
      cw = w;
    }
    y0 = std::floor((h - ch) / 2.0);
    x0 = std::floor((w - cw) / 2.0);
  }
  return map_channels(image, image.domain(), [&](const Plane& c) {
    Plane out = resize_bilinear(c, y0, x0, ch, cw, out_size, out_size);
    if (image.domain() == ValueDomain::scaled) out = out.cwiseMax(-1.0f).cwiseMin(1.0f);
    return out;
  });
}

Plane SemanticMap::one_hot(int c) const {
  return (labels.array() == static_cast<std::uint8_t>(c)).cast<float>().matrix();
}

Eigen::VectorXd intensity_histogram(const Plane& scaled) {
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(kHistogramBins);
  for (Eigen::Index i = 0; i < scaled.size(); ++i) {
    const double u = (static_cast<double>(scaled.data()[i]) + 1.0) / 2.0;
    const int b = std::clamp(static_cast<int>(std::floor(u * kHistogramBins)), 0, kHistogramBins - 1);
    hist(b) += 1.0;
  }
  return hist;
}

std::vector<int> multi_otsu_thresholds(const Eigen::VectorXd& histogram, int n_classes) {
  const auto n_bins = static_cast<int>(histogram.size());
  if (n_classes < 2 || n_classes > n_bins)
    throw std::invalid_argument("multi_otsu_thresholds: invalid class count");
  // Prefix sums of weight and first moment; bin values are bin centers.
  Eigen::VectorXd w_sum = Eigen::VectorXd::Zero(n_bins + 1);
  Eigen::VectorXd m_sum = Eigen::VectorXd::Zero(n_bins + 1);
  for (int i = 0; i < n_bins; ++i) {
    w_sum(i + 1) = w_sum(i) + histogram(i);
    m_sum(i + 1) = m_sum(i) + histogram(i) * (i + 0.5);
  }
  // Contribution S^2 / W of the class covering bins [a, b).
  auto term = [&](int a, int b) {
    const double w = w_sum(b) - w_sum(a);
    if (w <= 0.0) return 0.0;
    const double m = m_sum(b) - m_sum(a);
    return m * m / w;
  };

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  // best(k, j): best objective splitting bins [0, j) into k + 1 classes.
  Eigen::MatrixXd best = Eigen::MatrixXd::Constant(n_classes, n_bins + 1, kNegInf);
  Eigen::MatrixXi arg = Eigen::MatrixXi::Constant(n_classes, n_bins + 1, -1);
  for (int j = 1; j <= n_bins; ++j) best(0, j) = term(0, j);
  for (int k = 1; k < n_classes; ++k) {
    for (int j = k + 1; j <= n_bins; ++j) {
      for (int i = k; i < j; ++i) {
        const double v = best(k - 1, i) + term(i, j);
        if (v > best(k, j) + 1e-12 * std::abs(v)) {
          best(k, j) = v;
          arg(k, j) = i;
        }
      }
    }
  }
  std::vector<int> thresholds(static_cast<std::size_t>(n_classes - 1));
  int j = n_bins;
  for (int k = n_classes - 1; k >= 1; --k) {
    const int i = arg(k, j);
    thresholds[static_cast<std::size_t>(k - 1)] = i - 1;  // last bin of class k - 1
    j = i;
  }
  return thresholds;
}

SemanticMap make_semantic_map(const ImageTensor& scaled, int n_classes, std::string source_image_id) {
  if (scaled.domain() != ValueDomain::scaled)
    throw std::invalid_argument("make_semantic_map expects a [-1,1] image");
  const Plane& img = scaled.gray();
  if (img.rows() % 2 != 0 || img.cols() % 2 != 0)
    throw std::invalid_argument("make_semantic_map needs even image dimensions");
  if (n_classes < 2 || n_classes > 255) throw std::invalid_argument("n_classes out of range");

  SemanticMap map;
  map.n_classes = n_classes;
  map.source_image_id = std::move(source_image_id);
  const Eigen::Index oh = img.rows() / 2;
  const Eigen::Index ow = img.cols() / 2;
  map.labels.setZero(oh, ow);

  const Eigen::VectorXd hist = intensity_histogram(img);
  if ((hist.array() > 0).count() <= 1) {
    map.degenerate = true;
    std::clog << "warning: constant image " << map.source_image_id
              << " has no Otsu split; all pixels assigned class 0\n";
    return map;
  }
  const std::vector<int> thresholds = multi_otsu_thresholds(hist, n_classes);
  std::vector<std::uint8_t> class_of_bin(kHistogramBins);
  for (int b = 0; b < kHistogramBins; ++b) {
    int c = 0;
    while (c < n_classes - 1 && b > thresholds[static_cast<std::size_t>(c)]) ++c;
    class_of_bin[static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(c);
  }
  auto class_at = [&](Eigen::Index y, Eigen::Index x) {
    const double u = (static_cast<double>(img(y, x)) + 1.0) / 2.0;
    const int b = std::clamp(static_cast<int>(std::floor(u * kHistogramBins)), 0, kHistogramBins - 1);
    return class_of_bin[static_cast<std::size_t>(b)];
  };
  std::vector<int> votes(static_cast<std::size_t>(n_classes));
  for (Eigen::Index y = 0; y < oh; ++y) {
    for (Eigen::Index x = 0; x < ow; ++x) {
      std::fill(votes.begin(), votes.end(), 0);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) ++votes[class_at(2 * y + dy, 2 * x + dx)];
      // max_element returns the first maximum, i.e. the lower class on ties.
      map.labels(y, x) = static_cast<std::uint8_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return map;
}

SemanticMap piecewise_affine_distort(const SemanticMap& map, double strength, std::uint64_t seed, int grid) {
  if (strength < 0.0) throw std::invalid_argument("distortion strength must be non-negative");
  if (grid < 2) throw std::invalid_argument("control grid needs at least 2x2 points");
  if (strength == 0.0) return map;

  const Eigen::Index h = map.height();
  const Eigen::Index w = map.width();
  const double cell_h = static_cast<double>(h - 1) / (grid - 1);
  const double cell_w = static_cast<double>(w - 1) / (grid - 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dy(0.0, strength * static_cast<double>(h));
  std::normal_distribution<double> dx(0.0, strength * static_cast<double>(w));
  Eigen::MatrixXd qy(grid, grid), qx(grid, grid);
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      qy(i, j) = i * cell_h + dy(rng);
      qx(i, j) = j * cell_w + dx(rng);
    }
  }

  SemanticMap out = map;
  for (Eigen::Index y = 0; y < h; ++y) {
    const int ci = std::min(grid - 2, static_cast<int>(static_cast<double>(y) / cell_h));
    const double u = static_cast<double>(y) / cell_h - ci;
    for (Eigen::Index x = 0; x < w; ++x) {
      const int cj = std::min(grid - 2, static_cast<int>(static_cast<double>(x) / cell_w));
      const double v = static_cast<double>(x) / cell_w - cj;
      double sy = 0, sx = 0;
      if (u + v <= 1.0) {
        sy = qy(ci, cj) + u * (qy(ci + 1, cj) - qy(ci, cj)) + v * (qy(ci, cj + 1) - qy(ci, cj));
        sx = qx(ci, cj) + u * (qx(ci + 1, cj) - qx(ci, cj)) + v * (qx(ci, cj + 1) - qx(ci, cj));
      } else {
        sy = qy(ci + 1, cj + 1) + (1 - u) * (qy(ci, cj + 1) - qy(ci + 1, cj + 1)) +
             (1 - v) * (qy(ci + 1, cj) - qy(ci + 1, cj + 1));
        sx = qx(ci + 1, cj + 1) + (1 - u) * (qx(ci, cj + 1) - qx(ci + 1, cj + 1)) +
             (1 - v) * (qx(ci + 1, cj) - qx(ci + 1, cj + 1));
      }
      const auto syi = std::clamp<Eigen::Index>(std::lround(sy), 0, h - 1);
      const auto sxi = std::clamp<Eigen::Index>(std::lround(sx), 0, w - 1);
      out.labels(y, x) = map.labels(syi, sxi);
    }
  }
  return out;
}

ImageTensor rotate(const ImageTensor& image, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const float fill = black_level(image.domain());
  return map_channels(image, image.domain(), [&](const Plane& p) {
    const double cy = (static_cast<double>(p.rows()) - 1.0) / 2.0;
    const double cx = (static_cast<double>(p.cols()) - 1.0) / 2.0;
    Plane out(p.rows(), p.cols());
    for (Eigen::Index y = 0; y < p.rows(); ++y) {
      for (Eigen::Index x = 0; x < p.cols(); ++x) {
        const double ry = static_cast<double>(y) - cy;
        const double rx = static_cast<double>(x) - cx;
        // Inverse rotation maps output coordinates back into the source.
        const double sy = c * ry - s * rx + cy;
        const double sx = s * ry + c * rx + cx;
        out(y, x) = sample_bilinear(p, sy, sx, fill);
      }
    }
    return out;
  });
}

AugmentResult geometric_augment(const ImageTensor& image, std::uint64_t seed, Eigen::Index out_size,
                                const CropRange& range) {
  std::mt19937_64 rng(seed);
  const std::uint64_t crop_seed = rng();
  AugmentResult result{random_resized_crop(image, out_size, range, crop_seed), false, 0.0};
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < kRotationProbability) {
    result.rotated = true;
    result.angle_deg = std::uniform_real_distribution<double>(-kMaxRotationDeg, kMaxRotationDeg)(rng);
    result.image = rotate(result.image, result.angle_deg);
  }
  return result;
}

ImageTensor normalize_imagenet(const ImageTensor& scaled) {
  if (scaled.domain() != ValueDomain::scaled)
    throw std::invalid_argument("normalize_imagenet expects a [-1,1] image");
  std::vector<Plane> out;
  for (std::size_t c = 0; c < 3; ++c) {
    const Plane& src = scaled.num_channels() == 1 ? scaled.gray() : scaled.channel(c);
    const auto mean = static_cast<float>(kImageNetMean[c]);
    const auto stdev = static_cast<float>(kImageNetStd[c]);
    out.emplace_back((((src.array() + 1.0f) / 2.0f - mean) / stdev).matrix());
  }
  return ImageTensor(std::move(out), ValueDomain::normalized);
}

ImageTensor prepare_scaled(const Plane& raw, const PreprocessConfig& config) {
  return scale_intensity(center_crop(extract_roi(ImageTensor(raw, ValueDomain::raw)), config.crop_size));
}

ImageTensor prepare_classifier_input(const Plane& raw, const PreprocessConfig& config) {
  return random_resized_crop(prepare_scaled(raw, config), config.out_size, CropRange{1.0, 1.0, 1.0, 1.0}, 0);
}

PreprocessCache::PreprocessCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  if (std::ifstream in(dir_ / "index.json"); in) {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("entries")) {
      Entry entry{e.at("stem"), e.at("height"), e.at("width"), e.contains("map")};
      if (entry.has_map) {
        entry.map_classes = e.at("map").at("classes");
        entry.map_degenerate = e.at("map").value("degenerate", false);
      }
      entries_[e.at("image_id")] = entry;
    }
  }
}

const PreprocessCache::Entry& PreprocessCache::entry(const std::string& image_id) const {
  const auto it = entries_.find(image_id);
  if (it == entries_.end()) throw std::out_of_range("image " + image_id + " not in cache " + dir_.string());
  return it->second;
}

void PreprocessCache::put(const std::string& image_id, const ImageTensor& scaled, const SemanticMap* map) {
  std::string s = image_id;
  std::replace(s.begin(), s.end(), '/', '_');
  if (auto dot = s.rfind('.'); dot != std::string::npos) s.resize(dot);
  Entry entry{s, scaled.height(), scaled.width(), map != nullptr};
  if (map) {
    if (map->height() * 2 != scaled.height() || map->width() * 2 != scaled.width())
      throw std::invalid_argument("semantic map of " + image_id + " is not half the image resolution");
    entry.map_classes = map->n_classes;
    entry.map_degenerate = map->degenerate;
  }
  entries_[image_id] = entry;
  write_png_gray(dir_ / (s + ".png"), to_raw(scaled.gray()));
  if (map) {
    std::ofstream out(dir_ / (s + ".map"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(map->labels.data()), static_cast<std::streamsize>(map->labels.size()));
  }
}

bool PreprocessCache::contains(const std::string& image_id) const { return entries_.count(image_id) > 0; }

ImageTensor PreprocessCache::image(const std::string& image_id) const {
  const Plane raw = read_png_gray(dir_ / (entry(image_id).stem + ".png"));
  return scale_intensity(ImageTensor(raw, ValueDomain::raw));
}

SemanticMap PreprocessCache::map(const std::string& image_id) const {
  const Entry& e = entry(image_id);
  if (!e.has_map) throw std::runtime_error("no semantic map cached for " + image_id);
  SemanticMap m;
  m.source_image_id = image_id;
  m.n_classes = e.map_classes;
  m.degenerate = e.map_degenerate;
  m.labels.resize(e.height / 2, e.width / 2);
  std::ifstream in(dir_ / (e.stem + ".map"), std::ios::binary);
  if (!in) throw std::runtime_error("semantic map file missing for " + image_id);
  in.read(reinterpret_cast<char*>(m.labels.data()), static_cast<std::streamsize>(m.labels.size()));
  return m;
}

std::vector<std::string> PreprocessCache::image_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, e] : entries_) ids.push_back(id);
  return ids;
}

void PreprocessCache::flush() const {
  nlohmann::json j;
  j["entries"] = nlohmann::json::array();
  for (const auto& [id, e] : entries_) {
    nlohmann::json rec{{"image_id", id}, {"stem", e.stem}, {"height", e.height}, {"width", e.width},
                       {"domain", "scaled"}, {"format", "png8"}};
    if (e.has_map) rec["map"] = {{"height", e.height / 2}, {"width", e.width / 2}, {"classes", e.map_classes},
                    {"degenerate", e.map_degenerate}, {"format", "u8-labels"}};
    j["entries"].push_back(rec);
  }
  std::ofstream(dir_ / "index.json") << j.dump(1) << '\n';
}

}  // namespace liverdiff
