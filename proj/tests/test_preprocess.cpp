#include "liverdiff/preprocess.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <map>
#include <random>

using namespace liverdiff;

namespace {

/// Connected components by repeated min-label relaxation until nothing changes.
Eigen::MatrixXi relax_components(const Plane& img) {
  const Eigen::Index h = img.rows(), w = img.cols();
  Eigen::MatrixXi label = Eigen::MatrixXi::Constant(h, w, -1);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      if (img(y, x) != 0.0f) label(y, x) = static_cast<int>(y * w + x);
  bool changed = true;
  while (changed) {
    changed = false;
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) {
        if (label(y, x) < 0) continue;
        for (Eigen::Index dy = -1; dy <= 1; ++dy)
          for (Eigen::Index dx = -1; dx <= 1; ++dx) {
            const Eigen::Index ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= h || nx >= w || label(ny, nx) < 0) continue;
            if (label(ny, nx) < label(y, x)) {
              label(y, x) = label(ny, nx);
              changed = true;
            }
          }
      }
  }
  return label;
}

}  // namespace

TEST_CASE("extract_roi keeps the largest 8-connected component") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution on(0.45);
  for (int trial = 0; trial < 20; ++trial) {
    Plane img = Plane::Zero(23, 31);
    for (Eigen::Index y = 0; y < img.rows(); ++y)
      for (Eigen::Index x = 0; x < img.cols(); ++x)
        if (on(rng)) img(y, x) = static_cast<float>(1 + (y * 7 + x) % 200);

    const Eigen::MatrixXi label = relax_components(img);
    std::map<int, int> size;
    for (Eigen::Index i = 0; i < label.size(); ++i)
      if (label.data()[i] >= 0) ++size[label.data()[i]];
    int best = -1, best_size = 0;
    // Ties go to the component met first in raster order, whose min label is smallest.
    for (const auto& [l, s] : size)
      if (s > best_size) best = l, best_size = s;
    Eigen::Index y0 = img.rows(), y1 = -1, x0 = img.cols(), x1 = -1;
    for (Eigen::Index y = 0; y < img.rows(); ++y)
      for (Eigen::Index x = 0; x < img.cols(); ++x)
        if (label(y, x) == best) y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
    Plane expected = img.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1);
    for (Eigen::Index y = 0; y < expected.rows(); ++y)
      for (Eigen::Index x = 0; x < expected.cols(); ++x)
        if (label(y0 + y, x0 + x) != best) expected(y, x) = 0.0f;

    const ImageTensor roi = extract_roi(ImageTensor(img, ValueDomain::raw));
    REQUIRE(roi.height() == expected.rows());
    REQUIRE(roi.width() == expected.cols());
    CHECK(roi.gray() == expected);
  }
  CHECK_THROWS_AS(extract_roi(ImageTensor(Plane::Zero(4, 4), ValueDomain::raw)), std::invalid_argument);
}

TEST_CASE("center_crop pads symmetrically with the odd pixel bottom-right") {
  const Plane img = Plane::Constant(3, 6, 50.0f);
  const ImageTensor out = center_crop(ImageTensor(img, ValueDomain::raw), 4);
  REQUIRE(out.height() == 4);
  REQUIRE(out.width() == 4);
  // rows: 3 image rows then the single pad row; cols: 1..4 of 6
  CHECK(out.gray()(0, 0) == 50.0f);
  CHECK(out.gray()(2, 3) == 50.0f);
  CHECK(out.gray()(3, 0) == 0.0f);
  CHECK(out.gray()(3, 3) == 0.0f);

  Plane ramp(4, 4);
  for (int i = 0; i < 16; ++i) ramp.data()[i] = static_cast<float>(i);
  const ImageTensor mid = center_crop(ImageTensor(ramp, ValueDomain::raw), 2);
  CHECK(mid.gray()(0, 0) == 5.0f);
  CHECK(mid.gray()(1, 1) == 10.0f);
}

TEST_CASE("intensity scaling is the fixed affine map and inverts") {
  Plane raw(1, 3);
  raw << 0.0f, 127.5f, 255.0f;
  const ImageTensor s = scale_intensity(ImageTensor(raw, ValueDomain::raw));
  CHECK(s.domain() == ValueDomain::scaled);
  CHECK(s.gray()(0, 0) == -1.0f);
  CHECK(s.gray()(0, 1) == 0.0f);
  CHECK(s.gray()(0, 2) == 1.0f);
  CHECK(unscale_intensity(s).gray().isApprox(raw));
}

TEST_CASE("multi-level Otsu reaches the exhaustive optimum") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 10);
  for (int trial = 0; trial < 15; ++trial) {
    Eigen::VectorXd hist(24);
    for (Eigen::Index i = 0; i < hist.size(); ++i) hist(i) = std::floor(u(rng) * (1 + (i % 6)));
    for (int classes : {2, 3, 4}) {
      const auto t = multi_otsu_thresholds(hist, classes);
      REQUIRE(static_cast<int>(t.size()) == classes - 1);
      for (std::size_t k = 1; k < t.size(); ++k) CHECK(t[k] > t[k - 1]);
      CHECK(oracle::between_class_variance(hist, t) ==
            doctest::Approx(oracle::exhaustive_otsu(hist, classes)).epsilon(1e-12));
    }
  }
}

TEST_CASE("semantic map of a five-level image recovers the levels") {
  Plane img(8, 10);
  for (Eigen::Index y = 0; y < 8; ++y)
    for (Eigen::Index x = 0; x < 10; ++x) img(y, x) = -0.9f + 0.4f * static_cast<float>(x / 2);
  const SemanticMap m = make_semantic_map(ImageTensor(img, ValueDomain::scaled), 5, "a");
  REQUIRE(m.height() == 4);
  REQUIRE(m.width() == 5);
  for (Eigen::Index x = 0; x < 5; ++x) CHECK(m.labels(0, x) == x);
  CHECK(!m.degenerate);
  CHECK(m.one_hot(2).sum() == doctest::Approx(4.0));

  const SemanticMap flat = make_semantic_map(ImageTensor(Plane::Zero(4, 4), ValueDomain::scaled), 5);
  CHECK(flat.degenerate);
  CHECK(flat.labels.maxCoeff() == 0);
}

TEST_CASE("random_resized_crop is seeded and respects the output side") {
  Plane img(40, 50);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = std::sin(static_cast<float>(i)) * 0.9f;
  const ImageTensor t(img, ValueDomain::scaled);
  const auto a = random_resized_crop(t, 16, {}, 3);
  const auto b = random_resized_crop(t, 16, {}, 3);
  const auto c = random_resized_crop(t, 16, {}, 4);
  CHECK(a.height() == 16);
  CHECK(a.width() == 16);
  CHECK(a.gray() == b.gray());
  CHECK(a.gray() != c.gray());
  CHECK(a.gray().maxCoeff() <= 1.0f);
}

TEST_CASE("piecewise-affine distortion keeps labels valid and is seeded") {
  SemanticMap m;
  m.labels.resize(16, 16);
  for (Eigen::Index y = 0; y < 16; ++y)
    for (Eigen::Index x = 0; x < 16; ++x) m.labels(y, x) = static_cast<std::uint8_t>((x / 4 + y / 8) % 5);
  const auto a = piecewise_affine_distort(m, 0.05, 1);
  const auto b = piecewise_affine_distort(m, 0.05, 1);
  CHECK(a == b);
  CHECK(a.labels.maxCoeff() < 5);
  CHECK(piecewise_affine_distort(m, 0.0, 1) == m);
}

TEST_CASE("rotation by zero is the identity and ImageNet normalization uses the fixed constants") {
  Plane img(6, 6);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(i % 7) / 7.0f;
  const ImageTensor t(img, ValueDomain::scaled);
  CHECK(rotate(t, 0.0).gray().isApprox(img, 1e-6f));
  const ImageTensor n = normalize_imagenet(t);
  REQUIRE(n.num_channels() == 3);
  for (int c = 0; c < 3; ++c) {
    const double v01 = (img(1, 2) + 1.0) / 2.0;
    CHECK(n.channel(c)(1, 2) == doctest::Approx((v01 - kImageNetMean[c]) / kImageNetStd[c]).epsilon(1e-6));
  }
}

TEST_CASE("preprocess cache round trip") {
  testing::TempDir dir("cache");
  Plane img(8, 8);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(i) / 64.0f - 0.5f;
  const ImageTensor t(img, ValueDomain::scaled);
  const SemanticMap map = make_semantic_map(t, 3, "images/x.png");
  {
    PreprocessCache cache(dir.path());
    cache.put("images/x.png", t, &map);
    cache.flush();
  }
  const PreprocessCache back(dir.path());
  REQUIRE(back.contains("images/x.png"));
  CHECK((back.image("images/x.png").gray() - img).cwiseAbs().maxCoeff() <= 1.0f / 127.5f);
  CHECK(back.map("images/x.png") == map);
}
