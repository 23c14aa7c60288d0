#include "liverdiff/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace liverdiff {

std::string to_string(ValueDomain domain) {
  switch (domain) {
    case ValueDomain::raw: return "raw";
    case ValueDomain::scaled: return "scaled";
    case ValueDomain::normalized: return "normalized";
  }
  return "unknown";
}

ImageTensor::ImageTensor(Plane gray, ValueDomain domain) : domain_(domain) {
  channels_.push_back(std::move(gray));
  check_domain(channels_, domain_);
}

ImageTensor::ImageTensor(std::vector<Plane> channels, ValueDomain domain)
    : channels_(std::move(channels)), domain_(domain) {
  if (channels_.empty()) throw std::invalid_argument("image needs at least one channel");
  for (const auto& c : channels_) {
    if (c.rows() != channels_[0].rows() || c.cols() != channels_[0].cols())
      throw std::invalid_argument("channel shapes differ");
  }
  check_domain(channels_, domain_);
}

void ImageTensor::check_domain(const std::vector<Plane>& channels, ValueDomain domain) {
  constexpr float kTol = 1e-6f;
  float lo = 0.0f;
  float hi = 0.0f;
  switch (domain) {
    case ValueDomain::raw: lo = 0.0f; hi = 255.0f; break;
    case ValueDomain::scaled: lo = -1.0f; hi = 1.0f; break;
    case ValueDomain::normalized: return;
  }
  for (const auto& c : channels) {
    if (c.size() == 0) continue;
    if (!c.allFinite() || c.minCoeff() < lo - kTol || c.maxCoeff() > hi + kTol)
      throw std::invalid_argument("pixel values outside the " + to_string(domain) + " domain");
  }
}

namespace {

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    info = png_create_info_struct(png);
    if (!info) {
      png_destroy_write_struct(&png, nullptr);
      throw std::runtime_error("png_create_info_struct failed");
    }
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;
};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

std::vector<std::vector<png_byte>> quantize_rows(const std::vector<const Plane*>& planes) {
  const auto h = planes[0]->rows();
  const auto w = planes[0]->cols();
  const auto nc = planes.size();
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(h),
                                          std::vector<png_byte>(static_cast<std::size_t>(w) * nc));
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < nc; ++c) {
        const float v = std::clamp(std::round((*planes[c])(y, x)), 0.0f, 255.0f);
        rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x) * nc + c] =
            static_cast<png_byte>(v);
      }
    }
  }
  return rows;
}

void write_rows(PngWriter& w, const std::vector<const Plane*>& planes) {
  const int color = planes.size() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(planes[0]->cols()),
               static_cast<png_uint_32>(planes[0]->rows()), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  auto rows = quantize_rows(planes);
  std::vector<png_bytep> ptrs;
  ptrs.reserve(rows.size());
  for (auto& r : rows) ptrs.push_back(r.data());
  png_write_info(w.png, w.info);
  png_write_image(w.png, ptrs.data());
  png_write_end(w.png, nullptr);
}

void write_png(const std::filesystem::path& path, const std::vector<const Plane*>& planes) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
  PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("png write failed: " + path.string());
  png_init_io(w.png, fp.get());
  write_rows(w, planes);
}

void append_to_string(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

}  // namespace

Plane read_png_gray(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  Plane out(image.height, image.width);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = buffer[static_cast<std::size_t>(i)];
  return out;
}

void write_png_gray(const std::filesystem::path& path, const Plane& raw) {
  write_png(path, {&raw});
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& rgb) {
  write_png(path, {&rgb[0], &rgb[1], &rgb[2]});
}

std::string encode_png_gray(const Plane& raw) {
  std::string out;
  PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("png encode failed");
  png_set_write_fn(w.png, &out, append_to_string, nullptr);
  write_rows(w, {&raw});
  return out;
}

Plane to_raw(const Plane& scaled) {
  return ((scaled.array() + 1.0f) * 127.5f).cwiseMax(0.0f).cwiseMin(255.0f).matrix();
}

float sample_bilinear(const Plane& img, double y, double x, float fill) {
  const auto y0 = static_cast<Eigen::Index>(std::floor(y));
  const auto x0 = static_cast<Eigen::Index>(std::floor(x));
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  auto at = [&](Eigen::Index yy, Eigen::Index xx) -> double {
    if (yy < 0 || xx < 0 || yy >= img.rows() || xx >= img.cols()) return fill;
    return img(yy, xx);
  };
  const double top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
  const double bottom = (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

Plane resize_bilinear(const Plane& img, double y0, double x0, double h, double w,
                      Eigen::Index out_h, Eigen::Index out_w) {
  Plane out(out_h, out_w);
  const double sy = h / static_cast<double>(out_h);
  const double sx = w / static_cast<double>(out_w);
  for (Eigen::Index y = 0; y < out_h; ++y) {
    // Pixel-center alignment, clamped to the source window edge.
    const double src_y = std::clamp(y0 + (static_cast<double>(y) + 0.5) * sy - 0.5, y0, y0 + h - 1.0);
    for (Eigen::Index x = 0; x < out_w; ++x) {
      const double src_x =
          std::clamp(x0 + (static_cast<double>(x) + 0.5) * sx - 0.5, x0, x0 + w - 1.0);
      out(y, x) = sample_bilinear(img, src_y, src_x, 0.0f);
    }
  }
  return out;
}

}  // namespace liverdiff
