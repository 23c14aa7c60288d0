#include "liverdiff/autoencoder.hpp"

#include <cmath>
#include <stdexcept>

namespace liverdiff {

namespace {

Eigen::VectorXf patch(const Plane& img, int factor, Eigen::Index py, Eigen::Index px) {
  Eigen::VectorXf v(factor * factor);
  for (int y = 0; y < factor; ++y)
    for (int x = 0; x < factor; ++x) v(y * factor + x) = img(py * factor + y, px * factor + x);
  return v;
}

}  // namespace

PatchPcaAutoencoder PatchPcaAutoencoder::fit(const std::vector<const Plane*>& images, int factor, int channels) {
  if (images.empty()) throw std::invalid_argument("autoencoder fit needs images");
  if (channels < 1 || channels > factor * factor) throw std::invalid_argument("latent channels must be in [1, factor^2]");
  PatchPcaAutoencoder ae;
  ae.factor_ = factor;
  ae.side_ = static_cast<int>(images.front()->rows());
  if (ae.side_ % factor != 0) throw std::invalid_argument("image side must be a multiple of the latent factor");

  const int dim = factor * factor;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(dim, dim);
  double n = 0;
  const Eigen::Index cells = ae.side_ / factor;
  for (const Plane* img : images) {
    if (img->rows() != ae.side_ || img->cols() != ae.side_) throw std::invalid_argument("autoencoder images must share one square shape");
    for (Eigen::Index py = 0; py < cells; ++py)
      for (Eigen::Index px = 0; px < cells; ++px) {
        const Eigen::VectorXd p = patch(*img, factor, py, px).cast<double>();
        sum += p;
        outer.noalias() += p * p.transpose();
        n += 1;
      }
  }
  const Eigen::VectorXd mean = sum / n;
  const Eigen::MatrixXd cov = outer / n - mean * mean.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  // Eigenvalues ascend; keep the trailing `channels` directions, largest first.
  ae.mean_ = mean.cast<float>();
  ae.basis_.resize(dim, channels);
  ae.scale_.resize(channels);
  for (int c = 0; c < channels; ++c) {
    ae.basis_.col(c) = es.eigenvectors().col(dim - 1 - c).cast<float>();
    ae.scale_(c) = static_cast<float>(std::sqrt(std::max(es.eigenvalues()(dim - 1 - c), 1e-12)));
  }
  ae.tolerance_ = 1.5 * ae.rmse(images) + 1e-3;
  return ae;
}

LatentSpec PatchPcaAutoencoder::latent_spec() const {
  return {static_cast<int>(basis_.cols()), side_ / factor_, side_ / factor_, factor_};
}

nn::FeatureMap<float> PatchPcaAutoencoder::encode(const std::vector<const Plane*>& images) const {
  const LatentSpec spec = latent_spec();
  nn::FeatureMap<float> z(spec.channels, static_cast<int>(images.size()), spec.height, spec.width);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Plane& img = *images[b];
    if (img.rows() != side_ || img.cols() != side_) throw std::invalid_argument("encode: image shape does not match the autoencoder");
    for (int py = 0; py < spec.height; ++py)
      for (int px = 0; px < spec.width; ++px) {
        const Eigen::Index col = (static_cast<Eigen::Index>(b) * spec.height + py) * spec.width + px;
        z.data.col(col) = (basis_.transpose() * (patch(img, factor_, py, px) - mean_)).cwiseQuotient(scale_);
      }
  }
  return z;
}

std::vector<Plane> PatchPcaAutoencoder::decode(const nn::FeatureMap<float>& latents) const {
  const LatentSpec spec = latent_spec();
  if (latents.channels() != spec.channels || latents.height != spec.height || latents.width != spec.width)
    throw std::invalid_argument("decode: latent shape does not match the autoencoder");
  std::vector<Plane> out;
  for (int b = 0; b < latents.batch; ++b) {
    Plane img(side_, side_);
    for (int py = 0; py < spec.height; ++py)
      for (int px = 0; px < spec.width; ++px) {
        const Eigen::Index col = (static_cast<Eigen::Index>(b) * spec.height + py) * spec.width + px;
        const Eigen::VectorXf p = mean_ + basis_ * latents.data.col(col).cwiseProduct(scale_);
        for (int y = 0; y < factor_; ++y)
          for (int x = 0; x < factor_; ++x) img(py * factor_ + y, px * factor_ + x) = p(y * factor_ + x);
      }
    out.push_back(std::move(img));
  }
  return out;
}

double PatchPcaAutoencoder::rmse(const std::vector<const Plane*>& images) const {
  const auto rec = decode(encode(images));
  double sq = 0;
  double n = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    sq += (rec[i] - *images[i]).squaredNorm();
    n += static_cast<double>(images[i]->size());
  }
  return std::sqrt(sq / n);
}

void PatchPcaAutoencoder::save(Container& into, const std::string& prefix) const {
  into.meta[prefix] = {{"kind", "patch_pca"}, {"side", side_}, {"factor", factor_}, {"tolerance", tolerance_}};
  into.blobs[prefix + ".mean"] = mean_;
  into.blobs[prefix + ".basis"] = basis_;
  into.blobs[prefix + ".scale"] = scale_;
}

PatchPcaAutoencoder PatchPcaAutoencoder::load(const Container& from, const std::string& prefix) {
  const auto& m = from.meta.at(prefix);
  if (m.at("kind") != "patch_pca") throw std::runtime_error("unsupported autoencoder kind " + m.at("kind").dump());
  PatchPcaAutoencoder ae;
  ae.side_ = m.at("side");
  ae.factor_ = m.at("factor");
  ae.tolerance_ = m.at("tolerance");
  ae.mean_ = from.blobs.at(prefix + ".mean");
  ae.basis_ = from.blobs.at(prefix + ".basis");
  ae.scale_ = from.blobs.at(prefix + ".scale");
  return ae;
}

}  // namespace liverdiff
