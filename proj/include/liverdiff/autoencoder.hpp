#pragma once

#include "liverdiff/checkpoint.hpp"
#include "liverdiff/denoiser.hpp"
#include "liverdiff/image.hpp"
#include "liverdiff/nn.hpp"

#include <memory>
#include <string>
#include <vector>

namespace liverdiff {

/// Frozen image <-> latent map. Images are square [-1, 1] planes of side
/// image_side(); latents follow latent_spec().
class Autoencoder {
 public:
  virtual ~Autoencoder() = default;

  [[nodiscard]] virtual LatentSpec latent_spec() const = 0;
  [[nodiscard]] virtual int image_side() const = 0;
  [[nodiscard]] virtual nn::FeatureMap<float> encode(const std::vector<const Plane*>& images) const = 0;
  [[nodiscard]] virtual std::vector<Plane> decode(const nn::FeatureMap<float>& latents) const = 0;
  /// Declared RMS reconstruction error bound for in-distribution images.
  [[nodiscard]] virtual double reconstruction_tolerance() const = 0;

  virtual void save(Container& into, const std::string& prefix) const = 0;
};

/// Linear patch autoencoder: each factor x factor patch is projected onto its
/// leading principal directions, whitened to unit variance per latent channel.
/// Fitted in closed form from training images; a desk-scale stand-in for a
/// pretrained convolutional autoencoder.
class PatchPcaAutoencoder final : public Autoencoder {
 public:
  static PatchPcaAutoencoder fit(const std::vector<const Plane*>& images, int factor, int channels);
  static PatchPcaAutoencoder load(const Container& from, const std::string& prefix);

  [[nodiscard]] LatentSpec latent_spec() const override;
  [[nodiscard]] int image_side() const override { return side_; }
  [[nodiscard]] nn::FeatureMap<float> encode(const std::vector<const Plane*>& images) const override;
  [[nodiscard]] std::vector<Plane> decode(const nn::FeatureMap<float>& latents) const override;
  [[nodiscard]] double reconstruction_tolerance() const override { return tolerance_; }
  void save(Container& into, const std::string& prefix) const override;

  /// Root-mean-square reconstruction error over a set of images.
  [[nodiscard]] double rmse(const std::vector<const Plane*>& images) const;

 private:
  int side_ = 0;
  int factor_ = 4;
  Eigen::VectorXf mean_;   ///< factor^2 patch mean
  Eigen::MatrixXf basis_;  ///< factor^2 x channels, orthonormal columns
  Eigen::VectorXf scale_;  ///< per-channel standard deviation
  double tolerance_ = 0;
};

}  // namespace liverdiff
