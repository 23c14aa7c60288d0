#include "liverdiff/denoiser.hpp"

namespace liverdiff {

std::string to_string(ModelVariant v) { return v == ModelVariant::semantic ? "semantic" : "class2img"; }

ModelVariant variant_from_string(const std::string& s) {
  if (s == "semantic") return ModelVariant::semantic;
  if (s == "class2img" || s == "class") return ModelVariant::class_label;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

LatentSpec latent_spec_for(ModelVariant variant, int image_side) {
  const int factor = variant == ModelVariant::semantic ? 4 : 8;
  if (image_side % (2 * factor) != 0)
    throw std::invalid_argument("image side " + std::to_string(image_side) + " incompatible with latent factor");
  return {variant == ModelVariant::semantic ? 3 : 4, image_side / factor, image_side / factor, factor};
}

DenoiserConfig denoiser_preset(ModelVariant variant, int image_side, bool full) {
  DenoiserConfig c;
  c.variant = variant;
  c.latent = latent_spec_for(variant, image_side);
  c.width = full ? 64 : 16;
  c.time_dim = full ? 64 : 32;
  c.attn_dim = full ? 64 : 32;
  return c;
}

}  // namespace liverdiff
