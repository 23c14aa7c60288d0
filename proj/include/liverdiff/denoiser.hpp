#pragma once

#include "liverdiff/dataset.hpp"
#include "liverdiff/nn.hpp"
#include "liverdiff/preprocess.hpp"

#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace liverdiff {

enum class ModelVariant { semantic, class_label };

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& s);

/// Latent geometry relative to the model's input image side.
struct LatentSpec {
  int channels = 3;
  int height = 64;
  int width = 64;
  int downsampling_factor = 4;
};

/// 3 x side/4 x side/4 for semantic synthesis, 4 x side/8 x side/8 for class-to-image.
LatentSpec latent_spec_for(ModelVariant variant, int image_side);

struct NullCondition {
  friend bool operator==(const NullCondition&, const NullCondition&) { return true; }
};

using ConditioningInput = std::variant<SemanticMap, ClassLabel, NullCondition>;

inline bool is_null(const ConditioningInput& c) { return std::holds_alternative<NullCondition>(c); }

/// Condition batch as the denoiser consumes it: a latent-resolution one-hot
/// stack for the concatenation pathway, or embedding-row indices for the
/// cross-attention pathway (row 2 is the learned null embedding).
template <typename S>
struct EncodedCondition {
  nn::FeatureMap<S> spatial;
  std::vector<int> context_rows;
};

inline constexpr int kNullEmbeddingRow = 2;
inline constexpr int kClassEmbeddingDim = 512;

struct DenoiserConfig {
  ModelVariant variant = ModelVariant::semantic;
  LatentSpec latent;
  int semantic_classes = 5;
  int width = 16;
  int time_dim = 32;
  int context_dim = kClassEmbeddingDim;
  int attn_dim = 32;

  [[nodiscard]] int input_channels() const {
    return latent.channels + (variant == ModelVariant::semantic ? semantic_classes : 0);
  }
};

/// Desk-scale preset (width 16) and clinical preset (width 64).
DenoiserConfig denoiser_preset(ModelVariant variant, int image_side, bool full);

/// Average-pools (or nearest-samples, for non-integer factors) one-hot maps to latent resolution.
template <typename S>
nn::FeatureMap<S> resample_semantic(const std::vector<const SemanticMap*>& maps, int n_classes, int height, int width) {
  nn::FeatureMap<S> out(n_classes, static_cast<int>(maps.size()), height, width);
  for (std::size_t b = 0; b < maps.size(); ++b) {
    if (!maps[b]) continue;  // null condition: all-zero map
    const auto& m = *maps[b];
    const bool pooled = m.height() % height == 0 && m.width() % width == 0;
    const auto fy = static_cast<double>(m.height()) / height;
    const auto fx = static_cast<double>(m.width()) / width;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const Eigen::Index col = (static_cast<Eigen::Index>(b) * height + y) * width + x;
        if (pooled) {
          const auto py = static_cast<Eigen::Index>(fy);
          const auto px = static_cast<Eigen::Index>(fx);
          const S inv = S(1) / static_cast<S>(py * px);
          for (Eigen::Index yy = 0; yy < py; ++yy)
            for (Eigen::Index xx = 0; xx < px; ++xx) out.data(m.labels(y * py + yy, x * px + xx), col) += inv;
        } else {
          const auto sy = std::min<Eigen::Index>(m.height() - 1, static_cast<Eigen::Index>((y + 0.5) * fy));
          const auto sx = std::min<Eigen::Index>(m.width() - 1, static_cast<Eigen::Index>((x + 0.5) * fx));
          out.data(m.labels(sy, sx), col) = S(1);
        }
      }
    }
  }
  return out;
}

/// Two-level UNet noise predictor with timestep conditioning, a skip
/// connection, and either channel concatenation of a semantic map at the input
/// or residual cross-attention to a learned class embedding at the bottleneck.
template <typename S>
class TinyUNet {
 public:
  TinyUNet() = default;
  TinyUNet(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
    if (config.latent.height % 2 != 0 || config.latent.width % 2 != 0)
      throw std::invalid_argument("TinyUNet needs even latent dimensions");
    std::mt19937_64 rng(seed);
    const int c = config.width;
    conv_in_ = nn::Conv2d<S>("conv_in", config.input_channels(), c, 1, rng);
    conv1_ = nn::Conv2d<S>("conv1", c, c, 1, rng);
    conv_down_ = nn::Conv2d<S>("conv_down", c, 2 * c, 2, rng);
    conv_mid_ = nn::Conv2d<S>("conv_mid", 2 * c, 2 * c, 1, rng);
    conv_up_ = nn::Conv2d<S>("conv_up", 3 * c, c, 1, rng);
    conv_out_ = nn::Conv2d<S>("conv_out", c, config.latent.channels, 1, rng, /*zero_init=*/true);
    t_lin1_ = nn::Linear<S>("time.lin1", config.time_dim, c, rng);
    t_lin2_ = nn::Linear<S>("time.lin2", c, c, rng);
    t_lin_down_ = nn::Linear<S>("time.lin_down", c, 2 * c, rng);
    if (config.variant == ModelVariant::class_label) {
      embedding_ = nn::Embedding<S>("class_embedding", 3, config.context_dim, rng);
      xattn_ = nn::CrossAttention<S>("xattn", 2 * c, config.context_dim, config.attn_dim, rng);
    }
  }

  [[nodiscard]] const DenoiserConfig& config() const { return config_; }

  /// Encodes a batch of conditioning inputs for this model's variant.
  [[nodiscard]] EncodedCondition<S> encode_conditions(const std::vector<ConditioningInput>& conds) const {
    EncodedCondition<S> enc;
    if (config_.variant == ModelVariant::semantic) {
      std::vector<const SemanticMap*> maps;
      for (const auto& c : conds) {
        if (std::holds_alternative<ClassLabel>(c))
          throw std::invalid_argument("semantic-synthesis model cannot take a class-label condition");
        maps.push_back(std::get_if<SemanticMap>(&c));
      }
      enc.spatial = resample_semantic<S>(maps, config_.semantic_classes, config_.latent.height, config_.latent.width);
    } else {
      for (const auto& c : conds) {
        if (std::holds_alternative<SemanticMap>(c))
          throw std::invalid_argument("class-to-image model cannot take a semantic-map condition");
        const auto* label = std::get_if<ClassLabel>(&c);
        enc.context_rows.push_back(label ? to_int(*label) : kNullEmbeddingRow);
      }
    }
    return enc;
  }

  /// The learned embedding vector for a class row (0, 1, or the null row).
  [[nodiscard]] nn::Vec<S> embedding_row(int row) const {
    if (config_.variant != ModelVariant::class_label) throw std::logic_error("semantic model has no class embedding");
    return embedding_.row(row);
  }

  /// Channel count entering the first convolution.
  [[nodiscard]] int input_channels() const { return config_.input_channels(); }

  nn::FeatureMap<S> predict_noise(const nn::FeatureMap<S>& z_t, const std::vector<int>& timesteps,
                                  const EncodedCondition<S>& cond) {
    if (z_t.channels() != config_.latent.channels || z_t.height != config_.latent.height ||
        z_t.width != config_.latent.width)
      throw std::invalid_argument("predict_noise: latent shape does not match the model");
    if (static_cast<int>(timesteps.size()) != z_t.batch) throw std::invalid_argument("predict_noise: one timestep per sample");

    nn::FeatureMap<S> x0 = z_t;
    if (config_.variant == ModelVariant::semantic) {
      if (cond.spatial.batch != z_t.batch) throw std::invalid_argument("predict_noise: condition batch mismatch");
      x0 = nn::concat_channels(z_t, cond.spatial);
    } else if (static_cast<int>(cond.context_rows.size()) != z_t.batch) {
      throw std::invalid_argument("predict_noise: condition batch mismatch");
    }

    const nn::Mat<S> temb = nn::timestep_embedding<S>(timesteps, config_.time_dim);
    const nn::Mat<S> te1 = silu_t_.forward(t_lin1_.forward(temb));
    const nn::Mat<S> te = t_lin2_.forward(te1);
    const nn::Mat<S> te_down = t_lin_down_.forward(te1);

    nn::FeatureMap<S> a = conv_in_.forward(x0);
    nn::add_per_sample(a, te);
    a.data = silu_in_.forward(a.data);
    nn::FeatureMap<S> h1 = conv1_.forward(a);
    h1.data = silu1_.forward(h1.data);

    nn::FeatureMap<S> d = conv_down_.forward(h1);
    d.data = silu_down_.forward(d.data);
    nn::add_per_sample(d, te_down);
    nn::FeatureMap<S> m = conv_mid_.forward(d);
    m.data = silu_mid_.forward(m.data);
    if (config_.variant == ModelVariant::class_label) m = xattn_.forward(m, embedding_.forward(cond.context_rows), 1);

    nn::FeatureMap<S> u = nn::concat_channels(nn::upsample2x(m), h1);
    u = conv_up_.forward(u);
    u.data = silu_up_.forward(u.data);
    return conv_out_.forward(u);
  }

  void backward(const nn::FeatureMap<S>& d_out) {
    const int c = config_.width;
    nn::FeatureMap<S> du = conv_out_.backward(d_out);
    du.data = silu_up_.backward(du.data);
    const nn::FeatureMap<S> d_cat = conv_up_.backward(du);
    nn::FeatureMap<S> d_up(d_cat.data.topRows(2 * c), d_cat.batch, d_cat.height, d_cat.width);
    nn::FeatureMap<S> d_h1(d_cat.data.bottomRows(c), d_cat.batch, d_cat.height, d_cat.width);

    nn::FeatureMap<S> d_m = nn::upsample2x_backward(d_up);
    if (config_.variant == ModelVariant::class_label) {
      nn::Mat<S> d_ctx;
      d_m = xattn_.backward(d_m, d_ctx);
      embedding_.backward(d_ctx);
    }
    d_m.data = silu_mid_.backward(d_m.data);
    nn::FeatureMap<S> d_d = conv_mid_.backward(d_m);
    const nn::Mat<S> d_te_down = nn::sum_per_sample(d_d);
    d_d.data = silu_down_.backward(d_d.data);
    d_h1.data += conv_down_.backward(d_d).data;

    d_h1.data = silu1_.backward(d_h1.data);
    nn::FeatureMap<S> d_a = conv1_.backward(d_h1);
    d_a.data = silu_in_.backward(d_a.data);
    const nn::Mat<S> d_te = nn::sum_per_sample(d_a);
    conv_in_.backward(d_a);

    const nn::Mat<S> d_te1 = t_lin2_.backward(d_te) + t_lin_down_.backward(d_te_down);
    t_lin1_.backward(silu_t_.backward(d_te1));
  }

  nn::ParamList<S> parameters() {
    nn::ParamList<S> ps;
    conv_in_.collect(ps);
    conv1_.collect(ps);
    conv_down_.collect(ps);
    conv_mid_.collect(ps);
    conv_up_.collect(ps);
    conv_out_.collect(ps);
    t_lin1_.collect(ps);
    t_lin2_.collect(ps);
    t_lin_down_.collect(ps);
    if (config_.variant == ModelVariant::class_label) {
      embedding_.collect(ps);
      xattn_.collect(ps);
    }
    return ps;
  }

  std::vector<const nn::Param<S>*> parameters() const {
    const auto ps = const_cast<TinyUNet*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

 private:
  DenoiserConfig config_;
  nn::Conv2d<S> conv_in_, conv1_, conv_down_, conv_mid_, conv_up_, conv_out_;
  nn::Linear<S> t_lin1_, t_lin2_, t_lin_down_;
  nn::SiLU<S> silu_t_, silu_in_, silu1_, silu_down_, silu_mid_, silu_up_;
  nn::Embedding<S> embedding_;
  nn::CrossAttention<S> xattn_;
};

using Denoiser = TinyUNet<float>;

}  // namespace liverdiff
