#pragma once

#include "liverdiff/dataset.hpp"
#include "liverdiff/image.hpp"
#include "liverdiff/nn.hpp"
#include "liverdiff/preprocess.hpp"
#include "liverdiff/sampler.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace liverdiff {

enum class MixSource { none, semantic, class2img, geometric };
std::string to_string(MixSource s);
MixSource mix_source_from_string(const std::string& s);

/// Synthetic-to-real ratio r with its image source. r = 0 means real images only.
struct MixSpec {
  double r = 0.0;
  MixSource source = MixSource::none;
  std::uint64_t seed = 0;
};

/// round(r * n_real)
int synthetic_count(double r, std::size_t n_real);

enum class Architecture { resnet50, effnet_v1, effnet_v2, tiny_cnn };
enum class FreezePolicy { partial, all_frozen, all_unfrozen };
std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);
std::string to_string(FreezePolicy f);
FreezePolicy freeze_policy_from_string(const std::string& s);

struct BackboneConfig {
  Architecture architecture = Architecture::tiny_cnn;
  FreezePolicy freeze = FreezePolicy::partial;
  bool pretrained = false;
  std::string weights_path;
};

/// Number of leading convolutional blocks held fixed: 3 for resnet50 and 5
/// for the effnet family under the partial policy, every backbone block under
/// all_frozen. tiny_cnn is trained from scratch, so partial freezes nothing.
int frozen_blocks(const BackboneConfig& config);
int backbone_blocks(Architecture a);

enum class ItemOrigin { real, synthetic, geometric };

struct TrainingItem {
  std::string id;
  std::string patient_id;  ///< empty for generated items
  ClassLabel label = ClassLabel::healthy;
  Plane image;  ///< scaled [-1, 1], classifier side
  ItemOrigin origin = ItemOrigin::real;
  int source_fold = -1;  ///< fold the generated item was made for
  std::string source_patient;  ///< real patient a generated item derives from, if any
};

/// All real training images plus round(r * |real|) generated ones sampled
/// without replacement by seed (geometric items are cycled over a seeded
/// permutation of the real images). Throws on any leakage violation.
std::vector<TrainingItem> compose_training_set(const std::vector<TrainingItem>& real, const SyntheticSet* pool,
                                               const MixSpec& spec, int fold_id, const FoldAssignment& folds,
                                               int side);

/// Leakage audit of a composed set for `fold_id`: no validation patient, no
/// generated item made for another fold or derived from a validation patient.
std::vector<std::string> audit_training_set(const std::vector<TrainingItem>& items, const FoldAssignment& folds,
                                            int fold_id);

/// Minority items appended round-robin until both classes have equal counts.
std::vector<TrainingItem> oversample_minority(const std::vector<TrainingItem>& items);

/// Indices into `items` appended by oversample_minority, in order.
std::vector<std::size_t> oversample_indices(const std::vector<ClassLabel>& labels);

/// ImageNet-normalized 3-channel batch from scaled grayscale planes.
template <typename S>
nn::FeatureMap<S> classifier_batch(const std::vector<const Plane*>& images) {
  const int h = static_cast<int>(images.at(0)->rows());
  const int w = static_cast<int>(images.at(0)->cols());
  nn::FeatureMap<S> x(3, static_cast<int>(images.size()), h, w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->rows() != h || images[b]->cols() != w) throw std::invalid_argument("classifier_batch: mixed image sizes");
    const ImageTensor norm = normalize_imagenet(ImageTensor(*images[b], ValueDomain::scaled));
    for (int c = 0; c < 3; ++c)
      x.sample(static_cast<int>(b)).row(c) =
          Eigen::Map<const Eigen::RowVectorXf>(norm.channel(c).data(), norm.channel(c).size()).template cast<S>();
  }
  return x;
}

/// Three stride-2 conv blocks (3 -> 8 -> 16 -> 16), global average pool and a
/// single-logit head.
template <typename S>
class TinyCnn {
 public:
  static constexpr int kBlocks = 3;

  TinyCnn() = default;
  explicit TinyCnn(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    conv_[0] = nn::Conv2d<S>("block1.conv", 3, 8, 2, rng);
    conv_[1] = nn::Conv2d<S>("block2.conv", 8, 16, 2, rng);
    conv_[2] = nn::Conv2d<S>("block3.conv", 16, 16, 2, rng);
    head_ = nn::Linear<S>("head", 16, 1, rng);
  }

  /// Pooled backbone features, 16 x B.
  nn::Mat<S> features(const nn::FeatureMap<S>& x) {
    nn::FeatureMap<S> h = x;
    for (int i = 0; i < kBlocks; ++i) {
      h = conv_[i].forward(h);
      h.data = relu_[i].forward(h.data);
    }
    pooled_shape_ = {h.height, h.width};
    return nn::global_avg_pool(h);
  }

  /// Logits, 1 x B.
  nn::Mat<S> forward(const nn::FeatureMap<S>& x) { return head_.forward(features(x)); }

  void backward(const nn::Mat<S>& d_logits) {
    const nn::Mat<S> d_pool = head_.backward(d_logits);
    nn::FeatureMap<S> d = nn::global_avg_pool_backward(d_pool, pooled_shape_.first, pooled_shape_.second);
    for (int i = kBlocks - 1; i >= 0; --i) {
      if (i < frozen_) break;  // nothing upstream needs a gradient
      d.data = relu_[i].backward(d.data);
      d = conv_[i].backward(d);
    }
  }

  /// Marks the first n blocks non-trainable.
  void freeze_blocks(int n) {
    frozen_ = n;
    for (int i = 0; i < kBlocks; ++i) {
      nn::ParamList<S> ps;
      conv_[i].collect(ps);
      for (auto* p : ps) p->trainable = i >= n;
    }
  }

  nn::ParamList<S> parameters() {
    nn::ParamList<S> ps;
    for (auto& c : conv_) c.collect(ps);
    head_.collect(ps);
    return ps;
  }

 private:
  std::array<nn::Conv2d<S>, kBlocks> conv_;
  std::array<nn::ReLU<S>, kBlocks> relu_;
  nn::Linear<S> head_;
  std::pair<int, int> pooled_shape_{0, 0};
  int frozen_ = 0;
};

struct ClassifierHyper {
  int steps = 1000;
  double learning_rate = 2e-5;
  int batch_size = 32;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

/// A fine-tuned classifier; predict returns P(unhealthy).
class Classifier {
 public:
  Classifier(BackboneConfig config, TinyCnn<float> net) : config_(std::move(config)), net_(std::move(net)) {}
  [[nodiscard]] const BackboneConfig& config() const { return config_; }
  std::vector<double> predict(const std::vector<const Plane*>& images);
  double predict(const Plane& image) { return predict(std::vector<const Plane*>{&image}).front(); }
  nn::Mat<float> features(const std::vector<const Plane*>& images);
  TinyCnn<float>& network() { return net_; }

 private:
  BackboneConfig config_;
  TinyCnn<float> net_;
};

/// Binary cross-entropy fine-tuning of the unfrozen parameters with AdamW at
/// a constant learning rate; returns the model after the final step.
Classifier train_classifier(const BackboneConfig& backbone, const std::vector<TrainingItem>& items,
                            const ClassifierHyper& hyper);

}  // namespace liverdiff
