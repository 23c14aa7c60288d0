#include "liverdiff/classifier.hpp"

#include "liverdiff/hash.hpp"
#include "liverdiff/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace liverdiff {

std::string to_string(MixSource s) {
  switch (s) {
    case MixSource::none: return "none";
    case MixSource::semantic: return "semantic";
    case MixSource::class2img: return "class2img";
    case MixSource::geometric: return "geometric";
  }
  return "?";
}

MixSource mix_source_from_string(const std::string& s) {
  for (auto v : {MixSource::none, MixSource::semantic, MixSource::class2img, MixSource::geometric})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown mix source: " + s);
}

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::resnet50: return "resnet50";
    case Architecture::effnet_v1: return "effnet_v1";
    case Architecture::effnet_v2: return "effnet_v2";
    case Architecture::tiny_cnn: return "tiny_cnn";
  }
  return "?";
}

Architecture architecture_from_string(const std::string& s) {
  for (auto v : {Architecture::resnet50, Architecture::effnet_v1, Architecture::effnet_v2, Architecture::tiny_cnn})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown architecture: " + s);
}

std::string to_string(FreezePolicy f) {
  switch (f) {
    case FreezePolicy::partial: return "partial";
    case FreezePolicy::all_frozen: return "all_frozen";
    case FreezePolicy::all_unfrozen: return "all_unfrozen";
  }
  return "?";
}

FreezePolicy freeze_policy_from_string(const std::string& s) {
  for (auto v : {FreezePolicy::partial, FreezePolicy::all_frozen, FreezePolicy::all_unfrozen})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown freeze policy: " + s);
}

int synthetic_count(double r, std::size_t n_real) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("mixing rate must be a finite value >= 0");
  return static_cast<int>(std::llround(r * static_cast<double>(n_real)));
}

int backbone_blocks(Architecture a) {
  switch (a) {
    case Architecture::resnet50: return 4;
    case Architecture::effnet_v1:
    case Architecture::effnet_v2: return 7;
    case Architecture::tiny_cnn: return TinyCnn<float>::kBlocks;
  }
  return 0;
}

int frozen_blocks(const BackboneConfig& config) {
  switch (config.freeze) {
    case FreezePolicy::all_unfrozen: return 0;
    case FreezePolicy::all_frozen: return backbone_blocks(config.architecture);
    case FreezePolicy::partial:
      switch (config.architecture) {
        case Architecture::resnet50: return 3;
        case Architecture::effnet_v1:
        case Architecture::effnet_v2: return 5;
        case Architecture::tiny_cnn: return 0;
      }
  }
  return 0;
}

std::vector<std::string> audit_training_set(const std::vector<TrainingItem>& items, const FoldAssignment& folds,
                                            int fold_id) {
  std::vector<std::string> violations;
  for (const auto& it : items) {
    if (it.origin == ItemOrigin::real) {
      if (folds.fold_of(it.patient_id) == fold_id)
        violations.push_back(it.id + ": validation patient " + it.patient_id + " in training set");
      continue;
    }
    if (it.source_fold != fold_id)
      violations.push_back(it.id + ": generated for fold " + std::to_string(it.source_fold) + ", training fold " +
                           std::to_string(fold_id));
    if (!it.source_patient.empty() && folds.fold_of(it.source_patient) == fold_id)
      violations.push_back(it.id + ": derived from validation patient " + it.source_patient);
  }
  return violations;
}

namespace {

Plane to_side(const Plane& img, int side) {
  if (img.rows() == side && img.cols() == side) return img;
  return resize_bilinear(img, 0, 0, static_cast<double>(img.rows()), static_cast<double>(img.cols()), side, side);
}

}  // namespace

std::vector<TrainingItem> compose_training_set(const std::vector<TrainingItem>& real, const SyntheticSet* pool,
                                               const MixSpec& spec, int fold_id, const FoldAssignment& folds,
                                               int side) {
  std::vector<TrainingItem> out = real;
  const int count = synthetic_count(spec.r, real.size());
  if (count > 0 && spec.source == MixSource::none) throw std::invalid_argument("mixing rate > 0 needs a source");
  std::mt19937_64 rng(derive_seed(spec.seed, "compose-fold" + std::to_string(fold_id)));

  if (count > 0 && spec.source == MixSource::geometric) {
    if (real.empty()) throw std::invalid_argument("geometric augmentation needs real images");
    std::vector<std::size_t> perm(real.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < count; ++i) {
      const auto& src = real[perm[static_cast<std::size_t>(i) % perm.size()]];
      const auto aug = geometric_augment(ImageTensor(src.image, ValueDomain::scaled),
                                         derive_seed(spec.seed, "geo-" + std::to_string(fold_id) + "-" + std::to_string(i)), side);
      TrainingItem it;
      it.id = "geo:" + src.id + "#" + std::to_string(i);
      it.label = src.label;
      it.image = aug.image.gray();
      it.origin = ItemOrigin::geometric;
      it.source_fold = fold_id;
      it.source_patient = src.patient_id;
      out.push_back(std::move(it));
    }
  } else if (count > 0) {
    if (!pool) throw std::invalid_argument("no synthetic set for source " + to_string(spec.source));
    const ModelVariant want = spec.source == MixSource::semantic ? ModelVariant::semantic : ModelVariant::class_label;
    if (pool->variant != want)
      throw std::invalid_argument("synthetic set variant " + to_string(pool->variant) + " does not match source " +
                                  to_string(spec.source));
    if (pool->fold_id != fold_id)
      throw std::invalid_argument("synthetic set was generated for fold " + std::to_string(pool->fold_id) +
                                  ", not training fold " + std::to_string(fold_id));
    const auto pool_violations = audit_synthetic_set(*pool, folds, fold_id);
    if (!pool_violations.empty()) throw std::runtime_error("synthetic set leakage: " + pool_violations.front());
    if (static_cast<std::size_t>(count) > pool->images.size())
      throw std::invalid_argument("synthetic pool has " + std::to_string(pool->images.size()) + " images, need " +
                                  std::to_string(count));
    std::vector<std::size_t> perm(pool->images.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < count; ++i) {
      const auto k = perm[static_cast<std::size_t>(i)];
      const auto& prov = pool->provenance[k];
      TrainingItem it;
      it.id = "syn:" + prov.file;
      it.label = prov.intended_label;
      it.image = to_side(pool->images[k], side);
      it.origin = ItemOrigin::synthetic;
      it.source_fold = prov.fold_id;
      it.source_patient = prov.source_patient;
      out.push_back(std::move(it));
    }
  }

  const auto violations = audit_training_set(out, folds, fold_id);
  if (!violations.empty()) throw std::runtime_error("training set leakage: " + violations.front());
  return out;
}

std::vector<std::size_t> oversample_indices(const std::vector<ClassLabel>& labels) {
  std::vector<std::size_t> healthy, unhealthy;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == ClassLabel::healthy ? healthy : unhealthy).push_back(i);
  if (healthy.empty() || unhealthy.empty()) throw std::invalid_argument("oversample_minority: a class is absent");
  const auto& minority = healthy.size() < unhealthy.size() ? healthy : unhealthy;
  const std::size_t deficit = std::max(healthy.size(), unhealthy.size()) - minority.size();
  std::vector<std::size_t> extra;
  for (std::size_t i = 0; i < deficit; ++i) extra.push_back(minority[i % minority.size()]);
  return extra;
}

std::vector<TrainingItem> oversample_minority(const std::vector<TrainingItem>& items) {
  std::vector<ClassLabel> labels;
  for (const auto& it : items) labels.push_back(it.label);
  std::vector<TrainingItem> out = items;
  for (auto i : oversample_indices(labels)) out.push_back(items[i]);
  return out;
}

std::vector<double> Classifier::predict(const std::vector<const Plane*>& images) {
  std::vector<double> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::vector<const Plane*> part(images.begin() + static_cast<std::ptrdiff_t>(begin),
                                         images.begin() + static_cast<std::ptrdiff_t>(std::min(images.size(), begin + kChunk)));
    const nn::Mat<float> logits = net_.forward(classifier_batch<float>(part));
    for (Eigen::Index b = 0; b < logits.cols(); ++b) out.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(logits(0, b)))));
  }
  return out;
}

nn::Mat<float> Classifier::features(const std::vector<const Plane*>& images) {
  return net_.features(classifier_batch<float>(images));
}

Classifier train_classifier(const BackboneConfig& backbone, const std::vector<TrainingItem>& items,
                            const ClassifierHyper& hyper) {
  if (backbone.architecture != Architecture::tiny_cnn)
    throw std::invalid_argument("architecture " + to_string(backbone.architecture) +
                                " needs pretrained ImageNet weights, and this build has no loader for them; use tiny_cnn");
  if (backbone.pretrained) throw std::invalid_argument("tiny_cnn has no pretrained weights");
  if (items.empty()) throw std::invalid_argument("train_classifier: empty training set");
  if (hyper.steps < 0 || hyper.batch_size < 1) throw std::invalid_argument("train_classifier: bad hyperparameters");

  TinyCnn<float> net(derive_seed(hyper.seed, "clf-init"));
  net.freeze_blocks(frozen_blocks(backbone));
  auto params = net.parameters();
  AdamW<float> opt(params, {0.9, 0.999, 1e-8, hyper.weight_decay});
  std::mt19937_64 rng(derive_seed(hyper.seed, "clf-batches"));

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  for (int step = 0; step < hyper.steps; ++step) {
    std::vector<const Plane*> batch;
    nn::Mat<float> y(1, hyper.batch_size);
    for (int b = 0; b < hyper.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& it = items[order[cursor++]];
      batch.push_back(&it.image);
      y(0, b) = static_cast<float>(to_int(it.label));
    }
    nn::zero_grads(params);
    const nn::Mat<float> z = net.forward(classifier_batch<float>(batch));
    // BCE with logits: softplus(z) - y z
    const auto za = z.array();
    const double loss = ((za.max(0.0f) + (-za.abs()).exp().log1p()) - y.array() * za).mean();
    if (!std::isfinite(loss)) throw std::runtime_error("train_classifier: non-finite loss at step " + std::to_string(step));
    const nn::Mat<float> dz = ((1.0f / (1.0f + (-za).exp())) - y.array()).matrix() / static_cast<float>(hyper.batch_size);
    net.backward(dz);
    opt.step(hyper.learning_rate);
  }
  return Classifier(backbone, std::move(net));
}

}  // namespace liverdiff
