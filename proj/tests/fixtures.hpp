#pragma once

#include "liverdiff/grid.hpp"
#include "support.hpp"

#include <random>
#include <string>

namespace testing {

/// 16x16 scaled image whose mean level separates the classes.
inline liverdiff::Plane class_image(liverdiff::ClassLabel label, std::uint64_t seed, int side = 16) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 0.2f);
  const float level = label == liverdiff::ClassLabel::unhealthy ? 0.4f : -0.4f;
  liverdiff::Plane p(side, side);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = std::clamp(level + g(rng), -1.0f, 1.0f);
  return p;
}

/// Semantic-variant pool made for `fold`, two items per training image, each
/// derived from a training patient and inheriting its label.
inline liverdiff::SyntheticSet pool_for(const liverdiff::FoldData& data, int fold,
                                        liverdiff::ModelVariant variant = liverdiff::ModelVariant::semantic) {
  liverdiff::SyntheticSet set;
  set.fold_id = fold;
  set.variant = variant;
  for (std::size_t i = 0; i < 2 * data.train.size(); ++i) {
    const auto& src = data.train[i % data.train.size()];
    liverdiff::Provenance p;
    p.file = "f" + std::to_string(fold) + "_" + std::to_string(i) + ".png";
    p.fold_id = fold;
    p.variant = variant;
    p.seed = i;
    p.intended_label = src.label;
    if (variant == liverdiff::ModelVariant::semantic) {
      p.source_patient = src.patient_id;
      p.condition_ref = src.id;
    } else {
      p.condition_ref = "label:" + std::to_string(liverdiff::to_int(src.label));
    }
    set.images.push_back(class_image(src.label, 1000 + i + 100 * static_cast<std::uint64_t>(fold)));
    set.provenance.push_back(p);
  }
  return set;
}

/// Six healthy and six unhealthy patients with two images each, three folds,
/// and semantic and class pools for every fold.
inline liverdiff::GridData toy_grid_data() {
  using namespace liverdiff;
  const DatasetIndex index = synthetic_index(6, 6, 2);
  GridData data;
  data.folds = assign_folds(index, 3, 0);
  std::uint64_t seed = 0;
  for (int f = 0; f < 3; ++f) {
    FoldData fd;
    for (const auto& p : index.patients)
      for (const auto& id : p.image_ids) {
        TrainingItem it;
        it.id = id;
        it.patient_id = p.patient_id;
        it.label = p.label;
        it.image = class_image(p.label, seed++);
        (data.folds.fold_of(p.patient_id) == f ? fd.validation : fd.train).push_back(it);
      }
    data.synthetic[{f, MixSource::semantic}] = pool_for(fd, f);
    data.synthetic[{f, MixSource::class2img}] = pool_for(fd, f, ModelVariant::class_label);
    data.per_fold.push_back(std::move(fd));
  }
  data.fingerprint = "toy";
  return data;
}

}  // namespace testing
