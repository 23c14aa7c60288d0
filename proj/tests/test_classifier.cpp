#include "liverdiff/classifier.hpp"
#include "liverdiff/stats.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <set>

using namespace liverdiff;

TEST_CASE("synthetic count is round(r * n)") {
  CHECK(synthetic_count(0.0, 440) == 0);
  CHECK(synthetic_count(0.5, 7) == 4);
  CHECK(synthetic_count(1.5, 440) == 660);
  CHECK(synthetic_count(2.0, 440) == 880);
  CHECK_THROWS_AS(synthetic_count(-0.5, 10), std::invalid_argument);
}

TEST_CASE("composed sets contain every real image plus r * n generated ones") {
  const GridData data = testing::toy_grid_data();
  for (int f = 0; f < 3; ++f) {
    const auto& real = data.per_fold[f].train;
    const SyntheticSet& pool = data.synthetic.at({f, MixSource::semantic});
    for (double r : {0.0, 0.5, 1.0, 2.0}) {
      const auto items = compose_training_set(real, r > 0 ? &pool : nullptr, {r, r > 0 ? MixSource::semantic : MixSource::none, 9},
                                              f, data.folds, 16);
      const int expected = synthetic_count(r, real.size());
      REQUIRE(items.size() == real.size() + static_cast<std::size_t>(expected));
      std::set<std::string> ids;
      for (std::size_t i = 0; i < items.size(); ++i) {
        ids.insert(items[i].id);
        CHECK((items[i].origin == ItemOrigin::real) == (i < real.size()));
      }
      CHECK(ids.size() == items.size());  // drawn without replacement
      CHECK(audit_training_set(items, data.folds, f).empty());
    }
  }
}

TEST_CASE("composition is seeded") {
  const GridData data = testing::toy_grid_data();
  const auto& real = data.per_fold[0].train;
  const SyntheticSet& pool = data.synthetic.at({0, MixSource::semantic});
  const auto a = compose_training_set(real, &pool, {0.5, MixSource::semantic, 1}, 0, data.folds, 16);
  const auto b = compose_training_set(real, &pool, {0.5, MixSource::semantic, 1}, 0, data.folds, 16);
  const auto c = compose_training_set(real, &pool, {0.5, MixSource::semantic, 2}, 0, data.folds, 16);
  std::vector<std::string> ia, ib, ic;
  for (std::size_t i = 0; i < a.size(); ++i) ia.push_back(a[i].id), ib.push_back(b[i].id), ic.push_back(c[i].id);
  CHECK(ia == ib);
  CHECK(ia != ic);
}

TEST_CASE("geometric augmentation cycles the real images and keeps their labels") {
  const GridData data = testing::toy_grid_data();
  const auto& real = data.per_fold[1].train;
  const auto items = compose_training_set(real, nullptr, {1.5, MixSource::geometric, 4}, 1, data.folds, 16);
  REQUIRE(items.size() == real.size() + static_cast<std::size_t>(synthetic_count(1.5, real.size())));
  for (std::size_t i = real.size(); i < items.size(); ++i) {
    CHECK(items[i].origin == ItemOrigin::geometric);
    CHECK(items[i].image.rows() == 16);
    bool found = false;
    for (const auto& r : real)
      if (r.patient_id == items[i].source_patient) {
        found = true;
        CHECK(r.label == items[i].label);
      }
    CHECK(found);
  }
}

TEST_CASE("composition rejects leaking or mismatched pools") {
  const GridData data = testing::toy_grid_data();
  const auto& real = data.per_fold[0].train;
  const MixSpec mix{1.0, MixSource::semantic, 0};

  const SyntheticSet other_fold = data.synthetic.at({1, MixSource::semantic});
  CHECK_THROWS_AS(compose_training_set(real, &other_fold, mix, 0, data.folds, 16), std::invalid_argument);

  SyntheticSet leaky = data.synthetic.at({0, MixSource::semantic});
  const auto& held_out = data.per_fold[0].validation.front().patient_id;
  leaky.provenance[3].source_patient = held_out;
  CHECK_THROWS_WITH_AS(compose_training_set(real, &leaky, mix, 0, data.folds, 16), doctest::Contains(held_out.c_str()),
                       std::runtime_error);

  const SyntheticSet class_pool = data.synthetic.at({0, MixSource::class2img});
  CHECK_THROWS_AS(compose_training_set(real, &class_pool, mix, 0, data.folds, 16), std::invalid_argument);
  CHECK_THROWS_AS(compose_training_set(real, nullptr, mix, 0, data.folds, 16), std::invalid_argument);
  CHECK_THROWS_AS(compose_training_set(real, nullptr, {1.0, MixSource::none, 0}, 0, data.folds, 16),
                  std::invalid_argument);
  const SyntheticSet& pool = data.synthetic.at({0, MixSource::semantic});
  CHECK_THROWS_AS(compose_training_set(real, &pool, {2.5, MixSource::semantic, 0}, 0, data.folds, 16),
                  std::invalid_argument);
}

TEST_CASE("training-set audit flags injected leakage") {
  const GridData data = testing::toy_grid_data();
  auto items = data.per_fold[2].train;
  CHECK(audit_training_set(items, data.folds, 2).empty());

  items.push_back(data.per_fold[2].validation.front());
  CHECK(audit_training_set(items, data.folds, 2).size() == 1);

  TrainingItem gen;
  gen.id = "syn:x";
  gen.origin = ItemOrigin::synthetic;
  gen.source_fold = 0;
  items.push_back(gen);
  CHECK(audit_training_set(items, data.folds, 2).size() == 2);

  gen.source_fold = 2;
  gen.source_patient = data.per_fold[2].validation.back().patient_id;
  items.back() = gen;
  CHECK(audit_training_set(items, data.folds, 2).size() == 2);
}

TEST_CASE("minority oversampling appends round-robin") {
  using C = ClassLabel;
  CHECK(oversample_indices({C::healthy, C::unhealthy, C::unhealthy, C::unhealthy, C::unhealthy}) ==
        std::vector<std::size_t>{0, 0, 0});
  CHECK(oversample_indices({C::unhealthy, C::healthy, C::unhealthy, C::healthy, C::unhealthy, C::unhealthy,
                            C::unhealthy}) == std::vector<std::size_t>{1, 3, 1});
  CHECK(oversample_indices({C::healthy, C::unhealthy}).empty());
  CHECK_THROWS_AS(oversample_indices({C::healthy, C::healthy}), std::invalid_argument);

  const GridData data = testing::toy_grid_data();
  auto items = data.per_fold[0].train;
  items.erase(items.begin());  // one fewer healthy image
  const auto balanced = oversample_minority(items);
  long healthy = 0;
  for (const auto& it : balanced) healthy += it.label == ClassLabel::healthy;
  CHECK(2 * healthy == static_cast<long>(balanced.size()));
}

TEST_CASE("freeze policy block counts") {
  CHECK(frozen_blocks({Architecture::resnet50, FreezePolicy::partial, true, ""}) == 3);
  CHECK(frozen_blocks({Architecture::effnet_v1, FreezePolicy::partial, true, ""}) == 5);
  CHECK(frozen_blocks({Architecture::effnet_v2, FreezePolicy::partial, true, ""}) == 5);
  CHECK(frozen_blocks({Architecture::resnet50, FreezePolicy::all_frozen, true, ""}) == 4);
  CHECK(frozen_blocks({Architecture::effnet_v2, FreezePolicy::all_unfrozen, true, ""}) == 0);
  CHECK(frozen_blocks({Architecture::tiny_cnn, FreezePolicy::partial, false, ""}) == 0);
  CHECK(frozen_blocks({Architecture::tiny_cnn, FreezePolicy::all_frozen, false, ""}) == TinyCnn<float>::kBlocks);
}

TEST_CASE("TinyCnn gradients match central differences and frozen blocks get none") {
  std::vector<Plane> imgs;
  for (int b = 0; b < 2; ++b) imgs.push_back(testing::class_image(b ? ClassLabel::unhealthy : ClassLabel::healthy, 40 + b, 12));
  const auto x = classifier_batch<double>({&imgs[0], &imgs[1]});
  nn::Mat<double> w(1, 2);
  w << 0.7, -1.3;

  TinyCnn<double> net(5);
  const double err = testing::relative_gradient_error(net.parameters(), [&](bool backprop) {
    const nn::Mat<double> logits = net.forward(x);
    if (backprop) net.backward(w);
    return logits.cwiseProduct(w).sum();
  });
  CHECK(err < 1e-6);

  net.freeze_blocks(2);
  auto params = net.parameters();
  nn::zero_grads(params);
  (void)net.forward(x);
  net.backward(w);
  for (auto* p : params) {
    INFO(p->name);
    const bool frozen = p->name.rfind("block1", 0) == 0 || p->name.rfind("block2", 0) == 0;
    CHECK(p->trainable == !frozen);
    if (frozen) CHECK(p->grad.isZero());
    else CHECK(!p->grad.isZero());
  }
}

TEST_CASE("tiny_cnn learns a separable two-class problem") {
  const GridData data = testing::toy_grid_data();
  ClassifierHyper hyper;
  hyper.steps = 80;
  hyper.learning_rate = 5e-3;
  hyper.batch_size = 8;
  hyper.seed = 3;
  Classifier clf = train_classifier({Architecture::tiny_cnn, FreezePolicy::partial, false, ""}, data.per_fold[0].train, hyper);
  std::vector<ScoredItem> scored;
  for (const auto& v : data.per_fold[0].validation) {
    const double p = clf.predict(v.image);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    scored.push_back({p, to_int(v.label)});
  }
  CHECK(roc_auc(scored) > 0.95);

  Classifier again = train_classifier({Architecture::tiny_cnn, FreezePolicy::partial, false, ""}, data.per_fold[0].train, hyper);
  CHECK(again.predict(data.per_fold[0].validation[0].image) == clf.predict(data.per_fold[0].validation[0].image));
}

TEST_CASE("pretrained backbones are refused without weights") {
  const GridData data = testing::toy_grid_data();
  ClassifierHyper hyper;
  hyper.steps = 1;
  CHECK_THROWS_WITH_AS(train_classifier({Architecture::resnet50, FreezePolicy::partial, true, ""}, data.per_fold[0].train, hyper),
                       doctest::Contains("weights"), std::invalid_argument);
  CHECK_THROWS_AS(train_classifier({Architecture::tiny_cnn, FreezePolicy::partial, true, ""}, data.per_fold[0].train, hyper),
                  std::invalid_argument);
}

TEST_CASE("enum string round trips") {
  for (auto s : {MixSource::none, MixSource::semantic, MixSource::class2img, MixSource::geometric})
    CHECK(mix_source_from_string(to_string(s)) == s);
  for (auto a : {Architecture::resnet50, Architecture::effnet_v1, Architecture::effnet_v2, Architecture::tiny_cnn})
    CHECK(architecture_from_string(to_string(a)) == a);
  CHECK_THROWS_AS(mix_source_from_string("mixup"), std::invalid_argument);
  CHECK_THROWS_AS(freeze_policy_from_string("half"), std::invalid_argument);
}
