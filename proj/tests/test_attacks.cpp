#include "consis/attacks.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "testutil.hpp"

using consis::AttackConfig;
using consis::AttackMode;
using consis::ClassifierModel;
using consis::Error;
using consis::fgsm;
using consis::iterative_least_likely;
using consis::Rng;
using consis::targeted_l2;
using consis::Tensor;

namespace {

double linf(const Tensor<float>& a, const Tensor<float>& b) {
  return consis::max_abs_diff(a, b);
}

bool in_unit_range(const Tensor<float>& t) {
  for (const float v : t.data)
    if (v < 0.0f || v > 1.0f) return false;
  return true;
}

TEST(Fgsm, EpsilonZeroIsBitwiseIdentity) {
  const auto spec = testutil::tiny_conv_spec(3, 8, 8, 4);
  const auto model = ClassifierModel<float>::random_init(spec, 31);
  Rng rng(1);
  const auto pixels = testutil::random_pixels<float>(rng, 4, 3, 8, 8);
  const auto labels = testutil::random_labels(rng, 4, 4);
  const auto adv = fgsm(model, pixels, labels, 0.0);
  EXPECT_EQ(adv.pixels.data, pixels.data);
}

TEST(Fgsm, BudgetAndRangeOverRandomCases) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = testutil::tiny_conv_spec(2, 8, 8, 3);
    const auto model =
        ClassifierModel<float>::random_init(spec, 500 + static_cast<std::uint64_t>(trial));
    const auto pixels = testutil::random_pixels<float>(rng, 3, 2, 8, 8);
    const auto labels = testutil::random_labels(rng, 3, 3);
    const double eps = rng.uniform(0.0, 0.1);
    const auto adv = fgsm(model, pixels, labels, eps);
    EXPECT_LE(linf(adv.pixels, pixels), eps + 1e-7);
    EXPECT_TRUE(in_unit_range(adv.pixels));
  }
}

TEST(Fgsm, PerturbationMatchesConstructionExactly) {
  const auto spec = testutil::tiny_conv_spec(1, 8, 8, 3);
  const auto model = ClassifierModel<float>::random_init(spec, 9);
  Rng rng(3);
  const auto pixels = testutil::random_pixels<float>(rng, 2, 1, 8, 8);
  const auto labels = testutil::random_labels(rng, 2, 3);
  const double eps = 0.01;

  const auto grad = consis::input_gradient(model, pixels, labels);
  const auto adv = fgsm(model, pixels, labels, eps);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const float expected = std::min(
        std::max(pixels[i] + static_cast<float>(eps) *
                                 (grad[i] > 0 ? 1.0f : (grad[i] < 0 ? -1.0f : 0.0f)),
                 0.0f),
        1.0f);
    EXPECT_EQ(adv.pixels[i], expected);
    if (grad[i] == 0.0f) EXPECT_EQ(adv.pixels[i], pixels[i]);
  }
}

TEST(Fgsm, AntisymmetricUnderLabelFlipInTwoClassLinearModel) {
  // logits = [w.x, -w.x]: flipping the label negates the input gradient
  const auto spec = testutil::linear_spec(1, 4, 4, 2);
  auto model = ClassifierModel<float>::zeros(spec);
  Rng rng(4);
  for (int i = 0; i < 16; ++i) {
    const float v = static_cast<float>(rng.normal(0.0, 1.0));
    model.params.layers[1].w[i] = v;
    model.params.layers[1].w[16 + i] = -v;
  }
  Tensor<float> pixels({1, 1, 4, 4});
  for (auto& v : pixels.data) v = static_cast<float>(rng.uniform(0.3, 0.7));

  const double eps = 0.05;
  const auto adv0 = fgsm(model, pixels, {0}, eps);
  const auto adv1 = fgsm(model, pixels, {1}, eps);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const float d0 = adv0.pixels[i] - pixels[i];
    const float d1 = adv1.pixels[i] - pixels[i];
    EXPECT_NEAR(d0, -d1, 1e-6);
  }
}

TEST(Fgsm, ReducesAccuracyOnTrainedToyModel) {
  // the train split is large enough to carry low-margin images; the 72-image
  // val split has none at this budget
  const auto& world = testutil::toy_world();
  const auto batch = world.data.train.all_images();
  const double clean_acc = consis::accuracy(world.model, batch.pixels, batch.labels);
  const auto adv = fgsm(world.model, batch.pixels, batch.labels, 1.0 / 255.0);
  const double adv_acc = consis::accuracy(world.model, adv.pixels, batch.labels);
  EXPECT_LT(adv_acc, clean_acc);
}

TEST(TargetedL2, AlreadyPredictedTargetSucceedsWithZeroPerturbation) {
  const auto& world = testutil::toy_world();
  const auto batch = world.data.val.batch({0, 1, 2, 3});
  const auto pred = consis::argmax_rows(
      consis::forward(world.model, batch.pixels).logits());
  // pick images whose prediction differs from the true label source; use the
  // predicted class as target (allowed when it differs from the true label)
  std::vector<std::uint32_t> targets(pred.begin(), pred.end());
  std::vector<std::uint32_t> truths = batch.labels;
  for (std::size_t i = 0; i < truths.size(); ++i)
    if (truths[i] == targets[i]) truths[i] = (targets[i] + 1) % 6;  // relabel source
  const auto adv =
      targeted_l2(world.model, batch.pixels, truths, targets, 5.0, 10, 0.01);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    EXPECT_EQ(adv.success[i], 1);
  }
  EXPECT_EQ(adv.pixels.data, batch.pixels.data);
}

TEST(TargetedL2, SmallerLambdaKeepsPerturbationSmaller) {
  const auto& world = testutil::toy_world();
  const auto batch = world.data.val.batch({0, 1, 2, 3, 4, 5, 6, 7});
  std::vector<std::uint32_t> targets(batch.labels.size());
  for (std::size_t i = 0; i < targets.size(); ++i)
    targets[i] = (batch.labels[i] + 3) % 6;

  auto l2norm = [&](const Tensor<float>& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(x[i]) - batch.pixels[i];
      acc += d * d;
    }
    return std::sqrt(acc);
  };
  const auto tiny = targeted_l2(world.model, batch.pixels, batch.labels, targets,
                                0.01, 40, 0.01);
  const auto mid = targeted_l2(world.model, batch.pixels, batch.labels, targets,
                               1.0, 40, 0.01);
  const auto big = targeted_l2(world.model, batch.pixels, batch.labels, targets,
                               10.0, 40, 0.01);
  EXPECT_LT(l2norm(tiny.pixels), l2norm(big.pixels));
  EXPECT_LE(l2norm(tiny.pixels), l2norm(mid.pixels) + 1e-9);
}

TEST(TargetedL2, SuccessRateBaselineOnToyModel) {
  const auto& world = testutil::toy_world();
  std::vector<std::uint32_t> ids(64);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i);
  const auto batch = world.data.val.batch(ids);
  std::vector<std::uint32_t> targets(batch.labels.size());
  for (std::size_t i = 0; i < targets.size(); ++i)
    targets[i] = (batch.labels[i] + 1) % 6;
  const auto adv = targeted_l2(world.model, batch.pixels, batch.labels, targets,
                               5.0, 100, 0.01);
  int succ = 0;
  for (const auto s : adv.success) succ += s;
  EXPECT_GE(succ, 52);  // >= 80% of 64
}

TEST(TargetedL2, FinalObjectiveNeverExceedsInitial) {
  const auto& world = testutil::toy_world();
  const auto batch = world.data.val.batch({3, 9, 17, 25});
  std::vector<std::uint32_t> targets(batch.labels.size());
  for (std::size_t i = 0; i < targets.size(); ++i)
    targets[i] = (batch.labels[i] + 2) % 6;
  const double lambda = 2.0;
  const auto adv = targeted_l2(world.model, batch.pixels, batch.labels, targets,
                               lambda, 30, 0.02);

  const auto ce0 = consis::cross_entropy_per_example(
      consis::forward(world.model, batch.pixels).logits(), targets);
  const auto ce1 = consis::cross_entropy_per_example(
      consis::forward(world.model, adv.pixels).logits(), targets);
  const std::size_t n = batch.pixels.size() / targets.size();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double l2sq = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double d = static_cast<double>(adv.pixels[i * n + p]) -
                       batch.pixels[i * n + p];
      l2sq += d * d;
    }
    const double initial = lambda * static_cast<double>(ce0[i]);
    const double final_obj = l2sq + lambda * static_cast<double>(ce1[i]);
    EXPECT_LE(final_obj, initial + 1e-6);
  }
}

TEST(TargetedL2, TargetEqualToTrueLabelRejected) {
  const auto& world = testutil::toy_world();
  const auto batch = world.data.val.batch({0});
  EXPECT_THROW(targeted_l2(world.model, batch.pixels, batch.labels, batch.labels,
                           5.0, 10, 0.01),
               Error);
}

TEST(LeastLikely, EpsilonZeroLeavesInputUnchanged) {
  const auto& world = testutil::toy_world();
  const auto batch = world.data.val.batch({0, 1});
  const auto adv = iterative_least_likely(world.model, batch.pixels, batch.labels,
                                          0.0, 5, 0.01);
  EXPECT_EQ(adv.pixels.data, batch.pixels.data);
}

TEST(LeastLikely, SingleStepEqualsTargetedFgsmTowardLeastLikely) {
  const auto& world = testutil::toy_world();
  const auto batch = world.data.val.batch({0, 1, 2, 3});
  const double eps = 0.02;
  const auto adv =
      iterative_least_likely(world.model, batch.pixels, batch.labels, eps, 1, eps);

  const auto y_ll = consis::argmin_rows(
      consis::forward(world.model, batch.pixels).logits());
  EXPECT_EQ(adv.target_labels, y_ll);
  auto grad = consis::input_gradient(world.model, batch.pixels, y_ll,
                                     consis::Reduction::sum);
  for (auto& v : grad.data) v = -v;  // descend toward the target
  const auto expected = consis::fgsm_perturb(batch.pixels, grad, eps);
  EXPECT_EQ(adv.pixels.data, expected.data);
}

TEST(LeastLikely, BudgetHoldsOverRandomCases) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto spec = testutil::tiny_conv_spec(2, 8, 8, 4);
    const auto model =
        ClassifierModel<float>::random_init(spec, 900 + static_cast<std::uint64_t>(trial));
    const auto pixels = testutil::random_pixels<float>(rng, 3, 2, 8, 8);
    const auto labels = testutil::random_labels(rng, 3, 4);
    const double eps = rng.uniform(0.005, 0.08);
    const auto adv =
        iterative_least_likely(model, pixels, labels, eps, 5, eps / 2.0);
    EXPECT_LE(linf(adv.pixels, pixels), eps + 1e-7);
    EXPECT_TRUE(in_unit_range(adv.pixels));
  }
}

TEST(LeastLikely, MoreStepsReachTargetMoreOften) {
  // baseline recorded on this fixed toy model: 2 vs 8 of 72 at eps=0.15
  const auto& world = testutil::toy_world();
  const auto batch = world.data.val.all_images();
  const double eps = 0.15;
  const auto single =
      iterative_least_likely(world.model, batch.pixels, batch.labels, eps, 1, eps);
  const auto multi = iterative_least_likely(world.model, batch.pixels, batch.labels,
                                            eps, 20, eps / 10.0);
  int single_hits = 0, multi_hits = 0;
  for (const auto s : single.success) single_hits += s;
  for (const auto s : multi.success) multi_hits += s;
  EXPECT_GT(multi_hits, single_hits);
}

TEST(Attacks, SourceBatchStaysUntouched) {
  const auto& world = testutil::toy_world();
  const auto batch = world.data.val.batch({0, 1, 2});
  const auto snapshot = batch.pixels.data;
  std::vector<std::uint32_t> targets(batch.labels.size());
  for (std::size_t i = 0; i < targets.size(); ++i)
    targets[i] = (batch.labels[i] + 1) % 6;

  (void)fgsm(world.model, batch.pixels, batch.labels, 0.02);
  EXPECT_EQ(batch.pixels.data, snapshot);
  (void)targeted_l2(world.model, batch.pixels, batch.labels, targets, 5.0, 5, 0.01);
  EXPECT_EQ(batch.pixels.data, snapshot);
  (void)iterative_least_likely(world.model, batch.pixels, batch.labels, 0.02, 3, 0.01);
  EXPECT_EQ(batch.pixels.data, snapshot);
}

TEST(Attacks, DatasetContainerCarriesProvenance) {
  const auto& world = testutil::toy_world();
  AttackConfig config;
  config.mode = AttackMode::least_likely;
  config.epsilon = 0.03;
  config.steps = 3;
  config.step_size = 0.01;
  config.seed = 77;
  const auto adv = consis::attack_dataset(world.model, world.data.dissect, config);
  EXPECT_EQ(adv.kind, "adversarial");
  EXPECT_EQ(adv.size(), world.data.dissect.size());
  EXPECT_FALSE(adv.pixels_are_u8);
  EXPECT_EQ(adv.provenance.at("mode"), "least-likely");
  EXPECT_EQ(adv.provenance.at("source_hash"), world.data.dissect.content_hash());
  EXPECT_EQ(adv.provenance.at("model_hash"), world.model.params_hash());
  // dataset-wide budget
  const std::size_t n = adv.pixels_per_image();
  for (std::size_t img = 0; img < adv.size(); ++img)
    for (std::size_t p = 0; p < n; ++p)
      EXPECT_LE(std::abs(adv.pixels_f32[img * n + p] -
                         world.data.dissect.pixel(img, p)),
                config.epsilon + 1e-7);
  EXPECT_THROW(consis::attack_dataset(world.model, consis::Dataset{}, config), Error);
}

TEST(Attacks, InvalidConfigsRejected) {
  AttackConfig bad;
  bad.epsilon = 1.5;
  EXPECT_THROW(bad.validate(), Error);
  bad = AttackConfig{};
  bad.steps = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = AttackConfig{};
  bad.mode = AttackMode::least_likely;
  bad.step_size = bad.epsilon * 2.0;
  EXPECT_THROW(bad.validate(), Error);
}

}  // namespace
