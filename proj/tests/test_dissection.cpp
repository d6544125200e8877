#include "consis/dissection.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "testutil.hpp"

using consis::ClassifierModel;
using consis::Dataset;
using consis::DissectionConfig;
using consis::Dissector;
using consis::Error;
using consis::ErrorCode;
using consis::Rng;
using consis::Tensor;

namespace {

// identity probe: conv map of channel 0 equals the input plane, so the
// activation mask is a thresholded copy of the image itself
ClassifierModel<float> delta_kernel_model(int h, int w) {
  consis::ModelSpec spec;
  spec.input = {1, h, w};
  spec.class_count = 2;
  spec.layers = {
      {consis::LayerKind::conv3x3, "probe_lin", 1, 1, 0, 0},
      {consis::LayerKind::relu, "probe_act"},
      {consis::LayerKind::global_avg_pool, "gap"},
      {consis::LayerKind::dense, "fc", 0, 0, 1, 2},
  };
  spec.feature_taps = {{"probe", 0}};
  spec.validate();
  auto model = ClassifierModel<float>::zeros(spec);
  model.params.layers[0].w[4] = 1.0f;  // center of the 3x3 kernel
  return model;
}

// one-image mask dataset over a given binary image, with a single concept
// category "object" holding two concepts
Dataset mask_dataset(const std::vector<std::uint8_t>& image_on,
                     const std::vector<std::uint16_t>& object_plane, int h, int w) {
  Dataset ds;
  ds.channels = 1;
  ds.height = h;
  ds.width = w;
  ds.class_count = 2;
  ds.labels = {0};
  ds.pixels_u8.resize(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < ds.pixels_u8.size(); ++i)
    ds.pixels_u8[i] = image_on[i] ? 255 : 0;
  ds.mask_categories = {"object"};
  ds.concept_names = {{"object", {"alpha", "beta"}}};
  ds.masks = object_plane;
  return ds;
}

TEST(ActivationMask, ConstantMapGivesAllZeros) {
  const int h = 8, w = 8;
  auto model = delta_kernel_model(h, w);
  Tensor<float> pixels({1, 1, h, w});
  pixels.fill(0.5f);
  Dissector d(model, pixels, h, w, "probe", 0.05);
  const auto mask = d.activation_mask(0, 0);
  for (const auto v : mask) EXPECT_EQ(v, 0);
}

TEST(ActivationMask, ShapeMatchesImageAndUpsamples) {
  const auto& world = testutil::toy_world();
  Dissector d(world.model, world.data.dissect, "conv3", 0.01);
  const auto mask = d.activation_mask(0, 0);
  EXPECT_EQ(mask.size(), static_cast<std::size_t>(world.spec.image_size) *
                             world.spec.image_size);
  // nearest upsample: constant over each cell block
  const auto shape = d.map_shape();
  const int fy = world.spec.image_size / shape.h;
  ASSERT_GT(fy, 1);
}

TEST(ActivationMask, OnFractionTracksQuantile) {
  // random maps through the identity probe: expected on-fraction ~ q
  const int h = 32, w = 32, images = 64;
  auto model = delta_kernel_model(h, w);
  Rng rng(9);
  Tensor<float> pixels({images, 1, h, w});
  for (auto& v : pixels.data) v = static_cast<float>(rng.uniform());
  const double q = 0.005;
  Dissector d(model, pixels, h, w, "probe", q);
  std::size_t on = 0;
  for (int img = 0; img < images; ++img) {
    const auto mask = d.activation_mask(img, 0);
    for (const auto v : mask) on += v;
  }
  const double fraction = static_cast<double>(on) / (images * h * w);
  EXPECT_NEAR(fraction, q, 0.002);
}

TEST(ActivationMask, UnknownNeuronRejected) {
  const int h = 8, w = 8;
  auto model = delta_kernel_model(h, w);
  Tensor<float> pixels({1, 1, h, w});
  pixels.fill(0.1f);
  Dissector d(model, pixels, h, w, "probe", 0.05);
  try {
    d.activation_mask(0, 5);
    FAIL() << "expected UnknownNeuron";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unknown_neuron);
  }
}

TEST(NeuronConceptIoU, IdenticalMasksGiveOne) {
  const int h = 16, w = 16;
  std::vector<std::uint8_t> on(h * w, 0);
  std::vector<std::uint16_t> object(h * w, 0);
  for (int y = 4; y < 8; ++y)
    for (int x = 4; x < 8; ++x) {
      on[y * w + x] = 1;
      object[y * w + x] = 1;  // concept "alpha"
    }
  const auto ds = mask_dataset(on, object, h, w);
  auto model = delta_kernel_model(h, w);
  // bright region is 16/256 of the image; q=0.2 puts the threshold at 0
  Dissector d(model, ds, "probe", 0.2);
  EXPECT_DOUBLE_EQ(consis::neuron_concept_iou(d, ds, 0, "object", 1), 1.0);
}

TEST(NeuronConceptIoU, DisjointMasksGiveZero) {
  const int h = 16, w = 16;
  std::vector<std::uint8_t> on(h * w, 0);
  std::vector<std::uint16_t> object(h * w, 0);
  for (int x = 0; x < 4; ++x) on[x] = 1;
  for (int x = 8; x < 12; ++x) object[x] = 2;  // concept "beta"
  const auto ds = mask_dataset(on, object, h, w);
  auto model = delta_kernel_model(h, w);
  Dissector d(model, ds, "probe", 0.2);
  EXPECT_DOUBLE_EQ(consis::neuron_concept_iou(d, ds, 0, "object", 2), 0.0);
}

TEST(NeuronConceptIoU, HalfOverlapEqualAreasGiveOneThird) {
  const int h = 16, w = 16;
  std::vector<std::uint8_t> on(h * w, 0);
  std::vector<std::uint16_t> object(h * w, 0);
  // activation on columns [0, 8), concept on columns [4, 12) of row band
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 8; ++x) on[y * w + x] = 1;
    for (int x = 4; x < 12; ++x) object[y * w + x] = 1;
  }
  const auto ds = mask_dataset(on, object, h, w);
  auto model = delta_kernel_model(h, w);
  Dissector d(model, ds, "probe", 0.2);
  EXPECT_NEAR(consis::neuron_concept_iou(d, ds, 0, "object", 1), 1.0 / 3.0, 1e-12);
}

TEST(AlignmentTable, SameSplitGivesIdenticalRatios) {
  const auto& world = testutil::toy_world();
  DissectionConfig cfg{"conv3", 0.01, 0.04};
  const auto report =
      consis::alignment_table(world.model, world.data.dissect, &world.data.dissect, cfg);
  ASSERT_EQ(report.categories.size(), 3u);
  for (const auto& cat : report.categories) {
    EXPECT_DOUBLE_EQ(report.clean_ratio.at(cat), report.adv_ratio.at(cat));
    EXPECT_GE(report.clean_ratio.at(cat), 0.0);
    EXPECT_LE(report.clean_ratio.at(cat), 1.0);
  }
  EXPECT_EQ(report.best_clean.size(), report.best_adv.size());
}

TEST(AlignmentTable, TrainedToyAlignsWithSomething) {
  const auto& world = testutil::toy_world();
  DissectionConfig cfg{"conv3", 0.01, 0.04};
  const auto report = consis::alignment_table(world.model, world.data.dissect, nullptr, cfg);
  double best = 0.0;
  for (const auto& row : report.best_clean) best = std::max(best, row.iou);
  EXPECT_GT(best, cfg.tau);  // a trained model has at least one aligned neuron
  EXPECT_TRUE(report.adv_ratio.empty());
  for (const auto& row : report.best_clean)
    EXPECT_EQ(row.aligned, row.iou > cfg.tau);
}

TEST(AlignmentTable, InvariantToImageOrdering) {
  const auto& world = testutil::toy_world();
  Dataset shuffled = world.data.dissect;
  // reverse the image order, moving pixels, labels, and masks together
  const std::size_t n = shuffled.size();
  const std::size_t ppi = shuffled.pixels_per_image();
  const std::size_t mpi = shuffled.mask_categories.size() *
                          static_cast<std::size_t>(shuffled.height) * shuffled.width;
  Dataset reversed = shuffled;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = n - 1 - i;
    reversed.labels[i] = shuffled.labels[j];
    std::copy(shuffled.pixels_u8.begin() + j * ppi,
              shuffled.pixels_u8.begin() + (j + 1) * ppi,
              reversed.pixels_u8.begin() + i * ppi);
    std::copy(shuffled.masks.begin() + j * mpi, shuffled.masks.begin() + (j + 1) * mpi,
              reversed.masks.begin() + i * mpi);
  }
  DissectionConfig cfg{"conv3", 0.01, 0.04};
  const auto a = consis::alignment_table(world.model, world.data.dissect, nullptr, cfg);
  const auto b = consis::alignment_table(world.model, reversed, nullptr, cfg);
  for (const auto& cat : a.categories)
    EXPECT_DOUBLE_EQ(a.clean_ratio.at(cat), b.clean_ratio.at(cat));
}

TEST(AlignmentTable, MismatchedAdversarialSetRejected) {
  const auto& world = testutil::toy_world();
  Dataset short_set = world.data.dissect;
  short_set.labels.pop_back();
  short_set.pixels_u8.resize(short_set.labels.size() * short_set.pixels_per_image());
  short_set.masks.resize(short_set.labels.size() * 3 *
                         static_cast<std::size_t>(short_set.height) * short_set.width);
  DissectionConfig cfg{"conv3", 0.01, 0.04};
  EXPECT_THROW(
      consis::alignment_table(world.model, world.data.dissect, &short_set, cfg),
      Error);
}

TEST(AlignmentTable, MasklessDatasetRejected) {
  const auto& world = testutil::toy_world();
  DissectionConfig cfg{"conv3", 0.01, 0.04};
  EXPECT_THROW(consis::alignment_table(world.model, world.data.val, nullptr, cfg),
               Error);
}

TEST(AlignmentReportText, TableListsEveryCategory) {
  const auto& world = testutil::toy_world();
  DissectionConfig cfg{"conv3", 0.01, 0.04};
  const auto report =
      consis::alignment_table(world.model, world.data.dissect, &world.data.dissect, cfg);
  const std::string text = consis::alignment_report_text(report, "toy");
  for (const auto& cat : report.categories)
    EXPECT_NE(text.find(cat), std::string::npos);
  EXPECT_NE(text.find("toy/clean"), std::string::npos);
  EXPECT_NE(text.find("toy/adv"), std::string::npos);
}

}  // namespace
