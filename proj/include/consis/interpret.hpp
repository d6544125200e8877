#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "consis/activation_store.hpp"
#include "consis/model.hpp"

namespace consis {

struct GalleryEntry {
  std::uint32_t image_column = 0;  // column in the activation store
  float activation = 0.0f;
  std::uint32_t class_index = 0;
  bool is_adversarial = false;
};

struct NeuronGallery {
  int neuron = 0;
  std::vector<GalleryEntry> clean;  // sorted by activation, descending
  std::vector<GalleryEntry> adv;
};

// The k images with the highest recorded activation in the split. Ties break
// toward the lower image column, so results are a deterministic function of
// the store.
inline std::vector<GalleryEntry> top_activating(const ActivationRecordStore& store,
                                                int neuron, std::size_t k, Split split) {
  require(neuron >= 0 && neuron < store.neuron_count, ErrorCode::unknown_neuron,
          "neuron " + std::to_string(neuron) + " out of range");
  std::vector<GalleryEntry> entries;
  for (const auto col : store.columns(split)) {
    entries.push_back({col, store.activation(neuron, col),
                       store.images[col].class_index,
                       store.images[col].is_adversarial != 0});
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.activation != b.activation) return a.activation > b.activation;
    return a.image_column < b.image_column;
  });
  if (entries.size() > k) entries.resize(k);
  return entries;
}

inline NeuronGallery make_gallery(const ActivationRecordStore& store, int neuron,
                                  std::size_t k) {
  NeuronGallery g;
  g.neuron = neuron;
  g.clean = top_activating(store, neuron, k, Split::clean);
  if (!store.columns(Split::adversarial).empty())
    g.adv = top_activating(store, neuron, k, Split::adversarial);
  return g;
}

struct DiscrepancyMap {
  int grid_h = 0, grid_w = 0;
  int patch = 0, stride = 0;
  float base_activation = 0.0f;
  std::vector<float> drop;  // base - occluded activation per grid cell

  float at(int gy, int gx) const { return drop[static_cast<std::size_t>(gy) * grid_w + gx]; }
};

// Slides a constant-valued occluder over the image and records how much the
// neuron's activation (spatial max of its channel at the tap) falls at each
// location. Grid dims are floor((H - patch)/stride) + 1 per axis.
inline DiscrepancyMap discrepancy_map(const ClassifierModel<float>& model,
                                      const Tensor<float>& image,  // [1,C,H,W]
                                      const std::string& tap, int neuron, int patch,
                                      int stride,
                                      const std::vector<float>& occluder_rgb) {
  const Shape3 in = model.spec.input;
  require(image.rank() == 4 && image.dim(0) == 1, ErrorCode::shape_mismatch,
          "discrepancy_map expects a single image");
  require(patch >= 1 && stride >= 1, ErrorCode::invalid_config,
          "patch and stride must be positive");
  require(patch <= in.h && patch <= in.w, ErrorCode::patch_larger_than_image,
          "occluder patch exceeds the image");
  const Shape3 tap_shape = model.spec.tap_shape(tap);
  require(neuron >= 0 && neuron < tap_shape.c, ErrorCode::unknown_neuron,
          "neuron out of range for tap " + tap);
  require(static_cast<int>(occluder_rgb.size()) == in.c, ErrorCode::shape_mismatch,
          "occluder needs one value per channel");

  const int plane = tap_shape.h * tap_shape.w;
  auto spatial_max = [&](const Tensor<float>& feats, std::size_t img) {
    const float* f = feats.ptr() + img * static_cast<std::size_t>(tap_shape.numel()) +
                     static_cast<std::size_t>(neuron) * plane;
    float best = f[0];
    for (int p = 1; p < plane; ++p) best = std::max(best, f[p]);
    return best;
  };

  DiscrepancyMap out;
  out.patch = patch;
  out.stride = stride;
  out.grid_h = (in.h - patch) / stride + 1;
  out.grid_w = (in.w - patch) / stride + 1;
  out.drop.resize(static_cast<std::size_t>(out.grid_h) * out.grid_w);

  {
    const auto trace = forward(model, image);
    out.base_activation = spatial_max(trace.tapped(model.spec, tap), 0);
  }

  const std::size_t cells = out.drop.size();
  const std::size_t img_numel = image.size();
  // evaluate all occlusions as one batch
  Tensor<float> batch({cells, image.dim(1), image.dim(2), image.dim(3)});
  for (std::size_t cell = 0; cell < cells; ++cell) {
    float* dst = batch.ptr() + cell * img_numel;
    std::copy(image.ptr(), image.ptr() + img_numel, dst);
    const int gy = static_cast<int>(cell) / out.grid_w;
    const int gx = static_cast<int>(cell) % out.grid_w;
    for (int c = 0; c < in.c; ++c)
      for (int y = gy * stride; y < gy * stride + patch; ++y)
        std::fill(dst + (static_cast<std::size_t>(c) * in.h + y) * in.w + gx * stride,
                  dst + (static_cast<std::size_t>(c) * in.h + y) * in.w + gx * stride +
                      patch,
                  occluder_rgb[c]);
  }
  const auto trace = forward(model, batch);
  const Tensor<float>& feats = trace.tapped(model.spec, tap);
  for (std::size_t cell = 0; cell < cells; ++cell)
    out.drop[cell] = out.base_activation - spatial_max(feats, cell);
  return out;
}

// Cells in the top decile of positive drops; the region the neuron relies on.
inline std::vector<std::uint8_t> discrepancy_highlight(const DiscrepancyMap& map) {
  std::vector<float> sorted(map.drop);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::clamp<double>(std::ceil(0.9 * sorted.size()), 1.0,
                         static_cast<double>(sorted.size())) - 1.0);
  const float thr = sorted[idx];
  std::vector<std::uint8_t> mask(map.drop.size());
  for (std::size_t i = 0; i < map.drop.size(); ++i)
    mask[i] = (map.drop[i] > 0.0f && map.drop[i] > thr) ? 1 : 0;
  return mask;
}

}  // namespace consis
