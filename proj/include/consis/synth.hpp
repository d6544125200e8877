#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "consis/dataset.hpp"
#include "consis/error.hpp"
#include "consis/parallel.hpp"
#include "consis/rng.hpp"
#include "consis/taxonomy.hpp"

namespace consis {

// Synthetic stand-in for a curated photo corpus: K classes arranged as
// leaves of a family taxonomy (root -> families -> classes, so siblings sit
// at tree distance 2 and cross-family leaves at 4). Classes within a family
// share a hue; shape and surface texture distinguish them, so class identity
// needs more than color while the taxonomy stays visually meaningful.
struct SynthSpec {
  int families = 3;
  int classes_per_family = 4;
  int image_size = 64;
  int train_per_class = 500;
  int val_per_class = 100;
  int dissect_per_class = 40;
  double noise_sigma = 0.02;

  int class_count() const { return families * classes_per_family; }

  void validate() const {
    require(families >= 1 && classes_per_family >= 1, ErrorCode::invalid_config,
            "families and classes_per_family must be positive");
    require(classes_per_family <= 4, ErrorCode::invalid_config,
            "at most 4 classes per family (shape/texture attribute space)");
    require(image_size >= 16 && image_size % 8 == 0, ErrorCode::invalid_config,
            "image_size must be >= 16 and divisible by 8");
  }

  nlohmann::json to_json() const {
    return {{"families", families},
            {"classes_per_family", classes_per_family},
            {"image_size", image_size},
            {"train_per_class", train_per_class},
            {"val_per_class", val_per_class},
            {"dissect_per_class", dissect_per_class},
            {"noise_sigma", noise_sigma}};
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    s.families = j.value("families", s.families);
    s.classes_per_family = j.value("classes_per_family", s.classes_per_family);
    s.image_size = j.value("image_size", s.image_size);
    s.train_per_class = j.value("train_per_class", s.train_per_class);
    s.val_per_class = j.value("val_per_class", s.val_per_class);
    s.dissect_per_class = j.value("dissect_per_class", s.dissect_per_class);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.validate();
    return s;
  }
};

namespace synth_detail {

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> v{"disk", "square", "triangle", "diamond"};
  return v;
}

inline const std::vector<std::string>& texture_names() {
  static const std::vector<std::string> v{"plain", "striped", "dotted", "checker"};
  return v;
}

inline std::string family_color_name(int f, int families) {
  static const char* base[] = {"red", "green", "blue", "amber", "violet", "teal"};
  if (families <= 6) return base[f];
  return "hue" + std::to_string(f);
}

inline double family_hue(int f, int families) {
  if (families == 3) {
    const double fixed[] = {0.00, 0.33, 0.62};
    return fixed[f];
  }
  return static_cast<double>(f) / families;
}

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

struct ClassStyle {
  int family = 0;
  int shape = 0;    // index into shape_names
  int texture = 0;  // index into texture_names
  double hue = 0.0;
};

inline ClassStyle class_style(const SynthSpec& spec, int k) {
  ClassStyle st;
  st.family = k / spec.classes_per_family;
  const int m = k % spec.classes_per_family;
  st.shape = m % 4;
  st.texture = (m + st.family) % 4;
  st.hue = family_hue(st.family, spec.families) +
           (m - (spec.classes_per_family - 1) * 0.5) * 0.02;
  return st;
}

inline bool in_shape(int shape, double dx, double dy, double r) {
  switch (shape) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return std::max(std::abs(dx), std::abs(dy)) <= r * 0.85;
    case 2: return dy >= -r && dy <= r * 0.8 && std::abs(dx) <= (dy + r) * 0.55;
    default: return std::abs(dx) + std::abs(dy) <= r * 1.1;
  }
}

// Renders one image (and optional u16 concept planes: color, texture,
// object) into caller-provided buffers. Everything is derived from `rng`.
inline void render_image(const SynthSpec& spec, int k, Rng& rng, float* chw,
                         std::uint16_t* mask_planes) {
  const int S = spec.image_size;
  const ClassStyle st = class_style(spec, k);

  // background: family-tinted, dim, soft horizontal banding
  double bg_rgb[3];
  hsv_to_rgb(family_hue(st.family, spec.families) + rng.uniform(-0.02, 0.02),
             rng.uniform(0.10, 0.20), rng.uniform(0.28, 0.52), bg_rgb);
  const double band_phase = rng.uniform(0.0, 6.2831853);
  const double band_freq = 6.2831853 / (S / 4.0);

  // foreground shape
  const double cx = S / 2.0 + rng.uniform(-S / 10.0, S / 10.0);
  const double cy = S / 2.0 + rng.uniform(-S / 10.0, S / 10.0);
  const double r = S * rng.uniform(0.16, 0.21);
  double fg_rgb[3];
  const double fg_val = rng.uniform(0.62, 0.82);
  hsv_to_rgb(st.hue + rng.uniform(-0.01, 0.01), rng.uniform(0.68, 0.85), fg_val,
             fg_rgb);
  const int stripe_period = std::max(2, S / 16);
  const int dot_grid = std::max(3, S / 12);
  const int checker_cell = std::max(2, S / 16);
  const int stripe_shift = static_cast<int>(rng.uniform_index(stripe_period * 2));
  const int dot_shift = static_cast<int>(rng.uniform_index(dot_grid));

  const std::size_t plane = static_cast<std::size_t>(S) * S;
  if (mask_planes != nullptr)
    std::fill(mask_planes, mask_planes + 3 * plane, std::uint16_t{0});

  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * S + x;
      double rgb[3];
      const double band = 1.0 + 0.06 * std::sin(band_freq * y + band_phase);
      for (int c = 0; c < 3; ++c) rgb[c] = bg_rgb[c] * band;

      const double dx = x - cx, dy = y - cy;
      if (in_shape(st.shape, dx, dy, r)) {
        double scale = 1.0;
        switch (st.texture) {
          case 1:  // striped
            scale = ((x + stripe_shift) / stripe_period) % 2 == 0 ? 1.25 : 0.55;
            break;
          case 2: {  // dotted
            const int mx = (x + dot_shift) % dot_grid - dot_grid / 2;
            const int my = (y + dot_shift) % dot_grid - dot_grid / 2;
            if (mx * mx + my * my <= dot_grid * dot_grid / 9) scale = 0.45;
            break;
          }
          case 3:  // checker
            scale = ((x / checker_cell) + (y / checker_cell)) % 2 == 0 ? 1.15 : 0.55;
            break;
          default:
            break;
        }
        for (int c = 0; c < 3; ++c) rgb[c] = fg_rgb[c] * scale;
        if (mask_planes != nullptr) {
          mask_planes[0 * plane + p] = static_cast<std::uint16_t>(1 + st.family);
          mask_planes[1 * plane + p] = static_cast<std::uint16_t>(1 + st.texture);
          mask_planes[2 * plane + p] = static_cast<std::uint16_t>(1 + st.shape);
        }
      }

      for (int c = 0; c < 3; ++c) {
        const double v = rgb[c] + rng.normal(0.0, spec.noise_sigma);
        chw[static_cast<std::size_t>(c) * plane + p] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

inline Dataset render_split(const SynthSpec& spec, std::uint64_t seed,
                            int split_id, int per_class, bool with_masks) {
  const int K = spec.class_count();
  const int S = spec.image_size;
  Dataset ds;
  ds.kind = "images";
  ds.channels = 3;
  ds.height = S;
  ds.width = S;
  ds.class_count = K;
  ds.seed = seed;
  const std::size_t count = static_cast<std::size_t>(K) * per_class;
  ds.labels.resize(count);
  ds.pixels_u8.resize(count * ds.pixels_per_image());
  if (with_masks) {
    ds.mask_categories = {"color", "texture", "object"};
    std::vector<std::string> colors;
    for (int f = 0; f < spec.families; ++f)
      colors.push_back(family_color_name(f, spec.families));
    ds.concept_names = {{"color", colors},
                        {"texture", texture_names()},
                        {"object", shape_names()}};
    ds.masks.resize(count * 3 * static_cast<std::size_t>(S) * S);
  }

  parallel_for(count, [&](std::size_t i) {
    const int k = static_cast<int>(i) / per_class;
    const int j = static_cast<int>(i) % per_class;
    Rng rng(mix_seed(mix_seed(mix_seed(seed, split_id), k), j));
    std::vector<float> chw(ds.pixels_per_image());
    std::uint16_t* mask = with_masks
                              ? ds.masks.data() + i * 3 * static_cast<std::size_t>(S) * S
                              : nullptr;
    render_image(spec, k, rng, chw.data(), mask);
    ds.labels[i] = static_cast<std::uint32_t>(k);
    std::uint8_t* dst = ds.pixels_u8.data() + i * ds.pixels_per_image();
    for (std::size_t b = 0; b < chw.size(); ++b)
      dst[b] = static_cast<std::uint8_t>(std::lround(chw[b] * 255.0f));
  });
  return ds;
}

}  // namespace synth_detail

inline std::string synth_class_label(const SynthSpec& spec, int k) {
  const auto st = synth_detail::class_style(spec, k);
  return synth_detail::family_color_name(st.family, spec.families) + "_" +
         synth_detail::shape_names()[st.shape] + "_" +
         synth_detail::texture_names()[st.texture];
}

inline nlohmann::json synth_taxonomy_doc(const SynthSpec& spec) {
  nlohmann::json nodes = nlohmann::json::array();
  nodes.push_back({{"id", "root"}, {"parent_id", nullptr}, {"label", "synthetic objects"}});
  for (int f = 0; f < spec.families; ++f) {
    const std::string fam = synth_detail::family_color_name(f, spec.families);
    nodes.push_back({{"id", "family_" + fam},
                     {"parent_id", "root"},
                     {"label", fam + " things"}});
  }
  for (int k = 0; k < spec.class_count(); ++k) {
    const auto st = synth_detail::class_style(spec, k);
    const std::string fam = synth_detail::family_color_name(st.family, spec.families);
    nodes.push_back({{"id", "class_" + std::to_string(k)},
                     {"parent_id", "family_" + fam},
                     {"label", synth_class_label(spec, k)},
                     {"is_class_leaf", true},
                     {"class_index", k}});
  }
  return nlohmann::json{{"taxonomy", "synthetic"}, {"nodes", nodes}};
}

struct SynthOutput {
  Dataset train, val, dissect;
  nlohmann::json taxonomy_doc;
};

inline SynthOutput generate_dataset(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  SynthOutput out;
  out.train = synth_detail::render_split(spec, seed, 0, spec.train_per_class, false);
  out.val = synth_detail::render_split(spec, seed, 1, spec.val_per_class, false);
  out.dissect = synth_detail::render_split(spec, seed, 2, spec.dissect_per_class, true);
  out.taxonomy_doc = synth_taxonomy_doc(spec);
  return out;
}

}  // namespace consis
