#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "consis/hash.hpp"
#include "consis/serialize.hpp"
#include "consis/tensor.hpp"

namespace consis {

inline constexpr char kDatasetMagic[9] = "CDST0001";

// One batch of images in model space: pixels in [0,1], labels in [0,K).
struct ImageBatch {
  Tensor<float> pixels;  // [B, C, H, W]
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
};

// Image container used for datasets and persisted adversarial batches.
// Pixels are stored u8 for rendered data and f32 for perturbed data; both
// load to floats in [0,1]. Optional per-pixel concept masks hold one u16
// plane per category (0 = unlabeled, v>0 = concept v-1 of that category).
struct Dataset {
  std::string kind = "images";  // "images" | "adversarial"
  int channels = 0, height = 0, width = 0;
  int class_count = 0;
  std::uint64_t seed = 0;
  nlohmann::json provenance;  // attack mode/epsilon/seed/source hash, free-form

  std::vector<std::uint32_t> labels;      // content class per image
  std::vector<std::uint32_t> source_ids;  // adversarial: index into source set
  bool pixels_are_u8 = true;
  std::vector<std::uint8_t> pixels_u8;
  std::vector<float> pixels_f32;

  std::vector<std::string> mask_categories;
  std::map<std::string, std::vector<std::string>> concept_names;
  std::vector<std::uint16_t> masks;  // [image][category][h][w]

  std::size_t size() const { return labels.size(); }
  std::size_t pixels_per_image() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool has_masks() const { return !mask_categories.empty(); }

  float pixel(std::size_t img, std::size_t offset) const {
    const std::size_t i = img * pixels_per_image() + offset;
    return pixels_are_u8 ? static_cast<float>(pixels_u8[i]) / 255.0f
                         : pixels_f32[i];
  }

  const std::uint16_t* mask_plane(std::size_t img, std::size_t category) const {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    return masks.data() + (img * mask_categories.size() + category) * plane;
  }

  int category_index(const std::string& name) const {
    for (std::size_t i = 0; i < mask_categories.size(); ++i)
      if (mask_categories[i] == name) return static_cast<int>(i);
    return -1;
  }

  void fill_image(std::size_t img, float* dst) const {
    const std::size_t n = pixels_per_image();
    if (pixels_are_u8) {
      const std::uint8_t* src = pixels_u8.data() + img * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
    } else {
      const float* src = pixels_f32.data() + img * n;
      std::copy(src, src + n, dst);
    }
  }

  Tensor<float> image(std::size_t img) const {
    Tensor<float> out({1, static_cast<std::size_t>(channels),
                       static_cast<std::size_t>(height),
                       static_cast<std::size_t>(width)});
    fill_image(img, out.ptr());
    return out;
  }

  ImageBatch batch(const std::vector<std::uint32_t>& indices) const {
    ImageBatch out;
    out.pixels = Tensor<float>({indices.size(), static_cast<std::size_t>(channels),
                                static_cast<std::size_t>(height),
                                static_cast<std::size_t>(width)});
    out.labels.resize(indices.size());
    const std::size_t n = pixels_per_image();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      fill_image(indices[i], out.pixels.ptr() + i * n);
      out.labels[i] = labels[indices[i]];
    }
    return out;
  }

  ImageBatch all_images() const {
    std::vector<std::uint32_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::uint32_t>(i);
    return batch(idx);
  }

  std::string content_hash() const {
    Fnv1a64 h;
    h.update_string(kind);
    h.update_pod(channels);
    h.update_pod(height);
    h.update_pod(width);
    h.update_pod(class_count);
    h.update(labels.data(), labels.size() * sizeof(std::uint32_t));
    if (pixels_are_u8)
      h.update(pixels_u8.data(), pixels_u8.size());
    else
      h.update(pixels_f32.data(), pixels_f32.size() * sizeof(float));
    h.update(masks.data(), masks.size() * sizeof(std::uint16_t));
    return h.hex();
  }
};

inline void save_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::json header{{"format", 1},
                        {"kind", ds.kind},
                        {"count", ds.size()},
                        {"channels", ds.channels},
                        {"height", ds.height},
                        {"width", ds.width},
                        {"class_count", ds.class_count},
                        {"seed", ds.seed},
                        {"pixel_format", ds.pixels_are_u8 ? "u8" : "f32"},
                        {"provenance", ds.provenance},
                        {"mask_categories", ds.mask_categories},
                        {"concept_names", ds.concept_names},
                        {"has_source_ids", !ds.source_ids.empty()}};
  ContainerWriter out(path, kDatasetMagic);
  out.write_header(header);
  out.write_vector(ds.labels);
  if (!ds.source_ids.empty()) out.write_vector(ds.source_ids);
  if (ds.pixels_are_u8)
    out.write_vector(ds.pixels_u8);
  else
    out.write_vector(ds.pixels_f32);
  if (ds.has_masks()) out.write_vector(ds.masks);
  out.close();
}

inline Dataset load_dataset(const std::string& path) {
  ContainerReader in(path, kDatasetMagic, ErrorCode::corrupt_container);
  const auto& header = in.header();
  Dataset ds;
  std::size_t count = 0;
  try {
    ds.kind = header.at("kind").get<std::string>();
    count = header.at("count").get<std::size_t>();
    ds.channels = header.at("channels").get<int>();
    ds.height = header.at("height").get<int>();
    ds.width = header.at("width").get<int>();
    ds.class_count = header.at("class_count").get<int>();
    ds.seed = header.value("seed", 0ull);
    ds.pixels_are_u8 = header.at("pixel_format").get<std::string>() == "u8";
    ds.provenance = header.value("provenance", nlohmann::json::object());
    ds.mask_categories = header.value("mask_categories", std::vector<std::string>{});
    if (header.contains("concept_names"))
      ds.concept_names =
          header.at("concept_names").get<std::map<std::string, std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::corrupt_container, std::string("dataset header: ") + e.what());
  }
  require(ds.channels > 0 && ds.height > 0 && ds.width > 0 && ds.class_count > 0,
          ErrorCode::corrupt_container, "bad dataset dimensions");

  in.read_vector(ds.labels, count);
  if (header.value("has_source_ids", false)) in.read_vector(ds.source_ids, count);
  const std::size_t n = count * ds.pixels_per_image();
  if (ds.pixels_are_u8)
    in.read_vector(ds.pixels_u8, n);
  else
    in.read_vector(ds.pixels_f32, n);
  if (ds.has_masks())
    in.read_vector(ds.masks, count * ds.mask_categories.size() *
                                 static_cast<std::size_t>(ds.height) * ds.width);

  for (const auto label : ds.labels)
    require(label < static_cast<std::uint32_t>(ds.class_count),
            ErrorCode::corrupt_container, "label out of range");
  if (!ds.pixels_are_u8)
    for (const float v : ds.pixels_f32)
      require(v >= 0.0f && v <= 1.0f, ErrorCode::corrupt_container,
              "pixel outside [0,1]");
  return ds;
}

}  // namespace consis
