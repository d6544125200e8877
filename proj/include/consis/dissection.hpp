#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "consis/dataset.hpp"
#include "consis/model.hpp"
#include "consis/parallel.hpp"

namespace consis {

// Mask quantile and alignment threshold calibrated once to the synthetic
// concept scale: the classic 0.005/0.04 pair assumes a large varied corpus
// and saturates here (nearly every neuron crosses 0.04 while masks cover a
// couple of map cells).
struct DissectionConfig {
  std::string tap = "conv3";
  double quantile_q = 0.02;  // activation mask threshold quantile
  double tau = 0.1;          // IoU above which a neuron counts as aligned

  void validate() const {
    require(quantile_q > 0.0 && quantile_q < 1.0, ErrorCode::invalid_config,
            "quantile_q must lie in (0,1)");
    require(tau > 0.0 && tau < 1.0, ErrorCode::invalid_config,
            "tau must lie in (0,1)");
  }
};

// Tapped feature maps over one image set plus per-neuron activation
// thresholds (top-q quantile of each neuron's activations across the whole
// set). Masks compare strictly, so a constant map never fires.
class Dissector {
 public:
  Dissector(const ClassifierModel<float>& model, const Dataset& images,
            const std::string& tap, double quantile_q, std::size_t batch_size = 128)
      : Dissector(model, images.all_images().pixels, images.height, images.width,
                  tap, quantile_q, batch_size) {}

  Dissector(const ClassifierModel<float>& model, const Tensor<float>& pixels,
            int image_h, int image_w, const std::string& tap, double quantile_q,
            std::size_t batch_size = 128)
      : map_shape_(model.spec.tap_shape(tap)), image_h_(image_h), image_w_(image_w) {
    require(quantile_q > 0.0 && quantile_q < 1.0, ErrorCode::invalid_config,
            "quantile_q must lie in (0,1)");
    count_ = pixels.dim(0);
    require(count_ > 0, ErrorCode::dataset_empty, "no images to dissect");
    maps_.resize(count_ * static_cast<std::size_t>(map_shape_.numel()));

    const std::size_t image_numel = pixels.size() / count_;
    for (std::size_t lo = 0; lo < count_; lo += batch_size) {
      const std::size_t hi = std::min(count_, lo + batch_size);
      Tensor<float> sub({hi - lo, pixels.dim(1), pixels.dim(2), pixels.dim(3)});
      std::copy(pixels.ptr() + lo * image_numel, pixels.ptr() + hi * image_numel,
                sub.ptr());
      const auto trace = forward(model, sub);
      const Tensor<float>& feats = trace.tapped(model.spec, tap);
      std::copy(feats.ptr(), feats.ptr() + feats.size(),
                maps_.data() + lo * static_cast<std::size_t>(map_shape_.numel()));
    }

    // per-neuron nearest-rank (1-q) quantile over all spatial samples
    thresholds_.resize(map_shape_.c);
    const std::size_t plane = static_cast<std::size_t>(map_shape_.h) * map_shape_.w;
    parallel_for(static_cast<std::size_t>(map_shape_.c), [&](std::size_t n) {
      std::vector<float> vals;
      vals.reserve(count_ * plane);
      for (std::size_t img = 0; img < count_; ++img) {
        const float* m = map(img, static_cast<int>(n));
        vals.insert(vals.end(), m, m + plane);
      }
      std::sort(vals.begin(), vals.end());
      const double rank = std::ceil((1.0 - quantile_q) * vals.size());
      const std::size_t idx = static_cast<std::size_t>(
          std::clamp<double>(rank, 1.0, static_cast<double>(vals.size())) - 1.0);
      thresholds_[n] = vals[idx];
    });
  }

  std::size_t image_count() const { return count_; }
  int neuron_count() const { return map_shape_.c; }
  Shape3 map_shape() const { return map_shape_; }
  float threshold(int neuron) const { return thresholds_.at(neuron); }

  const float* map(std::size_t img, int neuron) const {
    return maps_.data() + img * static_cast<std::size_t>(map_shape_.numel()) +
           static_cast<std::size_t>(neuron) * map_shape_.h * map_shape_.w;
  }

  // Binary mask at image resolution: nearest-neighbour upsample of the
  // neuron's channel map, thresholded strictly at the neuron's quantile.
  std::vector<std::uint8_t> activation_mask(std::size_t img, int neuron) const {
    require(neuron >= 0 && neuron < map_shape_.c, ErrorCode::unknown_neuron,
            "neuron " + std::to_string(neuron) + " out of range");
    require(img < count_, ErrorCode::unknown_neuron, "image index out of range");
    const float* m = map(img, neuron);
    const float thr = thresholds_[neuron];
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(image_h_) * image_w_);
    for (int y = 0; y < image_h_; ++y) {
      const int cy = y * map_shape_.h / image_h_;
      for (int x = 0; x < image_w_; ++x) {
        const int cx = x * map_shape_.w / image_w_;
        mask[static_cast<std::size_t>(y) * image_w_ + x] =
            m[cy * map_shape_.w + cx] > thr ? 1 : 0;
      }
    }
    return mask;
  }

 private:
  Shape3 map_shape_;
  int image_h_, image_w_;
  std::size_t count_ = 0;
  std::vector<float> maps_;
  std::vector<float> thresholds_;
};

// Dataset-wide IoU between a neuron's activation masks and one labeled
// concept: sum of intersections over sum of unions across all images.
inline double neuron_concept_iou(const Dissector& dissector, const Dataset& maskset,
                                 int neuron, const std::string& category,
                                 std::uint16_t concept_id) {
  const int cat = maskset.category_index(category);
  require(cat >= 0, ErrorCode::invalid_config, "unknown mask category " + category);
  require(dissector.image_count() == maskset.size(), ErrorCode::dimension_mismatch,
          "dissector and mask set differ in image count");
  const std::size_t plane = static_cast<std::size_t>(maskset.height) * maskset.width;
  std::size_t inter = 0, uni = 0;
  for (std::size_t img = 0; img < maskset.size(); ++img) {
    const auto act = dissector.activation_mask(img, neuron);
    const std::uint16_t* concept_plane = maskset.mask_plane(img, cat);
    for (std::size_t p = 0; p < plane; ++p) {
      const bool a = act[p] != 0;
      const bool c = concept_plane[p] == concept_id;
      inter += (a && c) ? 1 : 0;
      uni += (a || c) ? 1 : 0;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct NeuronAlignment {
  std::string category;
  std::string concept_name;
  double iou = 0.0;
  bool aligned = false;
};

struct AlignmentReport {
  std::string tap;
  double tau = 0.0;
  double quantile_q = 0.0;
  std::vector<std::string> categories;
  std::vector<NeuronAlignment> best_clean;  // per neuron, best concept overall
  std::vector<NeuronAlignment> best_adv;
  std::map<std::string, double> clean_ratio;  // per category: share of neurons
  std::map<std::string, double> adv_ratio;    // with best in-category IoU > tau
};

namespace dissect_detail {

struct SplitScore {
  std::vector<NeuronAlignment> best;
  std::map<std::string, double> ratio;
};

inline SplitScore score_split(const Dissector& dissector, const Dataset& maskset,
                              double tau) {
  const std::size_t plane = static_cast<std::size_t>(maskset.height) * maskset.width;
  const int neurons = dissector.neuron_count();
  const auto& categories = maskset.mask_categories;

  // concept pixel counts per (image, category, concept)
  std::vector<std::vector<std::vector<std::size_t>>> concept_count(categories.size());
  for (std::size_t cat = 0; cat < categories.size(); ++cat) {
    const auto& names = maskset.concept_names.at(categories[cat]);
    concept_count[cat].assign(maskset.size(),
                              std::vector<std::size_t>(names.size() + 1, 0));
    for (std::size_t img = 0; img < maskset.size(); ++img) {
      const std::uint16_t* m = maskset.mask_plane(img, cat);
      for (std::size_t p = 0; p < plane; ++p)
        if (m[p] != 0 && m[p] <= names.size()) concept_count[cat][img][m[p]] += 1;
    }
  }

  // per neuron: intersections against every concept in one pass per image
  SplitScore out;
  out.best.resize(neurons);
  std::vector<std::map<std::string, double>> best_by_cat(neurons);
  std::vector<std::vector<std::vector<double>>> iou(neurons);

  parallel_for(static_cast<std::size_t>(neurons), [&](std::size_t n) {
    std::vector<std::vector<std::size_t>> inter(categories.size());
    std::vector<std::vector<std::size_t>> uni(categories.size());
    for (std::size_t cat = 0; cat < categories.size(); ++cat) {
      const std::size_t k = maskset.concept_names.at(categories[cat]).size();
      inter[cat].assign(k + 1, 0);
      uni[cat].assign(k + 1, 0);
    }
    for (std::size_t img = 0; img < maskset.size(); ++img) {
      const auto act = dissector.activation_mask(img, static_cast<int>(n));
      std::size_t act_count = 0;
      for (std::size_t p = 0; p < plane; ++p) {
        if (act[p] == 0) continue;
        ++act_count;
        for (std::size_t cat = 0; cat < categories.size(); ++cat) {
          const std::uint16_t v = maskset.mask_plane(img, cat)[p];
          if (v != 0 && v < inter[cat].size()) inter[cat][v] += 1;
        }
      }
      for (std::size_t cat = 0; cat < categories.size(); ++cat)
        for (std::size_t v = 1; v < inter[cat].size(); ++v)
          uni[cat][v] += act_count + concept_count[cat][img][v];
    }
    // union = |a| + |c| - |a ∩ c| accumulated image-wise
    NeuronAlignment best;
    iou[n].resize(categories.size());
    for (std::size_t cat = 0; cat < categories.size(); ++cat) {
      const auto& names = maskset.concept_names.at(categories[cat]);
      iou[n][cat].assign(names.size() + 1, 0.0);
      for (std::size_t v = 1; v <= names.size(); ++v) {
        const std::size_t u = uni[cat][v] - inter[cat][v];
        const double score =
            u == 0 ? 0.0 : static_cast<double>(inter[cat][v]) / static_cast<double>(u);
        iou[n][cat][v] = score;
        if (score > best.iou) {
          best.iou = score;
          best.category = categories[cat];
          best.concept_name = names[v - 1];
        }
      }
    }
    best.aligned = best.iou > tau;
    out.best[n] = best;
  });

  for (std::size_t cat = 0; cat < categories.size(); ++cat) {
    int aligned = 0;
    for (int n = 0; n < neurons; ++n) {
      double best_in_cat = 0.0;
      for (const double v : iou[n][cat]) best_in_cat = std::max(best_in_cat, v);
      if (best_in_cat > tau) ++aligned;
    }
    out.ratio[categories[cat]] = static_cast<double>(aligned) / neurons;
  }
  return out;
}

}  // namespace dissect_detail

// Table of aligned-neuron ratios per category on the clean mask set and,
// when given, on adversarial counterparts (which reuse the clean masks; the
// perturbation does not move object boundaries).
inline AlignmentReport alignment_table(const ClassifierModel<float>& model,
                                       const Dataset& maskset, const Dataset* adv,
                                       const DissectionConfig& config) {
  config.validate();
  require(maskset.has_masks(), ErrorCode::invalid_config,
          "mask dataset carries no concept masks");
  AlignmentReport report;
  report.tap = config.tap;
  report.tau = config.tau;
  report.quantile_q = config.quantile_q;
  report.categories = maskset.mask_categories;

  Dissector clean(model, maskset, config.tap, config.quantile_q);
  auto clean_score = dissect_detail::score_split(clean, maskset, config.tau);
  report.best_clean = std::move(clean_score.best);
  report.clean_ratio = std::move(clean_score.ratio);

  if (adv != nullptr) {
    require(adv->size() == maskset.size() && adv->height == maskset.height &&
                adv->width == maskset.width,
            ErrorCode::dimension_mismatch,
            "adversarial set must mirror the mask set image for image");
    Dissector advd(model, adv->all_images().pixels, adv->height, adv->width,
                   config.tap, config.quantile_q);
    auto adv_score = dissect_detail::score_split(advd, maskset, config.tau);
    report.best_adv = std::move(adv_score.best);
    report.adv_ratio = std::move(adv_score.ratio);
  }
  return report;
}

inline std::string alignment_report_text(const AlignmentReport& report,
                                         const std::string& model_name) {
  std::string text = "aligned-neuron ratio (%) per category, tau=" +
                     std::to_string(report.tau) + ", tap=" + report.tap + "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-18s", "model/split");
  text += line;
  for (const auto& cat : report.categories) {
    std::snprintf(line, sizeof(line), "%10s", cat.c_str());
    text += line;
  }
  text += "\n";
  auto emit = [&](const std::string& split, const std::map<std::string, double>& ratios) {
    std::snprintf(line, sizeof(line), "%-18s", (model_name + "/" + split).c_str());
    text += line;
    for (const auto& cat : report.categories) {
      std::snprintf(line, sizeof(line), "%10.1f", 100.0 * ratios.at(cat));
      text += line;
    }
    text += "\n";
  };
  emit("clean", report.clean_ratio);
  if (!report.adv_ratio.empty()) emit("adv", report.adv_ratio);
  return text;
}

}  // namespace consis
