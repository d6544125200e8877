#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "consis/dataset.hpp"
#include "consis/model.hpp"
#include "consis/parallel.hpp"
#include "consis/serialize.hpp"
#include "consis/taxonomy.hpp"

namespace consis {

inline constexpr char kStoreMagic[9] = "CACT0001";

enum class Split { clean, adversarial };

// "x activates n" means the activation exceeds the neuron's own top-q
// quantile, estimated from the clean reference split only.
struct ActivationPolicy {
  double quantile_q = 0.05;

  void validate() const {
    require(quantile_q > 0.0 && quantile_q < 1.0, ErrorCode::invalid_config,
            "quantile_q must lie in (0,1)");
  }
};

struct StoreImageMeta {
  std::uint32_t image_id = 0;
  std::uint32_t class_index = 0;
  std::uint8_t is_adversarial = 0;
};

// Scalar activation (spatial max of a channel) for every (neuron, image)
// pair of one tapped layer, over a clean split and optionally an
// adversarial split.
struct ActivationRecordStore {
  std::string layer;
  std::string model_hash;
  std::string dataset_hash;
  double recorded_quantile_q = 0.05;  // provenance only
  int class_count = 0;
  int neuron_count = 0;
  std::vector<StoreImageMeta> images;
  std::vector<float> activations;  // [neuron][image_column]

  std::size_t image_count() const { return images.size(); }

  float activation(int neuron, std::size_t column) const {
    return activations[static_cast<std::size_t>(neuron) * images.size() + column];
  }

  std::vector<std::uint32_t> columns(Split split) const {
    std::vector<std::uint32_t> cols;
    for (std::size_t i = 0; i < images.size(); ++i)
      if ((images[i].is_adversarial != 0) == (split == Split::adversarial))
        cols.push_back(static_cast<std::uint32_t>(i));
    return cols;
  }

  std::string content_hash() const {
    Fnv1a64 h;
    h.update_string(layer);
    h.update_pod(class_count);
    h.update_pod(neuron_count);
    for (const auto& meta : images) {
      h.update_pod(meta.image_id);
      h.update_pod(meta.class_index);
      h.update_pod(meta.is_adversarial);
    }
    h.update(activations.data(), activations.size() * sizeof(float));
    return h.hex();
  }
};

// Records the spatial max of each tapped channel for every image of the
// given sets. Sets flagged "adversarial" land in the adversarial split with
// their source (content) labels.
inline ActivationRecordStore record_activations(
    const ClassifierModel<float>& model, const std::vector<const Dataset*>& sets,
    const std::string& tap, std::size_t batch_size = 128) {
  const Shape3 tap_shape = model.spec.tap_shape(tap);
  ActivationRecordStore store;
  store.layer = tap;
  store.model_hash = model.params_hash();
  store.neuron_count = tap_shape.c;

  Fnv1a64 ds_hash;
  std::size_t total = 0;
  for (const Dataset* ds : sets) {
    require(ds != nullptr && ds->size() > 0, ErrorCode::dataset_empty,
            "activation recording needs non-empty datasets");
    require(store.class_count == 0 || store.class_count == ds->class_count,
            ErrorCode::dimension_mismatch, "class_count differs between sets");
    store.class_count = ds->class_count;
    ds_hash.update_string(ds->content_hash());
    total += ds->size();
  }
  store.dataset_hash = ds_hash.hex();
  store.images.resize(total);
  store.activations.resize(static_cast<std::size_t>(tap_shape.c) * total);

  const int plane = tap_shape.h * tap_shape.w;
  std::size_t column = 0;
  for (const Dataset* ds : sets) {
    const bool adversarial = ds->kind == "adversarial";
    for (std::size_t lo = 0; lo < ds->size(); lo += batch_size) {
      const std::size_t hi = std::min(ds->size(), lo + batch_size);
      std::vector<std::uint32_t> ids(hi - lo);
      for (std::size_t i = 0; i < ids.size(); ++i)
        ids[i] = static_cast<std::uint32_t>(lo + i);
      const ImageBatch batch = ds->batch(ids);
      const auto trace = forward(model, batch.pixels);
      const Tensor<float>& feats = trace.tapped(model.spec, tap);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::size_t col = column + i;
        store.images[col] = {static_cast<std::uint32_t>(col), batch.labels[i],
                             static_cast<std::uint8_t>(adversarial ? 1 : 0)};
        const float* f = feats.ptr() + i * static_cast<std::size_t>(tap_shape.numel());
        for (int n = 0; n < tap_shape.c; ++n) {
          float best = f[n * plane];
          for (int p = 1; p < plane; ++p) best = std::max(best, f[n * plane + p]);
          store.activations[static_cast<std::size_t>(n) * total + col] = best;
        }
      }
      column += ids.size();
    }
  }
  return store;
}

inline void save_store(const ActivationRecordStore& store, const std::string& path) {
  nlohmann::json header{{"format", 1},
                        {"layer", store.layer},
                        {"model_hash", store.model_hash},
                        {"dataset_hash", store.dataset_hash},
                        {"policy", {{"quantile_q", store.recorded_quantile_q}}},
                        {"class_count", store.class_count},
                        {"neuron_count", store.neuron_count},
                        {"image_count", store.image_count()}};
  // columnar rows: neuron ids, image ids, activations, then the image table
  std::vector<std::uint32_t> neuron_ids, image_ids;
  neuron_ids.reserve(store.activations.size());
  image_ids.reserve(store.activations.size());
  for (int n = 0; n < store.neuron_count; ++n)
    for (std::size_t c = 0; c < store.image_count(); ++c) {
      neuron_ids.push_back(static_cast<std::uint32_t>(n));
      image_ids.push_back(static_cast<std::uint32_t>(c));
    }
  ContainerWriter out(path, kStoreMagic);
  out.write_header(header);
  out.write_vector(neuron_ids);
  out.write_vector(image_ids);
  out.write_vector(store.activations);
  std::vector<std::uint32_t> meta_class(store.image_count());
  std::vector<std::uint8_t> meta_adv(store.image_count());
  for (std::size_t i = 0; i < store.image_count(); ++i) {
    meta_class[i] = store.images[i].class_index;
    meta_adv[i] = store.images[i].is_adversarial;
  }
  out.write_vector(meta_class);
  out.write_vector(meta_adv);
  out.close();
}

inline ActivationRecordStore load_store(const std::string& path) {
  ContainerReader in(path, kStoreMagic, ErrorCode::corrupt_container);
  const auto& header = in.header();
  ActivationRecordStore store;
  std::size_t image_count = 0;
  try {
    store.layer = header.at("layer").get<std::string>();
    store.model_hash = header.value("model_hash", "");
    store.dataset_hash = header.value("dataset_hash", "");
    store.recorded_quantile_q = header.at("policy").at("quantile_q").get<double>();
    store.class_count = header.at("class_count").get<int>();
    store.neuron_count = header.at("neuron_count").get<int>();
    image_count = header.at("image_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::corrupt_container, std::string("store header: ") + e.what());
  }
  const std::size_t rows = static_cast<std::size_t>(store.neuron_count) * image_count;
  std::vector<std::uint32_t> neuron_ids, image_ids;
  in.read_vector(neuron_ids, rows);
  in.read_vector(image_ids, rows);
  in.read_vector(store.activations, rows);
  for (std::size_t r = 0; r < rows; ++r)
    require(neuron_ids[r] == r / image_count && image_ids[r] == r % image_count,
            ErrorCode::corrupt_container, "store rows out of order");
  std::vector<std::uint32_t> meta_class;
  std::vector<std::uint8_t> meta_adv;
  in.read_vector(meta_class, image_count);
  in.read_vector(meta_adv, image_count);
  store.images.resize(image_count);
  for (std::size_t i = 0; i < image_count; ++i)
    store.images[i] = {static_cast<std::uint32_t>(i), meta_class[i], meta_adv[i]};
  for (const float a : store.activations)
    require(std::isfinite(a), ErrorCode::corrupt_container, "non-finite activation");
  return store;
}

// Empirical class-frequency vector over the activating images of a split.
struct ConceptVector {
  std::vector<double> p;
  int support_count = 0;
};

// Threshold from the clean reference split via the nearest-rank
// (1-q)-quantile; activation counts as firing only when strictly above it.
inline float neuron_threshold(const ActivationRecordStore& store, int neuron,
                              const ActivationPolicy& policy) {
  policy.validate();
  require(neuron >= 0 && neuron < store.neuron_count, ErrorCode::unknown_neuron,
          "neuron " + std::to_string(neuron) + " out of range");
  const auto clean = store.columns(Split::clean);
  require(!clean.empty(), ErrorCode::empty_split, "no clean reference images");
  std::vector<float> acts;
  acts.reserve(clean.size());
  for (const auto col : clean) acts.push_back(store.activation(neuron, col));
  std::sort(acts.begin(), acts.end());
  const double rank = std::ceil((1.0 - policy.quantile_q) * acts.size());
  const std::size_t idx = static_cast<std::size_t>(
      std::clamp<double>(rank, 1.0, static_cast<double>(acts.size())) - 1.0);
  return acts[idx];
}

inline ConceptVector concept_vector(const ActivationRecordStore& store, int neuron,
                                    const ActivationPolicy& policy, Split split) {
  const auto cols = store.columns(split);
  require(!cols.empty(), ErrorCode::empty_split,
          split == Split::clean ? "clean split is empty" : "adversarial split is empty");
  const float threshold = neuron_threshold(store, neuron, policy);

  ConceptVector cv;
  cv.p.assign(store.class_count, 0.0);
  for (const auto col : cols) {
    if (store.activation(neuron, col) > threshold) {
      cv.p[store.images[col].class_index] += 1.0;
      ++cv.support_count;
    }
  }
  if (cv.support_count > 0)
    for (auto& v : cv.p) v /= cv.support_count;
  return cv;
}

// consis(n) = p^T A p.
inline double neuron_consistency(const ConceptVector& cv, const CorrelationMatrix& A) {
  require(static_cast<int>(cv.p.size()) == A.k, ErrorCode::dimension_mismatch,
          "concept vector has " + std::to_string(cv.p.size()) + " entries, matrix is " +
              std::to_string(A.k) + "x" + std::to_string(A.k));
  double acc = 0.0;
  for (int i = 0; i < A.k; ++i) {
    if (cv.p[i] == 0.0) continue;
    double row = 0.0;
    for (int j = 0; j < A.k; ++j) row += A.at(i, j) * cv.p[j];
    acc += cv.p[i] * row;
  }
  return acc;
}

// Shared path for both splits; thresholds always come from the clean
// reference. Empty-support neurons score 0.
inline double consistency_on_split(const ActivationRecordStore& store, int neuron,
                                   const ActivationPolicy& policy,
                                   const CorrelationMatrix& A, Split split) {
  const ConceptVector cv = concept_vector(store, neuron, policy, split);
  if (cv.support_count == 0) return 0.0;
  return neuron_consistency(cv, A);
}

inline double adversarial_consistency(const ActivationRecordStore& store, int neuron,
                                      const ActivationPolicy& policy,
                                      const CorrelationMatrix& A) {
  return consistency_on_split(store, neuron, policy, A, Split::adversarial);
}

struct NeuronSummary {
  std::uint32_t neuron = 0;
  double consis = 0.0;
  double consis_adv = 0.0;
  int support_clean = 0;
  int support_adv = 0;
};

struct LayerSummary {
  std::string layer;
  std::vector<NeuronSummary> rows;
  double mean_consis = 0.0;      // over neurons with clean support
  double mean_consis_adv = 0.0;  // over neurons with adversarial support
  int empty_clean = 0;
  int empty_adv = 0;
  int histogram_bins = 20;
  std::vector<int> hist_consis;      // counts over [0,1], all neurons
  std::vector<int> hist_consis_adv;
};

inline LayerSummary layer_summary(const ActivationRecordStore& store,
                                  const ActivationPolicy& policy,
                                  const CorrelationMatrix& A, int histogram_bins = 20) {
  require(histogram_bins >= 1, ErrorCode::invalid_config, "histogram_bins >= 1");
  const bool has_adv = !store.columns(Split::adversarial).empty();
  LayerSummary summary;
  summary.layer = store.layer;
  summary.histogram_bins = histogram_bins;
  summary.hist_consis.assign(histogram_bins, 0);
  summary.hist_consis_adv.assign(histogram_bins, 0);
  summary.rows.resize(store.neuron_count);

  parallel_for(static_cast<std::size_t>(store.neuron_count), [&](std::size_t n) {
    NeuronSummary row;
    row.neuron = static_cast<std::uint32_t>(n);
    const auto cv_clean = concept_vector(store, static_cast<int>(n), policy, Split::clean);
    row.support_clean = cv_clean.support_count;
    row.consis = cv_clean.support_count > 0 ? neuron_consistency(cv_clean, A) : 0.0;
    if (has_adv) {
      const auto cv_adv =
          concept_vector(store, static_cast<int>(n), policy, Split::adversarial);
      row.support_adv = cv_adv.support_count;
      row.consis_adv = cv_adv.support_count > 0 ? neuron_consistency(cv_adv, A) : 0.0;
    }
    summary.rows[n] = row;
  });

  auto bin_of = [&](double v) {
    const int b = static_cast<int>(v * histogram_bins);
    return std::clamp(b, 0, histogram_bins - 1);
  };
  double sum_clean = 0.0, sum_adv = 0.0;
  int counted_clean = 0, counted_adv = 0;
  for (const auto& row : summary.rows) {
    summary.hist_consis[bin_of(row.consis)]++;
    summary.hist_consis_adv[bin_of(row.consis_adv)]++;
    if (row.support_clean > 0) {
      sum_clean += row.consis;
      ++counted_clean;
    } else {
      ++summary.empty_clean;
    }
    if (row.support_adv > 0) {
      sum_adv += row.consis_adv;
      ++counted_adv;
    } else {
      ++summary.empty_adv;
    }
  }
  summary.mean_consis = counted_clean > 0 ? sum_clean / counted_clean : 0.0;
  summary.mean_consis_adv = counted_adv > 0 ? sum_adv / counted_adv : 0.0;
  return summary;
}

inline std::string summary_csv(const LayerSummary& summary) {
  std::string csv = "neuron,consis,consis_adv,support_clean,support_adv\n";
  char line[160];
  for (const auto& row : summary.rows) {
    std::snprintf(line, sizeof(line), "%u,%.10g,%.10g,%d,%d\n", row.neuron, row.consis,
                  row.consis_adv, row.support_clean, row.support_adv);
    csv += line;
  }
  return csv;
}

inline void write_summary_csv(const LayerSummary& summary, const std::string& path) {
  write_text_file(path, summary_csv(summary));
}

}  // namespace consis
