#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "consis/model.hpp"
#include "consis/rng.hpp"
#include "consis/synth.hpp"
#include "consis/taxonomy.hpp"
#include "consis/training.hpp"

namespace testutil {

// conv/relu/pool/gap/dense stack small enough for finite differences
inline consis::ModelSpec tiny_conv_spec(int c, int h, int w, int classes,
                                        int conv_channels = 4) {
  consis::ModelSpec spec;
  spec.input = {c, h, w};
  spec.class_count = classes;
  spec.layers = {
      {consis::LayerKind::conv3x3, "conv1_lin", c, conv_channels, 0, 0},
      {consis::LayerKind::relu, "conv1_act"},
      {consis::LayerKind::maxpool2, "pool1"},
      {consis::LayerKind::conv3x3, "conv2_lin", conv_channels, conv_channels * 2, 0, 0},
      {consis::LayerKind::relu, "conv2_act"},
      {consis::LayerKind::global_avg_pool, "gap"},
      {consis::LayerKind::dense, "fc", 0, 0, conv_channels * 2, classes},
  };
  spec.feature_taps = {{"conv1", 1}, {"conv2", 4}};
  spec.validate();
  return spec;
}

// flatten + dense: logits = W x + b
inline consis::ModelSpec linear_spec(int c, int h, int w, int classes) {
  consis::ModelSpec spec;
  spec.input = {c, h, w};
  spec.class_count = classes;
  spec.layers = {
      {consis::LayerKind::flatten, "flat"},
      {consis::LayerKind::dense, "fc", 0, 0, c * h * w, classes},
  };
  spec.feature_taps = {{"flat", 0}};
  spec.validate();
  return spec;
}

template <typename T>
consis::Tensor<T> random_pixels(consis::Rng& rng, std::size_t b, std::size_t c,
                                std::size_t h, std::size_t w) {
  consis::Tensor<T> out({b, c, h, w});
  for (auto& v : out.data) v = static_cast<T>(rng.uniform());
  return out;
}

inline std::vector<std::uint32_t> random_labels(consis::Rng& rng, std::size_t b,
                                                std::uint32_t classes) {
  std::vector<std::uint32_t> labels(b);
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng.uniform_index(classes));
  return labels;
}

template <typename T>
double ce_loss(const consis::ClassifierModel<T>& model, const consis::Tensor<T>& pixels,
               const std::vector<std::uint32_t>& labels) {
  const auto trace = consis::forward(model, pixels);
  return static_cast<double>(consis::cross_entropy(trace.logits(), labels));
}

// central finite differences on the input pixels (double models only)
inline consis::Tensor<double> fd_input_gradient(
    const consis::ClassifierModel<double>& model, const consis::Tensor<double>& pixels,
    const std::vector<std::uint32_t>& labels, double step = 1e-5) {
  consis::Tensor<double> grad(pixels.shape);
  consis::Tensor<double> probe = pixels;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = ce_loss(model, probe, labels);
    probe[i] = saved - step;
    const double down = ce_loss(model, probe, labels);
    probe[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

inline consis::Gradients<double> fd_parameter_gradient(
    consis::ClassifierModel<double> model, const consis::Tensor<double>& pixels,
    const std::vector<std::uint32_t>& labels, double step = 1e-5) {
  auto grads = consis::Gradients<double>::zeros_like(model.spec);
  for (std::size_t L = 0; L < model.params.layers.size(); ++L) {
    auto probe_tensor = [&](consis::Tensor<double>& theta, consis::Tensor<double>& out) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + step;
        const double up = ce_loss(model, pixels, labels);
        theta[i] = saved - step;
        const double down = ce_loss(model, pixels, labels);
        theta[i] = saved;
        out[i] = (up - down) / (2.0 * step);
      }
    };
    probe_tensor(model.params.layers[L].w, grads.layers[L].w);
    probe_tensor(model.params.layers[L].b, grads.layers[L].b);
  }
  return grads;
}

// max |a-b| / max(1, |b|) over all parameters
inline double max_rel_error(const consis::Gradients<double>& got,
                            const consis::Gradients<double>& want) {
  double worst = 0.0;
  for (std::size_t L = 0; L < got.layers.size(); ++L) {
    auto scan = [&](const consis::Tensor<double>& a, const consis::Tensor<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max(1.0, std::abs(b[i]));
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
      }
    };
    scan(got.layers[L].w, want.layers[L].w);
    scan(got.layers[L].b, want.layers[L].b);
  }
  return worst;
}

inline double max_rel_error(const consis::Tensor<double>& got,
                            const consis::Tensor<double>& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double denom = std::max(1.0, std::abs(want[i]));
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

// random rooted tree over `nodes` nodes with every leaf a class leaf
inline consis::TaxonomyTree random_taxonomy(consis::Rng& rng, int nodes) {
  nlohmann::json doc;
  doc["nodes"] = nlohmann::json::array();
  doc["nodes"].push_back({{"id", "n0"}, {"parent_id", nullptr}, {"label", "n0"}});
  std::vector<bool> has_child(static_cast<std::size_t>(nodes), false);
  std::vector<int> parent(static_cast<std::size_t>(nodes), -1);
  for (int i = 1; i < nodes; ++i) {
    parent[i] = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i)));
    has_child[parent[i]] = true;
  }
  int next_class = 0;
  for (int i = 1; i < nodes; ++i) {
    nlohmann::json rec{{"id", "n" + std::to_string(i)},
                       {"parent_id", "n" + std::to_string(parent[i])},
                       {"label", "n" + std::to_string(i)}};
    if (!has_child[i]) {
      rec["is_class_leaf"] = true;
      rec["class_index"] = next_class++;
    }
    doc["nodes"].push_back(rec);
  }
  return consis::parse_taxonomy(doc);
}

// Small world shared by attack/metric tests: 6 easy classes at 16x16 and a
// briefly trained model. Built once per binary.
struct ToyWorld {
  consis::SynthSpec spec;
  consis::SynthOutput data;
  consis::ClassifierModel<float> model;
};

inline consis::SynthSpec toy_synth_spec() {
  consis::SynthSpec spec;
  spec.families = 3;
  spec.classes_per_family = 2;
  spec.image_size = 16;
  spec.train_per_class = 80;
  spec.val_per_class = 12;
  spec.dissect_per_class = 6;
  return spec;
}

inline consis::TrainConfig toy_train_config(const std::string& mode = "normal") {
  consis::TrainConfig config;
  config.mode = mode;
  config.epochs = 15;
  config.batch_size = 32;
  config.learning_rate = 0.05;
  config.base_channels = 8;
  config.seed = 5;
  config.epsilon = 4.0 / 255.0;
  return config;
}

inline const ToyWorld& toy_world() {
  static const ToyWorld world = [] {
    ToyWorld w;
    w.spec = toy_synth_spec();
    w.data = consis::generate_dataset(w.spec, 123);
    w.model = consis::train(w.data.train, &w.data.val, toy_train_config()).model;
    return w;
  }();
  return world;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("consis_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string dir() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
