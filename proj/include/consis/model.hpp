#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "consis/layers.hpp"
#include "consis/parallel.hpp"
#include "consis/rng.hpp"
#include "consis/tensor.hpp"

namespace consis {

// Architecture description: input shape, layer stack, named feature taps.
// A tap names the output of a layer index (post-activation for conv blocks).
struct ModelSpec {
  Shape3 input;
  int class_count = 0;
  std::vector<LayerSpec> layers;
  std::map<std::string, int> feature_taps;

  std::vector<Shape3> layer_output_shapes() const {
    std::vector<Shape3> shapes;
    Shape3 cur = input;
    for (const auto& layer : layers) {
      cur = layer_output_shape(layer, cur);
      shapes.push_back(cur);
    }
    return shapes;
  }

  void validate() const {
    require(input.c > 0 && input.h > 0 && input.w > 0, ErrorCode::shape_mismatch,
            "model input shape must be positive");
    require(!layers.empty(), ErrorCode::shape_mismatch, "model has no layers");
    const auto shapes = layer_output_shapes();
    const Shape3 out = shapes.back();
    require(out.h == 1 && out.w == 1 && out.c == class_count,
            ErrorCode::shape_mismatch,
            "final layer must emit one logit per class");
    for (const auto& [name, idx] : feature_taps)
      require(idx >= 0 && idx < static_cast<int>(layers.size()),
              ErrorCode::unknown_tap, "tap '" + name + "' out of range");
  }

  int tap_index(const std::string& name) const {
    auto it = feature_taps.find(name);
    require(it != feature_taps.end(), ErrorCode::unknown_tap,
            "no feature tap named '" + name + "'");
    return it->second;
  }

  Shape3 tap_shape(const std::string& name) const {
    return layer_output_shapes()[tap_index(name)];
  }

  nlohmann::json to_json() const {
    nlohmann::json layers_json = nlohmann::json::array();
    for (const auto& layer : layers) {
      nlohmann::json j{{"kind", layer_kind_name(layer.kind)}, {"name", layer.name}};
      if (layer.kind == LayerKind::conv3x3) {
        j["in_channels"] = layer.in_channels;
        j["out_channels"] = layer.out_channels;
      } else if (layer.kind == LayerKind::dense) {
        j["in_features"] = layer.in_features;
        j["out_features"] = layer.out_features;
      }
      layers_json.push_back(std::move(j));
    }
    return nlohmann::json{
        {"input", {{"c", input.c}, {"h", input.h}, {"w", input.w}}},
        {"class_count", class_count},
        {"layers", layers_json},
        {"feature_taps", feature_taps}};
  }

  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.input = {j.at("input").at("c").get<int>(), j.at("input").at("h").get<int>(),
                  j.at("input").at("w").get<int>()};
    spec.class_count = j.at("class_count").get<int>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec layer;
      layer.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
      layer.name = lj.value("name", "");
      layer.in_channels = lj.value("in_channels", 0);
      layer.out_channels = lj.value("out_channels", 0);
      layer.in_features = lj.value("in_features", 0);
      layer.out_features = lj.value("out_features", 0);
      spec.layers.push_back(std::move(layer));
    }
    if (j.contains("feature_taps"))
      spec.feature_taps = j.at("feature_taps").get<std::map<std::string, int>>();
    spec.validate();
    return spec;
  }

  bool operator==(const ModelSpec& other) const {
    return to_json() == other.to_json();
  }
};

// Small conv net: three conv/relu/pool blocks, global average pool, linear
// head. Taps name the post-activation output of each conv block.
inline ModelSpec default_model_spec(Shape3 input, int class_count,
                                    int base_channels = 16) {
  ModelSpec spec;
  spec.input = input;
  spec.class_count = class_count;
  const int c1 = base_channels, c2 = base_channels * 2, c3 = base_channels * 4;
  spec.layers = {
      {LayerKind::conv3x3, "conv1_lin", input.c, c1, 0, 0},
      {LayerKind::relu, "conv1_act"},
      {LayerKind::maxpool2, "pool1"},
      {LayerKind::conv3x3, "conv2_lin", c1, c2, 0, 0},
      {LayerKind::relu, "conv2_act"},
      {LayerKind::maxpool2, "pool2"},
      {LayerKind::conv3x3, "conv3_lin", c2, c3, 0, 0},
      {LayerKind::relu, "conv3_act"},
      {LayerKind::maxpool2, "pool3"},
      {LayerKind::global_avg_pool, "gap"},
      {LayerKind::dense, "fc", 0, 0, c3, class_count},
  };
  spec.feature_taps = {{"conv1", 1}, {"conv2", 4}, {"conv3", 7}};
  spec.validate();
  return spec;
}

template <typename T>
struct LayerParams {
  Tensor<T> w, b;
  bool has_params() const { return !w.empty(); }
};

// Parameter-shaped value bundle; also used for gradients and optimizer state.
template <typename T>
struct ParamVec {
  std::vector<LayerParams<T>> layers;

  static ParamVec zeros_like(const ModelSpec& spec) {
    ParamVec pv;
    pv.layers.resize(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const auto& layer = spec.layers[i];
      if (layer.kind == LayerKind::conv3x3) {
        pv.layers[i].w = Tensor<T>({static_cast<std::size_t>(layer.out_channels),
                                    static_cast<std::size_t>(layer.in_channels), 3, 3});
        pv.layers[i].b = Tensor<T>({static_cast<std::size_t>(layer.out_channels)});
      } else if (layer.kind == LayerKind::dense) {
        pv.layers[i].w = Tensor<T>({static_cast<std::size_t>(layer.out_features),
                                    static_cast<std::size_t>(layer.in_features)});
        pv.layers[i].b = Tensor<T>({static_cast<std::size_t>(layer.out_features)});
      }
    }
    return pv;
  }

  void add_scaled(const ParamVec& other, T coeff) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      for (std::size_t k = 0; k < layers[i].w.size(); ++k)
        layers[i].w[k] += coeff * other.layers[i].w[k];
      for (std::size_t k = 0; k < layers[i].b.size(); ++k)
        layers[i].b[k] += coeff * other.layers[i].b[k];
    }
  }

  void scale(T coeff) {
    for (auto& lp : layers) {
      for (auto& v : lp.w.data) v *= coeff;
      for (auto& v : lp.b.data) v *= coeff;
    }
  }

  // self = decay * self + other (momentum accumulation)
  void decay_add(T decay, const ParamVec& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      for (std::size_t k = 0; k < layers[i].w.size(); ++k)
        layers[i].w[k] = decay * layers[i].w[k] + other.layers[i].w[k];
      for (std::size_t k = 0; k < layers[i].b.size(); ++k)
        layers[i].b[k] = decay * layers[i].b[k] + other.layers[i].b[k];
    }
  }

  bool all_finite() const {
    for (const auto& lp : layers)
      if (!consis::all_finite(lp.w) || !consis::all_finite(lp.b)) return false;
    return true;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& lp : layers) n += lp.w.size() + lp.b.size();
    return n;
  }

  double max_abs_diff_to(const ParamVec& other) const {
    double m = 0.0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!layers[i].w.empty())
        m = std::max(m, consis::max_abs_diff(layers[i].w, other.layers[i].w));
      if (!layers[i].b.empty())
        m = std::max(m, consis::max_abs_diff(layers[i].b, other.layers[i].b));
    }
    return m;
  }

  bool bitwise_equal(const ParamVec& other) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].w.data != other.layers[i].w.data ||
          layers[i].b.data != other.layers[i].b.data)
        return false;
    return true;
  }
};

template <typename T>
using Gradients = ParamVec<T>;

template <typename T>
struct ClassifierModel {
  ModelSpec spec;
  ParamVec<T> params;
  std::uint64_t init_seed = 0;

  static ClassifierModel zeros(const ModelSpec& spec) {
    spec.validate();
    ClassifierModel m;
    m.spec = spec;
    m.params = ParamVec<T>::zeros_like(spec);
    return m;
  }

  // He-style init: weights ~ N(0, sqrt(2/fan_in)), zero biases. Values are
  // drawn in double then cast so float and double models share a seed.
  static ClassifierModel random_init(const ModelSpec& spec, std::uint64_t seed) {
    ClassifierModel m = zeros(spec);
    m.init_seed = seed;
    Rng rng(seed);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      auto& lp = m.params.layers[i];
      if (lp.w.empty()) continue;
      const auto& layer = spec.layers[i];
      const double fan_in = layer.kind == LayerKind::conv3x3
                                ? layer.in_channels * 9.0
                                : static_cast<double>(layer.in_features);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : lp.w.data) v = static_cast<T>(rng.normal(0.0, stddev));
    }
    return m;
  }

  template <typename U>
  ClassifierModel<U> cast() const {
    ClassifierModel<U> out;
    out.spec = spec;
    out.init_seed = init_seed;
    out.params.layers.resize(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      out.params.layers[i].w = params.layers[i].w.template cast<U>();
      out.params.layers[i].b = params.layers[i].b.template cast<U>();
    }
    return out;
  }

  std::size_t parameter_count() const { return params.parameter_count(); }

  std::string params_hash() const {
    Fnv1a64 h;
    for (const auto& lp : params.layers) {
      h.update(lp.w.data.data(), lp.w.size() * sizeof(T));
      h.update(lp.b.data.data(), lp.b.size() * sizeof(T));
    }
    return h.hex();
  }
};

// Per-layer outputs for one batch, stored [B, numel(layer)]. Enough state is
// kept to run the backward pass without recomputing the forward.
template <typename T>
struct ForwardTrace {
  Tensor<T> input;  // [B, C, H, W]
  std::vector<Tensor<T>> outputs;
  std::vector<std::vector<std::uint32_t>> pool_argmax;

  std::size_t batch_size() const { return input.dim(0); }
  const Tensor<T>& logits() const { return outputs.back(); }

  const Tensor<T>& tapped(const ModelSpec& spec, const std::string& tap) const {
    return outputs[spec.tap_index(tap)];
  }
};

namespace detail {

template <typename T>
std::vector<T>& scratch_buffer(int which) {
  thread_local std::vector<T> buffers[2];
  return buffers[which];
}

template <typename T>
inline std::size_t max_col_elems(const ModelSpec& spec) {
  std::size_t worst = 1;
  Shape3 cur = spec.input;
  for (const auto& layer : spec.layers) {
    if (layer.kind == LayerKind::conv3x3)
      worst = std::max(worst, static_cast<std::size_t>(layer.in_channels) * 9 *
                                  cur.h * cur.w);
    cur = layer_output_shape(layer, cur);
  }
  return worst;
}

}  // namespace detail

// Batched forward pass; parallel over images, deterministic for any worker
// count. Raises NonFiniteActivation if any logit is not finite.
template <typename T>
ForwardTrace<T> forward(const ClassifierModel<T>& model, const Tensor<T>& pixels) {
  const ModelSpec& spec = model.spec;
  require(pixels.rank() == 4, ErrorCode::shape_mismatch, "input must be 4-d");
  require(static_cast<int>(pixels.dim(1)) == spec.input.c &&
              static_cast<int>(pixels.dim(2)) == spec.input.h &&
              static_cast<int>(pixels.dim(3)) == spec.input.w,
          ErrorCode::shape_mismatch, "input shape does not match model spec");
  const std::size_t B = pixels.dim(0);
  require(B > 0, ErrorCode::shape_mismatch, "empty batch");

  const auto shapes = spec.layer_output_shapes();
  ForwardTrace<T> trace;
  trace.input = pixels;
  trace.outputs.reserve(spec.layers.size());
  trace.pool_argmax.resize(spec.layers.size());
  for (std::size_t L = 0; L < spec.layers.size(); ++L) {
    trace.outputs.emplace_back(
        Tensor<T>({B, static_cast<std::size_t>(shapes[L].numel())}));
    if (spec.layers[L].kind == LayerKind::maxpool2)
      trace.pool_argmax[L].resize(B * static_cast<std::size_t>(shapes[L].numel()));
  }

  const std::size_t col_elems = detail::max_col_elems<T>(spec);
  const std::size_t in_numel = static_cast<std::size_t>(spec.input.numel());

  parallel_for(B, [&](std::size_t b) {
    auto& colbuf = detail::scratch_buffer<T>(0);
    if (colbuf.size() < col_elems) colbuf.resize(col_elems);
    Shape3 in_shape = spec.input;
    const T* cur = trace.input.ptr() + b * in_numel;
    for (std::size_t L = 0; L < spec.layers.size(); ++L) {
      const auto& layer = spec.layers[L];
      const Shape3 out_shape = shapes[L];
      T* out = trace.outputs[L].ptr() +
               b * static_cast<std::size_t>(out_shape.numel());
      switch (layer.kind) {
        case LayerKind::conv3x3:
          kernels::conv3x3_forward(cur, in_shape.c, in_shape.h, in_shape.w,
                                   model.params.layers[L].w.ptr(),
                                   model.params.layers[L].b.ptr(),
                                   layer.out_channels, out, colbuf.data());
          break;
        case LayerKind::relu:
          kernels::relu_forward(cur, static_cast<std::size_t>(out_shape.numel()), out);
          break;
        case LayerKind::maxpool2:
          kernels::maxpool2_forward(
              cur, in_shape.c, in_shape.h, in_shape.w, out,
              trace.pool_argmax[L].data() +
                  b * static_cast<std::size_t>(out_shape.numel()));
          break;
        case LayerKind::global_avg_pool:
          kernels::global_avg_pool_forward(cur, in_shape.c, in_shape.h * in_shape.w,
                                           out);
          break;
        case LayerKind::flatten:
          std::copy(cur, cur + out_shape.numel(), out);
          break;
        case LayerKind::dense:
          kernels::dense_forward(cur, layer.in_features,
                                 model.params.layers[L].w.ptr(),
                                 model.params.layers[L].b.ptr(),
                                 layer.out_features, out);
          break;
      }
      cur = out;
      in_shape = out_shape;
    }
  });

  require(all_finite(trace.logits()), ErrorCode::non_finite_activation,
          "non-finite logits");
  return trace;
}

enum class Reduction { mean, sum };

template <typename T>
std::vector<T> cross_entropy_per_example(const Tensor<T>& logits,
                                         const std::vector<std::uint32_t>& labels) {
  require(logits.rank() == 2, ErrorCode::shape_mismatch, "logits must be [B,K]");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  require(labels.size() == B, ErrorCode::shape_mismatch, "labels/batch mismatch");
  std::vector<T> losses(B);
  for (std::size_t b = 0; b < B; ++b) {
    require(labels[b] < K, ErrorCode::shape_mismatch, "label out of range");
    const T* row = logits.ptr() + b * K;
    T m = row[0];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, row[k]);
    T sum{};
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(row[k] - m);
    losses[b] = std::log(sum) - (row[labels[b]] - m);
  }
  return losses;
}

// Mean negative log softmax probability of the true class.
template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<std::uint32_t>& labels) {
  const auto losses = cross_entropy_per_example(logits, labels);
  T acc{};
  for (const T v : losses) acc += v;
  return acc / static_cast<T>(losses.size());
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape);
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = logits.ptr() + b * K;
    T* orow = out.ptr() + b * K;
    T m = row[0];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, row[k]);
    T sum{};
    for (std::size_t k = 0; k < K; ++k) {
      orow[k] = std::exp(row[k] - m);
      sum += orow[k];
    }
    for (std::size_t k = 0; k < K; ++k) orow[k] /= sum;
  }
  return out;
}

// d(loss)/d(logits) for softmax cross entropy: (softmax - onehot), divided by
// the batch size under mean reduction.
template <typename T>
Tensor<T> cross_entropy_logit_grad(const Tensor<T>& logits,
                                   const std::vector<std::uint32_t>& labels,
                                   Reduction reduction = Reduction::mean) {
  Tensor<T> grad = softmax_rows(logits);
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  require(labels.size() == B, ErrorCode::shape_mismatch, "labels/batch mismatch");
  const T scale = reduction == Reduction::mean ? static_cast<T>(1.0 / static_cast<double>(B))
                                               : T{1};
  for (std::size_t b = 0; b < B; ++b) {
    grad[b * K + labels[b]] -= T{1};
    if (reduction == Reduction::mean)
      for (std::size_t k = 0; k < K; ++k) grad[b * K + k] *= scale;
  }
  return grad;
}

template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<std::uint32_t> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = logits.ptr() + b * K;
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    out[b] = static_cast<std::uint32_t>(best);
  }
  return out;
}

template <typename T>
std::vector<std::uint32_t> argmin_rows(const Tensor<T>& logits) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<std::uint32_t> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = logits.ptr() + b * K;
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (row[k] < row[best]) best = k;
    out[b] = static_cast<std::uint32_t>(best);
  }
  return out;
}

template <typename T>
struct BackwardResult {
  Gradients<T> grads;
  Tensor<T> input_grad;  // [B, C, H, W]; empty unless requested
};

// Reverse pass from d(output) seeds: d_logits plus optional gradients
// injected at tapped layer outputs (layer index -> [B, numel] tensor).
template <typename T>
BackwardResult<T> backward(const ClassifierModel<T>& model,
                           const ForwardTrace<T>& trace, const Tensor<T>& d_logits,
                           const std::map<int, const Tensor<T>*>& tap_grads = {},
                           bool want_input_grad = false) {
  const ModelSpec& spec = model.spec;
  const std::size_t B = trace.batch_size();
  const auto shapes = spec.layer_output_shapes();
  const int n_layers = static_cast<int>(spec.layers.size());
  require(d_logits.same_shape(trace.logits()), ErrorCode::shape_mismatch,
          "d_logits shape mismatch");
  for (const auto& [idx, grad] : tap_grads) {
    require(idx >= 0 && idx < n_layers, ErrorCode::unknown_tap,
            "tap gradient layer index out of range");
    require(grad->same_shape(trace.outputs[idx]), ErrorCode::shape_mismatch,
            "tap gradient shape mismatch");
  }

  BackwardResult<T> result;
  result.grads = Gradients<T>::zeros_like(spec);
  if (want_input_grad) result.input_grad = Tensor<T>(trace.input.shape);

  // per-image gradient slots keep the reduction order fixed
  std::vector<Gradients<T>> per_image(B);
  for (auto& g : per_image) g = Gradients<T>::zeros_like(spec);

  const std::size_t col_elems = detail::max_col_elems<T>(spec);
  const std::size_t in_numel = static_cast<std::size_t>(spec.input.numel());
  std::size_t max_numel = in_numel;
  for (const auto& s : shapes)
    max_numel = std::max(max_numel, static_cast<std::size_t>(s.numel()));

  parallel_for(B, [&](std::size_t b) {
    auto& colbuf = detail::scratch_buffer<T>(0);
    auto& dcolbuf = detail::scratch_buffer<T>(1);
    if (colbuf.size() < col_elems) colbuf.resize(col_elems);
    if (dcolbuf.size() < col_elems) dcolbuf.resize(col_elems);
    std::vector<T> cur(max_numel), next(max_numel);

    const std::size_t out_numel = static_cast<std::size_t>(shapes.back().numel());
    std::copy(d_logits.ptr() + b * out_numel, d_logits.ptr() + (b + 1) * out_numel,
              cur.begin());

    for (int L = n_layers - 1; L >= 0; --L) {
      const auto& layer = spec.layers[L];
      const Shape3 out_shape = shapes[L];
      const Shape3 in_shape = L == 0 ? spec.input : shapes[L - 1];
      const std::size_t o_numel = static_cast<std::size_t>(out_shape.numel());
      const std::size_t i_numel = static_cast<std::size_t>(in_shape.numel());

      if (auto it = tap_grads.find(L); it != tap_grads.end()) {
        const T* extra = it->second->ptr() + b * o_numel;
        for (std::size_t i = 0; i < o_numel; ++i) cur[i] += extra[i];
      }

      const T* layer_in = L == 0 ? trace.input.ptr() + b * in_numel
                                 : trace.outputs[L - 1].ptr() + b * i_numel;
      const T* layer_out = trace.outputs[L].ptr() + b * o_numel;
      const bool need_dx = L > 0 || want_input_grad;
      auto& g = per_image[b].layers[L];

      switch (layer.kind) {
        case LayerKind::conv3x3:
          kernels::conv3x3_backward(layer_in, in_shape.c, in_shape.h, in_shape.w,
                                    model.params.layers[L].w.ptr(),
                                    layer.out_channels, cur.data(), g.w.ptr(),
                                    g.b.ptr(), need_dx ? next.data() : nullptr,
                                    colbuf.data(), dcolbuf.data());
          break;
        case LayerKind::relu:
          kernels::relu_backward(layer_out, cur.data(), o_numel, next.data());
          break;
        case LayerKind::maxpool2:
          kernels::maxpool2_backward(cur.data(),
                                     trace.pool_argmax[L].data() + b * o_numel,
                                     in_shape.c, in_shape.h, in_shape.w,
                                     next.data());
          break;
        case LayerKind::global_avg_pool:
          kernels::global_avg_pool_backward(cur.data(), in_shape.c,
                                            in_shape.h * in_shape.w, next.data());
          break;
        case LayerKind::flatten:
          std::copy(cur.begin(), cur.begin() + o_numel, next.begin());
          break;
        case LayerKind::dense:
          kernels::dense_backward(layer_in, model.params.layers[L].w.ptr(),
                                  layer.in_features, layer.out_features, cur.data(),
                                  g.w.ptr(), g.b.ptr(),
                                  need_dx ? next.data() : nullptr);
          break;
      }
      std::swap(cur, next);
    }

    if (want_input_grad)
      std::copy(cur.begin(), cur.begin() + in_numel,
                result.input_grad.ptr() + b * in_numel);
  });

  for (std::size_t b = 0; b < B; ++b)
    result.grads.add_scaled(per_image[b], T{1});
  return result;
}

// Gradient of the batch cross entropy with respect to the input pixels.
template <typename T>
Tensor<T> input_gradient(const ClassifierModel<T>& model, const Tensor<T>& pixels,
                         const std::vector<std::uint32_t>& labels,
                         Reduction reduction = Reduction::mean) {
  const auto trace = forward(model, pixels);
  const auto d_logits = cross_entropy_logit_grad(trace.logits(), labels, reduction);
  auto result = backward(model, trace, d_logits, {}, true);
  require(all_finite(result.input_grad), ErrorCode::non_finite_gradient,
          "non-finite input gradient");
  return std::move(result.input_grad);
}

template <typename T>
Gradients<T> parameter_gradient(const ClassifierModel<T>& model,
                                const Tensor<T>& pixels,
                                const std::vector<std::uint32_t>& labels) {
  const auto trace = forward(model, pixels);
  const auto d_logits = cross_entropy_logit_grad(trace.logits(), labels);
  auto result = backward(model, trace, d_logits);
  require(result.grads.all_finite(), ErrorCode::non_finite_gradient,
          "non-finite parameter gradient");
  return std::move(result.grads);
}

// Plain gradient step: theta -= step_size * grad.
template <typename T>
void apply_update(ClassifierModel<T>& model, const Gradients<T>& grads, T step_size) {
  require(grads.all_finite(), ErrorCode::non_finite_gradient,
          "refusing to apply non-finite update");
  model.params.add_scaled(grads, -step_size);
}

template <typename T>
double accuracy(const ClassifierModel<T>& model, const Tensor<T>& pixels,
                const std::vector<std::uint32_t>& labels) {
  const auto trace = forward(model, pixels);
  const auto pred = argmax_rows(trace.logits());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace consis
