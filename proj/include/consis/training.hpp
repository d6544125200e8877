#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "consis/attacks.hpp"
#include "consis/dataset.hpp"
#include "consis/model.hpp"

namespace consis {

struct TrainConfig {
  double alpha = 0.5;          // weight between clean and adversarial CE
  double beta = 1.0;           // weight of the feature-matching term
  double epsilon = 8.0 / 255;  // FGSM radius used during training
  std::string feature_tap = "conv3";
  int epochs = 4;
  int batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::string mode = "normal";  // "normal" | "adversarial"
  int base_channels = 16;

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::invalid_config,
            "alpha must lie in [0,1]");
    require(beta >= 0.0, ErrorCode::invalid_config, "beta must be >= 0");
    require(epsilon >= 0.0 && epsilon <= 1.0, ErrorCode::invalid_config,
            "epsilon must lie in [0,1]");
    require(epochs >= 0, ErrorCode::invalid_config, "epochs must be >= 0");
    require(batch_size >= 1, ErrorCode::invalid_config, "batch_size must be >= 1");
    require(learning_rate >= 0.0, ErrorCode::invalid_config,
            "learning_rate must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorCode::invalid_config,
            "momentum must lie in [0,1)");
    require(mode == "normal" || mode == "adversarial", ErrorCode::invalid_config,
            "mode must be 'normal' or 'adversarial'");
  }

  nlohmann::json to_json() const {
    return {{"alpha", alpha},
            {"beta", beta},
            {"epsilon", epsilon},
            {"feature_tap", feature_tap},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"momentum", momentum},
            {"seed", seed},
            {"mode", mode},
            {"base_channels", base_channels}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.feature_tap = j.value("feature_tap", c.feature_tap);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.seed = j.value("seed", c.seed);
    c.mode = j.value("mode", c.mode);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.validate();
    return c;
  }
};

struct EpochMetrics {
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  double consistent_loss = 0.0;
  double total_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = -1.0;  // -1 when no validation set was given
};

struct StepStats {
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  double consistent_loss = 0.0;
  double total_loss = 0.0;
  double batch_accuracy = 0.0;
  std::string adv_pixels_hash;  // filled when the probe is armed
};

// Sampled audit record proving the training-time attack used the live
// parameters: the saved snapshot plus batch must regenerate the same x*.
template <typename T>
struct TrainProbe {
  bool set = false;
  int epoch = -1;
  long long step = -1;
  ClassifierModel<T> theta_snapshot;
  ImageBatch batch;
  double epsilon = 0.0;
  std::string adv_pixels_hash;
};

template <typename T>
struct TrainState {
  ClassifierModel<T> model;
  Gradients<T> velocity;
  int completed_epochs = 0;
  long long step_count = 0;
  std::vector<EpochMetrics> log;
  TrainProbe<T> probe;
  bool arm_probe = false;  // capture the next adversarial step
};

// Mean squared difference between the tapped feature maps of two traces.
template <typename T>
T consistent_loss(const ForwardTrace<T>& trace_clean, const ForwardTrace<T>& trace_adv,
                  const ModelSpec& spec, const std::string& tap) {
  const Tensor<T>& a = trace_clean.tapped(spec, tap);
  const Tensor<T>& b = trace_adv.tapped(spec, tap);
  require(a.same_shape(b), ErrorCode::shape_mismatch,
          "tapped features differ in shape");
  T acc{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<T>(a.size());
}

namespace train_detail {

template <typename T>
void momentum_update(TrainState<T>& state, const Gradients<T>& grads,
                     const TrainConfig& config) {
  require(grads.all_finite(), ErrorCode::non_finite_gradient,
          "non-finite parameter gradient");
  state.velocity.decay_add(static_cast<T>(config.momentum), grads);
  state.model.params.add_scaled(state.velocity, -static_cast<T>(config.learning_rate));
  ++state.step_count;
}

template <typename T>
double batch_accuracy_from(const Tensor<T>& logits,
                           const std::vector<std::uint32_t>& labels) {
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace train_detail

// One cross-entropy SGD step.
template <typename T>
StepStats standard_train_step(TrainState<T>& state, const ImageBatch& batch,
                              const TrainConfig& config)
  requires std::is_same_v<T, float>
{
  const auto trace = forward(state.model, batch.pixels);
  const T loss = cross_entropy(trace.logits(), batch.labels);
  const auto d_logits = cross_entropy_logit_grad(trace.logits(), batch.labels);
  auto back = backward(state.model, trace, d_logits);
  train_detail::momentum_update(state, back.grads, config);

  StepStats stats;
  stats.clean_loss = static_cast<double>(loss);
  stats.total_loss = stats.clean_loss;
  stats.batch_accuracy = train_detail::batch_accuracy_from(trace.logits(), batch.labels);
  return stats;
}

// One step on alpha*ce(x,y) + (1-alpha)*ce(x*,y) + beta*d(phi(x), phi(x*)),
// where x* is FGSM against the current parameters and is held constant for
// the parameter gradient. Zero-weighted terms are skipped outright, so
// alpha=1, beta=0 follows the exact arithmetic of standard_train_step.
template <typename T>
StepStats adversarial_consistent_step(TrainState<T>& state, const ImageBatch& batch,
                                      const TrainConfig& config)
  requires std::is_same_v<T, float>
{
  const ModelSpec& spec = state.model.spec;
  const int tap_idx = spec.tap_index(config.feature_tap);
  const T alpha = static_cast<T>(config.alpha);
  const T beta = static_cast<T>(config.beta);
  const bool need_adv = config.alpha < 1.0 || config.beta > 0.0;

  StepStats stats;
  const auto trace_clean = forward(state.model, batch.pixels);
  const T clean_loss = cross_entropy(trace_clean.logits(), batch.labels);
  stats.clean_loss = static_cast<double>(clean_loss);
  stats.batch_accuracy =
      train_detail::batch_accuracy_from(trace_clean.logits(), batch.labels);

  auto d_logits_clean = cross_entropy_logit_grad(trace_clean.logits(), batch.labels);
  for (auto& v : d_logits_clean.data) v *= alpha;

  if (!need_adv) {
    auto back = backward(state.model, trace_clean, d_logits_clean);
    train_detail::momentum_update(state, back.grads, config);
    stats.total_loss = config.alpha * stats.clean_loss;
    return stats;
  }

  // x*: FGSM from the live parameters, constant w.r.t. theta afterwards
  auto grad_back = backward(state.model, trace_clean,
                            cross_entropy_logit_grad(trace_clean.logits(), batch.labels),
                            {}, true);
  require(all_finite(grad_back.input_grad), ErrorCode::non_finite_gradient,
          "non-finite attack gradient");
  const Tensor<T> adv_pixels =
      fgsm_perturb(batch.pixels, grad_back.input_grad, config.epsilon);

  if (state.arm_probe) {
    state.probe.set = true;
    state.probe.step = state.step_count;
    state.probe.theta_snapshot = state.model;
    state.probe.batch = batch;
    state.probe.epsilon = config.epsilon;
    state.probe.adv_pixels_hash =
        hash_bytes_hex(adv_pixels.ptr(), adv_pixels.size() * sizeof(T));
    stats.adv_pixels_hash = state.probe.adv_pixels_hash;
    state.arm_probe = false;
  }

  const auto trace_adv = forward(state.model, adv_pixels);
  const T adv_loss = cross_entropy(trace_adv.logits(), batch.labels);
  stats.adv_loss = static_cast<double>(adv_loss);

  std::map<int, const Tensor<T>*> taps_clean, taps_adv;
  Tensor<T> dphi_clean, dphi_adv;
  if (config.beta > 0.0) {
    const Tensor<T>& phi_c = trace_clean.outputs[tap_idx];
    const Tensor<T>& phi_a = trace_adv.outputs[tap_idx];
    const T cons = consistent_loss(trace_clean, trace_adv, spec, config.feature_tap);
    stats.consistent_loss = static_cast<double>(cons);
    const T scale = beta * T{2} / static_cast<T>(phi_c.size());
    dphi_clean = Tensor<T>(phi_c.shape);
    dphi_adv = Tensor<T>(phi_a.shape);
    for (std::size_t i = 0; i < phi_c.size(); ++i) {
      const T d = phi_c[i] - phi_a[i];
      dphi_clean[i] = scale * d;
      dphi_adv[i] = -scale * d;
    }
    taps_clean[tap_idx] = &dphi_clean;
    taps_adv[tap_idx] = &dphi_adv;
  }

  auto back_clean = backward(state.model, trace_clean, d_logits_clean, taps_clean);
  Gradients<T> total = std::move(back_clean.grads);

  auto d_logits_adv = cross_entropy_logit_grad(trace_adv.logits(), batch.labels);
  for (auto& v : d_logits_adv.data) v *= (T{1} - alpha);
  auto back_adv = backward(state.model, trace_adv, d_logits_adv, taps_adv);
  total.add_scaled(back_adv.grads, T{1});

  train_detail::momentum_update(state, total, config);
  stats.total_loss = config.alpha * stats.clean_loss +
                     (1.0 - config.alpha) * stats.adv_loss +
                     config.beta * stats.consistent_loss;
  return stats;
}

// Batched top-1 accuracy over a dataset.
inline double evaluate_accuracy(const ClassifierModel<float>& model, const Dataset& ds,
                                std::size_t batch_size = 128) {
  require(ds.size() > 0, ErrorCode::dataset_empty, "evaluation set is empty");
  std::size_t hit = 0;
  for (std::size_t lo = 0; lo < ds.size(); lo += batch_size) {
    const std::size_t hi = std::min(ds.size(), lo + batch_size);
    std::vector<std::uint32_t> ids(hi - lo);
    for (std::size_t i = 0; i < ids.size(); ++i)
      ids[i] = static_cast<std::uint32_t>(lo + i);
    const ImageBatch batch = ds.batch(ids);
    const auto pred = argmax_rows(forward(model, batch.pixels).logits());
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == batch.labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

// Full training loop. Deterministic given (dataset, config): the model init,
// batch order and every update depend only on config.seed.
inline TrainState<float> train(const Dataset& trainset, const Dataset* valset,
                               const TrainConfig& config) {
  config.validate();
  require(trainset.size() > 0, ErrorCode::dataset_empty, "training set is empty");

  const ModelSpec spec =
      default_model_spec({trainset.channels, trainset.height, trainset.width},
                         trainset.class_count, config.base_channels);
  spec.tap_index(config.feature_tap);  // UnknownTap early

  TrainState<float> state;
  state.model = ClassifierModel<float>::random_init(spec, mix_seed(config.seed, 0));
  state.velocity = Gradients<float>::zeros_like(spec);

  const bool adversarial = config.mode == "adversarial";
  std::vector<std::uint32_t> order(trainset.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<std::uint32_t>(i);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    EpochMetrics metrics;
    double weight_sum = 0.0;
    bool first_batch = true;
    for (std::size_t lo = 0; lo < order.size();
         lo += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t hi =
          std::min(order.size(), lo + static_cast<std::size_t>(config.batch_size));
      const std::vector<std::uint32_t> ids(order.begin() + lo, order.begin() + hi);
      const ImageBatch batch = trainset.batch(ids);

      if (adversarial && epoch == config.epochs - 1 && first_batch)
        state.arm_probe = true;
      first_batch = false;

      StepStats stats;
      try {
        stats = adversarial ? adversarial_consistent_step(state, batch, config)
                            : standard_train_step(state, batch, config);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite_gradient ||
            e.code() == ErrorCode::non_finite_activation)
          raise(ErrorCode::diverged_training,
                "epoch " + std::to_string(epoch) + " aborted: " + e.what());
        throw;
      }
      require(std::isfinite(stats.total_loss), ErrorCode::diverged_training,
              "non-finite loss at epoch " + std::to_string(epoch));
      const double w = static_cast<double>(ids.size());
      metrics.clean_loss += stats.clean_loss * w;
      metrics.adv_loss += stats.adv_loss * w;
      metrics.consistent_loss += stats.consistent_loss * w;
      metrics.total_loss += stats.total_loss * w;
      metrics.train_accuracy += stats.batch_accuracy * w;
      weight_sum += w;
    }
    metrics.clean_loss /= weight_sum;
    metrics.adv_loss /= weight_sum;
    metrics.consistent_loss /= weight_sum;
    metrics.total_loss /= weight_sum;
    metrics.train_accuracy /= weight_sum;
    if (valset != nullptr) metrics.val_accuracy = evaluate_accuracy(state.model, *valset);
    state.log.push_back(metrics);
    ++state.completed_epochs;
  }
  return state;
}

}  // namespace consis
