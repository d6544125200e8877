#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "consis/dataset.hpp"
#include "consis/model.hpp"

namespace consis {

enum class AttackMode { fgsm, targeted_l2, least_likely };

inline const char* attack_mode_name(AttackMode m) {
  switch (m) {
    case AttackMode::fgsm: return "fgsm";
    case AttackMode::targeted_l2: return "targeted";
    case AttackMode::least_likely: return "least-likely";
  }
  return "?";
}

struct AttackConfig {
  AttackMode mode = AttackMode::fgsm;
  double epsilon = 2.0 / 255.0;  // L-inf radius in [0,1] pixel units
  double lambda = 5.0;           // L2 attack loss weight
  int steps = 100;
  double step_size = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    require(epsilon >= 0.0 && epsilon <= 1.0, ErrorCode::invalid_config,
            "epsilon must lie in [0,1]");
    require(steps >= 1, ErrorCode::invalid_config, "steps must be >= 1");
    require(step_size > 0.0, ErrorCode::invalid_config, "step_size must be > 0");
    if (mode == AttackMode::targeted_l2)
      require(lambda > 0.0, ErrorCode::invalid_config, "lambda must be > 0");
    if (mode == AttackMode::least_likely && epsilon > 0.0)
      require(step_size <= epsilon, ErrorCode::invalid_config,
              "least-likely step_size must not exceed epsilon");
  }
};

template <typename T>
struct AdversarialBatch {
  Tensor<T> pixels;                          // perturbed images, in [0,1]
  std::vector<std::uint32_t> labels;         // content labels of the sources
  std::vector<std::uint32_t> target_labels;  // empty for non-targeted fgsm
  std::vector<std::uint8_t> success;         // prediction changed / target hit
  std::vector<std::uint8_t> no_progress;     // targeted_l2: no step ever accepted
};

namespace attack_detail {

template <typename T>
inline T sign_of(T v) {
  return v > T{} ? T{1} : (v < T{} ? T{-1} : T{});
}

template <typename T>
inline T clip01(T v) {
  return std::min(std::max(v, T{0}), T{1});
}

}  // namespace attack_detail

// x* = clip_[0,1](x + eps * sign(g)). Shared by the attack entry point and
// the training loop so both produce identical perturbations.
template <typename T>
Tensor<T> fgsm_perturb(const Tensor<T>& pixels, const Tensor<T>& grad, double epsilon) {
  require(pixels.same_shape(grad), ErrorCode::shape_mismatch, "gradient shape");
  const T eps = static_cast<T>(epsilon);
  Tensor<T> out(pixels.shape);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    out[i] = attack_detail::clip01(pixels[i] + eps * attack_detail::sign_of(grad[i]));
  return out;
}

// Non-targeted FGSM against the true labels; one forward/backward to build
// the perturbation, one evaluation forward for the success mask.
template <typename T>
AdversarialBatch<T> fgsm(const ClassifierModel<T>& model, const Tensor<T>& pixels,
                         const std::vector<std::uint32_t>& labels, double epsilon) {
  require(epsilon >= 0.0, ErrorCode::invalid_config, "epsilon must be >= 0");
  const auto trace = forward(model, pixels);
  const auto d_logits = cross_entropy_logit_grad(trace.logits(), labels);
  auto back = backward(model, trace, d_logits, {}, true);
  require(all_finite(back.input_grad), ErrorCode::non_finite_gradient,
          "non-finite attack gradient");

  AdversarialBatch<T> out;
  out.labels = labels;
  out.pixels = fgsm_perturb(pixels, back.input_grad, epsilon);

  const auto clean_pred = argmax_rows(trace.logits());
  const auto adv_pred = argmax_rows(forward(model, out.pixels).logits());
  out.success.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.success[i] = adv_pred[i] != clean_pred[i] ? 1 : 0;
  return out;
}

template <typename T>
AdversarialBatch<T> fgsm(const ClassifierModel<T>& model, const ImageBatch& batch,
                         double epsilon)
  requires std::is_same_v<T, float>
{
  return fgsm(model, batch.pixels, batch.labels, epsilon);
}

// Minimizes ||x*-x||_2^2 + lambda * ce(x*, target) by projected gradient
// descent with per-image backtracking halving; a step is kept only if it
// lowers the objective. Images that already predict the target are frozen,
// so a target equal to the current prediction returns a zero perturbation.
template <typename T>
AdversarialBatch<T> targeted_l2(const ClassifierModel<T>& model,
                                const Tensor<T>& pixels,
                                const std::vector<std::uint32_t>& true_labels,
                                const std::vector<std::uint32_t>& target_labels,
                                double lambda, int steps, double step_size) {
  require(lambda > 0.0, ErrorCode::invalid_config, "lambda must be > 0");
  require(steps >= 1, ErrorCode::invalid_config, "steps must be >= 1");
  require(step_size > 0.0, ErrorCode::invalid_config, "step_size must be > 0");
  const std::size_t B = true_labels.size();
  require(target_labels.size() == B, ErrorCode::shape_mismatch,
          "target label count");
  for (std::size_t i = 0; i < B; ++i)
    require(target_labels[i] != true_labels[i], ErrorCode::invalid_config,
            "target label equals true label for image " + std::to_string(i));

  const std::size_t n = pixels.size() / B;
  AdversarialBatch<T> out;
  out.pixels = pixels;
  out.labels = true_labels;
  out.target_labels = target_labels;
  out.success.assign(B, 0);
  out.no_progress.assign(B, 0);

  auto l2sq = [&](std::size_t img) {
    double acc = 0.0;
    const T* a = out.pixels.ptr() + img * n;
    const T* b = pixels.ptr() + img * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      acc += d * d;
    }
    return acc;
  };

  // initial objective and already-satisfied targets
  std::vector<double> objective(B);
  std::vector<std::uint8_t> accepted_any(B, 0);
  std::vector<std::uint8_t> frozen(B, 0);
  {
    const auto trace = forward(model, out.pixels);
    const auto ce = cross_entropy_per_example(trace.logits(), target_labels);
    const auto pred = argmax_rows(trace.logits());
    for (std::size_t i = 0; i < B; ++i) {
      objective[i] = l2sq(i) + lambda * static_cast<double>(ce[i]);
      if (pred[i] == target_labels[i]) {
        frozen[i] = 1;
        out.success[i] = 1;
      }
    }
  }

  auto gather = [&](const std::vector<std::uint32_t>& ids) {
    Tensor<T> sub({ids.size(), pixels.dim(1), pixels.dim(2), pixels.dim(3)});
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::copy(out.pixels.ptr() + ids[i] * n, out.pixels.ptr() + (ids[i] + 1) * n,
                sub.ptr() + i * n);
    return sub;
  };

  for (int step = 0; step < steps; ++step) {
    std::vector<std::uint32_t> active;
    for (std::size_t i = 0; i < B; ++i)
      if (!frozen[i]) active.push_back(static_cast<std::uint32_t>(i));
    if (active.empty()) break;

    // gradient of the objective at the current iterate
    Tensor<T> sub = gather(active);
    std::vector<std::uint32_t> sub_targets(active.size());
    for (std::size_t i = 0; i < active.size(); ++i)
      sub_targets[i] = target_labels[active[i]];
    const auto trace = forward(model, sub);
    auto d_logits =
        cross_entropy_logit_grad(trace.logits(), sub_targets, Reduction::sum);
    for (auto& v : d_logits.data) v *= static_cast<T>(lambda);
    auto back = backward(model, trace, d_logits, {}, true);
    require(all_finite(back.input_grad), ErrorCode::non_finite_gradient,
            "non-finite attack gradient");
    for (std::size_t i = 0; i < active.size(); ++i) {
      const std::size_t img = active[i];
      T* g = back.input_grad.ptr() + i * n;
      const T* x = out.pixels.ptr() + img * n;
      const T* x0 = pixels.ptr() + img * n;
      for (std::size_t p = 0; p < n; ++p) g[p] += T{2} * (x[p] - x0[p]);
    }

    // backtracking: halve per-image scale until the objective decreases
    std::vector<double> scale(active.size(), step_size);
    std::vector<std::uint8_t> done(active.size(), 0);
    for (int halving = 0; halving < 9; ++halving) {
      std::vector<std::uint32_t> pending;
      for (std::size_t i = 0; i < active.size(); ++i)
        if (!done[i]) pending.push_back(static_cast<std::uint32_t>(i));
      if (pending.empty()) break;

      Tensor<T> cand({pending.size(), pixels.dim(1), pixels.dim(2), pixels.dim(3)});
      std::vector<std::uint32_t> cand_targets(pending.size());
      for (std::size_t j = 0; j < pending.size(); ++j) {
        const std::size_t i = pending[j];
        const std::size_t img = active[i];
        const T* x = out.pixels.ptr() + img * n;
        const T* g = back.input_grad.ptr() + i * n;
        T* c = cand.ptr() + j * n;
        const T s = static_cast<T>(scale[i]);
        for (std::size_t p = 0; p < n; ++p)
          c[p] = attack_detail::clip01(x[p] - s * g[p]);
        cand_targets[j] = target_labels[img];
      }
      const auto cand_trace = forward(model, cand);
      const auto cand_ce = cross_entropy_per_example(cand_trace.logits(), cand_targets);
      const auto cand_pred = argmax_rows(cand_trace.logits());
      for (std::size_t j = 0; j < pending.size(); ++j) {
        const std::size_t i = pending[j];
        const std::size_t img = active[i];
        double cand_l2 = 0.0;
        const T* c = cand.ptr() + j * n;
        const T* x0 = pixels.ptr() + img * n;
        for (std::size_t p = 0; p < n; ++p) {
          const double d = static_cast<double>(c[p]) - static_cast<double>(x0[p]);
          cand_l2 += d * d;
        }
        const double cand_obj = cand_l2 + lambda * static_cast<double>(cand_ce[j]);
        if (cand_obj < objective[img]) {
          std::copy(c, c + n, out.pixels.ptr() + img * n);
          objective[img] = cand_obj;
          accepted_any[img] = 1;
          done[i] = 1;
          if (cand_pred[j] == target_labels[img]) {
            frozen[img] = 1;
            out.success[img] = 1;
          }
        } else {
          scale[i] *= 0.5;
        }
      }
    }
  }

  for (std::size_t i = 0; i < B; ++i)
    out.no_progress[i] = (!accepted_any[i] && !out.success[i]) ? 1 : 0;
  return out;
}

// Iterative least-likely class method: descend the loss toward the class
// with the lowest clean logit, clipped to the eps ball and [0,1] each step.
// The target is fixed from the clean logits.
template <typename T>
AdversarialBatch<T> iterative_least_likely(const ClassifierModel<T>& model,
                                           const Tensor<T>& pixels,
                                           const std::vector<std::uint32_t>& labels,
                                           double epsilon, int steps,
                                           double step_size) {
  require(epsilon >= 0.0, ErrorCode::invalid_config, "epsilon must be >= 0");
  require(steps >= 1, ErrorCode::invalid_config, "steps must be >= 1");
  AdversarialBatch<T> out;
  out.labels = labels;
  out.pixels = pixels;
  out.success.assign(labels.size(), 0);

  const auto clean_trace = forward(model, pixels);
  out.target_labels = argmin_rows(clean_trace.logits());
  if (epsilon == 0.0) return out;
  require(step_size <= epsilon, ErrorCode::invalid_config,
          "step_size must not exceed epsilon");

  const T eps = static_cast<T>(epsilon);
  const T step = static_cast<T>(step_size);
  for (int t = 0; t < steps; ++t) {
    const auto trace = forward(model, out.pixels);
    const auto d_logits =
        cross_entropy_logit_grad(trace.logits(), out.target_labels, Reduction::sum);
    auto back = backward(model, trace, d_logits, {}, true);
    require(all_finite(back.input_grad), ErrorCode::non_finite_gradient,
            "non-finite attack gradient");
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
      const T lo = std::max(T{0}, pixels[i] - eps);
      const T hi = std::min(T{1}, pixels[i] + eps);
      const T moved = out.pixels[i] - step * attack_detail::sign_of(back.input_grad[i]);
      out.pixels[i] = std::min(std::max(moved, lo), hi);
    }
  }

  const auto final_pred = argmax_rows(forward(model, out.pixels).logits());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.success[i] = final_pred[i] == out.target_labels[i] ? 1 : 0;
  return out;
}

// Runs the configured attack over a whole dataset in fixed-size batches and
// packages the result as an adversarial container with provenance.
inline Dataset attack_dataset(const ClassifierModel<float>& model, const Dataset& source,
                              const AttackConfig& config, std::size_t batch_size = 64) {
  config.validate();
  require(source.size() > 0, ErrorCode::dataset_empty, "attack source is empty");

  Dataset out;
  out.kind = "adversarial";
  out.channels = source.channels;
  out.height = source.height;
  out.width = source.width;
  out.class_count = source.class_count;
  out.seed = config.seed;
  out.labels = source.labels;
  out.pixels_are_u8 = false;
  out.pixels_f32.resize(source.size() * source.pixels_per_image());
  out.source_ids.resize(source.size());
  for (std::size_t i = 0; i < source.size(); ++i)
    out.source_ids[i] = static_cast<std::uint32_t>(i);

  Rng rng(config.seed);
  std::size_t success_count = 0;
  const std::size_t n = source.pixels_per_image();
  for (std::size_t lo = 0; lo < source.size(); lo += batch_size) {
    const std::size_t hi = std::min(source.size(), lo + batch_size);
    std::vector<std::uint32_t> ids(hi - lo);
    for (std::size_t i = 0; i < ids.size(); ++i)
      ids[i] = static_cast<std::uint32_t>(lo + i);
    ImageBatch batch = source.batch(ids);

    AdversarialBatch<float> adv;
    switch (config.mode) {
      case AttackMode::fgsm:
        adv = fgsm(model, batch.pixels, batch.labels, config.epsilon);
        break;
      case AttackMode::targeted_l2: {
        std::vector<std::uint32_t> targets(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const auto k = static_cast<std::uint32_t>(source.class_count);
          targets[i] =
              (batch.labels[i] + 1 +
               static_cast<std::uint32_t>(rng.uniform_index(k - 1))) % k;
          if (targets[i] == batch.labels[i]) targets[i] = (targets[i] + 1) % k;
        }
        adv = targeted_l2(model, batch.pixels, batch.labels, targets, config.lambda,
                          config.steps, config.step_size);
        break;
      }
      case AttackMode::least_likely:
        adv = iterative_least_likely(model, batch.pixels, batch.labels,
                                     config.epsilon, config.steps, config.step_size);
        break;
    }
    std::copy(adv.pixels.ptr(), adv.pixels.ptr() + adv.pixels.size(),
              out.pixels_f32.data() + lo * n);
    for (const auto s : adv.success) success_count += s;
  }

  out.provenance = {{"mode", attack_mode_name(config.mode)},
                    {"epsilon", config.epsilon},
                    {"lambda", config.lambda},
                    {"steps", config.steps},
                    {"step_size", config.step_size},
                    {"seed", config.seed},
                    {"source_hash", source.content_hash()},
                    {"model_hash", model.params_hash()},
                    {"success_rate",
                     static_cast<double>(success_count) / source.size()}};
  return out;
}

}  // namespace consis
