#include "topodiff/diffusion.hpp"

#include "topodiff/rotation.hpp"

#include <cmath>
#include <numbers>

namespace topodiff {

std::string schedule_kind_name(ScheduleKind kind) {
  return kind == ScheduleKind::kCosine ? "cosine" : "linear";
}

ScheduleKind schedule_kind_from_name(const std::string& name) {
  if (name == "cosine") return ScheduleKind::kCosine;
  if (name == "linear") return ScheduleKind::kLinear;
  throw Error("unknown noise schedule '" + name + "'");
}

NoiseSchedule NoiseSchedule::make(int steps, ScheduleKind kind) {
  if (steps < 1) throw Error("noise schedule needs at least one step");
  NoiseSchedule s;
  s.steps = steps;
  s.kind = kind;
  s.beta.assign(steps + 1, 0.0);
  if (kind == ScheduleKind::kCosine) {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) {
      s.beta[t] = std::min(1.0 - f(t) / f(t - 1), 0.999);
    }
  } else {
    const double scale = 1000.0 / steps;
    const double lo = scale * 1e-4;
    const double hi = scale * 0.02;
    for (int t = 1; t <= steps; ++t) {
      const double b = steps == 1 ? lo : lo + (hi - lo) * (t - 1) / (steps - 1);
      s.beta[t] = std::min(b, 0.999);
    }
  }
  s.alpha.assign(steps + 1, 1.0);
  s.alpha_bar.assign(steps + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

double NoiseSchedule::posterior_coef_x0(int t) const {
  return std::sqrt(alpha_bar[t - 1]) * beta[t] / (1.0 - alpha_bar[t]);
}

double NoiseSchedule::posterior_coef_xt(int t) const {
  return std::sqrt(alpha[t]) * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
}

double NoiseSchedule::posterior_variance(int t) const {
  return beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
}

RowMatrixXd draw_noise(const MotionTensor& like, Rng& rng) {
  RowMatrixXd n(like.data.rows(), like.data.cols());
  for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = rng.normal();
  for (int f = 0; f < like.frames; ++f) {
    for (int j = 0; j < like.joints; ++j) {
      if (!like.valid(f, j)) n.row(like.row(f, j)).setZero();
    }
  }
  return n;
}

MotionTensor q_sample(const NoiseSchedule& schedule, const MotionTensor& x0, int t,
                      const RowMatrixXd& noise) {
  if (t < 0 || t > schedule.steps) {
    throw Error("q_sample: step " + std::to_string(t) + " outside [0, " +
                std::to_string(schedule.steps) + "]");
  }
  if (noise.rows() != x0.data.rows() || noise.cols() != x0.data.cols()) {
    throw Error("q_sample: noise shape mismatch");
  }
  MotionTensor out = x0;
  if (t == 0) return out;
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  out.data = a * x0.data + b * noise;
  out.apply_mask();
  return out;
}

LossValue loss_from_prediction(const MotionTensor& prediction, const MotionTensor& x0,
                               const NormalizationStats* stats, const LossWeights& weights,
                               RowMatrixXd* grad) {
  if (prediction.data.rows() != x0.data.rows()) throw Error("loss: shape mismatch");
  const auto valid = x0.token_mask();
  std::size_t n_valid = 0;
  for (auto v : valid) n_valid += v;
  LossValue out;
  if (grad) grad->setZero(x0.data.rows(), x0.data.cols());
  if (n_valid == 0) return out;
  const double denom = static_cast<double>(n_valid) * kFeatureDim;
  for (Eigen::Index i = 0; i < x0.data.rows(); ++i) {
    if (!valid[i]) continue;
    const auto diff = (prediction.data.row(i) - x0.data.row(i)).eval();
    out.simple += diff.squaredNorm();
    if (grad) grad->row(i) = (2.0 / denom) * diff;
  }
  out.simple /= denom;

  {
    RowMatrixXd r = x0.data.middleCols(kRotOffset, 6);
    RowMatrixXd r_hat = prediction.data.middleCols(kRotOffset, 6);
    RowMatrixXd scale = RowMatrixXd::Ones(r.rows(), 6);
    if (stats) {
      if (stats->joint_count() != x0.joints) throw Error("loss: stats joint count mismatch");
      for (int f = 0; f < x0.frames; ++f) {
        for (int j = 0; j < x0.joints; ++j) {
          const auto row = x0.row(f, j);
          const auto sd = stats->std.row(j).segment(kRotOffset, 6);
          const auto mu = stats->mean.row(j).segment(kRotOffset, 6);
          r.row(row) = r.row(row).cwiseProduct(sd) + mu;
          r_hat.row(row) = r_hat.row(row).cwiseProduct(sd) + mu;
          scale.row(row) = sd;
        }
      }
    }
    // The rotation term is always reported; its gradient only when weighted.
    const bool want_grad = grad && weights.lambda_rot != 0.0;
    RowMatrixXd g_rot;
    out.rot = geodesic_loss(r, r_hat, valid, want_grad ? &g_rot : nullptr);
    if (want_grad) {
      grad->middleCols(kRotOffset, 6) += weights.lambda_rot * g_rot.cwiseProduct(scale);
    }
  }
  out.total = out.simple + weights.lambda_rot * out.rot;
  return out;
}

template <typename T>
LossValue training_loss(const Denoiser<T>& model, const MotionTensor& x0,
                        const ModelCondition& cond, const NormalizationStats* stats,
                        const NoiseSchedule& schedule, int t, const RowMatrixXd& noise,
                        const LossWeights& weights, ParamStore<T>* grads) {
  if (t < 1 || t > schedule.steps) throw Error("training_loss: step out of range");
  const MotionTensor x_t = q_sample(schedule, x0, t, noise);
  ForwardCache<T> cache;
  const MotionTensor pred = model.forward(x_t, t, cond, grads ? &cache : nullptr);
  RowMatrixXd g;
  const LossValue v = loss_from_prediction(pred, x0, stats, weights, grads ? &g : nullptr);
  if (grads) model.backward(cache, g, *grads);
  return v;
}

namespace {

template <typename T>
MotionTensor run_sampler(const Denoiser<T>& model, const NoiseSchedule& schedule,
                         const ModelCondition& cond, const NormalizationStats& stats,
                         const MotionTensor* fixed_raw, const std::vector<std::uint8_t>* fixed,
                         const SampleOptions& opt) {
  if (model.trained_steps == 0 && !opt.allow_untrained) {
    throw Error("sampling requires trained parameters (model has seen 0 steps)");
  }
  if (schedule.steps != model.config().diffusion_steps) {
    throw Error("schedule length differs from the model's diffusion steps");
  }
  const int J = cond.joint_count();
  if (stats.joint_count() != J) throw Error("sample: stats joint count mismatch");
  const int N = fixed_raw ? fixed_raw->frames : opt.frames;
  if (N < 1) throw Error("sample: frame count must be positive");

  MotionTensor x = MotionTensor::zeros(N, J);
  x.crop_index = opt.crop_index;
  MotionTensor fixed_norm;
  if (fixed_raw) {
    fixed_norm = normalize(*fixed_raw, stats);
    x.frame_mask = fixed_raw->frame_mask;
    x.joint_mask = fixed_raw->joint_mask;
  }

  Rng rng(opt.seed);
  x.data = draw_noise(x, rng);
  for (int t = schedule.steps; t >= 1; --t) {
    MotionTensor x0_hat = model.forward(x, t, cond);
    if (fixed) {
      for (std::size_t i = 0; i < fixed->size(); ++i) {
        if ((*fixed)[i]) x0_hat.data.row(i) = fixed_norm.data.row(i);
      }
    }
    if (t == 1) {
      x = std::move(x0_hat);
      break;
    }
    const RowMatrixXd z = draw_noise(x, rng);
    x.data = schedule.posterior_coef_x0(t) * x0_hat.data + schedule.posterior_coef_xt(t) * x.data +
             std::sqrt(schedule.posterior_variance(t)) * z;
    x.apply_mask();
  }

  MotionTensor out = denormalize(x, stats);
  if (opt.threshold_contacts) {
    for (Eigen::Index i = 0; i < out.data.rows(); ++i) {
      out.data(i, kContactOffset) = out.data(i, kContactOffset) > 0.5 ? 1.0 : 0.0;
    }
  }
  if (fixed) {
    for (std::size_t i = 0; i < fixed->size(); ++i) {
      if ((*fixed)[i]) out.data.row(i) = fixed_raw->data.row(i);
    }
  }
  out.apply_mask();
  return out;
}

}  // namespace

template <typename T>
MotionTensor sample(const Denoiser<T>& model, const NoiseSchedule& schedule,
                    const ModelCondition& cond, const NormalizationStats& stats,
                    const SampleOptions& options) {
  MotionTensor empty = MotionTensor::zeros(options.frames, cond.joint_count());
  empty.crop_index = options.crop_index;
  std::vector<std::uint8_t> none(empty.data.rows(), 0);
  return edit_sample(model, schedule, cond, stats, empty, none, options);
}

template <typename T>
MotionTensor edit_sample(const Denoiser<T>& model, const NoiseSchedule& schedule,
                         const ModelCondition& cond, const NormalizationStats& stats,
                         const MotionTensor& fixed_values,
                         const std::vector<std::uint8_t>& fixed,
                         const SampleOptions& options) {
  if (fixed_values.joints != cond.joint_count()) {
    throw Error("edit_sample: fixed values have " + std::to_string(fixed_values.joints) +
                " joints, skeleton has " + std::to_string(cond.joint_count()));
  }
  if (fixed.size() != static_cast<std::size_t>(fixed_values.data.rows())) {
    throw Error("edit_sample: mask size does not match the fixed values");
  }
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    const int f = static_cast<int>(i) / fixed_values.joints;
    const int j = static_cast<int>(i) % fixed_values.joints;
    if (fixed[i] && !fixed_values.valid(f, j)) {
      throw Error("edit_sample: mask selects padded tokens");
    }
  }
  SampleOptions opt = options;
  opt.crop_index = fixed_values.crop_index;
  return run_sampler(model, schedule, cond, stats, &fixed_values, &fixed, opt);
}

std::vector<std::uint8_t> frame_edit_mask(int frames, int joints,
                                          const std::vector<int>& fixed_frames) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(frames) * joints, 0);
  for (int f : fixed_frames) {
    if (f < 0 || f >= frames) throw Error("frame_edit_mask: frame out of range");
    for (int j = 0; j < joints; ++j) m[static_cast<std::size_t>(f) * joints + j] = 1;
  }
  return m;
}

std::vector<std::uint8_t> joint_edit_mask(int frames, int joints,
                                          const std::vector<int>& fixed_joints) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(frames) * joints, 0);
  for (int j : fixed_joints) {
    if (j < 0 || j >= joints) throw Error("joint_edit_mask: joint out of range");
    for (int f = 0; f < frames; ++f) m[static_cast<std::size_t>(f) * joints + j] = 1;
  }
  return m;
}

template <typename T>
ActivationTap dift_features(const Denoiser<T>& model, const NoiseSchedule& schedule,
                            const MotionTensor& x0, const ModelCondition& cond, int t,
                            int layer, const RowMatrixXd& noise) {
  if (t < 1 || t > schedule.steps) throw Error("dift_features: step out of range");
  ActivationTap tap = model.capture_activations(layer);
  const MotionTensor x_t = q_sample(schedule, x0, t, noise);
  model.forward(x_t, t, cond, nullptr, &tap);
  return tap;
}

template <typename T>
ActivationTap dift_features(const Denoiser<T>& model, const NoiseSchedule& schedule,
                            const MotionTensor& x0, const ModelCondition& cond, int t,
                            int layer, std::uint64_t seed) {
  Rng rng(seed);
  return dift_features(model, schedule, x0, cond, t, layer, draw_noise(x0, rng));
}

#define TOPODIFF_INSTANTIATE(T)                                                              \
  template LossValue training_loss(const Denoiser<T>&, const MotionTensor&,                  \
                                   const ModelCondition&, const NormalizationStats*,         \
                                   const NoiseSchedule&, int, const RowMatrixXd&,            \
                                   const LossWeights&, ParamStore<T>*);                      \
  template MotionTensor sample(const Denoiser<T>&, const NoiseSchedule&,                     \
                               const ModelCondition&, const NormalizationStats&,             \
                               const SampleOptions&);                                        \
  template MotionTensor edit_sample(const Denoiser<T>&, const NoiseSchedule&,                \
                                    const ModelCondition&, const NormalizationStats&,        \
                                    const MotionTensor&, const std::vector<std::uint8_t>&,   \
                                    const SampleOptions&);                                   \
  template ActivationTap dift_features(const Denoiser<T>&, const NoiseSchedule&,             \
                                       const MotionTensor&, const ModelCondition&, int, int, \
                                       const RowMatrixXd&);                                  \
  template ActivationTap dift_features(const Denoiser<T>&, const NoiseSchedule&,             \
                                       const MotionTensor&, const ModelCondition&, int, int, \
                                       std::uint64_t);

TOPODIFF_INSTANTIATE(float)
TOPODIFF_INSTANTIATE(double)

}  // namespace topodiff
