#pragma once

#include "topodiff/denoiser.hpp"
#include "topodiff/motion.hpp"
#include "topodiff/normalization.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace topodiff {

enum class ScheduleKind { kCosine, kLinear };

std::string schedule_kind_name(ScheduleKind kind);
ScheduleKind schedule_kind_from_name(const std::string& name);

/// Tables indexed by step t in [0, T]; entry 0 is the clean boundary
/// (alpha_bar = 1, beta = 0).
struct NoiseSchedule {
  int steps = 0;
  ScheduleKind kind = ScheduleKind::kCosine;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  static NoiseSchedule make(int steps, ScheduleKind kind = ScheduleKind::kCosine);

  /// Posterior q(x_{t-1} | x_t, x_0) = N(c0 x_0 + ct x_t, var).
  double posterior_coef_x0(int t) const;
  double posterior_coef_xt(int t) const;
  double posterior_variance(int t) const;
};

/// Standard normal draws for every entry of a tensor shape, row-major order,
/// padded entries zeroed afterwards.
RowMatrixXd draw_noise(const MotionTensor& like, Rng& rng);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise on valid entries;
/// padded entries stay zero. t = 0 returns x0.
MotionTensor q_sample(const NoiseSchedule& schedule, const MotionTensor& x0, int t,
                      const RowMatrixXd& noise);

struct LossWeights {
  double lambda_rot = 1.0;
};

struct LossValue {
  double total = 0.0;
  double simple = 0.0;  ///< mean squared error over valid entries
  double rot = 0.0;     ///< summed geodesic angle over valid tokens
};

/// Loss of one training example: x0 is normalized; rotations are compared
/// after denormalizing with `stats` (pass nullptr to compare them as given).
/// When `grads` is non-null the parameter gradients of the total are added.
template <typename T>
LossValue training_loss(const Denoiser<T>& model, const MotionTensor& x0,
                        const ModelCondition& cond, const NormalizationStats* stats,
                        const NoiseSchedule& schedule, int t, const RowMatrixXd& noise,
                        const LossWeights& weights, ParamStore<T>* grads = nullptr);

/// Same objective for an arbitrary prediction; returns d(total)/d(prediction)
/// through `grad` when given.
LossValue loss_from_prediction(const MotionTensor& prediction, const MotionTensor& x0,
                               const NormalizationStats* stats, const LossWeights& weights,
                               RowMatrixXd* grad = nullptr);

struct SampleOptions {
  int frames = 40;
  int crop_index = 0;
  std::uint64_t seed = 0;
  bool allow_untrained = false;
  bool threshold_contacts = true;
};

/// Ancestral sampling with x0 prediction. Returns a denormalized motion.
template <typename T>
MotionTensor sample(const Denoiser<T>& model, const NoiseSchedule& schedule,
                    const ModelCondition& cond, const NormalizationStats& stats,
                    const SampleOptions& options);

/// Inpainting: at each step the predicted clean motion is overwritten on
/// `fixed` tokens (row = frame * J + joint) with `fixed_values` (raw, not
/// normalized). The returned motion holds fixed_values exactly there.
template <typename T>
MotionTensor edit_sample(const Denoiser<T>& model, const NoiseSchedule& schedule,
                         const ModelCondition& cond, const NormalizationStats& stats,
                         const MotionTensor& fixed_values,
                         const std::vector<std::uint8_t>& fixed,
                         const SampleOptions& options);

/// Token masks for the usual edits.
std::vector<std::uint8_t> frame_edit_mask(int frames, int joints,
                                          const std::vector<int>& fixed_frames);
std::vector<std::uint8_t> joint_edit_mask(int frames, int joints,
                                          const std::vector<int>& fixed_joints);

/// Noises the normalized x0 to step t and returns activations of `layer`.
template <typename T>
ActivationTap dift_features(const Denoiser<T>& model, const NoiseSchedule& schedule,
                            const MotionTensor& x0, const ModelCondition& cond, int t,
                            int layer, std::uint64_t seed);
template <typename T>
ActivationTap dift_features(const Denoiser<T>& model, const NoiseSchedule& schedule,
                            const MotionTensor& x0, const ModelCondition& cond, int t,
                            int layer, const RowMatrixXd& noise);

}  // namespace topodiff
