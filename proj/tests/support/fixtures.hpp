#pragma once

#include "topodiff/dataset.hpp"
#include "topodiff/denoiser.hpp"
#include "topodiff/training.hpp"

#include <string>
#include <vector>

namespace topodiff::testing {

/// Two small characters sharing limb names: a biped and a quadruped.
Skeleton biped_skeleton();
Skeleton quadruped_skeleton();

enum class Action { kWalk, kCrouch, kArmsUp, kTurn, kTrot, kSit };

/// Scripted clip of one action on the matching skeleton.
JointMotion scripted_action(const Skeleton& skeleton, Action action, int frames);

/// Raw feature tensor of concatenated actions, `frames_each` frames per action.
MotionTensor scripted_clip(const Skeleton& skeleton, const std::vector<Action>& actions,
                           int frames_each);

/// Two skeletons x two clips. Biped clip 0 concatenates walk, crouch and
/// arms-up with sharp cuts at `toy_boundaries()`.
Dataset toy_dataset();
std::vector<int> toy_boundaries();

DenoiserConfig overfit_model_config();
TrainConfig overfit_train_config();

struct OverfitRun {
  std::string checkpoint_dir;
  std::int64_t steps = 0;
  /// First step at which the running mean of the simple loss fell below the
  /// target, -1 if never.
  std::int64_t steps_to_target = -1;
  double final_simple = 0.0;  ///< running mean at the end
  double seconds = 0.0;
};

inline constexpr double kOverfitSimpleTarget = 0.05;
inline constexpr int kOverfitLossWindow = 100;

/// Trains the overfit model once and caches the checkpoint in the build
/// tree; later calls reload the summary.
OverfitRun overfit_model();

}  // namespace topodiff::testing
