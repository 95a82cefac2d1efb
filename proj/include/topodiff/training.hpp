#pragma once

#include "topodiff/dataset.hpp"
#include "topodiff/denoiser.hpp"
#include "topodiff/diffusion.hpp"
#include "topodiff/name_embedder.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace topodiff {

struct TrainConfig {
  int batch_size = 16;
  int crop_frames = 40;
  double learning_rate = 1e-4;
  std::string lr_decay = "constant";  ///< constant, or cosine down to 0 at total_steps
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  ///< global norm; 0 disables
  std::int64_t total_steps = 1000;
  double lambda_rot = 1.0;
  double remove_prob = 0.3;
  double add_prob = 0.3;
  double remove_fraction_min = 0.1;
  double remove_fraction_max = 0.3;
  std::uint64_t seed = 0;
  std::string schedule = "cosine";
  std::string name_embedder = "hashed:64";
  std::int64_t checkpoint_every = 0;  ///< 0: only at the end of run()
  std::int64_t log_every = 10;
  std::string out_dir;  ///< empty: no files written

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);

/// Learning rate applied on optimizer step `step` (1-based).
double learning_rate_at(const TrainConfig& config, std::int64_t step);
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});

/// Draws (skeleton type, clip) pairs with probability 1 / (n_i * k).
class BalancedSampler {
 public:
  explicit BalancedSampler(std::vector<int> clip_counts);
  std::pair<int, int> draw(Rng& rng) const;
  double probability(int type, int clip) const;
  int type_count() const { return static_cast<int>(counts_.size()); }

 private:
  std::vector<int> counts_;
};

/// Augmented copy of one training example (raw features).
struct AugmentedSample {
  Skeleton skeleton;
  NormalizationStats stats;
  MotionTensor motion;
  bool removed = false;
  bool added = false;
};

/// Applies joint removal and/or edge subdivision with the configured
/// probabilities and lifts the motion onto the edited skeleton.
/// Subdivision is skipped when the skeleton already has `max_joints` joints.
AugmentedSample augment_sample(const Skeleton& skeleton, const NormalizationStats& stats,
                               const MotionTensor& motion, Rng& rng, const TrainConfig& config,
                               int max_joints = 143);

/// Motion of an edited skeleton. Kept joints copy their features; an inserted
/// joint sits at the midpoint of its parent and child with identity local
/// rotation, averaged velocity and no contact.
MotionTensor lift_motion(const MotionTensor& motion, const AugmentResult& edit);

/// Crop of `length` frames starting at `start`; shorter clips are padded and
/// frame-masked.
MotionTensor crop_or_pad(const MotionTensor& motion, int start, int length);

struct StepStats {
  std::int64_t step = 0;
  double loss = 0.0;
  double simple = 0.0;
  double rot = 0.0;
  double grad_norm = 0.0;
};

class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

/// Everything needed to use a trained model.
struct ModelBundle {
  std::unique_ptr<Denoiser<float>> model;
  NoiseSchedule schedule;
  std::shared_ptr<const NameEmbedder> embedder;
  TrainConfig train_config;
  std::string manifest;  ///< manifest.json text
};

ModelBundle load_checkpoint(const std::string& dir);

class Trainer {
 public:
  Trainer(const Dataset& dataset, const DenoiserConfig& model_config,
          const TrainConfig& config);

  /// Continues from a checkpoint written by save_checkpoint(). Settings in
  /// `config` other than the optimizer state replace the stored ones.
  static Trainer resume(const Dataset& dataset, const std::string& checkpoint_dir,
                        const TrainConfig& config);

  StepStats step();
  /// Runs until total_steps; calls `on_step` after each step.
  void run(const std::function<void(const StepStats&)>& on_step = {});

  void save_checkpoint(const std::string& dir) const;

  const Denoiser<float>& model() const { return *model_; }
  std::int64_t step_count() const { return step_; }
  const TrainConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const NameEmbedder& embedder() const { return *embedder_; }

 private:
  void log(const StepStats& s) const;

  const Dataset* dataset_;
  TrainConfig config_;
  std::unique_ptr<Denoiser<float>> model_;
  ParamStore<float> adam_m_, adam_v_;
  NoiseSchedule schedule_;
  std::shared_ptr<const NameEmbedder> embedder_;
  BalancedSampler sampler_;
  Rng rng_;
  std::int64_t step_ = 0;
  StepStats last_;
};

}  // namespace topodiff
