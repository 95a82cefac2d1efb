#include "fixtures.hpp"
#include "test_util.hpp"

#include "topodiff/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

namespace fs = std::filesystem;
using namespace topodiff;
using namespace topodiff::testing;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("topodiff_training_" + name);
  fs::remove_all(p);
  return p;
}

DenoiserConfig small_model() {
  DenoiserConfig c = tiny_config();
  c.diffusion_steps = 20;
  return c;
}

TrainConfig small_train() {
  TrainConfig c;
  c.batch_size = 2;
  c.crop_frames = 16;
  c.learning_rate = 1e-3;
  c.total_steps = 4;
  c.name_embedder = "hashed:16";
  c.log_every = 0;
  c.seed = 3;
  return c;
}

/// World positions after decoding a raw feature tensor and running FK.
std::vector<std::vector<Vec3>> decoded_world(const Skeleton& s, const MotionTensor& x) {
  const auto dec = clip_from_features(x);
  EXPECT_TRUE(dec.degenerate.empty());
  return forward_kinematics(s.topology, s.rest, dec.motion).positions;
}

MotionTensor walk_tensor(const Skeleton& s, int frames) {
  return scripted_clip(s, {Action::kWalk, Action::kArmsUp}, frames / 2);
}

}  // namespace

TEST(BalancedSampler, ProbabilitiesFollowFormula) {
  const BalancedSampler s({3, 7, 1});
  double total = 0.0;
  for (int t = 0; t < 3; ++t) {
    const int n = std::vector<int>{3, 7, 1}[t];
    for (int c = 0; c < n; ++c) {
      EXPECT_DOUBLE_EQ(s.probability(t, c), 1.0 / (n * 3.0));
      total += s.probability(t, c);
    }
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(s.probability(1, 7), 0.0);
  EXPECT_EQ(s.probability(3, 0), 0.0);
}

TEST(BalancedSampler, EmpiricalFrequenciesMatch) {
  const std::vector<int> counts{2, 5, 10};
  const BalancedSampler s(counts);
  Rng rng(11);
  const int draws = 200000;
  std::map<std::pair<int, int>, int> hits;
  for (int i = 0; i < draws; ++i) ++hits[s.draw(rng)];
  for (int t = 0; t < 3; ++t) {
    for (int c = 0; c < counts[t]; ++c) {
      const double p = s.probability(t, c);
      const double sigma = std::sqrt(p * (1.0 - p) / draws);
      EXPECT_NEAR(hits[std::make_pair(t, c)] / static_cast<double>(draws), p, 5.0 * sigma)
          << "type " << t << " clip " << c;
    }
  }
}

TEST(BalancedSampler, RejectsEmptyTypes) {
  EXPECT_THROW(BalancedSampler({}), Error);
  EXPECT_THROW(BalancedSampler({2, 0}), Error);
}

TEST(Augmentation, ZeroProbabilityIsIdentity) {
  const Skeleton s = biped_skeleton();
  const MotionTensor x = walk_tensor(s, 20);
  const NormalizationStats st = compute_stats(std::span<const MotionTensor>(&x, 1));
  TrainConfig c;
  c.remove_prob = 0.0;
  c.add_prob = 0.0;
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const AugmentedSample a = augment_sample(s, st, x, rng, c);
    EXPECT_FALSE(a.removed);
    EXPECT_FALSE(a.added);
    EXPECT_EQ(a.skeleton.topology.parent, s.topology.parent);
    EXPECT_EQ(a.skeleton.names, s.names);
    EXPECT_EQ(a.motion.data, x.data);
    EXPECT_EQ(a.stats.mean, st.mean);
    EXPECT_EQ(a.stats.std, st.std);
  }
}

TEST(Augmentation, RemovalPreservesForwardKinematics) {
  Rng rng(21);
  for (const Skeleton& s : {biped_skeleton(), quadruped_skeleton()}) {
    const MotionTensor x = walk_tensor(s, 24);
    const auto world = decoded_world(s, x);
    for (int trial = 0; trial < 10; ++trial) {
      const double frac = rng.uniform(0.1, 0.3);
      const AugmentResult e = augment_remove(s, rng, frac);
      ASSERT_FALSE(e.skipped);
      EXPECT_EQ(e.skeleton.joint_count() + e.removed, s.joint_count());
      const MotionTensor y = lift_motion(x, e);
      const auto lifted = decoded_world(e.skeleton, y);
      for (int f = 0; f < x.frames; ++f) {
        for (int j = 0; j < e.skeleton.joint_count(); ++j) {
          const int o = e.new_to_old[j];
          ASSERT_GE(o, 0);
          EXPECT_LT((lifted[f][j] - world[f][o]).norm(), 1e-5)
              << "frame " << f << " joint " << s.names[o];
        }
      }
    }
  }
}

TEST(Augmentation, SubdivisionPreservesForwardKinematics) {
  Rng rng(22);
  for (const Skeleton& s : {biped_skeleton(), quadruped_skeleton()}) {
    const MotionTensor x = walk_tensor(s, 24);
    const auto world = decoded_world(s, x);
    for (int trial = 0; trial < 10; ++trial) {
      const AugmentResult e = augment_add(s, rng);
      ASSERT_FALSE(e.skipped);
      ASSERT_EQ(e.skeleton.joint_count(), s.joint_count() + 1);
      const MotionTensor y = lift_motion(x, e);
      const auto lifted = decoded_world(e.skeleton, y);
      const int ins = e.inserted;
      ASSERT_GT(ins, 0);
      for (int f = 0; f < x.frames; ++f) {
        for (int j = 0; j < e.skeleton.joint_count(); ++j) {
          const int o = e.new_to_old[j];
          if (o < 0) continue;
          EXPECT_LT((lifted[f][j] - world[f][o]).norm(), 1e-5);
        }
        // The inserted joint lies halfway along its bone.
        const int p = e.skeleton.topology.parent[ins];
        int c = -1;
        for (int j = 0; j < e.skeleton.joint_count(); ++j) {
          if (e.skeleton.topology.parent[j] == ins) c = j;
        }
        ASSERT_GE(c, 0);
        EXPECT_LT((lifted[f][ins] - 0.5 * (lifted[f][p] + lifted[f][c])).norm(), 1e-5);
        EXPECT_EQ(y.at(f, ins, kContactOffset), 0.0);
      }
    }
  }
}

TEST(Augmentation, SampleKeepsStatsConsistent) {
  const Skeleton s = quadruped_skeleton();
  const MotionTensor x = walk_tensor(s, 20);
  const NormalizationStats st = compute_stats(std::span<const MotionTensor>(&x, 1));
  TrainConfig c;
  c.remove_prob = 1.0;
  c.add_prob = 1.0;
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    const AugmentedSample a = augment_sample(s, st, x, rng, c);
    EXPECT_TRUE(a.removed);
    EXPECT_TRUE(a.added);
    EXPECT_EQ(a.stats.joint_count(), a.skeleton.joint_count());
    EXPECT_EQ(a.motion.joints, a.skeleton.joint_count());
    EXPECT_EQ(a.motion.frames, x.frames);
  }
  // A skeleton at the joint limit is never subdivided.
  c.remove_prob = 0.0;
  const AugmentedSample full = augment_sample(s, st, x, rng, c, s.joint_count());
  EXPECT_FALSE(full.added);
  EXPECT_EQ(full.skeleton.joint_count(), s.joint_count());
}

TEST(CropOrPad, CropsAndPads) {
  Rng rng(4);
  const MotionTensor x = random_tensor(rng, 10, 3);
  const MotionTensor c = crop_or_pad(x, 2, 6);
  EXPECT_EQ(c.frames, 6);
  EXPECT_EQ(c.crop_index, 2);
  EXPECT_EQ(c.data, x.data.middleRows(2 * 3, 6 * 3));
  const MotionTensor p = crop_or_pad(x, 0, 14);
  EXPECT_EQ(p.frames, 14);
  EXPECT_EQ(p.valid_frame_count(), 10);
  for (int f = 10; f < 14; ++f) {
    EXPECT_EQ(p.frame_mask[f], 0);
    EXPECT_TRUE(p.data.middleRows(f * 3, 3).isZero(0.0));
  }
  EXPECT_THROW(crop_or_pad(x, 1, 14), Error);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = small_train();
  c.lambda_rot = 0.25;
  c.schedule = "linear";
  c.lr_decay = "cosine";
  c.out_dir = "somewhere";
  const TrainConfig r = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(train_config_to_json(r), train_config_to_json(c));
  EXPECT_EQ(r.lambda_rot, 0.25);
  EXPECT_EQ(r.schedule, "linear");
  EXPECT_EQ(r.lr_decay, "cosine");

  auto bad = [](auto edit) {
    TrainConfig t;
    edit(t);
    EXPECT_THROW(t.validate(), Error);
  };
  bad([](TrainConfig& t) { t.batch_size = 0; });
  bad([](TrainConfig& t) { t.learning_rate = -1.0; });
  bad([](TrainConfig& t) { t.remove_prob = 1.5; });
  bad([](TrainConfig& t) { t.remove_fraction_max = 0.5; });
  bad([](TrainConfig& t) { t.schedule = "quadratic"; });
  bad([](TrainConfig& t) { t.lr_decay = "step"; });
}

TEST(TrainConfig, CosineDecay) {
  TrainConfig c;
  c.learning_rate = 2e-3;
  c.total_steps = 100;
  EXPECT_EQ(learning_rate_at(c, 1), 2e-3);
  EXPECT_EQ(learning_rate_at(c, 100), 2e-3);
  c.lr_decay = "cosine";
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 1), 2e-3);
  EXPECT_NEAR(learning_rate_at(c, 51), 1e-3, 1e-15);
  EXPECT_NEAR(learning_rate_at(c, 101), 0.0, 1e-15);
  for (int s = 2; s <= 100; ++s) EXPECT_LT(learning_rate_at(c, s), learning_rate_at(c, s - 1));
}

TEST(Trainer, ZeroLearningRateKeepsParameters) {
  const Dataset ds = toy_dataset();
  TrainConfig c = small_train();
  c.learning_rate = 0.0;
  Trainer t(ds, small_model(), c);
  const auto before = t.model().params().values;
  for (int i = 0; i < 3; ++i) {
    const StepStats s = t.step();
    EXPECT_TRUE(std::isfinite(s.loss));
    EXPECT_GT(s.grad_norm, 0.0);
  }
  const auto& after = t.model().params().values;
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
  EXPECT_EQ(t.model().trained_steps, 3);
}

TEST(Trainer, ResumeIsBitwiseIdentical) {
  const Dataset ds = toy_dataset();
  TrainConfig c = small_train();
  c.total_steps = 6;
  Trainer straight(ds, small_model(), c);
  straight.run();

  const fs::path dir = scratch("resume");
  TrainConfig first = c;
  first.total_steps = 3;
  Trainer a(ds, small_model(), first);
  a.run();
  a.save_checkpoint((dir / "ckpt").string());
  Trainer b = Trainer::resume(ds, (dir / "ckpt").string(), c);
  EXPECT_EQ(b.step_count(), 3);
  b.run();
  EXPECT_EQ(b.step_count(), 6);
  const auto& p = straight.model().params().values;
  const auto& q = b.model().params().values;
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], q[i]) << i;
  fs::remove_all(dir);
}

TEST(Trainer, CheckpointRoundTrip) {
  const Dataset ds = toy_dataset();
  const fs::path dir = scratch("ckpt");
  TrainConfig c = small_train();
  c.out_dir = dir.string();
  c.log_every = 1;
  Trainer t(ds, small_model(), c);
  t.run();
  ASSERT_TRUE(fs::exists(dir / "latest"));
  ASSERT_TRUE(fs::exists(dir / "metrics.jsonl"));
  const ModelBundle b = load_checkpoint(dir.string());
  EXPECT_EQ(b.model->trained_steps, c.total_steps);
  EXPECT_EQ(denoiser_config_to_json(b.model->config()), denoiser_config_to_json(small_model()));
  EXPECT_EQ(b.embedder->dim(), 16);
  EXPECT_EQ(b.schedule.steps, 20);
  const auto& p = t.model().params().values;
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], b.model->params().values[i]);

  std::ifstream log(dir / "metrics.jsonl");
  int lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  EXPECT_EQ(lines, c.total_steps);

  EXPECT_THROW(load_checkpoint((dir / "nothing").string()), Error);
  Dataset other = toy_dataset();
  other.entries.pop_back();
  EXPECT_THROW(Trainer::resume(other, dir.string(), c), Error);
  fs::remove_all(dir);
}

TEST(Trainer, NonFiniteLossStopsTraining) {
  Dataset ds = toy_dataset();
  Skeleton s = ds.entries[0].skeleton;
  MotionTensor bad = ds.entries[0].clips[0];
  bad.at(3, 2, 0) = std::numeric_limits<double>::quiet_NaN();
  Dataset broken;
  broken.add("broken", s, {bad}, {"nan_clip"});
  const fs::path dir = scratch("diverge");
  TrainConfig c = small_train();
  c.out_dir = dir.string();
  Trainer t(broken, small_model(), c);
  EXPECT_THROW(t.run(), TrainingDivergedError);
  EXPECT_TRUE(fs::exists(dir / "divergence.json"));
  fs::remove_all(dir);
}

TEST(Trainer, RejectsMismatchedEmbedder) {
  const Dataset ds = toy_dataset();
  TrainConfig c = small_train();
  c.name_embedder = "hashed:32";
  EXPECT_THROW(Trainer(ds, small_model(), c), Error);
  DenoiserConfig m = small_model();
  m.max_joints = 10;
  EXPECT_THROW(Trainer(ds, m, small_train()), Error);
}
