#include "fixtures.hpp"

#include "test_util.hpp"
#include "topodiff/io_util.hpp"
#include "topodiff/preprocess.hpp"
#include "topodiff/rotation.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <unistd.h>

namespace fs = std::filesystem;

namespace topodiff::testing {
namespace {

struct JointSpec {
  const char* name;
  const char* parent;
  Vec3 offset;
};

Skeleton build(const std::vector<JointSpec>& spec, const std::vector<std::string>& feet_names) {
  std::vector<int> parents;
  std::vector<int> feet;
  auto index_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < spec.size(); ++i) {
      if (name == spec[i].name) return static_cast<int>(i);
    }
    throw Error("fixture: unknown joint " + name);
  };
  for (const auto& j : spec) parents.push_back(j.parent ? index_of(j.parent) : kNoParent);
  for (const auto& f : feet_names) feet.push_back(index_of(f));
  BuiltTopology built = build_topology(parents, feet);
  const int n = static_cast<int>(spec.size());
  RestPose rest;
  rest.offsets.assign(n, Vec3::Zero());
  std::vector<std::string> names(n);
  for (int i = 0; i < n; ++i) {
    rest.offsets[built.old_to_new[i]] = spec[i].offset;
    names[built.old_to_new[i]] = spec[i].name;
  }
  return make_skeleton(built.topology, rest, names);
}

int joint(const Skeleton& s, const std::string& name) {
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    if (s.names[i] == name) return static_cast<int>(i);
  }
  throw Error("fixture: skeleton has no joint " + name);
}

Mat3 rx(double a) { return rotation_about(Vec3::UnitX(), a); }
Mat3 ry(double a) { return rotation_about(Vec3::UnitY(), a); }
Mat3 rz(double a) { return rotation_about(Vec3::UnitZ(), a); }

}  // namespace

Skeleton biped_skeleton() {
  return build({{"hips", nullptr, {0, 0, 0}},
                {"spine", "hips", {0, 0.15, 0}},
                {"chest", "spine", {0, 0.2, 0}},
                {"neck", "chest", {0, 0.2, 0}},
                {"head", "neck", {0, 0.12, 0}},
                {"left arm", "chest", {0.2, 0.1, 0}},
                {"left forearm", "left arm", {0, -0.28, 0}},
                {"left hand", "left forearm", {0, -0.25, 0}},
                {"right arm", "chest", {-0.2, 0.1, 0}},
                {"right forearm", "right arm", {0, -0.28, 0}},
                {"right hand", "right forearm", {0, -0.25, 0}},
                {"left leg", "hips", {0.1, -0.05, 0}},
                {"left shin", "left leg", {0, -0.42, 0}},
                {"left foot", "left shin", {0, -0.42, 0}},
                {"right leg", "hips", {-0.1, -0.05, 0}},
                {"right shin", "right leg", {0, -0.42, 0}},
                {"right foot", "right shin", {0, -0.42, 0}}},
               {"left foot", "right foot"});
}

Skeleton quadruped_skeleton() {
  return build({{"hips", nullptr, {0, 0, 0}},
                {"spine", "hips", {0, 0, 0.25}},
                {"chest", "spine", {0, 0, 0.25}},
                {"neck", "chest", {0, 0.15, 0.15}},
                {"head", "neck", {0, 0.05, 0.15}},
                {"tail", "hips", {0, 0.05, -0.2}},
                {"tail tip", "tail", {0, 0, -0.2}},
                {"left arm", "chest", {0.12, -0.05, 0}},
                {"left forearm", "left arm", {0, -0.25, 0}},
                {"left hand", "left forearm", {0, -0.25, 0}},
                {"right arm", "chest", {-0.12, -0.05, 0}},
                {"right forearm", "right arm", {0, -0.25, 0}},
                {"right hand", "right forearm", {0, -0.25, 0}},
                {"left leg", "hips", {0.12, -0.05, 0}},
                {"left shin", "left leg", {0, -0.25, 0}},
                {"left foot", "left shin", {0, -0.25, 0}},
                {"right leg", "hips", {-0.12, -0.05, 0}},
                {"right shin", "right leg", {0, -0.25, 0}},
                {"right foot", "right shin", {0, -0.25, 0}}},
               {"left hand", "right hand", "left foot", "right foot"});
}

JointMotion scripted_action(const Skeleton& s, Action action, int frames) {
  const int n = s.topology.joint_count();
  JointMotion m = JointMotion::identity(frames, n);
  const double pi = std::numbers::pi;
  auto set = [&](int f, const char* name, const Mat3& r) { m.rotations[f][joint(s, name)] = r; };
  for (int f = 0; f < frames; ++f) {
    const double ph = 2.0 * pi * f / 30.0;
    const double sn = std::sin(ph);
    switch (action) {
      case Action::kWalk:
        m.root_position[f] = Vec3(0, 0.92 + 0.02 * std::cos(2 * ph), 0.035 * f);
        set(f, "left leg", rx(0.5 * sn));
        set(f, "right leg", rx(-0.5 * sn));
        set(f, "left shin", rx(0.7 * std::max(0.0, sn)));
        set(f, "right shin", rx(0.7 * std::max(0.0, -sn)));
        set(f, "left arm", rx(-0.4 * sn));
        set(f, "right arm", rx(0.4 * sn));
        set(f, "left forearm", rx(-0.3));
        set(f, "right forearm", rx(-0.3));
        set(f, "spine", ry(0.1 * sn));
        break;
      case Action::kCrouch:
        m.root_position[f] = Vec3(0, 0.62 + 0.03 * sn, 0);
        set(f, "left leg", rx(-1.1 - 0.1 * sn));
        set(f, "right leg", rx(-1.1 - 0.1 * sn));
        set(f, "left shin", rx(2.0 + 0.2 * sn));
        set(f, "right shin", rx(2.0 + 0.2 * sn));
        set(f, "left foot", rx(-0.9));
        set(f, "right foot", rx(-0.9));
        set(f, "spine", rx(0.45));
        set(f, "left arm", rx(-1.3));
        set(f, "right arm", rx(-1.3));
        set(f, "left forearm", rx(-0.4));
        set(f, "right forearm", rx(-0.4));
        break;
      case Action::kArmsUp:
        m.root_position[f] = Vec3(0, 0.92, 0);
        set(f, "left arm", rz(2.8 + 0.25 * sn));
        set(f, "right arm", rz(-2.8 - 0.25 * sn));
        set(f, "left forearm", rz(0.3 * sn));
        set(f, "right forearm", rz(-0.3 * sn));
        set(f, "head", rx(0.2 * sn));
        set(f, "spine", rz(0.1 * sn));
        break;
      case Action::kTurn: {
        const double s2 = std::sin(2 * ph);
        m.root_position[f] = Vec3(0, 0.92, 0);
        m.rotations[f][0] = ry(0.06 * f);
        set(f, "left leg", rx(-0.35 * std::max(0.0, s2)));
        set(f, "right leg", rx(-0.35 * std::max(0.0, -s2)));
        set(f, "left shin", rx(0.6 * std::max(0.0, s2)));
        set(f, "right shin", rx(0.6 * std::max(0.0, -s2)));
        set(f, "left arm", rz(0.3));
        set(f, "right arm", rz(-0.3));
        break;
      }
      case Action::kTrot: {
        const double q = std::sin(2.0 * pi * f / 24.0);
        m.root_position[f] = Vec3(0, 0.55 + 0.015 * std::cos(4.0 * pi * f / 24.0), 0.03 * f);
        set(f, "left arm", rx(0.45 * q));
        set(f, "right leg", rx(0.45 * q));
        set(f, "right arm", rx(-0.45 * q));
        set(f, "left leg", rx(-0.45 * q));
        set(f, "left forearm", rx(0.5 * std::max(0.0, q)));
        set(f, "right shin", rx(0.5 * std::max(0.0, q)));
        set(f, "right forearm", rx(0.5 * std::max(0.0, -q)));
        set(f, "left shin", rx(0.5 * std::max(0.0, -q)));
        set(f, "tail", ry(0.5 * q));
        set(f, "head", rx(0.1 * std::sin(4.0 * pi * f / 24.0)));
        break;
      }
      case Action::kSit:
        m.root_position[f] = Vec3(0, 0.4, 0);
        m.rotations[f][0] = rx(-0.6);
        set(f, "left leg", rx(-0.3));
        set(f, "right leg", rx(-0.3));
        set(f, "left shin", rx(-1.6));
        set(f, "right shin", rx(-1.6));
        set(f, "left arm", rx(0.6));
        set(f, "right arm", rx(0.6));
        set(f, "neck", rx(0.3));
        set(f, "head", ry(0.6 * std::sin(ph / 2.0)));
        set(f, "tail", rx(0.8));
        set(f, "tail tip", ry(0.4 * sn));
        break;
    }
  }
  return m;
}

MotionTensor scripted_clip(const Skeleton& skeleton, const std::vector<Action>& actions,
                           int frames_each) {
  JointMotion all;
  for (Action a : actions) {
    JointMotion part = scripted_action(skeleton, a, frames_each);
    // Continue from where the previous action left the root in the ground plane.
    Vec3 shift = Vec3::Zero();
    if (!all.root_position.empty()) {
      shift = all.root_position.back() - part.root_position.front();
      shift.y() = 0.0;
    }
    for (int f = 0; f < frames_each; ++f) {
      all.root_position.push_back(part.root_position[f] + shift);
      all.rotations.push_back(part.rotations[f]);
    }
  }
  const ContactLabels contacts =
      clip_contacts(skeleton.topology, skeleton.rest, all, PreprocessConfig{});
  return features_from_clip(skeleton.topology, skeleton.rest, all, contacts);
}

std::vector<int> toy_boundaries() { return {30, 60}; }

Dataset toy_dataset() {
  Dataset d;
  const Skeleton biped = biped_skeleton();
  const Skeleton quad = quadruped_skeleton();
  d.add("biped", biped,
        {scripted_clip(biped, {Action::kWalk, Action::kCrouch, Action::kArmsUp}, 30),
         scripted_clip(biped, {Action::kTurn}, 40)},
        {"three_actions", "turn"}, "biped");
  d.add("quadruped", quad,
        {scripted_clip(quad, {Action::kTrot}, 40), scripted_clip(quad, {Action::kSit}, 40)},
        {"trot", "sit"}, "quadruped");
  return d;
}

DenoiserConfig overfit_model_config() {
  DenoiserConfig c;
  c.layers = 2;
  c.latent = 64;
  c.heads = 4;
  c.window = 31;
  c.name_dim = 64;
  c.diffusion_steps = 100;
  return c;
}

TrainConfig overfit_train_config() {
  TrainConfig t;
  t.batch_size = 4;
  t.crop_frames = 40;
  t.learning_rate = 1e-3;
  t.lr_decay = "cosine";
  t.lambda_rot = 1e-3;
  t.remove_prob = 0.0;
  t.add_prob = 0.0;
  t.total_steps = 5000;
  t.grad_clip = 1.0;
  t.seed = 7;
  t.log_every = 0;
  return t;
}

namespace {

OverfitRun read_summary(const fs::path& dir) {
  const auto j = nlohmann::json::parse(read_text_file((dir / "summary.json").string()));
  OverfitRun r;
  r.checkpoint_dir = (dir / "checkpoint").string();
  r.steps = j.at("steps").get<std::int64_t>();
  r.steps_to_target = j.at("steps_to_target").get<std::int64_t>();
  r.final_simple = j.at("final_simple").get<double>();
  r.seconds = j.at("seconds").get<double>();
  return r;
}

}  // namespace

OverfitRun overfit_model() {
  const Dataset data = toy_dataset();
  const DenoiserConfig mc = overfit_model_config();
  const TrainConfig tc = overfit_train_config();
  const std::string key = denoiser_config_to_json(mc) + train_config_to_json(tc) +
                          hex64(data.fingerprint());
  const fs::path dir = fs::path(cache_dir()) / ("overfit_" + hex64(fnv1a(key)));
  if (fs::exists(dir / "summary.json")) return read_summary(dir);

  const fs::path tmp = dir.string() + ".tmp" + std::to_string(::getpid());
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  Trainer trainer(data, mc, tc);
  std::deque<double> recent;
  double sum = 0.0;
  std::int64_t reached = -1;
  const auto t0 = std::chrono::steady_clock::now();
  trainer.run([&](const StepStats& s) {
    recent.push_back(s.simple);
    sum += s.simple;
    if (static_cast<int>(recent.size()) > kOverfitLossWindow) {
      sum -= recent.front();
      recent.pop_front();
    }
    if (reached < 0 && static_cast<int>(recent.size()) == kOverfitLossWindow &&
        sum / kOverfitLossWindow < kOverfitSimpleTarget) {
      reached = s.step;
    }
  });
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  trainer.save_checkpoint((tmp / "checkpoint").string());
  nlohmann::json summary{{"steps", trainer.step_count()},
                         {"steps_to_target", reached},
                         {"final_simple", sum / static_cast<double>(recent.size())},
                         {"seconds", seconds}};
  write_file_atomic((tmp / "summary.json").string(), summary.dump(2));
  std::error_code ec;
  fs::rename(tmp, dir, ec);
  if (ec) fs::remove_all(tmp);  // another process won the race
  return read_summary(dir);
}

}  // namespace topodiff::testing
