#include "topodiff/training.hpp"

#include "topodiff/io_util.hpp"
#include "topodiff/rotation.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

namespace topodiff {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("train config: batch size must be at least 1");
  if (crop_frames < 2) throw Error("train config: crop length must be at least 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error("train config: learning rate must be finite and non-negative");
  }
  if (!(lambda_rot >= 0.0) || !std::isfinite(lambda_rot)) {
    throw Error("train config: lambda_rot must be finite and non-negative");
  }
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(remove_prob) || !prob(add_prob)) {
    throw Error("train config: augmentation probabilities must lie in [0, 1]");
  }
  if (remove_fraction_min < 0.1 - 1e-12 || remove_fraction_max > 0.3 + 1e-12 ||
      remove_fraction_min > remove_fraction_max) {
    throw Error("train config: removal fractions must satisfy 0.1 <= min <= max <= 0.3");
  }
  if (total_steps < 0 || checkpoint_every < 0 || log_every < 0) {
    throw Error("train config: step counts must be non-negative");
  }
  if (lr_decay != "constant" && lr_decay != "cosine") {
    throw Error("train config: lr_decay must be constant or cosine, got '" + lr_decay + "'");
  }
  schedule_kind_from_name(schedule);
}

double learning_rate_at(const TrainConfig& c, std::int64_t step) {
  if (c.lr_decay != "cosine" || c.total_steps <= 0) return c.learning_rate;
  const double u = std::min(1.0, static_cast<double>(step - 1) / static_cast<double>(c.total_steps));
  return 0.5 * c.learning_rate * (1.0 + std::cos(std::numbers::pi * u));
}

std::string train_config_to_json(const TrainConfig& c) {
  json j{{"batch_size", c.batch_size},
         {"crop_frames", c.crop_frames},
         {"learning_rate", c.learning_rate},
         {"lr_decay", c.lr_decay},
         {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2},
         {"adam_eps", c.adam_eps},
         {"grad_clip", c.grad_clip},
         {"total_steps", c.total_steps},
         {"lambda_rot", c.lambda_rot},
         {"remove_prob", c.remove_prob},
         {"add_prob", c.add_prob},
         {"remove_fraction_min", c.remove_fraction_min},
         {"remove_fraction_max", c.remove_fraction_max},
         {"seed", c.seed},
         {"schedule", c.schedule},
         {"name_embedder", c.name_embedder},
         {"checkpoint_every", c.checkpoint_every},
         {"log_every", c.log_every},
         {"out_dir", c.out_dir}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig c) {
  const auto j = json::parse(text);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.crop_frames = j.value("crop_frames", c.crop_frames);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.lambda_rot = j.value("lambda_rot", c.lambda_rot);
  c.remove_prob = j.value("remove_prob", c.remove_prob);
  c.add_prob = j.value("add_prob", c.add_prob);
  c.remove_fraction_min = j.value("remove_fraction_min", c.remove_fraction_min);
  c.remove_fraction_max = j.value("remove_fraction_max", c.remove_fraction_max);
  c.seed = j.value("seed", c.seed);
  c.schedule = j.value("schedule", c.schedule);
  c.name_embedder = j.value("name_embedder", c.name_embedder);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

BalancedSampler::BalancedSampler(std::vector<int> clip_counts) : counts_(std::move(clip_counts)) {
  if (counts_.empty()) throw Error("balanced sampler: dataset is empty");
  for (int n : counts_) {
    if (n < 1) throw Error("balanced sampler: every skeleton type needs at least one clip");
  }
}

std::pair<int, int> BalancedSampler::draw(Rng& rng) const {
  const int type = rng.uniform_int(0, type_count() - 1);
  return {type, rng.uniform_int(0, counts_[type] - 1)};
}

double BalancedSampler::probability(int type, int clip) const {
  if (type < 0 || type >= type_count() || clip < 0 || clip >= counts_[type]) return 0.0;
  return 1.0 / (static_cast<double>(counts_[type]) * type_count());
}

MotionTensor lift_motion(const MotionTensor& motion, const AugmentResult& edit) {
  const Topology& topo = edit.skeleton.topology;
  const int J = topo.joint_count();
  if (static_cast<int>(edit.new_to_old.size()) != J) {
    throw Error("lift_motion: index map does not match the edited skeleton");
  }
  const auto children = topo.children();
  MotionTensor out = MotionTensor::zeros(motion.frames, J);
  out.frame_mask = motion.frame_mask;
  out.crop_index = motion.crop_index;
  for (int nj = 0; nj < J; ++nj) {
    const int old = edit.new_to_old[nj];
    if (old >= 0) {
      out.joint_mask[nj] = motion.joint_mask[old];
      for (int f = 0; f < motion.frames; ++f) {
        out.data.row(out.row(f, nj)) = motion.data.row(motion.row(f, old));
      }
      continue;
    }
    const int p_new = topo.parent[nj];
    if (p_new == kNoParent || children[nj].size() != 1) {
      throw Error("lift_motion: inserted joint must sit inside an edge");
    }
    const int p_old = edit.new_to_old[p_new];
    const int c_old = edit.new_to_old[children[nj][0]];
    const bool parent_is_root = topo.parent[p_new] == kNoParent;
    for (int f = 0; f < motion.frames; ++f) {
      auto tok = out.data.row(out.row(f, nj));
      const auto pt = motion.data.row(motion.row(f, p_old));
      const auto ct = motion.data.row(motion.row(f, c_old));
      const Eigen::RowVector3d parent_rel =
          parent_is_root ? Eigen::RowVector3d::Zero() : Eigen::RowVector3d(pt.segment<3>(kPosOffset));
      tok.segment<3>(kPosOffset) = 0.5 * (parent_rel + ct.segment<3>(kPosOffset));
      tok.segment<6>(kRotOffset) << 1, 0, 0, 0, 1, 0;
      tok.segment<3>(kVelOffset) = 0.5 * (pt.segment<3>(kVelOffset) + ct.segment<3>(kVelOffset));
      tok(kContactOffset) = 0.0;
    }
  }
  out.apply_mask();
  return out;
}

AugmentedSample augment_sample(const Skeleton& skeleton, const NormalizationStats& stats,
                               const MotionTensor& motion, Rng& rng, const TrainConfig& config,
                               int max_joints) {
  AugmentedSample out{skeleton, stats, motion, false, false};
  if (config.remove_prob > 0.0 && rng.uniform() < config.remove_prob) {
    const double fraction = rng.uniform(config.remove_fraction_min, config.remove_fraction_max);
    AugmentResult r = augment_remove(out.skeleton, rng, fraction);
    if (!r.skipped) {
      out.motion = lift_motion(out.motion, r);
      out.stats = remap_stats(out.stats, r.new_to_old, r.skeleton.topology);
      out.skeleton = std::move(r.skeleton);
      out.removed = true;
    }
  }
  if (config.add_prob > 0.0 && rng.uniform() < config.add_prob &&
      out.skeleton.joint_count() >= 2 && out.skeleton.joint_count() < max_joints) {
    AugmentResult r = augment_add(out.skeleton, rng);
    out.motion = lift_motion(out.motion, r);
    out.stats = remap_stats(out.stats, r.new_to_old, r.skeleton.topology);
    out.skeleton = std::move(r.skeleton);
    out.added = true;
  }
  return out;
}

MotionTensor crop_or_pad(const MotionTensor& motion, int start, int length) {
  if (motion.frames >= length) return crop_window(motion, start, length);
  if (start != 0) throw Error("crop_or_pad: short clips must start at frame 0");
  return pad(motion, length, motion.joints);
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointFormat = "topodiff-checkpoint";

json params_shape_table(const ParamStore<float>& p) {
  json t = json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    t.push_back({{"name", p.names[i]}, {"shape", {p.values[i].rows(), p.values[i].cols()}}});
  }
  return t;
}

json step_stats_json(const StepStats& s) {
  return {{"step", s.step}, {"loss", s.loss},   {"simple", s.simple},
          {"rot", s.rot},   {"grad_norm", s.grad_norm}};
}

fs::path resolve_checkpoint_dir(const std::string& dir) {
  const fs::path p(dir);
  if (fs::exists(p / "manifest.json")) return p;
  if (fs::exists(p / "latest")) {
    std::string name = read_text_file((p / "latest").string());
    while (!name.empty() && (name.back() == '\n' || name.back() == ' ')) name.pop_back();
    return p / name;
  }
  throw Error("no checkpoint found at '" + dir + "'");
}

}  // namespace

ModelBundle load_checkpoint(const std::string& dir) {
  const fs::path root = resolve_checkpoint_dir(dir);
  ModelBundle b;
  b.manifest = read_text_file((root / "manifest.json").string());
  const auto m = json::parse(b.manifest);
  if (m.value("format", "") != kCheckpointFormat) throw Error("not a checkpoint: " + dir);
  const auto cfg = denoiser_config_from_json(m.at("model_config").dump());
  auto params = params_from_bytes<float>(read_text_file((root / "params.bin").string()));
  b.model = std::make_unique<Denoiser<float>>(cfg, std::move(params));
  b.model->trained_steps = m.at("step").get<std::int64_t>();
  b.train_config = train_config_from_json(m.at("train_config").dump());
  b.schedule = NoiseSchedule::make(cfg.diffusion_steps, schedule_kind_from_name(m.at("schedule")));
  b.embedder = make_name_embedder(m.at("name_embedder").get<std::string>());
  if (b.embedder->dim() != cfg.name_dim) throw Error("checkpoint: name embedder dimension mismatch");
  return b;
}

Trainer::Trainer(const Dataset& dataset, const DenoiserConfig& model_config,
                 const TrainConfig& config)
    : dataset_(&dataset),
      config_(config),
      sampler_(dataset.clip_counts()),
      rng_(mix_seed(config.seed, 0x7472616eULL)) {
  config_.validate();
  model_ = std::make_unique<Denoiser<float>>(model_config, mix_seed(config.seed, 0x696e6974ULL));
  adam_m_ = model_->params().zeros_like();
  adam_v_ = model_->params().zeros_like();
  schedule_ = NoiseSchedule::make(model_config.diffusion_steps,
                                  schedule_kind_from_name(config_.schedule));
  embedder_ = make_name_embedder(config_.name_embedder);
  if (embedder_->dim() != model_config.name_dim) {
    throw Error("name embedder produces " + std::to_string(embedder_->dim()) +
                " values, model expects " + std::to_string(model_config.name_dim));
  }
  for (const auto& e : dataset.entries) {
    if (e.skeleton.joint_count() > model_config.max_joints) {
      throw Error("skeleton '" + e.id + "' exceeds the model's joint limit");
    }
    if (e.skeleton.d_max != model_config.d_max) {
      throw Error("skeleton '" + e.id + "' uses a different d_max than the model");
    }
  }
}

Trainer Trainer::resume(const Dataset& dataset, const std::string& checkpoint_dir,
                        const TrainConfig& config) {
  const fs::path root = resolve_checkpoint_dir(checkpoint_dir);
  const auto m = json::parse(read_text_file((root / "manifest.json").string()));
  if (m.value("format", "") != kCheckpointFormat) throw Error("not a checkpoint: " + checkpoint_dir);
  const auto model_cfg = denoiser_config_from_json(m.at("model_config").dump());
  Trainer t(dataset, model_cfg, config);
  const std::string fp = hex64(dataset.fingerprint());
  if (m.at("dataset").at("fingerprint").get<std::string>() != fp) {
    throw Error("checkpoint was trained on a different dataset");
  }
  t.model_ = std::make_unique<Denoiser<float>>(
      model_cfg, params_from_bytes<float>(read_text_file((root / "params.bin").string())));
  t.adam_m_ = params_from_bytes<float>(read_text_file((root / "adam_m.bin").string()));
  t.adam_v_ = params_from_bytes<float>(read_text_file((root / "adam_v.bin").string()));
  t.step_ = m.at("step").get<std::int64_t>();
  t.model_->trained_steps = t.step_;
  t.rng_.set_state(m.at("rng_state").get<std::string>());
  return t;
}

StepStats Trainer::step() {
  ParamStore<float> grads = model_->params().zeros_like();
  const LossWeights weights{config_.lambda_rot};
  StepStats s;
  struct Item {
    int type, clip, start, t;
  };
  std::vector<Item> items;
  for (int b = 0; b < config_.batch_size; ++b) {
    const auto [type, clip] = sampler_.draw(rng_);
    const SkeletonEntry& e = dataset_->entries[type];
    AugmentedSample a = augment_sample(e.skeleton, e.stats, e.clips[clip], rng_, config_,
                                       model_->config().max_joints);
    const int frames = a.motion.frames;
    const int start =
        frames > config_.crop_frames ? rng_.uniform_int(0, frames - config_.crop_frames) : 0;
    const MotionTensor x0 = normalize(crop_or_pad(a.motion, start, config_.crop_frames), a.stats);
    const ModelCondition cond = make_condition(a.skeleton, a.stats, *embedder_);
    const int t = rng_.uniform_int(1, schedule_.steps);
    const RowMatrixXd noise = draw_noise(x0, rng_);
    LossValue v;
    try {
      v = training_loss(*model_, x0, cond, &a.stats, schedule_, t, noise, weights, &grads);
    } catch (const DegenerateRotationError&) {
      // Only reachable with non-finite inputs or predictions.
      v.total = std::numeric_limits<double>::quiet_NaN();
    }
    items.push_back({type, clip, start, t});
    if (!std::isfinite(v.total)) {
      json dump{{"step", step_}, {"loss", v.total}, {"simple", v.simple}, {"rot", v.rot}};
      dump["batch"] = json::array();
      for (const auto& it : items) {
        dump["batch"].push_back({{"skeleton", dataset_->entries[it.type].id},
                                 {"clip", dataset_->entries[it.type].clip_names[it.clip]},
                                 {"start", it.start},
                                 {"t", it.t}});
      }
      if (!config_.out_dir.empty()) {
        write_file_atomic((fs::path(config_.out_dir) / "divergence.json").string(), dump.dump(2));
      }
      throw TrainingDivergedError("non-finite loss at step " + std::to_string(step_) + ": " +
                                  dump.dump());
    }
    s.loss += v.total;
    s.simple += v.simple;
    s.rot += v.rot;
  }
  const float inv_b = 1.0f / static_cast<float>(config_.batch_size);
  double norm2 = 0.0;
  for (auto& g : grads.values) {
    g *= inv_b;
    norm2 += static_cast<double>(g.squaredNorm());
  }
  s.grad_norm = std::sqrt(norm2);
  if (config_.grad_clip > 0.0 && s.grad_norm > config_.grad_clip) {
    const float f = static_cast<float>(config_.grad_clip / s.grad_norm);
    for (auto& g : grads.values) g *= f;
  }

  // Adam with bias correction.
  ++step_;
  const double b1 = config_.adam_beta1;
  const double b2 = config_.adam_beta2;
  const float c1 = static_cast<float>(1.0 - std::pow(b1, static_cast<double>(step_)));
  const float c2 = static_cast<float>(1.0 - std::pow(b2, static_cast<double>(step_)));
  const float lr = static_cast<float>(learning_rate_at(config_, step_));
  const float eps = static_cast<float>(config_.adam_eps);
  auto& P = model_->params().values;
  for (std::size_t i = 0; i < P.size(); ++i) {
    auto m = adam_m_.values[i].array();
    auto v = adam_v_.values[i].array();
    const auto g = grads.values[i].array();
    m = static_cast<float>(b1) * m + static_cast<float>(1.0 - b1) * g;
    v = static_cast<float>(b2) * v + static_cast<float>(1.0 - b2) * g * g;
    P[i].array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
  model_->trained_steps = step_;

  s.step = step_;
  s.loss /= config_.batch_size;
  s.simple /= config_.batch_size;
  s.rot /= config_.batch_size;
  last_ = s;
  return s;
}

void Trainer::log(const StepStats& s) const {
  if (config_.out_dir.empty()) return;
  fs::create_directories(config_.out_dir);
  std::ofstream f(fs::path(config_.out_dir) / "metrics.jsonl", std::ios::app);
  f << step_stats_json(s).dump() << "\n";
}

void Trainer::run(const std::function<void(const StepStats&)>& on_step) {
  while (step_ < config_.total_steps) {
    const StepStats s = step();
    if (config_.log_every > 0 && s.step % config_.log_every == 0) log(s);
    if (on_step) on_step(s);
    if (!config_.out_dir.empty() && config_.checkpoint_every > 0 &&
        s.step % config_.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%08lld", static_cast<long long>(s.step));
      save_checkpoint((fs::path(config_.out_dir) / "checkpoints" / name).string());
    }
  }
  if (!config_.out_dir.empty()) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%08lld", static_cast<long long>(step_));
    const fs::path dir = fs::path(config_.out_dir) / "checkpoints" / name;
    if (!fs::exists(dir / "manifest.json")) save_checkpoint(dir.string());
  }
}

void Trainer::save_checkpoint(const std::string& dir) const {
  const fs::path root(dir);
  write_file_atomic((root / "params.bin").string(), params_to_bytes(model_->params()));
  write_file_atomic((root / "adam_m.bin").string(), params_to_bytes(adam_m_));
  write_file_atomic((root / "adam_v.bin").string(), params_to_bytes(adam_v_));
  json m;
  m["format"] = kCheckpointFormat;
  m["version"] = 1;
  m["step"] = step_;
  m["model_config"] = json::parse(denoiser_config_to_json(model_->config()));
  m["train_config"] = json::parse(train_config_to_json(config_));
  m["schedule"] = config_.schedule;
  m["name_embedder"] = embedder_->describe();
  m["parameters"] = params_shape_table(model_->params());
  json ds;
  ds["fingerprint"] = hex64(dataset_->fingerprint());
  ds["stats"] = json::object();
  for (const auto& e : dataset_->entries) ds["stats"][e.id] = "stats/" + e.id + ".json";
  m["dataset"] = ds;
  m["metrics"] = step_stats_json(last_);
  m["rng_state"] = rng_.state();
  write_file_atomic((root / "manifest.json").string(), m.dump(2) + "\n");
  // A run directory points at its newest checkpoint.
  if (root.has_parent_path() && root.parent_path().filename() == "checkpoints") {
    write_file_atomic((root.parent_path().parent_path() / "latest").string(),
                      "checkpoints/" + root.filename().string() + "\n");
  }
}

}  // namespace topodiff
