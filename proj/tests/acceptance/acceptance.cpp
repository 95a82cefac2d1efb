// Acceptance checks, one PASS/FAIL line per criterion. Exits non-zero if any
// criterion fails.

#include "fixtures.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include "topodiff/analysis.hpp"
#include "topodiff/bvh.hpp"
#include "topodiff/diffusion.hpp"
#include "topodiff/metrics.hpp"
#include "topodiff/normalization.hpp"
#include "topodiff/preprocess.hpp"
#include "topodiff/rotation.hpp"
#include "topodiff/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>

using namespace topodiff;
using namespace topodiff::testing;

namespace {

// Tolerances and limits.
constexpr int kTrees = 200;
constexpr int kTreeMaxJoints = 16;
constexpr double kTreeSeconds = 10.0;
constexpr int kRotationTrials = 10000;
constexpr double kRoundTripTol = 1e-6;
constexpr double kHalfTurnTol = 1e-7;
constexpr double kRowSumTol = 1e-6;
constexpr double kDotProductTol = 1e-7;
constexpr int kAttentionWindow = 31;
constexpr int kEquivarianceCases = 20;
constexpr double kEquivarianceTol = 1e-5;
constexpr double kGradientTol = 1e-4;
constexpr double kGradientSeconds = 120.0;
constexpr std::int64_t kOverfitSteps = 5000;
constexpr double kOverfitSeconds = 1800.0;
constexpr double kCoverageMin = 90.0;
constexpr double kIntraDiffMax = 0.1;
constexpr int kSamplesPerClip = 8;
constexpr int kSamplerDraws = 100000;
constexpr double kSamplerSigmas = 3.0;
constexpr double kParityTol = 1e-9;
constexpr int kParityMaxWindows = 50;
constexpr double kPermutationRecovery = 0.95;
constexpr int kBoundaryTol = 2;
constexpr double kPreprocessTol = 1e-5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// 1
Outcome tree_oracles() {
  Rng rng(101);
  const auto t0 = std::chrono::steady_clock::now();
  int bad = 0;
  for (int trial = 0; trial < kTrees; ++trial) {
    const int n = rng.uniform_int(1, kTreeMaxJoints);
    const int d_max = rng.uniform_int(1, 8);
    const auto parents = random_parents(rng, n);
    const Topology t = build_topology(parents, {}).topology;
    if (compute_relations(t) != brute_relations(t.parent)) ++bad;
    if (compute_distances(t, d_max) != bfs_distances(t.parent, d_max)) ++bad;
  }
  const double sec = seconds_since(t0);
  return {bad == 0 && sec < kTreeSeconds,
          fmt("%.0f mismatches over 200 trees, %.2f s", bad, sec)};
}

// 2
Outcome rotations() {
  Rng rng(102);
  double worst = 0.0;
  for (int i = 0; i < kRotationTrials; ++i) {
    const Mat3 r = random_rotation(rng);
    const Mat3 back = gs_6d_to_matrix(matrix_to_6d(r));
    worst = std::max(worst, (back - r).norm());
    worst = std::max(worst, (back.transpose() * back - Mat3::Identity()).norm());
  }
  const std::vector<std::uint8_t> valid{1};
  RowMatrixXd id(1, 6), flip(1, 6), same(1, 6);
  id.row(0) = matrix_to_6d(Mat3::Identity()).transpose();
  flip.row(0) = matrix_to_6d(rotation_about(Vec3::UnitX(), std::numbers::pi)).transpose();
  same.row(0) = matrix_to_6d(random_rotation(rng)).transpose();
  const double zero = geodesic_loss(same, same, valid);
  const double half = geodesic_loss(id, flip, valid);
  const bool ok = worst < kRoundTripTol && zero == 0.0 &&
                  std::abs(half - std::numbers::pi) < kHalfTurnTol;
  return {ok, fmt("round trip %.2e, d(r,r) %.1e, d(I,180) - pi %.2e", worst, zero,
                  half - std::numbers::pi)};
}

// 3
Outcome attention() {
  Rng rng(103);
  auto cfg = tiny_config();
  cfg.window = kAttentionWindow;
  Denoiser<double> model(cfg, 7);
  const int N = 40, J = 5;
  const auto cond = random_condition(rng, J, cfg);
  MotionTensor x = random_tensor(rng, N, J);
  ForwardCache<double> cache;
  model.forward(x, 50, cond, &cache);
  double worst_sum = 0.0, leak = 0.0;
  const int half = kAttentionWindow / 2;
  for (int h = 0; h < cfg.heads; ++h) {
    for (int n = 0; n <= N; ++n) {
      const auto& p = cache.skeletal_probs(0, n, h);
      for (int i = 0; i < J; ++i) worst_sum = std::max(worst_sum, std::abs(p.row(i).sum() - 1.0));
    }
    for (int j = 0; j < J; ++j) {
      const auto& p = cache.temporal_probs(0, j, h);
      for (int i = 0; i <= N; ++i) {
        worst_sum = std::max(worst_sum, std::abs(p.row(i).sum() - 1.0));
        for (int k = 1; k <= N; ++k) {
          if (i >= 1 && std::abs(i - k) > half) leak = std::max(leak, std::abs(p(i, k)));
        }
      }
    }
  }
  // Zero skeletal tables leave scaled dot products.
  const int F = 8;
  Mat<double> q(J, F), k(J, F);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = rng.normal();
  Topology topo;
  topo.parent = {kNoParent, 0, 1, 0, 3};
  const Mat<double> z = Mat<double>::Zero(6, F);
  const auto logits = skeletal_logits<double>(q, k, compute_distances(topo, 5),
                                              compute_relations(topo), z, z, z, z,
                                              1.0 / std::sqrt(double(F)));
  const double dot = (logits - q * k.transpose() / std::sqrt(double(F))).cwiseAbs().maxCoeff();
  const bool ok = worst_sum < kRowSumTol && leak == 0.0 && dot < kDotProductTol;
  return {ok, fmt("row sum err %.1e, weight outside window %.1e, zero-bias err %.1e", worst_sum,
                  leak, dot)};
}

// 4
Outcome equivariance() {
  Rng rng(104);
  auto cfg = tiny_config();
  cfg.layers = 2;
  cfg.latent = 16;
  Denoiser<double> model(cfg, 17);
  double worst = 0.0;
  for (int c = 0; c < kEquivarianceCases; ++c) {
    const int J = rng.uniform_int(2, 12);
    const auto cond = random_condition(rng, J, cfg);
    MotionTensor x = random_tensor(rng, rng.uniform_int(3, 10), J);
    x.crop_index = rng.uniform_int(0, 20);
    const auto perm = random_permutation(rng, J);
    const int t = rng.uniform_int(1, cfg.diffusion_steps);
    const auto y = model.forward(x, t, cond);
    const auto yp = model.forward(permute_joints(x, perm), t, permute_condition(cond, perm));
    worst = std::max(worst, (yp.data - permute_joints(y, perm).data).cwiseAbs().maxCoeff());
  }
  return {worst < kEquivarianceTol, fmt("max deviation %.2e over 20 cases", worst)};
}

// 5
Outcome gradients() {
  Rng rng(105);
  const auto cfg = tiny_config();  // L=1, F=8
  Denoiser<double> model(cfg, 33);
  const auto cond = random_condition(rng, 3, cfg);
  const MotionTensor x0 = random_tensor(rng, 5, 3);
  NormalizationStats stats = unit_stats(3);
  const auto schedule = NoiseSchedule::make(cfg.diffusion_steps);
  const auto noise = draw_noise(x0, rng);
  const auto t0 = std::chrono::steady_clock::now();
  auto loss = [&](ParamStore<double>* g) {
    return training_loss(model, x0, cond, &stats, schedule, 25, noise, LossWeights{1.0}, g).total;
  };
  const double err = gradient_check(model, loss);
  const double sec = seconds_since(t0);
  return {err < kGradientTol && sec < kGradientSeconds,
          fmt("relative error %.2e, %.1f s", err, sec)};
}

struct OverfitContext {
  OverfitRun run;
  ModelBundle bundle;
  Dataset data;
};

const OverfitContext& overfit() {
  static const OverfitContext ctx = [] {
    OverfitContext c;
    c.run = overfit_model();
    c.bundle = load_checkpoint(c.run.checkpoint_dir);
    c.data = toy_dataset();
    return c;
  }();
  return ctx;
}

// 6
Outcome overfit_run() {
  const auto& ctx = overfit();
  const auto& b = ctx.bundle;
  std::string detail = fmt("loss < 0.05 at step %.0f, %.0f s;", double(ctx.run.steps_to_target),
                           ctx.run.seconds);
  bool ok = ctx.run.steps_to_target >= 0 && ctx.run.steps_to_target <= kOverfitSteps &&
            ctx.run.seconds < kOverfitSeconds;
  const MetricConfig mcfg;
  for (const auto& e : ctx.data.entries) {
    const ModelCondition cond = make_condition(e.skeleton, e.stats, *b.embedder);
    std::vector<MotionTensor> gt, gen;
    for (const auto& c : e.clips) gt.push_back(normalize(c, e.stats));
    for (std::size_t c = 0; c < e.clips.size(); ++c) {
      for (int r = 0; r < kSamplesPerClip; ++r) {
        SampleOptions o;
        o.frames = e.clips[c].frames;
        o.seed = 1000 + c * 100 + r;
        gen.push_back(normalize(sample(*b.model, b.schedule, cond, e.stats, o), e.stats));
      }
    }
    const SkeletonMetrics m = evaluate_skeleton(e.id, gt, gen, mcfg);
    ok = ok && m.coverage >= kCoverageMin && m.intra_diversity_diff <= kIntraDiffMax;
    detail += " " + e.id + fmt(" coverage %.1f intra_diff %.3f;", m.coverage, m.intra_diversity_diff);
  }
  return {ok, detail};
}

// 7
Outcome edit_contract() {
  const auto& ctx = overfit();
  const auto& b = ctx.bundle;
  const SkeletonEntry& e = ctx.data.find("biped");
  const ModelCondition cond = make_condition(e.skeleton, e.stats, *b.embedder);
  const MotionTensor& input = e.clips[1];
  const int N = input.frames, J = input.joints;
  SampleOptions o;
  o.frames = N;
  o.seed = 77;
  const MotionTensor free = sample(*b.model, b.schedule, cond, e.stats, o);
  const MotionTensor none = edit_sample(*b.model, b.schedule, cond, e.stats, input,
                                        std::vector<std::uint8_t>(N * J, 0), o);
  const MotionTensor all = edit_sample(*b.model, b.schedule, cond, e.stats, input,
                                       std::vector<std::uint8_t>(N * J, 1), o);
  std::vector<int> keep;
  for (int f = 0; f < 10; ++f) keep.push_back(f);
  for (int f = N - 10; f < N; ++f) keep.push_back(f);
  const MotionTensor mid =
      edit_sample(*b.model, b.schedule, cond, e.stats, input, frame_edit_mask(N, J, keep), o);
  bool kept = true;
  for (int f : keep) {
    for (int j = 0; j < J; ++j) kept &= mid.data.row(mid.row(f, j)) == input.data.row(input.row(f, j));
  }
  const bool empty_ok = none.data == free.data;
  const bool full_ok = all.data == input.data;
  return {empty_ok && full_ok && kept,
          std::string("empty mask = sample: ") + (empty_ok ? "yes" : "no") +
              ", full mask = input: " + (full_ok ? "yes" : "no") +
              ", fixed frames identical: " + (kept ? "yes" : "no")};
}

// 8
Outcome sampler() {
  const BalancedSampler s({2, 5, 10});
  Rng rng(108);
  std::vector<int> hits(3, 0);
  for (int i = 0; i < kSamplerDraws; ++i) ++hits[s.draw(rng).first];
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(p * (1 - p) / kSamplerDraws);
  double worst = 0.0;
  for (int h : hits) worst = std::max(worst, std::abs(double(h) / kSamplerDraws - p) / sigma);
  return {worst <= kSamplerSigmas, fmt("largest deviation %.2f sigma", worst)};
}

// 9
Outcome metric_parity() {
  Rng rng(109);
  auto set = [&](int motions, double offset) {
    std::vector<MotionTensor> out;
    for (int m = 0; m < motions; ++m) {
      const int frames = rng.uniform_int(7, 12);
      MotionTensor x = random_tensor(rng, frames, 4);
      x.data.array() += offset;
      x.joint_mask[rng.uniform_int(0, 3)] = 0;
      if (rng.uniform_int(0, 1)) x.frame_mask[frames - 1] = 0;
      x.apply_mask();
      out.push_back(x);
    }
    return out;
  };
  MetricConfig c;
  c.window = 5;
  double worst = 0.0;
  std::size_t most = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto gt = set(3, 0.0);
    const auto gen = set(4, rng.uniform(-0.3, 0.3));
    most = std::max({most, windows_of(gt, 5).size(), windows_of(gen, 5).size()});
    const double d[] = {
        coverage_threshold(extract_windows(gt, c), c) - oracle_tau(gt, 5),
        coverage(gt, gen, c) - oracle_coverage(gt, gen, 5),
        local_diversity(gen, gt, c) - oracle_local(gen, gt, 5),
        inter_diversity(gen, c) - oracle_inter(gen, 5),
        intra_diversity(gen, c) - oracle_intra(gen, 5),
        intra_diversity_diff(gen, gt, c) - std::abs(oracle_intra(gen, 5) - oracle_intra(gt, 5)),
    };
    for (double x : d) worst = std::max(worst, std::abs(x));
  }
  return {worst < kParityTol && most <= kParityMaxWindows,
          fmt("max difference %.1e, at most %.0f windows per set", worst, double(most))};
}

// 10
Outcome ood_order() {
  auto biped_like = [](int extra_spine, int finger) {
    std::vector<int> p{-1};
    auto chain = [&](int from, int len) {
      int prev = from;
      for (int k = 0; k < len; ++k) {
        p.push_back(prev);
        prev = static_cast<int>(p.size()) - 1;
      }
      return prev;
    };
    const int chest = chain(0, 2 + extra_spine);
    chain(chest, 2);                  // neck, head
    const int l = chain(chest, 3);    // left arm
    const int r = chain(chest, 3);    // right arm
    chain(0, 3);                      // left leg
    chain(0, 3);                      // right leg
    if (finger) {
      chain(l, 1);
      chain(r, 1);
    }
    Topology t;
    t.parent = p;
    return t;
  };
  std::vector<Topology> train;
  for (int i = 0; i < 6; ++i) train.push_back(biped_like(i % 3, i % 2));
  const Topology in = biped_like(1, 1);
  // Six legs and a tail.
  std::vector<int> moderate = biped_like(2, 0).parent;
  for (int leg = 0; leg < 2; ++leg) {
    int prev = 0;
    for (int k = 0; k < 3; ++k) {
      moderate.push_back(prev);
      prev = static_cast<int>(moderate.size()) - 1;
    }
  }
  for (int k = 0, prev = 0; k < 5; ++k) {
    moderate.push_back(prev);
    prev = static_cast<int>(moderate.size()) - 1;
  }
  Topology mod;
  mod.parent = moderate;
  Topology snake;
  snake.parent = {-1};
  for (int i = 1; i < 60; ++i) snake.parent.push_back(i - 1);
  const double a = ood_score(in, train).score;
  const double b = ood_score(mod, train).score;
  const double c = ood_score(snake, train).score;
  return {a < b && b < c, fmt("in %.3f < moderate %.3f < far %.3f", a, b, c)};
}

// 11
Outcome analysis_sanity() {
  const auto& ctx = overfit();
  const auto& b = ctx.bundle;
  bool identity = true;
  int recovered = 0, total = 0;
  Rng rng(111);
  for (const auto& e : ctx.data.entries) {
    const ModelCondition cond = make_condition(e.skeleton, e.stats, *b.embedder);
    for (const auto& clip : e.clips) {
      const MotionTensor x = normalize(clip, e.stats);
      const auto self = spatial_correspondence(*b.model, b.schedule, x, cond, x, cond);
      for (int j = 0; j < x.joints; ++j) identity &= self.match[j] == j;
      const auto perm = random_permutation(rng, x.joints);
      const auto m = spatial_correspondence(*b.model, b.schedule, x, cond, permute_joints(x, perm),
                                            permute_condition(cond, perm));
      for (int j = 0; j < x.joints; ++j) recovered += m.match[perm[j]] == j ? 1 : 0;
      total += x.joints;
    }
  }
  // Three scripted actions cut at fixed frames.
  const SkeletonEntry& biped = ctx.data.find("biped");
  const ModelCondition cond = make_condition(biped.skeleton, biped.stats, *b.embedder);
  const MotionTensor x = normalize(biped.clips[0], biped.stats);
  const auto seg = temporal_segmentation(*b.model, b.schedule, x, cond, 3);
  const auto cuts = toy_boundaries();
  std::vector<int> starts{0};
  starts.insert(starts.end(), cuts.begin(), cuts.end());
  starts.push_back(x.frames);
  std::vector<int> segment_label;
  bool segments = true;
  for (std::size_t s = 0; s + 1 < starts.size(); ++s) {
    std::map<int, int> votes;
    for (int f = starts[s]; f < starts[s + 1]; ++f) ++votes[seg.labels[f]];
    int best = -1, most = -1;
    for (auto [label, n] : votes) {
      if (n > most) best = label, most = n;
    }
    for (int f = starts[s]; f < starts[s + 1]; ++f) {
      bool near_cut = false;
      for (int cut : cuts) near_cut |= std::abs(f - cut) <= kBoundaryTol;
      if (!near_cut && seg.labels[f] != best) segments = false;
    }
    for (int other : segment_label) segments &= other != best;
    segment_label.push_back(best);
  }
  const double rate = double(recovered) / total;
  std::string detail = std::string("self map identity: ") + (identity ? "yes" : "no") +
                       fmt(", permutation recovered %.1f%%", 100.0 * rate) +
                       ", segments within 2 frames of cuts: " + (segments ? "yes" : "no");
  return {identity && rate >= kPermutationRecovery && segments, detail};
}

// 12
BvhDocument raw_capture(double scale, double yaw, Vec3 shift) {
  Skeleton s = biped_skeleton();
  for (auto& o : s.rest.offsets) o *= scale;
  JointMotion m = scripted_action(biped_skeleton(), Action::kWalk, 30);
  const Mat3 r = rotation_about(Vec3::UnitY(), yaw);
  for (int f = 0; f < m.frame_count(); ++f) {
    m.root_position[f] = r * (m.root_position[f] * scale) + shift;
    m.rotations[f][0] = r * m.rotations[f][0];
  }
  return clip_to_bvh(s, m, standing_height(s.topology, s.rest));
}

double clip_difference(const ProcessedClip& a, const ProcessedClip& b) {
  if (a.motion.frame_count() != b.motion.frame_count() || a.topology.parent != b.topology.parent) {
    return std::numeric_limits<double>::infinity();
  }
  double worst = std::abs(a.standing_height - b.standing_height);
  for (std::size_t j = 0; j < a.rest.offsets.size(); ++j) {
    worst = std::max(worst, (a.rest.offsets[j] - b.rest.offsets[j]).norm());
  }
  for (int f = 0; f < a.motion.frame_count(); ++f) {
    worst = std::max(worst, (a.motion.root_position[f] - b.motion.root_position[f]).norm());
    for (std::size_t j = 0; j < a.rest.offsets.size(); ++j) {
      worst = std::max(worst, (a.motion.rotations[f][j] - b.motion.rotations[f][j]).norm());
    }
  }
  return worst;
}

Outcome preprocess_invariance() {
  const ProcessedClip base = preprocess_clip(raw_capture(1.0, 0.0, Vec3::Zero()), nullptr, {});
  const BvhDocument canon = clip_to_bvh(base.skeleton(), base.motion, base.standing_height);
  const double again =
      clip_difference(base, preprocess_clip(parse_bvh(write_bvh(canon)), nullptr, {}));
  double moved = 0.0;
  for (auto [scale, yaw] : {std::pair{3.0, 0.0}, {1.0, 2.0}, {0.2, -2.5}}) {
    const auto p = preprocess_clip(raw_capture(scale, yaw, Vec3(1.5, 0, -2)), nullptr, {});
    moved = std::max(moved, clip_difference(base, p));
  }
  return {again < kPreprocessTol && moved < kPreprocessTol,
          fmt("rerun difference %.1e, scale/yaw difference %.1e", again, moved)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"skeleton relations and distances match oracles", tree_oracles},
      {"6D rotations and geodesic distance", rotations},
      {"attention rows, temporal window and zero bias", attention},
      {"joint permutation equivariance", equivariance},
      {"analytic gradients match finite differences", gradients},
      {"overfit run: loss, coverage and diversity", overfit_run},
      {"editing contract", edit_contract},
      {"balanced sampler frequencies", sampler},
      {"metric parity with brute force", metric_parity},
      {"OOD score ordering", ood_order},
      {"analysis on the overfit model", analysis_sanity},
      {"preprocess idempotence and invariance", preprocess_invariance},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %2zu: %s  %s (%s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
