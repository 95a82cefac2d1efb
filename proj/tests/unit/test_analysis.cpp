#include "test_util.hpp"

#include "topodiff/analysis.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <set>

using namespace topodiff;
using namespace topodiff::testing;

namespace {

RowMatrixXd random_rows(Rng& rng, int n, int d) {
  RowMatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

/// Three well separated blobs of `per` points each, in blob order.
RowMatrixXd blobs(Rng& rng, int per, int d) {
  RowMatrixXd m(3 * per, d);
  for (int b = 0; b < 3; ++b) {
    for (int i = 0; i < per; ++i) {
      for (int c = 0; c < d; ++c) m(b * per + i, c) = 0.1 * rng.normal() + (c == b ? 10.0 : 0.0);
    }
  }
  return m;
}

/// Two labelings describe the same partition.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) {
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    }
  }
  return true;
}

}  // namespace

TEST(Analysis, CosineSimilarity) {
  Eigen::VectorXd a(3), b(3), z = Eigen::VectorXd::Zero(3);
  a << 1, 2, 3;
  b << -2, -4, -6;
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(a, b), -1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(a, z), 0.0);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd u(5), v(5);
    for (int i = 0; i < 5; ++i) {
      u[i] = rng.normal();
      v[i] = rng.normal();
    }
    double dot = 0, nu = 0, nv = 0;
    for (int i = 0; i < 5; ++i) {
      dot += u[i] * v[i];
      nu += u[i] * u[i];
      nv += v[i] * v[i];
    }
    EXPECT_NEAR(cosine_similarity(u, v), dot / std::sqrt(nu * nv), 1e-12);
  }
}

TEST(Analysis, MatchRowsRecoversReversal) {
  Rng rng(2);
  const RowMatrixXd ref = random_rows(rng, 9, 16);
  const RowMatrixXd tgt = ref.colwise().reverse();
  const std::vector<std::uint8_t> all(9, 1);
  const CorrespondenceMap m = match_rows(ref, all, tgt, all);
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(m.match[i], 8 - i);
    EXPECT_NEAR(m.similarity[i], 1.0, 1e-12);
  }
  EXPECT_EQ(m.reference_size, 9);
}

TEST(Analysis, MatchRowsMasksAndConstantTarget) {
  Rng rng(3);
  RowMatrixXd ref = random_rows(rng, 5, 4);
  RowMatrixXd tgt(3, 4);
  tgt.row(0) = ref.row(2) * 3.0;
  tgt.row(1) = ref.row(2) * 3.0;
  tgt.row(2) = ref.row(2) * 3.0;
  std::vector<std::uint8_t> rv(5, 1), tv{1, 0, 1};
  CorrespondenceMap m = match_rows(ref, rv, tgt, tv);
  EXPECT_EQ(m.match, (std::vector<int>{2, -1, 2}));
  // The best reference row is masked out: the match moves elsewhere.
  rv[2] = 0;
  m = match_rows(ref, rv, tgt, tv);
  EXPECT_NE(m.match[0], 2);
  EXPECT_GE(m.match[0], 0);
  EXPECT_THROW(match_rows(ref, std::vector<std::uint8_t>(5, 0), tgt, tv), Error);
  EXPECT_THROW(match_rows(ref, rv, random_rows(rng, 3, 5), tv), Error);
}

TEST(Analysis, PcaKeepsLeadingVariance) {
  Rng rng(4);
  // Points on a line plus tiny noise: one axis carries everything.
  RowMatrixXd pts(40, 6);
  Eigen::RowVectorXd dir(6);
  dir << 1, -2, 0.5, 0, 3, 1;
  for (int i = 0; i < 40; ++i) {
    pts.row(i) = rng.normal() * dir;
    for (int c = 0; c < 6; ++c) pts(i, c) += 1e-3 * rng.normal() + 7.0;
  }
  const RowMatrixXd p = pca_project(pts, 3);
  ASSERT_EQ(p.cols(), 3);
  const Eigen::RowVectorXd var = p.array().square().colwise().mean();
  EXPECT_GT(var[0], 1e4 * var[1]);
  EXPECT_GE(var[1], var[2]);
  EXPECT_LT(p.colwise().mean().cwiseAbs().maxCoeff(), 1e-9);
  // Full-rank projection preserves pairwise distances.
  const RowMatrixXd full = pca_project(pts, 6);
  for (int i = 1; i < 40; ++i) {
    EXPECT_NEAR((full.row(i) - full.row(0)).norm(), (pts.row(i) - pts.row(0)).norm(), 1e-9);
  }
  EXPECT_EQ(pca_project(pts, 99).cols(), 6);
}

TEST(Analysis, KmeansSeparatesBlobs) {
  Rng rng(5);
  const RowMatrixXd pts = blobs(rng, 10, 3);
  const SegmentationResult s = kmeans(pts, 3, 10, 300, 0);
  std::vector<int> expect;
  for (int b = 0; b < 3; ++b) expect.insert(expect.end(), 10, b);
  EXPECT_EQ(s.labels, expect);  // renumbered by first appearance
  EXPECT_LT(s.inertia, 30 * 3 * 0.05);
  const SegmentationResult again = kmeans(pts, 3, 10, 300, 0);
  EXPECT_EQ(again.labels, s.labels);
  EXPECT_EQ(again.inertia, s.inertia);

  const SegmentationResult one = kmeans(pts, 1, 2, 10, 0);
  EXPECT_EQ(std::set<int>(one.labels.begin(), one.labels.end()), std::set<int>{0});
  EXPECT_THROW(kmeans(pts, 31, 1, 10, 0), Error);
  EXPECT_THROW(kmeans(pts, 0, 1, 10, 0), Error);
}

TEST(Analysis, KmeansIgnoresPointOrder) {
  Rng rng(6);
  const RowMatrixXd pts = blobs(rng, 8, 4);
  const auto perm = random_permutation(rng, 24);
  RowMatrixXd shuffled(24, 4);
  for (int i = 0; i < 24; ++i) shuffled.row(perm[i]) = pts.row(i);
  const auto a = kmeans(pts, 3, 10, 300, 0).labels;
  const auto b = kmeans(shuffled, 3, 10, 300, 0).labels;
  std::vector<int> back(24);
  for (int i = 0; i < 24; ++i) back[i] = b[perm[i]];
  EXPECT_TRUE(same_partition(a, back));
}

TEST(Analysis, KmeansDuplicatePoints) {
  // Fewer distinct points than clusters: empty clusters must be refilled.
  RowMatrixXd pts = RowMatrixXd::Zero(6, 2);
  pts.row(3) << 5, 5;
  const SegmentationResult s = kmeans(pts, 3, 3, 50, 1);
  EXPECT_EQ(s.labels.size(), 6u);
  for (int l : s.labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 3);
  }
  EXPECT_NE(s.labels[3], s.labels[0]);
}

TEST(Analysis, UntrainedModelIsRejected) {
  const DenoiserConfig cfg = tiny_config();
  const Denoiser<double> model(cfg, 3);
  const NoiseSchedule sched = NoiseSchedule::make(cfg.diffusion_steps);
  Rng rng(7);
  const ModelCondition c = random_condition(rng, 4, cfg);
  const MotionTensor x = random_tensor(rng, 6, 4);
  EXPECT_THROW(spatial_correspondence(model, sched, x, c, x, c), UntrainedModelError);
  EXPECT_THROW(temporal_correspondence(model, sched, x, c, x, c), UntrainedModelError);
  EXPECT_THROW(temporal_segmentation(model, sched, x, c, 2), UntrainedModelError);
  AnalysisConfig ok;
  ok.allow_untrained = true;
  EXPECT_NO_THROW(spatial_correspondence(model, sched, x, c, x, c, ok));
}

TEST(Analysis, SelfCorrespondenceIsIdentity) {
  DenoiserConfig cfg = tiny_config();
  cfg.layers = 2;
  Denoiser<double> model(cfg, 8);
  model.trained_steps = 1;
  const NoiseSchedule sched = NoiseSchedule::make(cfg.diffusion_steps);
  Rng rng(8);
  const ModelCondition c = random_condition(rng, 5, cfg);
  MotionTensor x = random_tensor(rng, 7, 5);
  x.frame_mask[6] = 0;
  x.apply_mask();
  const CorrespondenceMap s = spatial_correspondence(model, sched, x, c, x, c);
  EXPECT_EQ(s.kind, "spatial");
  EXPECT_EQ(s.match, (std::vector<int>{0, 1, 2, 3, 4}));
  const CorrespondenceMap t = temporal_correspondence(model, sched, x, c, x, c);
  EXPECT_EQ(t.kind, "temporal");
  EXPECT_EQ(t.match, (std::vector<int>{0, 1, 2, 3, 4, 5, -1}));
}

TEST(Analysis, SegmentationShapes) {
  DenoiserConfig cfg = tiny_config();
  cfg.layers = 2;
  Denoiser<double> model(cfg, 9);
  model.trained_steps = 1;
  const NoiseSchedule sched = NoiseSchedule::make(cfg.diffusion_steps);
  Rng rng(9);
  const ModelCondition c = random_condition(rng, 4, cfg);
  MotionTensor x = random_tensor(rng, 12, 4);
  x.frame_mask[10] = x.frame_mask[11] = 0;
  x.apply_mask();
  const SegmentationResult s = temporal_segmentation(model, sched, x, c, 3);
  ASSERT_EQ(s.labels.size(), 12u);
  EXPECT_EQ(s.labels[10], -1);
  EXPECT_EQ(s.labels[11], -1);
  EXPECT_EQ(s.labels[0], 0);
  EXPECT_EQ(s.pca_dim, std::min(cfg.latent, 9));
  const SegmentationResult one = temporal_segmentation(model, sched, x, c, 1);
  for (int f = 0; f < 10; ++f) EXPECT_EQ(one.labels[f], 0);
  EXPECT_THROW(temporal_segmentation(model, sched, x, c, 11), Error);
  const SegmentationResult again = temporal_segmentation(model, sched, x, c, 3);
  EXPECT_EQ(again.labels, s.labels);
}

TEST(Analysis, JsonExports) {
  CorrespondenceMap m;
  m.kind = "spatial";
  m.reference_size = 3;
  m.match = {2, -1, 0};
  m.similarity = {0.9, 0.0, 0.5};
  const auto j = nlohmann::json::parse(correspondence_to_json(m, {"a", "b", "c"}, {"x", "y", "z"}));
  ASSERT_EQ(j["entries"].size(), 2u);
  EXPECT_EQ(j["entries"][0]["reference_name"], "c");
  EXPECT_EQ(j["entries"][1]["target_name"], "z");
  const auto colors = nlohmann::json::parse(correspondence_colors_json(m));
  EXPECT_EQ(colors["reference"][0], "#ff0000");
  EXPECT_EQ(colors["target"][0], colors["reference"][2]);
  EXPECT_TRUE(colors["target"][1].is_null());

  SegmentationResult s;
  s.k = 2;
  s.labels = {0, 0, 1, -1};
  const auto sj = nlohmann::json::parse(segmentation_to_json(s));
  EXPECT_EQ(sj["labels"].get<std::vector<int>>(), s.labels);
  const auto sc = nlohmann::json::parse(segmentation_colors_json(s));
  EXPECT_EQ(sc["palette"].size(), 2u);
  EXPECT_EQ(sc["frames"][2], sc["palette"][1]);
  EXPECT_TRUE(sc["frames"][3].is_null());
}
