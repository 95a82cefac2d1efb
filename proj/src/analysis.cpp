#include "topodiff/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace topodiff {

void AnalysisConfig::validate() const {
  for (int t : {spatial_step, temporal_step, segment_step}) {
    if (t < 1) throw Error("analysis config: diffusion steps start at 1");
  }
  for (int l : {spatial_layer, temporal_layer, segment_layer}) {
    if (l < 0) throw Error("analysis config: layer must be non-negative");
  }
  if (pca_dim < 1) throw Error("analysis config: pca_dim must be positive");
  if (kmeans_restarts < 1) throw Error("analysis config: kmeans_restarts must be positive");
  if (kmeans_iterations < 1) throw Error("analysis config: kmeans_iterations must be positive");
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

CorrespondenceMap match_rows(const RowMatrixXd& reference, const std::vector<std::uint8_t>& ref_valid,
                             const RowMatrixXd& target, const std::vector<std::uint8_t>& tgt_valid) {
  if (reference.cols() != target.cols()) throw Error("correspondence: feature widths differ");
  if (ref_valid.size() != static_cast<std::size_t>(reference.rows()) ||
      tgt_valid.size() != static_cast<std::size_t>(target.rows())) {
    throw Error("correspondence: mask size mismatch");
  }
  if (std::none_of(ref_valid.begin(), ref_valid.end(), [](auto v) { return v != 0; })) {
    throw Error("correspondence: reference has no valid entries");
  }
  CorrespondenceMap map;
  map.reference_size = static_cast<int>(reference.rows());
  map.match.assign(target.rows(), -1);
  map.similarity.assign(target.rows(), 0.0);
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    if (!tgt_valid[i]) continue;
    const Eigen::VectorXd q = target.row(i).transpose();
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < reference.rows(); ++r) {
      if (!ref_valid[r]) continue;
      const double s = cosine_similarity(q, reference.row(r).transpose());
      if (s > best) {
        best = s;
        map.match[i] = static_cast<int>(r);
      }
    }
    map.similarity[i] = best;
  }
  return map;
}

namespace {

void check_tap(const ActivationTap& tap, const MotionTensor& x) {
  if (!tap.captured || tap.frames != x.frames || tap.joints != x.joints) {
    throw Error("analysis: activation tap does not match the motion");
  }
}

}  // namespace

RowMatrixXd time_mean(const ActivationTap& tap, const MotionTensor& x) {
  check_tap(tap, x);
  const int n = x.valid_frame_count();
  if (n == 0) throw Error("analysis: motion has no valid frames");
  RowMatrixXd out = RowMatrixXd::Zero(x.joints, tap.activations.cols());
  for (int f = 0; f < x.frames; ++f) {
    if (!x.frame_mask[f]) continue;
    for (int j = 0; j < x.joints; ++j) {
      if (x.joint_mask[j]) out.row(j) += tap.activations.row(x.row(f, j));
    }
  }
  return out / static_cast<double>(n);
}

RowMatrixXd joint_mean(const ActivationTap& tap, const MotionTensor& x) {
  check_tap(tap, x);
  const int n = x.valid_joint_count();
  if (n == 0) throw Error("analysis: motion has no valid joints");
  if (x.valid_frame_count() == 0) throw Error("analysis: motion has no valid frames");
  RowMatrixXd out = RowMatrixXd::Zero(x.frames, tap.activations.cols());
  for (int f = 0; f < x.frames; ++f) {
    if (!x.frame_mask[f]) continue;
    for (int j = 0; j < x.joints; ++j) {
      if (x.joint_mask[j]) out.row(f) += tap.activations.row(x.row(f, j));
    }
  }
  return out / static_cast<double>(n);
}

namespace {

template <typename T>
ActivationTap features(const Denoiser<T>& model, const NoiseSchedule& schedule,
                       const MotionTensor& x, const ModelCondition& cond, int t, int layer,
                       const AnalysisConfig& config) {
  config.validate();
  if (model.trained_steps == 0 && !config.allow_untrained) {
    throw UntrainedModelError("analysis: model has not been trained");
  }
  if (x.valid_frame_count() == 0) throw Error("analysis: motion has no valid frames");
  return dift_features(model, schedule, x, cond, t, layer, config.noise_seed);
}

}  // namespace

template <typename T>
CorrespondenceMap spatial_correspondence(const Denoiser<T>& model, const NoiseSchedule& schedule,
                                         const MotionTensor& x_ref, const ModelCondition& c_ref,
                                         const MotionTensor& x_tgt, const ModelCondition& c_tgt,
                                         const AnalysisConfig& config) {
  const auto ref = features(model, schedule, x_ref, c_ref, config.spatial_step,
                            config.spatial_layer, config);
  const auto tgt = features(model, schedule, x_tgt, c_tgt, config.spatial_step,
                            config.spatial_layer, config);
  CorrespondenceMap map =
      match_rows(time_mean(ref, x_ref), x_ref.joint_mask, time_mean(tgt, x_tgt), x_tgt.joint_mask);
  map.kind = "spatial";
  return map;
}

template <typename T>
CorrespondenceMap temporal_correspondence(const Denoiser<T>& model, const NoiseSchedule& schedule,
                                          const MotionTensor& x_ref, const ModelCondition& c_ref,
                                          const MotionTensor& x_tgt, const ModelCondition& c_tgt,
                                          const AnalysisConfig& config) {
  const auto ref = features(model, schedule, x_ref, c_ref, config.temporal_step,
                            config.temporal_layer, config);
  const auto tgt = features(model, schedule, x_tgt, c_tgt, config.temporal_step,
                            config.temporal_layer, config);
  CorrespondenceMap map = match_rows(joint_mean(ref, x_ref), x_ref.frame_mask,
                                     joint_mean(tgt, x_tgt), x_tgt.frame_mask);
  map.kind = "temporal";
  return map;
}

RowMatrixXd pca_project(const RowMatrixXd& rows, int dim) {
  if (rows.rows() == 0) throw Error("pca: no rows");
  dim = std::max(1, std::min<int>(dim, static_cast<int>(rows.cols())));
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("pca: eigendecomposition failed");
  // Eigenvalues come in ascending order.
  const Eigen::MatrixXd axes = eig.eigenvectors().rightCols(dim).rowwise().reverse();
  return centered * axes;
}

namespace {

std::vector<int> renumber(const std::vector<int>& labels, int k) {
  std::vector<int> map(k, -1);
  int next = 0;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (map[labels[i]] < 0) map[labels[i]] = next++;
    out[i] = map[labels[i]];
  }
  return out;
}

}  // namespace

SegmentationResult kmeans(const RowMatrixXd& points, int k, int restarts, int iterations,
                          std::uint64_t seed) {
  const int n = static_cast<int>(points.rows());
  if (k < 1) throw Error("kmeans: k must be positive");
  if (n < k) {
    throw Error("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) +
                " clusters");
  }
  SegmentationResult best;
  best.k = k;
  best.inertia = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  const Eigen::Index d = points.cols();
  for (int attempt = 0; attempt < restarts; ++attempt) {
    RowMatrixXd centers(k, d);
    // k-means++ seeding.
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    centers.row(0) = points.row(rng.uniform_int(0, n - 1));
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], (points.row(i) - centers.row(c - 1)).squaredNorm());
        total += d2[i];
      }
      int pick = n - 1;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        for (int i = 0; i < n; ++i) {
          u -= d2[i];
          if (u < 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.uniform_int(0, n - 1);
      }
      centers.row(c) = points.row(pick);
    }
    std::vector<int> labels(n, -1);
    double inertia = 0.0;
    for (int it = 0; it < iterations; ++it) {
      bool changed = false;
      inertia = 0.0;
      for (int i = 0; i < n; ++i) {
        int arg = 0;
        double dist = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double e = (points.row(i) - centers.row(c)).squaredNorm();
          if (e < dist) {
            dist = e;
            arg = c;
          }
        }
        if (labels[i] != arg) changed = true;
        labels[i] = arg;
        inertia += dist;
      }
      if (!changed && it > 0) break;
      RowMatrixXd sums = RowMatrixXd::Zero(k, d);
      std::vector<int> counts(k, 0);
      for (int i = 0; i < n; ++i) {
        sums.row(labels[i]) += points.row(i);
        ++counts[labels[i]];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] > 0) {
          centers.row(c) = sums.row(c) / counts[c];
          continue;
        }
        // An emptied cluster restarts at the point farthest from its center.
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double e = (points.row(i) - centers.row(labels[i])).squaredNorm();
          if (e > far_d) {
            far_d = e;
            far = i;
          }
        }
        centers.row(c) = points.row(far);
        labels[far] = c;
      }
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.labels = labels;
    }
  }
  best.labels = renumber(best.labels, k);
  return best;
}

template <typename T>
SegmentationResult temporal_segmentation(const Denoiser<T>& model, const NoiseSchedule& schedule,
                                         const MotionTensor& x0, const ModelCondition& cond, int k,
                                         const AnalysisConfig& config) {
  const int valid = x0.valid_frame_count();
  if (k < 1) throw Error("segmentation: k must be positive");
  if (valid < k) {
    throw Error("segmentation: " + std::to_string(valid) + " frames cannot form " +
                std::to_string(k) + " segments");
  }
  const auto tap = features(model, schedule, x0, cond, config.segment_step,
                            config.segment_layer, config);
  const RowMatrixXd per_frame = joint_mean(tap, x0);
  std::vector<int> frames;
  for (int f = 0; f < x0.frames; ++f) {
    if (x0.frame_mask[f]) frames.push_back(f);
  }
  RowMatrixXd rows(frames.size(), per_frame.cols());
  for (std::size_t i = 0; i < frames.size(); ++i) rows.row(i) = per_frame.row(frames[i]);

  const int dim = std::max(1, std::min({config.pca_dim, valid - 1, static_cast<int>(rows.cols())}));
  SegmentationResult seg;
  if (k == 1) {
    seg.k = 1;
    seg.labels.assign(frames.size(), 0);
  } else {
    seg = kmeans(pca_project(rows, dim), k, config.kmeans_restarts, config.kmeans_iterations,
                 config.kmeans_seed);
  }
  seg.pca_dim = dim;
  std::vector<int> labels(x0.frames, -1);
  for (std::size_t i = 0; i < frames.size(); ++i) labels[frames[i]] = seg.labels[i];
  seg.labels = std::move(labels);
  return seg;
}

namespace {

std::string hue_color(int index, int count) {
  // Evenly spaced hues at full saturation, rendered as #rrggbb.
  const double h = count > 0 ? 6.0 * index / count : 0.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h) % 6) {
    case 0: r = 1; g = x; break;
    case 1: r = x; g = 1; break;
    case 2: g = 1; b = x; break;
    case 3: g = x; b = 1; break;
    case 4: r = x; b = 1; break;
    default: r = 1; b = x; break;
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(r * 255)),
                static_cast<int>(std::lround(g * 255)), static_cast<int>(std::lround(b * 255)));
  return buf;
}

}  // namespace

std::string correspondence_to_json(const CorrespondenceMap& map,
                                   const std::vector<std::string>& reference_names,
                                   const std::vector<std::string>& target_names) {
  using nlohmann::json;
  json j;
  j["kind"] = map.kind;
  j["reference_size"] = map.reference_size;
  j["entries"] = json::array();
  for (std::size_t i = 0; i < map.match.size(); ++i) {
    if (map.match[i] < 0) continue;
    json e{{"target", i}, {"reference", map.match[i]}, {"similarity", map.similarity[i]}};
    if (i < target_names.size()) e["target_name"] = target_names[i];
    if (static_cast<std::size_t>(map.match[i]) < reference_names.size()) {
      e["reference_name"] = reference_names[map.match[i]];
    }
    j["entries"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::string segmentation_to_json(const SegmentationResult& seg) {
  nlohmann::json j{{"k", seg.k}, {"pca_dim", seg.pca_dim}, {"inertia", seg.inertia},
                   {"labels", seg.labels}};
  return j.dump(2) + "\n";
}

std::string correspondence_colors_json(const CorrespondenceMap& map) {
  using nlohmann::json;
  json ref = json::array();
  for (int r = 0; r < map.reference_size; ++r) ref.push_back(hue_color(r, map.reference_size));
  json tgt = json::array();
  for (int m : map.match) tgt.push_back(m < 0 ? json(nullptr) : json(hue_color(m, map.reference_size)));
  return json{{"kind", map.kind}, {"reference", ref}, {"target", tgt}}.dump(2) + "\n";
}

std::string segmentation_colors_json(const SegmentationResult& seg) {
  using nlohmann::json;
  json palette = json::array();
  for (int c = 0; c < seg.k; ++c) palette.push_back(hue_color(c, seg.k));
  json frames = json::array();
  for (int l : seg.labels) frames.push_back(l < 0 ? json(nullptr) : json(hue_color(l, seg.k)));
  return json{{"palette", palette}, {"frames", frames}}.dump(2) + "\n";
}

#define TOPODIFF_INSTANTIATE(T)                                                                 \
  template CorrespondenceMap spatial_correspondence(                                            \
      const Denoiser<T>&, const NoiseSchedule&, const MotionTensor&, const ModelCondition&,     \
      const MotionTensor&, const ModelCondition&, const AnalysisConfig&);                       \
  template CorrespondenceMap temporal_correspondence(                                           \
      const Denoiser<T>&, const NoiseSchedule&, const MotionTensor&, const ModelCondition&,     \
      const MotionTensor&, const ModelCondition&, const AnalysisConfig&);                       \
  template SegmentationResult temporal_segmentation(const Denoiser<T>&, const NoiseSchedule&,   \
                                                    const MotionTensor&, const ModelCondition&, \
                                                    int, const AnalysisConfig&);

TOPODIFF_INSTANTIATE(float)
TOPODIFF_INSTANTIATE(double)

}  // namespace topodiff
