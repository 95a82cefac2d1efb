#pragma once

#include "topodiff/denoiser.hpp"
#include "topodiff/diffusion.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace topodiff {

struct AnalysisConfig {
  int spatial_step = 2;
  int spatial_layer = 0;
  int temporal_step = 3;
  int temporal_layer = 1;
  int segment_step = 3;
  int segment_layer = 1;
  std::uint64_t noise_seed = 0;  ///< one fixed noise draw per extraction
  int pca_dim = 32;
  int kmeans_restarts = 10;
  int kmeans_iterations = 300;
  std::uint64_t kmeans_seed = 0;
  bool allow_untrained = false;

  void validate() const;
};

/// Thrown when analysis is asked of a model that was never trained.
class UntrainedModelError : public Error {
 public:
  using Error::Error;
};

/// target index -> best reference index. Entries of padded targets hold -1.
struct CorrespondenceMap {
  std::string kind;  ///< "spatial" or "temporal"
  int reference_size = 0;
  std::vector<int> match;
  std::vector<double> similarity;  ///< cosine, in [-1, 1]
};

struct SegmentationResult {
  int k = 0;
  int pca_dim = 0;
  std::vector<int> labels;  ///< per frame; -1 for padded frames
  double inertia = 0.0;
};

/// Cosine similarity, 0 when either vector vanishes.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Rows of `target` matched to their most similar row of `reference`.
/// Rows flagged invalid are skipped on either side.
CorrespondenceMap match_rows(const RowMatrixXd& reference, const std::vector<std::uint8_t>& ref_valid,
                             const RowMatrixXd& target, const std::vector<std::uint8_t>& tgt_valid);

/// Per-joint features averaged over valid frames (joints x F).
RowMatrixXd time_mean(const ActivationTap& tap, const MotionTensor& x);
/// Per-frame features averaged over valid joints (frames x F).
RowMatrixXd joint_mean(const ActivationTap& tap, const MotionTensor& x);

/// Motions are normalized tensors; conditions belong to their skeletons.
template <typename T>
CorrespondenceMap spatial_correspondence(const Denoiser<T>& model, const NoiseSchedule& schedule,
                                         const MotionTensor& x_ref, const ModelCondition& c_ref,
                                         const MotionTensor& x_tgt, const ModelCondition& c_tgt,
                                         const AnalysisConfig& config = {});

template <typename T>
CorrespondenceMap temporal_correspondence(const Denoiser<T>& model, const NoiseSchedule& schedule,
                                          const MotionTensor& x_ref, const ModelCondition& c_ref,
                                          const MotionTensor& x_tgt, const ModelCondition& c_tgt,
                                          const AnalysisConfig& config = {});

template <typename T>
SegmentationResult temporal_segmentation(const Denoiser<T>& model, const NoiseSchedule& schedule,
                                         const MotionTensor& x0, const ModelCondition& cond,
                                         int k = 3, const AnalysisConfig& config = {});

/// Projects centered rows onto their top `dim` principal axes.
RowMatrixXd pca_project(const RowMatrixXd& rows, int dim);

/// k-means++ seeding with restarts; keeps the lowest inertia. Labels are
/// renumbered in order of first appearance.
SegmentationResult kmeans(const RowMatrixXd& points, int k, int restarts, int iterations,
                          std::uint64_t seed);

std::string correspondence_to_json(const CorrespondenceMap& map,
                                   const std::vector<std::string>& reference_names = {},
                                   const std::vector<std::string>& target_names = {});
std::string segmentation_to_json(const SegmentationResult& seg);

/// Color sidecars for external viewers: reference entries receive evenly
/// spaced hues and each target entry takes the color of its match.
std::string correspondence_colors_json(const CorrespondenceMap& map);
std::string segmentation_colors_json(const SegmentationResult& seg);

}  // namespace topodiff
