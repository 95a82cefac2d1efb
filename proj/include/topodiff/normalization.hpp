#pragma once

#include "topodiff/motion.hpp"

#include <span>
#include <string>
#include <vector>

namespace topodiff {

/// Per-skeleton, per-joint feature statistics pooled over every valid frame
/// of every clip of that skeleton. The contact column is left raw (mean 0,
/// std 1).
struct NormalizationStats {
  RowMatrixXd mean;  ///< J x 13
  RowMatrixXd std;   ///< J x 13, entries >= epsilon
  double epsilon = 1e-3;

  int joint_count() const { return static_cast<int>(mean.rows()); }
};

NormalizationStats compute_stats(std::span<const MotionTensor> clips,
                                 double epsilon = 1e-3);

MotionTensor normalize(const MotionTensor& x, const NormalizationStats& stats);
MotionTensor denormalize(const MotionTensor& x, const NormalizationStats& stats);

/// Normalizes a J x 13 pose (e.g. the rest-pose features).
RowMatrixXd normalize_pose(const RowMatrixXd& pose, const NormalizationStats& stats);

/// Stats for an edited skeleton. new_to_old[j] == -1 marks an inserted joint,
/// which takes the average of its parent's and its child's statistics.
NormalizationStats remap_stats(const NormalizationStats& stats,
                               std::span<const int> new_to_old,
                               const Topology& new_topology);

std::string stats_to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const std::string& text);
void save_stats(const NormalizationStats& stats, const std::string& path);
NormalizationStats load_stats(const std::string& path);

}  // namespace topodiff
