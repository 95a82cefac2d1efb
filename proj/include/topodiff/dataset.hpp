#pragma once

#include "topodiff/motion.hpp"
#include "topodiff/normalization.hpp"
#include "topodiff/skeleton.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace topodiff {

/// One skeleton type with its clips (raw features, not normalized) and the
/// statistics pooled over all of them.
struct SkeletonEntry {
  std::string id;
  std::string category;  ///< optional label used by benchmark selection
  double fps = 30.0;
  Skeleton skeleton;
  NormalizationStats stats;
  std::vector<MotionTensor> clips;
  std::vector<std::string> clip_names;

  int total_frames() const;
};

struct Dataset {
  std::vector<SkeletonEntry> entries;

  /// Adds a skeleton type and computes its statistics from `clips`.
  SkeletonEntry& add(std::string id, Skeleton skeleton, std::vector<MotionTensor> clips,
                     std::vector<std::string> clip_names = {}, std::string category = {});

  int skeleton_count() const { return static_cast<int>(entries.size()); }
  std::vector<int> clip_counts() const;
  const SkeletonEntry& find(const std::string& id) const;
  std::uint64_t fingerprint() const;

  /// Directory layout: index.json, skeletons/<id>.json, stats/<id>.json,
  /// clips/<id>/<clip>.tdmt.
  void save(const std::string& dir) const;
  static Dataset load(const std::string& dir);
  /// Index text exactly as save() writes it.
  std::string index_json() const;
};

}  // namespace topodiff
