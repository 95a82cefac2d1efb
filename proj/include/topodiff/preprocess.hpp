#pragma once

#include "topodiff/bvh.hpp"
#include "topodiff/motion.hpp"
#include "topodiff/skeleton.hpp"

#include <optional>
#include <string>
#include <vector>

namespace topodiff {

struct PreprocessConfig {
  double target_bone_length = 1.0;
  double contact_velocity_threshold = 0.05;  ///< units per frame
  double contact_height_threshold = 0.08;    ///< units above ground
  std::string idle_pattern = "idle";
  int d_max = kDefaultDMax;
};

struct ClipMeta {
  std::string skeleton_id;
  std::string source_file;
  double fps = 30.0;
  int frame_count = 0;
  /// Root never leaves the origin while the body moves: likely an extra bone
  /// pins the character in place. Flagged, not repaired.
  bool anchored_to_origin = false;
  /// No rest source was available; rotations stay relative to the file's
  /// zero pose.
  bool identity_rest = false;
};

/// Canonical clip: +Y up, average facing +Z, mean bone length equal to the
/// configured target, first-frame root above the origin, rest-pose feet on
/// the ground, rotations relative to the natural rest pose.
struct ProcessedClip {
  Topology topology;
  RestPose rest;  ///< root offset is zero
  std::vector<std::string> raw_names;
  std::vector<std::string> names;
  std::vector<std::uint8_t> end_site;
  JointMotion motion;
  ClipMeta meta;
  /// Root height at which the rest pose stands on the ground.
  double standing_height = 0.0;

  Skeleton skeleton(int d_max = kDefaultDMax) const;
};

class PreprocessError : public Error {
 public:
  using Error::Error;
};

/// Lowercases, strips digits and symbols, expands L/R side tokens, drops
/// filler words and a prefix shared by every name. Empty results become
/// "joint".
std::vector<std::string> clean_names(const std::vector<std::string>& raw);

/// Joints whose cleaned name mentions a foot-like part.
std::vector<int> find_feet(const std::vector<std::string>& cleaned);

ProcessedClip preprocess_clip(const BvhDocument& doc,
                              const BvhDocument* rest_doc,
                              const PreprocessConfig& config);

/// A foot is in contact when its per-frame speed and its height are both
/// below the configured thresholds. Frame 0 reuses frame 1's speed.
ContactLabels detect_foot_contacts(const std::vector<std::vector<Vec3>>& positions,
                                   const std::vector<int>& feet,
                                   const PreprocessConfig& config);

/// Contacts of a canonical clip via forward kinematics.
ContactLabels clip_contacts(const Topology& topology, const RestPose& rest,
                            const JointMotion& motion,
                            const PreprocessConfig& config);

/// Writes a canonical clip back to BVH. The root OFFSET carries the standing
/// height so that reprocessing the file is a no-op.
BvhDocument clip_to_bvh(const Skeleton& skeleton, const JointMotion& motion,
                        double standing_height);

/// Reads a canonical BVH (as written by clip_to_bvh) without re-running the
/// alignment steps.
struct CanonicalClip {
  JointMotion motion;
  RestPose rest;
  std::vector<int> parents;
  std::vector<std::string> joint_names;
  double root_offset_height = 0.0;
};
CanonicalClip canonical_from_bvh(const BvhDocument& doc);

/// Joint-angle motion straight from a document: root world position is
/// OFFSET plus position channels; rotations in radians.
JointMotion motion_from_bvh(const BvhDocument& doc);

/// Height that puts the lowest foot (or lowest joint) of the rest pose on
/// the ground when the root sits at that height.
double standing_height(const Topology& topology, const RestPose& rest);

}  // namespace topodiff
