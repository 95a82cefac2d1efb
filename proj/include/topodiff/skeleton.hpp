#pragma once

#include "topodiff/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace topodiff {

inline constexpr int kNoParent = -1;
inline constexpr int kDefaultDMax = 5;

/// Joint hierarchy of a character: a rooted tree stored in topological order
/// (every parent index is smaller than its child's index).
struct Topology {
  std::vector<int> parent;  ///< kNoParent for the root
  std::vector<int> feet;    ///< sorted joint indices flagged as feet

  int joint_count() const { return static_cast<int>(parent.size()); }
  std::vector<std::vector<int>> children() const;
  std::vector<int> leaves() const;
  bool is_leaf(int joint) const;
  bool is_foot(int joint) const;
  int edge_count() const { return joint_count() - 1; }
};

enum class TopologyErrorKind {
  kEmpty,
  kNoRoot,
  kMultipleRoots,
  kCycle,
  kDisconnected,
  kFootOutOfRange,
};

class TopologyError : public Error {
 public:
  TopologyError(TopologyErrorKind kind, const std::string& what)
      : Error(what), kind_(kind) {}
  TopologyErrorKind kind() const { return kind_; }

 private:
  TopologyErrorKind kind_;
};

struct BuiltTopology {
  Topology topology;
  std::vector<int> old_to_new;  ///< bijection from input index to stored index
};

/// Validates a parent array (kNoParent marks the root) and re-indexes the
/// joints into depth-first preorder. Inputs that are already in preorder keep
/// their indices.
BuiltTopology build_topology(std::span<const int> parents,
                             std::span<const int> feet);

/// Role of joint j as seen from joint i, stored at R(i, j).
enum class RelationKind : int {
  kChild = 0,
  kParent = 1,
  kSibling = 2,
  kNoRelation = 3,
  kSelf = 4,
  kEndEffector = 5,
};
inline constexpr int kRelationKindCount = 6;

Eigen::MatrixXi compute_relations(const Topology& topology);

/// Undirected tree distance, capped at d_max.
Eigen::MatrixXi compute_distances(const Topology& topology, int d_max);

/// Parent-relative joint offsets of the rest pose.
struct RestPose {
  std::vector<Vec3> offsets;
};

/// Global joint positions of the rest pose (zero rotations), root at origin.
std::vector<Vec3> rest_positions(const Topology& topology, const RestPose& rest);

/// Rest pose in per-frame feature layout: root-relative position, identity
/// 6D rotation, zero velocity, zero contact. Shape J x 13.
RowMatrixXd rest_pose_features(const Topology& topology, const RestPose& rest);

/// Structural condition of a character.
struct Skeleton {
  Topology topology;
  RestPose rest;
  std::vector<std::string> names;  ///< cleaned joint names
  std::vector<std::uint8_t> end_site;  ///< BVH "End Site" leaves; empty = none
  int d_max = kDefaultDMax;

  RowMatrixXd pose_features;   ///< J x 13
  Eigen::MatrixXi relations;   ///< J x J, RelationKind values
  Eigen::MatrixXi distances;   ///< J x J, in [0, d_max]

  int joint_count() const { return topology.joint_count(); }
  bool is_end_site(int joint) const {
    return joint < static_cast<int>(end_site.size()) && end_site[joint];
  }
};

/// Derives pose features, relations and distances from the raw parts.
Skeleton make_skeleton(Topology topology, RestPose rest,
                       std::vector<std::string> names,
                       int d_max = kDefaultDMax);

struct AugmentResult {
  Skeleton skeleton;
  std::vector<int> old_to_new;  ///< -1 for removed joints
  std::vector<int> new_to_old;  ///< -1 for the inserted joint
  bool skipped = false;         ///< nothing could be changed
  int removed = 0;
  int inserted = -1;            ///< index of the new joint (augment_add)
};

/// Removes round(fraction * J) joints by repeatedly trimming non-foot leaves.
/// Joints that have several children in the input are never removed, so only
/// tails of single-child chains disappear and the remaining tree keeps its
/// geometry.
AugmentResult augment_remove(const Skeleton& skeleton, Rng& rng,
                             double fraction);

/// Inserts one joint at the midpoint of a uniformly chosen edge.
AugmentResult augment_add(const Skeleton& skeleton, Rng& rng);

/// Inserts a joint on the edge ending at `child` (exposed for tests).
AugmentResult insert_midpoint_joint(const Skeleton& skeleton, int child);

/// Subset of joints kept in the given order; used by removal and tests.
Skeleton select_joints(const Skeleton& skeleton, std::span<const int> keep);

/// Applies a joint permutation to the derived condition matrices directly.
/// new index = perm[old index]. The result is not a valid Topology order in
/// general; it is meant for model-level equivariance checks.
struct PermutedCondition {
  RowMatrixXd pose_features;
  Eigen::MatrixXi relations;
  Eigen::MatrixXi distances;
  std::vector<std::string> names;
};
PermutedCondition permute_condition(const Skeleton& skeleton,
                                    std::span<const int> perm);

std::string skeleton_to_json(const Skeleton& skeleton);
Skeleton skeleton_from_json(const std::string& text);
void save_skeleton(const Skeleton& skeleton, const std::string& path);
Skeleton load_skeleton(const std::string& path);

}  // namespace topodiff
