#pragma once

#include "topodiff/common.hpp"
#include "topodiff/skeleton.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace topodiff {

/// Joint-angle clip: per-frame root translation and per-joint local rotations
/// relative to the rest pose. The root's rotation is its global orientation.
/// Positions are in scene units; velocities elsewhere are units per frame.
struct JointMotion {
  double fps = 30.0;
  std::vector<Vec3> root_position;
  std::vector<std::vector<Mat3>> rotations;  ///< [frame][joint]

  int frame_count() const { return static_cast<int>(root_position.size()); }
  int joint_count() const {
    return rotations.empty() ? 0 : static_cast<int>(rotations.front().size());
  }
  static JointMotion identity(int frames, int joints, double fps = 30.0);
};

/// [frame][joint] binary labels.
using ContactLabels = std::vector<std::vector<std::uint8_t>>;

struct Kinematics {
  std::vector<std::vector<Vec3>> positions;  ///< world, [frame][joint]
  std::vector<std::vector<Mat3>> global;     ///< world rotations
};

Kinematics forward_kinematics(const Topology& topology, const RestPose& rest,
                              const JointMotion& motion);

/// frames x joints x 13 feature tensor, stored as one row per token
/// (row = frame * joints + joint). Padded tokens are exactly zero.
struct MotionTensor {
  int frames = 0;
  int joints = 0;
  RowMatrixXd data;
  std::vector<std::uint8_t> frame_mask;
  std::vector<std::uint8_t> joint_mask;
  int crop_index = 0;  ///< absolute frame index of frame 0 in the source clip

  static MotionTensor zeros(int frames, int joints);

  Eigen::Index row(int frame, int joint) const {
    return static_cast<Eigen::Index>(frame) * joints + joint;
  }
  double& at(int frame, int joint, int feature) {
    return data(row(frame, joint), feature);
  }
  double at(int frame, int joint, int feature) const {
    return data(row(frame, joint), feature);
  }
  bool valid(int frame, int joint) const {
    return frame_mask[frame] && joint_mask[joint];
  }
  /// Per-token validity, row order.
  std::vector<std::uint8_t> token_mask() const;
  int valid_frame_count() const;
  int valid_joint_count() const;
  /// Zeroes every padded entry.
  void apply_mask();
};

/// Builds the per-joint representation. Non-root joints: root-relative world
/// position, 6D local rotation, world velocity (backward difference, zero at
/// frame 0), contact. Root: (0, height, 0), 6D global orientation, world
/// velocity, contact 0.
MotionTensor features_from_clip(const Topology& topology, const RestPose& rest,
                                const JointMotion& motion,
                                const ContactLabels& contacts);

struct ClipDecode {
  JointMotion motion;
  std::vector<std::pair<int, int>> degenerate;  ///< (frame, joint), set to identity
};

/// Inverse of features_from_clip over the valid region. The root trajectory
/// starts at the origin in x/z and integrates the root velocity.
ClipDecode clip_from_features(const MotionTensor& tensor, double fps = 30.0);

/// Root world trajectory encoded in a tensor (integrated x/z, stored height).
std::vector<Vec3> root_trajectory(const MotionTensor& tensor);

MotionTensor pad(const MotionTensor& tensor, int max_frames, int max_joints);

/// Frames [start, start + length) with crop_index advanced by start.
MotionTensor crop_window(const MotionTensor& tensor, int start, int length);

/// Pins each foot's world position during contact intervals to its position
/// on the interval's first frame by rewriting the root-relative position. The
/// correction left at the interval's last frame fades out linearly over the
/// next `blend_frames` frames (the first frame needs none). Operates on
/// denormalized tensors.
MotionTensor footlock_cleanup(const MotionTensor& tensor,
                              const std::vector<int>& feet,
                              int blend_frames = 3);

/// Binary container: magic "TDMT", u32 version, u32 frames, u32 joints,
/// u32 feature dim, i32 crop index, f64 data (row-major tokens), u8 frame
/// mask, u8 joint mask. Little-endian.
std::string tensor_to_bytes(const MotionTensor& tensor);
MotionTensor tensor_from_bytes(const std::string& bytes);
void save_tensor(const MotionTensor& tensor, const std::string& path);
MotionTensor load_tensor(const std::string& path);

}  // namespace topodiff
