#pragma once

#include "topodiff/common.hpp"

#include <string>
#include <vector>

namespace topodiff {

enum class BvhChannel { kXpos, kYpos, kZpos, kXrot, kYrot, kZrot };

const char* channel_name(BvhChannel c);
bool is_rotation(BvhChannel c);

struct BvhJoint {
  std::string name;
  int parent = -1;
  Vec3 offset = Vec3::Zero();
  std::vector<BvhChannel> channels;  ///< in file order
  bool end_site = false;
};

/// In-memory BVH 1.0 file. Joints are stored in file (preorder) order, end
/// sites included as leaf joints with no channels. Rotation channel values
/// are kept in degrees exactly as read.
struct BvhDocument {
  std::vector<BvhJoint> joints;
  int frame_count = 0;
  double frame_time = 1.0 / 30.0;
  RowMatrixXd frames;  ///< frame_count x total_channels

  int total_channels() const;
  /// Column of the joint's first channel.
  std::vector<int> channel_offsets() const;
};

class BvhParseError : public Error {
 public:
  BvhParseError(int line, const std::string& what)
      : Error("BVH line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

BvhDocument parse_bvh(const std::string& text);
std::string write_bvh(const BvhDocument& doc);
BvhDocument load_bvh(const std::string& path);
void save_bvh(const BvhDocument& doc, const std::string& path);

/// Composes elementary rotations in channel order (intrinsic), angles in
/// radians. Position channels in the list are skipped.
Mat3 euler_to_matrix(const std::vector<BvhChannel>& channels,
                     const std::vector<double>& radians);

/// Inverse of euler_to_matrix for three distinct rotation axes.
std::vector<double> matrix_to_euler(const std::vector<BvhChannel>& rot_channels,
                                    const Mat3& m);

}  // namespace topodiff
