#include "topodiff/preprocess.hpp"

#include "topodiff/rotation.hpp"
#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

namespace topodiff {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

std::vector<std::string> split_tokens(const std::string& raw) {
  // camelCase and acronym boundaries become spaces, non-letters separate.
  std::string spaced;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const unsigned char c = raw[i];
    if (i > 0 && std::isupper(c)) {
      const unsigned char prev = raw[i - 1];
      const bool next_lower = i + 1 < raw.size() &&
                              std::islower(static_cast<unsigned char>(raw[i + 1]));
      if (std::islower(prev) || (std::isupper(prev) && next_lower)) spaced += ' ';
    }
    spaced += std::isalpha(c) ? static_cast<char>(std::tolower(c)) : ' ';
  }
  std::vector<std::string> tokens;
  std::istringstream is(spaced);
  std::string t;
  while (is >> t) tokens.push_back(t);
  return tokens;
}

const std::set<std::string>& filler_words() {
  static const std::set<std::string> words = {
      "bip", "bone", "bones", "jnt", "joint", "mixamorig", "def", "ctrl",
      "bn", "nub", "sk", "skel", "rig"};
  return words;
}

}  // namespace

std::vector<std::string> clean_names(const std::vector<std::string>& raw) {
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(raw.size());
  for (const auto& name : raw) {
    std::vector<std::string> out;
    for (auto& t : split_tokens(name)) {
      if (t == "l" || t == "lft") t = "left";
      if (t == "r" || t == "rt") t = "right";
      if (t.size() == 1 || filler_words().count(t)) continue;
      if (!out.empty() && out.back() == t) continue;
      out.push_back(t);
    }
    tokens.push_back(std::move(out));
  }
  // Drop a leading token shared by every name (character-name prefixes).
  while (tokens.size() >= 2) {
    const bool all_share =
        std::all_of(tokens.begin(), tokens.end(), [&](const auto& t) {
          return t.size() >= 2 && t.front() == tokens.front().front();
        });
    if (!all_share) break;
    for (auto& t : tokens) t.erase(t.begin());
  }
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    std::string s;
    for (const auto& w : t) {
      if (!s.empty()) s += ' ';
      s += w;
    }
    out.push_back(s.empty() ? "joint" : s);
  }
  return out;
}

std::vector<int> find_feet(const std::vector<std::string>& cleaned) {
  static const std::set<std::string> foot_words = {"foot", "feet", "toe",
                                                   "toes", "paw",  "hoof",
                                                   "heel"};
  std::vector<int> feet;
  for (int j = 0; j < static_cast<int>(cleaned.size()); ++j) {
    std::istringstream is(cleaned[j]);
    std::string w;
    while (is >> w) {
      if (foot_words.count(w)) {
        feet.push_back(j);
        break;
      }
    }
  }
  return feet;
}

JointMotion motion_from_bvh(const BvhDocument& doc) {
  const int n_joints = static_cast<int>(doc.joints.size());
  const auto offsets = doc.channel_offsets();
  JointMotion m = JointMotion::identity(doc.frame_count, n_joints, 1.0 / doc.frame_time);
  for (int f = 0; f < doc.frame_count; ++f) {
    for (int j = 0; j < n_joints; ++j) {
      const auto& joint = doc.joints[j];
      std::vector<BvhChannel> rot_channels;
      std::vector<double> angles;
      Vec3 translation = Vec3::Zero();
      for (std::size_t c = 0; c < joint.channels.size(); ++c) {
        const double v = doc.frames(f, offsets[j] + static_cast<int>(c));
        switch (joint.channels[c]) {
          case BvhChannel::kXpos: translation.x() = v; break;
          case BvhChannel::kYpos: translation.y() = v; break;
          case BvhChannel::kZpos: translation.z() = v; break;
          default:
            rot_channels.push_back(joint.channels[c]);
            angles.push_back(v * kDegToRad);
        }
      }
      m.rotations[f][j] = euler_to_matrix(rot_channels, angles);
      // Non-root translation channels are ignored; offsets define the bones.
      if (j == 0) m.root_position[f] = joint.offset + translation;
    }
  }
  return m;
}

double standing_height(const Topology& topology, const RestPose& rest) {
  const auto pos = rest_positions(topology, rest);
  double lowest = 0.0;
  bool any = false;
  auto consider = [&](int j) {
    if (!any || pos[j].y() < lowest) lowest = pos[j].y();
    any = true;
  };
  if (!topology.feet.empty()) {
    for (int f : topology.feet) consider(f);
  } else {
    for (int j = 0; j < topology.joint_count(); ++j) consider(j);
  }
  return -lowest;
}

Skeleton ProcessedClip::skeleton(int d_max) const {
  Skeleton s = make_skeleton(topology, rest, names, d_max);
  s.end_site = end_site;
  return s;
}

ProcessedClip preprocess_clip(const BvhDocument& doc, const BvhDocument* rest_doc,
                              const PreprocessConfig& config) {
  const int n = static_cast<int>(doc.joints.size());
  if (n == 0) throw PreprocessError("document has no joints");

  ProcessedClip out;
  std::vector<int> parents;
  for (const auto& j : doc.joints) {
    parents.push_back(j.parent);
    out.raw_names.push_back(j.name);
    out.end_site.push_back(j.end_site ? 1 : 0);
  }
  out.names = clean_names(out.raw_names);
  const auto feet = find_feet(out.names);
  auto built = build_topology(parents, feet);
  for (int j = 0; j < n; ++j) {
    if (built.old_to_new[j] != j) {
      throw PreprocessError("BVH joints are not stored in preorder");
    }
  }
  out.topology = std::move(built.topology);

  JointMotion motion = motion_from_bvh(doc);
  const int frames = motion.frame_count();

  // Natural rest pose: global rest rotations per joint.
  std::vector<Mat3> rest_global(n, Mat3::Identity());
  double rest_root_height = doc.joints[0].offset.y();
  if (rest_doc) {
    if (rest_doc->joints.size() != doc.joints.size() || rest_doc->frame_count < 1) {
      throw PreprocessError("rest document does not match the clip skeleton");
    }
    const JointMotion rest_motion = motion_from_bvh(*rest_doc);
    for (int j = 0; j < n; ++j) {
      const int p = out.topology.parent[j];
      rest_global[j] = p == kNoParent ? rest_motion.rotations[0][j]
                                      : Mat3(rest_global[p] * rest_motion.rotations[0][j]);
    }
    rest_root_height = rest_motion.root_position[0].y();
  } else {
    out.meta.identity_rest = true;
  }

  out.rest.offsets.assign(n, Vec3::Zero());
  for (int j = 1; j < n; ++j) {
    out.rest.offsets[j] = rest_global[out.topology.parent[j]] * doc.joints[j].offset;
  }
  for (int f = 0; f < frames; ++f) {
    auto& rots = motion.rotations[f];
    for (int j = n - 1; j >= 0; --j) {
      const int p = out.topology.parent[j];
      const Mat3 inv_rest = rest_global[j].transpose();
      rots[j] = p == kNoParent ? Mat3(rots[j] * inv_rest)
                               : Mat3(rest_global[p] * rots[j] * inv_rest);
    }
  }

  // Ground the rest pose: lowest foot of the standing rest pose at y = 0.
  const double ground = rest_root_height - standing_height(out.topology, out.rest);
  for (auto& p : motion.root_position) p.y() -= ground;

  double bone_sum = 0.0;
  for (int j = 1; j < n; ++j) bone_sum += out.rest.offsets[j].norm();
  const double mean_bone = n > 1 ? bone_sum / (n - 1) : 0.0;
  if (!(mean_bone > 1e-9)) {
    throw PreprocessError("degenerate skeleton: zero mean bone length");
  }
  const double scale = config.target_bone_length / mean_bone;
  for (auto& o : out.rest.offsets) o *= scale;
  for (auto& p : motion.root_position) p *= scale;

  if (frames > 0) {
    Vec3 forward = Vec3::Zero();
    for (int f = 0; f < frames; ++f) forward += motion.rotations[f][0] * Vec3::UnitZ();
    const double fx = forward.x();
    const double fz = forward.z();
    if (std::hypot(fx, fz) < 1e-6 * frames) {
      throw PreprocessError("cannot resolve facing direction: root forward is vertical");
    }
    const Mat3 yaw = rotation_about(Vec3::UnitY(), std::atan2(-fx, fz));
    const Vec3 origin(motion.root_position[0].x(), 0.0, motion.root_position[0].z());
    for (int f = 0; f < frames; ++f) {
      motion.root_position[f] = yaw * (motion.root_position[f] - origin);
      motion.rotations[f][0] = yaw * motion.rotations[f][0];
    }
  }

  out.standing_height = standing_height(out.topology, out.rest);
  out.motion = std::move(motion);
  out.meta.fps = out.motion.fps;
  out.meta.frame_count = frames;

  if (frames > 1) {
    double root_extent = 0.0;
    for (const auto& p : out.motion.root_position) {
      root_extent = std::max(root_extent, std::hypot(p.x(), p.z()));
    }
    const auto kin = forward_kinematics(out.topology, out.rest, out.motion);
    double body_motion = 0.0;
    for (int f = 1; f < frames; ++f) {
      for (int j = 1; j < n; ++j) {
        body_motion = std::max(body_motion,
                               (kin.positions[f][j] - kin.positions[f - 1][j]).norm());
      }
    }
    out.meta.anchored_to_origin = root_extent < 1e-6 && body_motion > 1e-3;
  }
  return out;
}

ContactLabels detect_foot_contacts(const std::vector<std::vector<Vec3>>& positions,
                                   const std::vector<int>& feet,
                                   const PreprocessConfig& config) {
  const int frames = static_cast<int>(positions.size());
  const int joints = frames ? static_cast<int>(positions[0].size()) : 0;
  ContactLabels labels(frames, std::vector<std::uint8_t>(joints, 0));
  for (int foot : feet) {
    for (int f = 0; f < frames; ++f) {
      double speed = 0.0;
      if (frames > 1) {
        const int k = std::max(f, 1);
        speed = (positions[k][foot] - positions[k - 1][foot]).norm();
      }
      const double height = positions[f][foot].y();
      labels[f][foot] = speed < config.contact_velocity_threshold &&
                        height < config.contact_height_threshold;
    }
  }
  return labels;
}

ContactLabels clip_contacts(const Topology& topology, const RestPose& rest,
                            const JointMotion& motion, const PreprocessConfig& config) {
  const auto kin = forward_kinematics(topology, rest, motion);
  return detect_foot_contacts(kin.positions, topology.feet, config);
}

BvhDocument clip_to_bvh(const Skeleton& skeleton, const JointMotion& motion,
                        double standing) {
  BvhDocument doc;
  const int n = skeleton.joint_count();
  const std::vector<BvhChannel> rot = {BvhChannel::kZrot, BvhChannel::kYrot,
                                       BvhChannel::kXrot};
  for (int j = 0; j < n; ++j) {
    BvhJoint joint;
    joint.name = skeleton.names[j];
    std::replace(joint.name.begin(), joint.name.end(), ' ', '_');
    joint.parent = skeleton.topology.parent[j];
    joint.offset = j == 0 ? Vec3(0.0, standing, 0.0) : skeleton.rest.offsets[j];
    joint.end_site = skeleton.is_end_site(j);
    if (j == 0) {
      joint.channels = {BvhChannel::kXpos, BvhChannel::kYpos, BvhChannel::kZpos};
    }
    if (!joint.end_site) joint.channels.insert(joint.channels.end(), rot.begin(), rot.end());
    doc.joints.push_back(std::move(joint));
  }
  doc.frame_count = motion.frame_count();
  doc.frame_time = 1.0 / motion.fps;
  doc.frames.resize(doc.frame_count, doc.total_channels());
  for (int f = 0; f < doc.frame_count; ++f) {
    int c = 0;
    for (int j = 0; j < n; ++j) {
      if (j == 0) {
        const Vec3 t = motion.root_position[f] - doc.joints[0].offset;
        doc.frames(f, c++) = t.x();
        doc.frames(f, c++) = t.y();
        doc.frames(f, c++) = t.z();
      }
      if (doc.joints[j].end_site) continue;
      for (double a : matrix_to_euler(rot, motion.rotations[f][j])) {
        doc.frames(f, c++) = a * kRadToDeg;
      }
    }
  }
  return doc;
}

CanonicalClip canonical_from_bvh(const BvhDocument& doc) {
  CanonicalClip c;
  c.motion = motion_from_bvh(doc);
  for (const auto& j : doc.joints) {
    c.parents.push_back(j.parent);
    c.joint_names.push_back(j.name);
    c.rest.offsets.push_back(j.parent == -1 ? Vec3::Zero() : j.offset);
  }
  c.root_offset_height = doc.joints.empty() ? 0.0 : doc.joints[0].offset.y();
  return c;
}

}  // namespace topodiff
