#include "topodiff/motion.hpp"

#include "topodiff/io_util.hpp"
#include "topodiff/rotation.hpp"

#include <cstring>

namespace topodiff {

JointMotion JointMotion::identity(int frames, int joints, double fps) {
  JointMotion m;
  m.fps = fps;
  m.root_position.assign(frames, Vec3::Zero());
  m.rotations.assign(frames, std::vector<Mat3>(joints, Mat3::Identity()));
  return m;
}

Kinematics forward_kinematics(const Topology& topology, const RestPose& rest,
                              const JointMotion& motion) {
  const int n_frames = motion.frame_count();
  const int n_joints = topology.joint_count();
  if (motion.joint_count() != n_joints && n_frames > 0) {
    throw Error("forward_kinematics: motion joint count mismatch");
  }
  Kinematics k;
  k.positions.assign(n_frames, std::vector<Vec3>(n_joints));
  k.global.assign(n_frames, std::vector<Mat3>(n_joints));
  for (int f = 0; f < n_frames; ++f) {
    auto& pos = k.positions[f];
    auto& glob = k.global[f];
    for (int j = 0; j < n_joints; ++j) {
      const int p = topology.parent[j];
      if (p == kNoParent) {
        pos[j] = motion.root_position[f];
        glob[j] = motion.rotations[f][j];
      } else {
        pos[j] = pos[p] + glob[p] * rest.offsets[j];
        glob[j] = glob[p] * motion.rotations[f][j];
      }
    }
  }
  return k;
}

MotionTensor MotionTensor::zeros(int frames, int joints) {
  MotionTensor t;
  t.frames = frames;
  t.joints = joints;
  t.data = RowMatrixXd::Zero(static_cast<Eigen::Index>(frames) * joints, kFeatureDim);
  t.frame_mask.assign(frames, 1);
  t.joint_mask.assign(joints, 1);
  return t;
}

std::vector<std::uint8_t> MotionTensor::token_mask() const {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(frames) * joints);
  for (int f = 0; f < frames; ++f) {
    for (int j = 0; j < joints; ++j) m[row(f, j)] = valid(f, j) ? 1 : 0;
  }
  return m;
}

int MotionTensor::valid_frame_count() const {
  int n = 0;
  for (auto v : frame_mask) n += v ? 1 : 0;
  return n;
}

int MotionTensor::valid_joint_count() const {
  int n = 0;
  for (auto v : joint_mask) n += v ? 1 : 0;
  return n;
}

void MotionTensor::apply_mask() {
  for (int f = 0; f < frames; ++f) {
    for (int j = 0; j < joints; ++j) {
      if (!valid(f, j)) data.row(row(f, j)).setZero();
    }
  }
}

MotionTensor features_from_clip(const Topology& topology, const RestPose& rest,
                                const JointMotion& motion,
                                const ContactLabels& contacts) {
  const int n_frames = motion.frame_count();
  const int n_joints = topology.joint_count();
  const auto kin = forward_kinematics(topology, rest, motion);
  MotionTensor t = MotionTensor::zeros(n_frames, n_joints);
  for (int f = 0; f < n_frames; ++f) {
    const Vec3& root = kin.positions[f][0];
    for (int j = 0; j < n_joints; ++j) {
      auto tok = t.data.row(t.row(f, j));
      Vec3 p;
      Vec3 v = Vec3::Zero();
      if (j == 0) {
        p = Vec3(0.0, root.y(), 0.0);
        if (f > 0) v = root - kin.positions[f - 1][0];
      } else {
        p = kin.positions[f][j] - root;
        if (f > 0) v = kin.positions[f][j] - kin.positions[f - 1][j];
        if (!contacts.empty() && contacts[f][j]) tok(kContactOffset) = 1.0;
      }
      tok.segment<3>(kPosOffset) = p.transpose();
      tok.segment<6>(kRotOffset) = matrix_to_6d(motion.rotations[f][j]).transpose();
      tok.segment<3>(kVelOffset) = v.transpose();
    }
  }
  return t;
}

std::vector<Vec3> root_trajectory(const MotionTensor& tensor) {
  std::vector<Vec3> out(tensor.frames, Vec3::Zero());
  double x = 0.0;
  double z = 0.0;
  for (int f = 0; f < tensor.frames; ++f) {
    if (!tensor.frame_mask[f]) continue;
    if (f > 0) {
      x += tensor.at(f, 0, kVelOffset + 0);
      z += tensor.at(f, 0, kVelOffset + 2);
    }
    out[f] = Vec3(x, tensor.at(f, 0, kPosOffset + 1), z);
  }
  return out;
}

ClipDecode clip_from_features(const MotionTensor& tensor, double fps) {
  const int n_frames = tensor.valid_frame_count();
  const int n_joints = tensor.valid_joint_count();
  ClipDecode out;
  out.motion = JointMotion::identity(n_frames, n_joints, fps);
  const auto traj = root_trajectory(tensor);
  for (int f = 0; f < n_frames; ++f) {
    out.motion.root_position[f] = traj[f];
    for (int j = 0; j < n_joints; ++j) {
      const Vec6 r6 = tensor.data.row(tensor.row(f, j)).segment<6>(kRotOffset).transpose();
      if (auto m = try_gs_6d_to_matrix(r6)) {
        out.motion.rotations[f][j] = *m;
      } else {
        out.degenerate.emplace_back(f, j);
      }
    }
  }
  return out;
}

MotionTensor pad(const MotionTensor& tensor, int max_frames, int max_joints) {
  if (max_frames < tensor.frames || max_joints < tensor.joints) {
    throw Error("pad: target shape smaller than tensor");
  }
  MotionTensor out = MotionTensor::zeros(max_frames, max_joints);
  out.crop_index = tensor.crop_index;
  std::fill(out.frame_mask.begin(), out.frame_mask.end(), 0);
  std::fill(out.joint_mask.begin(), out.joint_mask.end(), 0);
  for (int f = 0; f < tensor.frames; ++f) out.frame_mask[f] = tensor.frame_mask[f];
  for (int j = 0; j < tensor.joints; ++j) out.joint_mask[j] = tensor.joint_mask[j];
  for (int f = 0; f < tensor.frames; ++f) {
    for (int j = 0; j < tensor.joints; ++j) {
      out.data.row(out.row(f, j)) = tensor.data.row(tensor.row(f, j));
    }
  }
  out.apply_mask();
  return out;
}

MotionTensor crop_window(const MotionTensor& tensor, int start, int length) {
  if (start < 0 || length < 1 || start + length > tensor.frames) {
    throw Error("crop_window: window [" + std::to_string(start) + ", " +
                std::to_string(start + length) + ") outside " +
                std::to_string(tensor.frames) + " frames");
  }
  MotionTensor out = MotionTensor::zeros(length, tensor.joints);
  out.crop_index = tensor.crop_index + start;
  out.joint_mask = tensor.joint_mask;
  for (int f = 0; f < length; ++f) out.frame_mask[f] = tensor.frame_mask[start + f];
  out.data = tensor.data.middleRows(static_cast<Eigen::Index>(start) * tensor.joints,
                                    static_cast<Eigen::Index>(length) * tensor.joints);
  return out;
}

MotionTensor footlock_cleanup(const MotionTensor& tensor,
                              const std::vector<int>& feet, int blend_frames) {
  MotionTensor out = tensor;
  const auto root = root_trajectory(tensor);
  const int n = tensor.frames;
  for (int foot : feet) {
    if (foot <= 0 || foot >= tensor.joints || !tensor.joint_mask[foot]) continue;
    auto rel = [&](int f) {
      return Vec3(out.data.row(out.row(f, foot)).segment<3>(kPosOffset).transpose());
    };
    auto set_rel = [&](int f, const Vec3& p) {
      out.data.row(out.row(f, foot)).segment<3>(kPosOffset) = p.transpose();
    };
    std::vector<std::uint8_t> in_contact(n, 0);
    for (int f = 0; f < n; ++f) {
      in_contact[f] = tensor.frame_mask[f] && tensor.at(f, foot, kContactOffset) > 0.5;
    }
    bool touched = false;
    int f = 0;
    while (f < n) {
      if (!in_contact[f]) {
        ++f;
        continue;
      }
      const int a = f;
      while (f < n && in_contact[f]) ++f;
      const int b = f - 1;
      const Vec3 target = root[a] + rel(a);
      // Outside the interval the edge corrections fade out linearly.
      const Vec3 fix_b = target - (root[b] + rel(b));
      for (int k = a; k <= b; ++k) set_rel(k, target - root[k]);
      for (int d = 1; d <= blend_frames; ++d) {
        const double w = 1.0 - static_cast<double>(d) / (blend_frames + 1);
        const int k = b + d;
        if (k >= n || in_contact[k] || !tensor.frame_mask[k]) continue;
        set_rel(k, rel(k) + w * fix_b);
      }
      touched = true;
    }
    if (!touched) continue;
    for (int k = 0; k < n; ++k) {
      if (!tensor.frame_mask[k]) continue;
      Vec3 v = Vec3::Zero();
      if (k > 0) v = (root[k] + rel(k)) - (root[k - 1] + rel(k - 1));
      out.data.row(out.row(k, foot)).segment<3>(kVelOffset) = v.transpose();
    }
  }
  return out;
}

namespace {

constexpr char kTensorMagic[4] = {'T', 'D', 'M', 'T'};
constexpr std::uint32_t kTensorVersion = 1;

template <typename T>
void put(std::string& s, const T& v) {
  s.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::string& s, std::size_t& at) {
  if (at + sizeof(T) > s.size()) throw Error("tensor file truncated");
  T v;
  std::memcpy(&v, s.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

}  // namespace

std::string tensor_to_bytes(const MotionTensor& tensor) {
  std::string s(kTensorMagic, 4);
  put(s, kTensorVersion);
  put(s, static_cast<std::uint32_t>(tensor.frames));
  put(s, static_cast<std::uint32_t>(tensor.joints));
  put(s, static_cast<std::uint32_t>(kFeatureDim));
  put(s, static_cast<std::int32_t>(tensor.crop_index));
  for (Eigen::Index i = 0; i < tensor.data.size(); ++i) put(s, tensor.data.data()[i]);
  for (auto m : tensor.frame_mask) put(s, m);
  for (auto m : tensor.joint_mask) put(s, m);
  return s;
}

MotionTensor tensor_from_bytes(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw Error("not a motion tensor file");
  }
  std::size_t at = 4;
  if (get<std::uint32_t>(bytes, at) != kTensorVersion) {
    throw Error("unsupported tensor layout version");
  }
  const auto frames = get<std::uint32_t>(bytes, at);
  const auto joints = get<std::uint32_t>(bytes, at);
  if (get<std::uint32_t>(bytes, at) != kFeatureDim) throw Error("tensor feature dim mismatch");
  MotionTensor t = MotionTensor::zeros(static_cast<int>(frames), static_cast<int>(joints));
  t.crop_index = get<std::int32_t>(bytes, at);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = get<double>(bytes, at);
  for (auto& m : t.frame_mask) m = get<std::uint8_t>(bytes, at);
  for (auto& m : t.joint_mask) m = get<std::uint8_t>(bytes, at);
  if (at != bytes.size()) throw Error("trailing bytes in tensor file");
  return t;
}

void save_tensor(const MotionTensor& tensor, const std::string& path) {
  write_file_atomic(path, tensor_to_bytes(tensor));
}

MotionTensor load_tensor(const std::string& path) {
  return tensor_from_bytes(read_text_file(path));
}

}  // namespace topodiff
