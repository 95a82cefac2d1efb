#include "topodiff/skeleton.hpp"

#include "topodiff/io_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace topodiff {

using nlohmann::json;

std::vector<std::vector<int>> Topology::children() const {
  std::vector<std::vector<int>> out(parent.size());
  for (int j = 0; j < joint_count(); ++j) {
    if (parent[j] != kNoParent) out[parent[j]].push_back(j);
  }
  return out;
}

std::vector<int> Topology::leaves() const {
  std::vector<int> child_count(parent.size(), 0);
  for (int p : parent) {
    if (p != kNoParent) ++child_count[p];
  }
  std::vector<int> out;
  for (int j = 0; j < joint_count(); ++j) {
    if (child_count[j] == 0) out.push_back(j);
  }
  return out;
}

bool Topology::is_leaf(int joint) const {
  return std::find(parent.begin(), parent.end(), joint) == parent.end();
}

bool Topology::is_foot(int joint) const {
  return std::binary_search(feet.begin(), feet.end(), joint);
}

BuiltTopology build_topology(std::span<const int> parents,
                             std::span<const int> feet) {
  const int n = static_cast<int>(parents.size());
  if (n == 0) throw TopologyError(TopologyErrorKind::kEmpty, "empty parent array");

  int root = -1;
  for (int j = 0; j < n; ++j) {
    const int p = parents[j];
    if (p == kNoParent) {
      if (root != -1) {
        throw TopologyError(TopologyErrorKind::kMultipleRoots,
                            "joints " + std::to_string(root) + " and " +
                                std::to_string(j) + " are both roots");
      }
      root = j;
    } else if (p < 0 || p >= n) {
      throw TopologyError(TopologyErrorKind::kDisconnected,
                          "joint " + std::to_string(j) +
                              " has parent index " + std::to_string(p) +
                              " outside the joint range");
    }
  }
  if (root == -1) {
    throw TopologyError(TopologyErrorKind::kNoRoot,
                        "no root joint (every joint has a parent)");
  }
  for (int f : feet) {
    if (f < 0 || f >= n) {
      throw TopologyError(TopologyErrorKind::kFootOutOfRange,
                          "foot index " + std::to_string(f) + " out of range");
    }
  }

  std::vector<std::vector<int>> kids(n);
  for (int j = 0; j < n; ++j) {
    if (parents[j] != kNoParent) kids[parents[j]].push_back(j);
  }

  // Preorder DFS from the root; anything unvisited sits on a cycle.
  std::vector<int> old_to_new(n, -1);
  std::vector<int> order;
  order.reserve(n);
  std::vector<int> stack{root};
  while (!stack.empty()) {
    const int j = stack.back();
    stack.pop_back();
    old_to_new[j] = static_cast<int>(order.size());
    order.push_back(j);
    for (auto it = kids[j].rbegin(); it != kids[j].rend(); ++it) {
      stack.push_back(*it);
    }
  }
  if (static_cast<int>(order.size()) != n) {
    int bad = 0;
    while (old_to_new[bad] != -1) ++bad;
    throw TopologyError(TopologyErrorKind::kCycle,
                        "joint " + std::to_string(bad) +
                            " is not reachable from the root (cycle)");
  }

  BuiltTopology out;
  out.old_to_new = old_to_new;
  out.topology.parent.resize(n);
  for (int j = 0; j < n; ++j) {
    const int p = parents[j];
    out.topology.parent[old_to_new[j]] =
        p == kNoParent ? kNoParent : old_to_new[p];
  }
  for (int f : feet) out.topology.feet.push_back(old_to_new[f]);
  std::sort(out.topology.feet.begin(), out.topology.feet.end());
  out.topology.feet.erase(
      std::unique(out.topology.feet.begin(), out.topology.feet.end()),
      out.topology.feet.end());
  return out;
}

Eigen::MatrixXi compute_relations(const Topology& topology) {
  const int n = topology.joint_count();
  Eigen::MatrixXi r =
      Eigen::MatrixXi::Constant(n, n, static_cast<int>(RelationKind::kNoRelation));
  const auto kids = topology.children();
  for (int i = 0; i < n; ++i) {
    r(i, i) = static_cast<int>(kids[i].empty() ? RelationKind::kEndEffector
                                               : RelationKind::kSelf);
    const int p = topology.parent[i];
    if (p == kNoParent) continue;
    r(i, p) = static_cast<int>(RelationKind::kParent);
    r(p, i) = static_cast<int>(RelationKind::kChild);
    for (int s : kids[p]) {
      if (s != i) r(i, s) = static_cast<int>(RelationKind::kSibling);
    }
  }
  return r;
}

Eigen::MatrixXi compute_distances(const Topology& topology, int d_max) {
  if (d_max < 1) throw Error("d_max must be >= 1");
  const int n = topology.joint_count();
  std::vector<std::vector<int>> adj(n);
  for (int j = 0; j < n; ++j) {
    const int p = topology.parent[j];
    if (p == kNoParent) continue;
    adj[j].push_back(p);
    adj[p].push_back(j);
  }
  Eigen::MatrixXi d = Eigen::MatrixXi::Constant(n, n, d_max);
  std::vector<int> dist(n);
  std::deque<int> queue;
  for (int s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), -1);
    dist[s] = 0;
    queue.assign(1, s);
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      d(s, u) = std::min(dist[u], d_max);
      if (dist[u] >= d_max) continue;  // everything further is capped anyway
      for (int v : adj[u]) {
        if (dist[v] == -1) {
          dist[v] = dist[u] + 1;
          queue.push_back(v);
        }
      }
    }
  }
  return d;
}

std::vector<Vec3> rest_positions(const Topology& topology, const RestPose& rest) {
  const int n = topology.joint_count();
  std::vector<Vec3> pos(n, Vec3::Zero());
  for (int j = 0; j < n; ++j) {
    const int p = topology.parent[j];
    if (p != kNoParent) pos[j] = pos[p] + rest.offsets[j];
  }
  return pos;
}

RowMatrixXd rest_pose_features(const Topology& topology, const RestPose& rest) {
  const int n = topology.joint_count();
  if (static_cast<int>(rest.offsets.size()) != n) {
    throw Error("rest pose offset count does not match topology");
  }
  const auto pos = rest_positions(topology, rest);
  RowMatrixXd p = RowMatrixXd::Zero(n, kFeatureDim);
  for (int j = 0; j < n; ++j) {
    p.block<1, 3>(j, kPosOffset) = pos[j].transpose();
    p(j, kRotOffset + 0) = 1.0;
    p(j, kRotOffset + 4) = 1.0;
  }
  return p;
}

Skeleton make_skeleton(Topology topology, RestPose rest,
                       std::vector<std::string> names, int d_max) {
  const int n = topology.joint_count();
  if (static_cast<int>(rest.offsets.size()) != n ||
      static_cast<int>(names.size()) != n) {
    throw Error("skeleton parts disagree on joint count");
  }
  for (const auto& o : rest.offsets) {
    if (!o.allFinite()) throw Error("non-finite rest offset");
  }
  Skeleton s;
  s.pose_features = rest_pose_features(topology, rest);
  s.relations = compute_relations(topology);
  s.distances = compute_distances(topology, d_max);
  s.topology = std::move(topology);
  s.rest = std::move(rest);
  s.names = std::move(names);
  s.d_max = d_max;
  return s;
}

Skeleton select_joints(const Skeleton& skeleton, std::span<const int> keep) {
  const int n = skeleton.joint_count();
  std::vector<int> old_to_new(n, -1);
  for (int i = 0; i < static_cast<int>(keep.size()); ++i) old_to_new[keep[i]] = i;

  Topology topo;
  RestPose rest;
  std::vector<std::string> names;
  for (int old : keep) {
    // Walk up to the nearest kept ancestor, accumulating offsets.
    Vec3 offset = skeleton.rest.offsets[old];
    int p = skeleton.topology.parent[old];
    while (p != kNoParent && old_to_new[p] == -1) {
      offset += skeleton.rest.offsets[p];
      p = skeleton.topology.parent[p];
    }
    topo.parent.push_back(p == kNoParent ? kNoParent : old_to_new[p]);
    rest.offsets.push_back(offset);
    names.push_back(skeleton.names[old]);
  }
  for (int f : skeleton.topology.feet) {
    if (old_to_new[f] != -1) topo.feet.push_back(old_to_new[f]);
  }
  std::sort(topo.feet.begin(), topo.feet.end());
  Skeleton out = make_skeleton(std::move(topo), std::move(rest),
                               std::move(names), skeleton.d_max);
  if (!skeleton.end_site.empty()) {
    for (int old : keep) out.end_site.push_back(skeleton.is_end_site(old) ? 1 : 0);
  }
  return out;
}

AugmentResult augment_remove(const Skeleton& skeleton, Rng& rng,
                             double fraction) {
  if (!(fraction >= 0.10 - 1e-12 && fraction <= 0.30 + 1e-12)) {
    throw Error("removal fraction must lie in [0.10, 0.30]");
  }
  const Topology& topo = skeleton.topology;
  const int n = topo.joint_count();
  const int target = static_cast<int>(std::lround(fraction * n));

  std::vector<int> child_count(n, 0);
  for (int p : topo.parent) {
    if (p != kNoParent) ++child_count[p];
  }
  const std::vector<int> original_children = child_count;
  std::vector<bool> removed(n, false);

  int count = 0;
  while (count < target) {
    std::vector<int> candidates;
    for (int j = 1; j < n; ++j) {
      if (!removed[j] && child_count[j] == 0 && original_children[j] <= 1 &&
          topo.parent[j] != kNoParent && !topo.is_foot(j)) {
        candidates.push_back(j);
      }
    }
    if (candidates.empty()) break;
    const int pick =
        candidates[rng.uniform_int(0, static_cast<int>(candidates.size()) - 1)];
    removed[pick] = true;
    --child_count[topo.parent[pick]];
    ++count;
  }

  AugmentResult out;
  if (count == 0) {
    out.skeleton = skeleton;
    out.old_to_new.resize(n);
    std::iota(out.old_to_new.begin(), out.old_to_new.end(), 0);
    out.new_to_old = out.old_to_new;
    out.skipped = true;
    return out;
  }

  std::vector<int> keep;
  out.old_to_new.assign(n, -1);
  for (int j = 0; j < n; ++j) {
    if (!removed[j]) {
      out.old_to_new[j] = static_cast<int>(keep.size());
      keep.push_back(j);
    }
  }
  out.new_to_old = keep;
  out.removed = count;
  out.skeleton = select_joints(skeleton, keep);
  return out;
}

AugmentResult insert_midpoint_joint(const Skeleton& skeleton, int child) {
  const Topology& topo = skeleton.topology;
  const int n = topo.joint_count();
  if (child <= 0 || child >= n || topo.parent[child] == kNoParent) {
    throw Error("insert_midpoint_joint: joint has no incoming edge");
  }
  // The new joint takes the child's slot; the child and everything after it
  // shift by one. Parent indices stay smaller than child indices.
  AugmentResult out;
  out.old_to_new.resize(n);
  for (int j = 0; j < n; ++j) out.old_to_new[j] = j < child ? j : j + 1;
  out.new_to_old.assign(n + 1, -1);
  for (int j = 0; j < n; ++j) out.new_to_old[out.old_to_new[j]] = j;
  out.inserted = child;

  Topology nt;
  RestPose rest;
  std::vector<std::string> names;
  nt.parent.resize(n + 1);
  rest.offsets.resize(n + 1);
  names.resize(n + 1);
  for (int j = 0; j < n; ++j) {
    const int nj = out.old_to_new[j];
    const int p = topo.parent[j];
    nt.parent[nj] = p == kNoParent ? kNoParent : out.old_to_new[p];
    rest.offsets[nj] = skeleton.rest.offsets[j];
    names[nj] = skeleton.names[j];
  }
  const Vec3 half = 0.5 * skeleton.rest.offsets[child];
  nt.parent[child] = out.old_to_new[topo.parent[child]];
  rest.offsets[child] = half;
  names[child] = skeleton.names[child] + " mid";
  nt.parent[child + 1] = child;
  rest.offsets[child + 1] = half;
  for (int f : topo.feet) nt.feet.push_back(out.old_to_new[f]);
  std::sort(nt.feet.begin(), nt.feet.end());

  out.skeleton = make_skeleton(std::move(nt), std::move(rest), std::move(names),
                               skeleton.d_max);
  if (!skeleton.end_site.empty()) {
    out.skeleton.end_site.assign(n + 1, 0);
    for (int j = 0; j < n; ++j) {
      out.skeleton.end_site[out.old_to_new[j]] = skeleton.is_end_site(j) ? 1 : 0;
    }
  }
  return out;
}

AugmentResult augment_add(const Skeleton& skeleton, Rng& rng) {
  const int n = skeleton.joint_count();
  if (n < 2) throw Error("augment_add: skeleton has no edges");
  // Edges are identified by their child joint, 1..n-1 in preorder.
  const int child = rng.uniform_int(1, n - 1);
  return insert_midpoint_joint(skeleton, child);
}

PermutedCondition permute_condition(const Skeleton& skeleton,
                                    std::span<const int> perm) {
  const int n = skeleton.joint_count();
  PermutedCondition out;
  out.pose_features.resize(n, kFeatureDim);
  out.relations.resize(n, n);
  out.distances.resize(n, n);
  out.names.resize(n);
  for (int i = 0; i < n; ++i) {
    out.pose_features.row(perm[i]) = skeleton.pose_features.row(i);
    out.names[perm[i]] = skeleton.names[i];
    for (int j = 0; j < n; ++j) {
      out.relations(perm[i], perm[j]) = skeleton.relations(i, j);
      out.distances(perm[i], perm[j]) = skeleton.distances(i, j);
    }
  }
  return out;
}

std::string skeleton_to_json(const Skeleton& skeleton) {
  json j;
  j["format"] = "topodiff-skeleton";
  j["version"] = 1;
  j["d_max"] = skeleton.d_max;
  json joints = json::array();
  for (int i = 0; i < skeleton.joint_count(); ++i) {
    const Vec3& o = skeleton.rest.offsets[i];
    joints.push_back({{"name", skeleton.names[i]},
                      {"parent", skeleton.topology.parent[i]},
                      {"offset", {o.x(), o.y(), o.z()}},
                      {"foot", skeleton.topology.is_foot(i)},
                      {"end_site", skeleton.is_end_site(i)}});
  }
  j["joints"] = std::move(joints);
  return j.dump(2);
}

Skeleton skeleton_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("skeleton file: ") + e.what());
  }
  if (j.value("format", "") != "topodiff-skeleton") {
    throw Error("skeleton file: unexpected format tag");
  }
  std::vector<int> parents;
  std::vector<int> feet;
  RestPose rest;
  std::vector<std::string> names;
  std::vector<std::uint8_t> end_site;
  const auto& joints = j.at("joints");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const auto& jj = joints[i];
    parents.push_back(jj.at("parent").get<int>());
    const auto& o = jj.at("offset");
    rest.offsets.emplace_back(o.at(0).get<double>(), o.at(1).get<double>(),
                              o.at(2).get<double>());
    names.push_back(jj.at("name").get<std::string>());
    if (jj.value("foot", false)) feet.push_back(static_cast<int>(i));
    end_site.push_back(jj.value("end_site", false) ? 1 : 0);
  }
  auto built = build_topology(parents, feet);
  // Reorder payload if the file was not stored in preorder.
  const int n = static_cast<int>(parents.size());
  RestPose ordered_rest;
  ordered_rest.offsets.resize(n);
  std::vector<std::string> ordered_names(n);
  std::vector<std::uint8_t> ordered_end(n);
  for (int i = 0; i < n; ++i) {
    ordered_rest.offsets[built.old_to_new[i]] = rest.offsets[i];
    ordered_names[built.old_to_new[i]] = names[i];
    ordered_end[built.old_to_new[i]] = end_site[i];
  }
  Skeleton s = make_skeleton(std::move(built.topology), std::move(ordered_rest),
                             std::move(ordered_names),
                             j.value("d_max", kDefaultDMax));
  s.end_site = std::move(ordered_end);
  return s;
}

void save_skeleton(const Skeleton& skeleton, const std::string& path) {
  write_file_atomic(path, skeleton_to_json(skeleton) + "\n");
}

Skeleton load_skeleton(const std::string& path) {
  return skeleton_from_json(read_text_file(path));
}

}  // namespace topodiff
