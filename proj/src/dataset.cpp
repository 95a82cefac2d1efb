#include "topodiff/dataset.hpp"

#include "topodiff/io_util.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>

namespace topodiff {

using nlohmann::json;

int SkeletonEntry::total_frames() const {
  int n = 0;
  for (const auto& c : clips) n += c.valid_frame_count();
  return n;
}

SkeletonEntry& Dataset::add(std::string id, Skeleton skeleton, std::vector<MotionTensor> clips,
                            std::vector<std::string> clip_names, std::string category) {
  if (clips.empty()) throw Error("dataset: skeleton '" + id + "' has no clips");
  for (const auto& e : entries) {
    if (e.id == id) throw Error("dataset: duplicate skeleton id '" + id + "'");
  }
  for (const auto& c : clips) {
    if (c.joints != skeleton.joint_count()) {
      throw Error("dataset: clip joint count differs from skeleton '" + id + "'");
    }
  }
  if (clip_names.empty()) {
    for (std::size_t i = 0; i < clips.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "clip%03zu", i);
      clip_names.emplace_back(buf);
    }
  }
  if (clip_names.size() != clips.size()) throw Error("dataset: clip name count mismatch");
  SkeletonEntry e;
  e.id = std::move(id);
  e.category = std::move(category);
  e.skeleton = std::move(skeleton);
  e.stats = compute_stats(clips);
  e.clips = std::move(clips);
  e.clip_names = std::move(clip_names);
  entries.push_back(std::move(e));
  return entries.back();
}

std::vector<int> Dataset::clip_counts() const {
  std::vector<int> n;
  for (const auto& e : entries) n.push_back(static_cast<int>(e.clips.size()));
  return n;
}

const SkeletonEntry& Dataset::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw Error("dataset has no skeleton '" + id + "'");
}

std::uint64_t Dataset::fingerprint() const {
  std::uint64_t h = fnv1a(index_json());
  for (const auto& e : entries) {
    h = fnv1a(skeleton_to_json(e.skeleton).data(), skeleton_to_json(e.skeleton).size(), h);
    for (const auto& c : e.clips) {
      const std::string bytes = tensor_to_bytes(c);
      h = fnv1a(bytes.data(), bytes.size(), h);
    }
  }
  return h;
}

std::string Dataset::index_json() const {
  json j;
  j["format"] = "topodiff-dataset";
  j["version"] = 1;
  j["skeletons"] = json::array();
  for (const auto& e : entries) {
    json s;
    s["id"] = e.id;
    s["category"] = e.category;
    s["fps"] = e.fps;
    s["joints"] = e.skeleton.joint_count();
    s["skeleton"] = "skeletons/" + e.id + ".json";
    s["stats"] = "stats/" + e.id + ".json";
    s["clip_count"] = e.clips.size();
    s["total_frames"] = e.total_frames();
    s["clips"] = json::array();
    for (std::size_t i = 0; i < e.clips.size(); ++i) {
      s["clips"].push_back({{"name", e.clip_names[i]},
                            {"tensor", "clips/" + e.id + "/" + e.clip_names[i] + ".tdmt"},
                            {"frames", e.clips[i].frames}});
    }
    j["skeletons"].push_back(s);
  }
  return j.dump(2) + "\n";
}

void Dataset::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  for (const auto& e : entries) {
    save_skeleton(e.skeleton, (root / "skeletons" / (e.id + ".json")).string());
    save_stats(e.stats, (root / "stats" / (e.id + ".json")).string());
    for (std::size_t i = 0; i < e.clips.size(); ++i) {
      save_tensor(e.clips[i], (root / "clips" / e.id / (e.clip_names[i] + ".tdmt")).string());
    }
  }
  write_file_atomic((root / "index.json").string(), index_json());
}

Dataset Dataset::load(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const auto j = json::parse(read_text_file((root / "index.json").string()));
  if (j.value("format", "") != "topodiff-dataset") throw Error("not a dataset index: " + dir);
  Dataset d;
  for (const auto& s : j.at("skeletons")) {
    SkeletonEntry e;
    e.id = s.at("id").get<std::string>();
    e.category = s.value("category", "");
    e.fps = s.value("fps", 30.0);
    e.skeleton = load_skeleton((root / s.at("skeleton").get<std::string>()).string());
    e.stats = load_stats((root / s.at("stats").get<std::string>()).string());
    for (const auto& c : s.at("clips")) {
      e.clip_names.push_back(c.at("name").get<std::string>());
      e.clips.push_back(load_tensor((root / c.at("tensor").get<std::string>()).string()));
    }
    if (e.clips.empty()) throw Error("dataset: skeleton '" + e.id + "' has no clips");
    d.entries.push_back(std::move(e));
  }
  return d;
}

}  // namespace topodiff
