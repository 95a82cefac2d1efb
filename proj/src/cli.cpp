#include "topodiff/cli.hpp"

#include "topodiff/bvh.hpp"
#include "topodiff/dataset.hpp"
#include "topodiff/io_util.hpp"
#include "topodiff/name_embedder.hpp"
#include "topodiff/normalization.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace topodiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

bool has_extension(const fs::path& p, const std::string& ext) {
  return lower(p.extension().string()) == ext;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset open_dataset(const std::string& dir, RunManifest& m) {
  if (dir.empty()) throw CommandError(kExitUsage, "no dataset given");
  if (!fs::exists(fs::path(dir) / "index.json")) {
    throw CommandError(kExitData, "no dataset index in '" + dir + "'");
  }
  Dataset d;
  try {
    d = Dataset::load(dir);
  } catch (const Error& e) {
    throw CommandError(kExitData, std::string("cannot read dataset: ") + e.what());
  }
  m.inputs.emplace_back(dir, hex64(d.fingerprint()));
  return d;
}

ModelBundle open_checkpoint(const std::string& dir, RunManifest& m) {
  if (dir.empty()) throw CommandError(kExitUsage, "no checkpoint given");
  const fs::path p(dir);
  if (!fs::exists(p / "manifest.json") && !fs::exists(p / "latest")) {
    throw CommandError(kExitMissingCheckpoint, "no checkpoint at '" + dir + "'");
  }
  ModelBundle b;
  try {
    b = load_checkpoint(dir);
  } catch (const Error& e) {
    throw CommandError(kExitMissingCheckpoint, std::string("cannot load checkpoint: ") + e.what());
  }
  m.inputs.emplace_back(dir, hex64(fnv1a(b.manifest)));
  return b;
}

void check_fits(const DenoiserConfig& model, const SkeletonEntry& e) {
  if (e.skeleton.joint_count() > model.max_joints) {
    throw CommandError(kExitShapeMismatch, "skeleton '" + e.id + "' has " +
                                               std::to_string(e.skeleton.joint_count()) +
                                               " joints, the model accepts " +
                                               std::to_string(model.max_joints));
  }
  if (e.skeleton.d_max != model.d_max) {
    throw CommandError(kExitShapeMismatch, "skeleton '" + e.id + "' uses d_max " +
                                               std::to_string(e.skeleton.d_max) +
                                               ", the model " + std::to_string(model.d_max));
  }
}

const SkeletonEntry& find_entry(const Dataset& d, const std::string& id) {
  for (const auto& e : d.entries) {
    if (e.id == id) return e;
  }
  throw CommandError(kExitData, "skeleton '" + id + "' is not in the dataset");
}

/// Raw features of a canonical BVH on a known skeleton.
MotionTensor tensor_from_canonical(const std::string& path, const SkeletonEntry& e) {
  const CanonicalClip clip = canonical_from_bvh(load_bvh(path));
  if (static_cast<int>(clip.parents.size()) != e.skeleton.joint_count()) {
    throw CommandError(kExitShapeMismatch,
                       "'" + path + "' has " + std::to_string(clip.parents.size()) +
                           " joints, skeleton '" + e.id + "' has " +
                           std::to_string(e.skeleton.joint_count()));
  }
  const ContactLabels contacts =
      clip_contacts(e.skeleton.topology, e.skeleton.rest, clip.motion, PreprocessConfig{});
  return features_from_clip(e.skeleton.topology, e.skeleton.rest, clip.motion, contacts);
}

void export_motion(const MotionTensor& raw, const SkeletonEntry& e, const fs::path& stem,
                   RunManifest& m) {
  save_tensor(raw, stem.string() + ".tdmt");
  const ClipDecode dec = clip_from_features(raw, e.fps);
  if (!dec.degenerate.empty()) {
    m.warnings.push_back(stem.filename().string() + ": " + std::to_string(dec.degenerate.size()) +
                         " degenerate rotations replaced by identity");
  }
  const double height = standing_height(e.skeleton.topology, e.skeleton.rest);
  save_bvh(clip_to_bvh(e.skeleton, dec.motion, height), stem.string() + ".bvh");
  m.outputs.push_back(stem.string() + ".tdmt");
  m.outputs.push_back(stem.string() + ".bvh");
}

/// "<skeleton>/<clip>" inside the dataset.
std::pair<const SkeletonEntry*, int> find_clip(const Dataset& d, const std::string& ref) {
  const auto slash = ref.find('/');
  if (slash == std::string::npos) {
    throw CommandError(kExitUsage, "motion reference '" + ref + "' is not <skeleton>/<clip>");
  }
  const SkeletonEntry& e = find_entry(d, ref.substr(0, slash));
  const std::string clip = ref.substr(slash + 1);
  for (std::size_t i = 0; i < e.clip_names.size(); ++i) {
    if (e.clip_names[i] == clip) return {&e, static_cast<int>(i)};
  }
  throw CommandError(kExitData, "clip '" + clip + "' not found for skeleton '" + e.id + "'");
}

std::string display_name(std::string s) {
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

}  // namespace

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["inputs"] = json::array();
  for (const auto& [path, fp] : inputs) j["inputs"].push_back({{"path", path}, {"fingerprint", fp}});
  j["outputs"] = outputs;
  j["warnings"] = warnings;
  j["started"] = started;
  j["finished"] = finished;
  j["exit_code"] = exit_code;
  j["status"] = exit_code == 0 ? "ok" : "failed";
  j["message"] = message;
  return j.dump(2) + "\n";
}

int execute(const std::string& command, const std::string& out_dir, const std::string& config,
            std::uint64_t seed, const std::function<void(RunManifest&)>& body, std::ostream& err) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.seed = seed;
  m.started = now_iso();
  int code = kExitOk;
  try {
    body(m);
  } catch (const CommandError& e) {
    code = e.code();
    m.message = e.what();
  } catch (const BvhParseError& e) {
    code = kExitData;
    m.message = e.what();
  } catch (const PreprocessError& e) {
    code = kExitData;
    m.message = e.what();
  } catch (const std::exception& e) {
    code = kExitFailure;
    m.message = e.what();
  }
  m.exit_code = code;
  m.finished = now_iso();
  if (!out_dir.empty()) {
    try {
      write_file_atomic((fs::path(out_dir) / "run_config.toml").string(), config);
      write_file_atomic((fs::path(out_dir) / "run_manifest.json").string(), m.to_json());
    } catch (const std::exception& e) {
      if (code == kExitOk) {
        code = kExitFailure;
        m.message = e.what();
      }
    }
  }
  for (const auto& w : m.warnings) err << "warning: " << w << "\n";
  if (code != kExitOk) err << "error: " << m.message << "\n";
  return code;
}

std::vector<int> parse_frame_ranges(const std::string& spec, int frames) {
  std::set<int> out;
  std::stringstream ss(spec);
  std::string part;
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) {
      throw CommandError(kExitUsage, "bad frame range '" + spec + "'");
    }
    return v;
  };
  while (std::getline(ss, part, ',')) {
    part.erase(std::remove_if(part.begin(), part.end(),
                              [](unsigned char ch) { return std::isspace(ch); }),
               part.end());
    if (part.empty()) continue;
    const auto dash = part.find('-', 1);
    const int a = number(dash == std::string::npos ? part : part.substr(0, dash));
    const int b = dash == std::string::npos ? a : number(part.substr(dash + 1));
    if (a < 0 || b < a || b >= frames) {
      throw CommandError(kExitUsage, "frame range '" + part + "' outside [0, " +
                                         std::to_string(frames) + ")");
    }
    for (int f = a; f <= b; ++f) out.insert(f);
  }
  return {out.begin(), out.end()};
}

std::string path_fingerprint(const std::string& path) {
  const fs::path p(path);
  if (fs::is_regular_file(p)) return hex64(fnv1a(read_text_file(path)));
  if (!fs::is_directory(p)) return "missing";
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a(std::string("dir"));
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, p).generic_string();
    const std::string body = read_text_file(f.string());
    h = fnv1a(rel.data(), rel.size(), h);
    h = fnv1a(body.data(), body.size(), h);
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------

void cmd_preprocess(const PreprocessCommand& c, RunManifest& m, std::ostream& log) {
  const fs::path in(c.in_dir);
  if (c.in_dir.empty() || !fs::is_directory(in)) {
    throw CommandError(kExitData, "input directory '" + c.in_dir + "' not found");
  }
  if (c.out_dir.empty()) throw CommandError(kExitUsage, "no output directory given");
  const fs::path out(c.out_dir);
  fs::create_directories(out);
  m.inputs.emplace_back(c.in_dir, path_fingerprint(c.in_dir));

  // Skeleton types are subdirectories; loose files form one more group.
  std::vector<std::pair<std::string, std::vector<fs::path>>> groups;
  for (const auto& dir : sorted_entries(in, true)) {
    std::vector<fs::path> files;
    for (const auto& f : sorted_entries(dir, false)) {
      if (has_extension(f, ".bvh")) files.push_back(f);
    }
    if (!files.empty()) groups.emplace_back(dir.filename().string(), files);
  }
  {
    std::vector<fs::path> loose;
    for (const auto& f : sorted_entries(in, false)) {
      if (has_extension(f, ".bvh")) loose.push_back(f);
    }
    if (!loose.empty()) groups.emplace_back(fs::absolute(in).filename().string(), loose);
  }

  Dataset dataset;
  std::string error_log;
  int failed = 0;
  auto reject = [&](const fs::path& file, const std::string& stage, const std::string& what) {
    ++failed;
    error_log += json{{"file", file.string()}, {"stage", stage}, {"error", what}}.dump() + "\n";
    log << "rejected " << file.string() << " (" << stage << "): " << what << "\n";
  };

  for (const auto& [id, files] : groups) {
    std::vector<std::pair<fs::path, BvhDocument>> docs;
    for (const auto& f : files) {
      try {
        docs.emplace_back(f, load_bvh(f.string()));
      } catch (const std::exception& e) {
        reject(f, "parse", e.what());
      }
    }
    const BvhDocument* rest = nullptr;
    const std::string idle = lower(c.config.idle_pattern);
    for (const auto& [f, doc] : docs) {
      if (!idle.empty() && lower(f.stem().string()).find(idle) != std::string::npos) {
        rest = &doc;
        break;
      }
    }
    std::vector<MotionTensor> clips;
    std::vector<std::string> names;
    ProcessedClip first;
    bool have_first = false;
    bool warned_rest = false;
    for (const auto& [f, doc] : docs) {
      ProcessedClip p;
      try {
        p = preprocess_clip(doc, rest && rest->joints.size() == doc.joints.size() ? rest : nullptr,
                            c.config);
      } catch (const std::exception& e) {
        reject(f, "preprocess", e.what());
        continue;
      }
      if (have_first && (p.topology.parent != first.topology.parent || p.names != first.names)) {
        reject(f, "preprocess", "hierarchy differs from the other clips of '" + id + "'");
        continue;
      }
      if (p.meta.identity_rest && !warned_rest) {
        m.warnings.push_back(id + ": no idle clip, rotations stay relative to the file's zero pose");
        warned_rest = true;
      }
      if (p.meta.anchored_to_origin) {
        m.warnings.push_back(f.string() + ": root stays at the origin while the body moves");
      }
      if (!have_first) {
        first = p;
        have_first = true;
      }
      const Skeleton s = first.skeleton(c.config.d_max);
      const ContactLabels contacts = clip_contacts(s.topology, s.rest, p.motion, c.config);
      clips.push_back(features_from_clip(s.topology, s.rest, p.motion, contacts));
      names.push_back(f.stem().string());
      const fs::path bvh = out / "bvh" / id / (f.stem().string() + ".bvh");
      save_bvh(clip_to_bvh(s, p.motion, p.standing_height), bvh.string());
      m.outputs.push_back(bvh.string());
    }
    if (clips.empty()) continue;
    SkeletonEntry& e = dataset.add(id, first.skeleton(c.config.d_max), std::move(clips), names);
    // Frame times go through text; keep the index stable across reruns.
    e.fps = std::round(first.meta.fps * 1e6) / 1e6;
    log << "skeleton " << id << ": " << e.clips.size() << " clips, " << e.total_frames()
        << " frames\n";
  }

  dataset.save(c.out_dir);
  write_file_atomic((out / "errors.jsonl").string(), error_log);
  m.outputs.push_back((out / "index.json").string());
  m.outputs.push_back((out / "errors.jsonl").string());
  if (failed > 0) m.warnings.push_back(std::to_string(failed) + " files rejected, see errors.jsonl");
  if (dataset.entries.empty()) throw CommandError(kExitData, "no input file could be processed");
}

void cmd_train(const TrainCommand& c, RunManifest& m, std::ostream& log) {
  if (c.out_dir.empty()) throw CommandError(kExitUsage, "no output directory given");
  try {
    c.model.validate();
    c.train.validate();
  } catch (const Error& e) {
    throw CommandError(kExitUsage, e.what());
  }
  const Dataset dataset = open_dataset(c.dataset, m);
  for (const auto& e : dataset.entries) check_fits(c.model, e);
  TrainConfig tc = c.train;
  tc.out_dir = c.out_dir;
  auto make = [&]() {
    if (c.resume.empty()) return Trainer(dataset, c.model, tc);
    open_checkpoint(c.resume, m);
    return Trainer::resume(dataset, c.resume, tc);
  };
  Trainer trainer = make();
  const auto t0 = std::chrono::steady_clock::now();
  trainer.run([&](const StepStats& s) {
    if (tc.log_every > 0 && s.step % tc.log_every == 0) {
      const double sec =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << "step " << s.step << " loss " << s.loss << " simple " << s.simple << " rot "
          << s.rot << " grad " << s.grad_norm << " (" << sec << " s)\n";
    }
  });
  m.outputs.push_back((fs::path(c.out_dir) / "latest").string());
  m.outputs.push_back((fs::path(c.out_dir) / "checkpoints").string());
}

void cmd_sample(const SampleCommand& c, RunManifest& m, std::ostream& log) {
  if (c.out_dir.empty()) throw CommandError(kExitUsage, "no output directory given");
  if (c.frames < 1 || c.count < 1) throw CommandError(kExitUsage, "frames and count must be positive");
  const ModelBundle b = open_checkpoint(c.checkpoint, m);
  const Dataset dataset = open_dataset(c.dataset, m);
  std::vector<std::string> ids = c.skeletons;
  if (ids.empty()) {
    for (const auto& e : dataset.entries) ids.push_back(e.id);
  }
  if (c.frames > b.model->config().max_position) {
    throw CommandError(kExitShapeMismatch, "the model supports at most " +
                                               std::to_string(b.model->config().max_position) +
                                               " frames");
  }
  for (const auto& id : ids) {
    const SkeletonEntry& e = find_entry(dataset, id);
    check_fits(b.model->config(), e);
    const ModelCondition cond = make_condition(e.skeleton, e.stats, *b.embedder);
    for (int i = 0; i < c.count; ++i) {
      topodiff::SampleOptions o;
      o.frames = c.frames;
      o.seed = mix_seed(c.seed, fnv1a(id) + static_cast<std::uint64_t>(i));
      MotionTensor x = sample(*b.model, b.schedule, cond, e.stats, o);
      if (c.footlock) x = footlock_cleanup(x, e.skeleton.topology.feet);
      char name[32];
      std::snprintf(name, sizeof name, "sample_%03d", i);
      export_motion(x, e, fs::path(c.out_dir) / id / name, m);
      log << "wrote " << id << "/" << name << "\n";
    }
  }
}

void cmd_edit(const EditCommand& c, RunManifest& m, std::ostream& log) {
  if (c.out_dir.empty()) throw CommandError(kExitUsage, "no output directory given");
  if (!fs::is_regular_file(c.input)) throw CommandError(kExitData, "input '" + c.input + "' not found");
  const ModelBundle b = open_checkpoint(c.checkpoint, m);
  const Dataset dataset = open_dataset(c.dataset, m);
  const SkeletonEntry& e = find_entry(dataset, c.skeleton);
  check_fits(b.model->config(), e);
  m.inputs.emplace_back(c.input, path_fingerprint(c.input));
  const MotionTensor raw = tensor_from_canonical(c.input, e);
  const int frames = raw.frames;
  const int joints = raw.joints;

  std::vector<std::uint8_t> fixed(static_cast<std::size_t>(frames) * joints, 0);
  if (c.fix_all) {
    std::fill(fixed.begin(), fixed.end(), 1);
  } else {
    if (!c.fixed_frames.empty()) {
      const auto f = frame_edit_mask(frames, joints, parse_frame_ranges(c.fixed_frames, frames));
      for (std::size_t i = 0; i < fixed.size(); ++i) fixed[i] |= f[i];
    }
    if (!c.fixed_joints.empty()) {
      std::vector<int> idx;
      for (const auto& name : c.fixed_joints) {
        const auto it = std::find(e.skeleton.names.begin(), e.skeleton.names.end(),
                                  display_name(name));
        if (it == e.skeleton.names.end()) {
          throw CommandError(kExitUsage, "skeleton '" + e.id + "' has no joint '" + name + "'");
        }
        idx.push_back(static_cast<int>(it - e.skeleton.names.begin()));
      }
      const auto j = joint_edit_mask(frames, joints, idx);
      for (std::size_t i = 0; i < fixed.size(); ++i) fixed[i] |= j[i];
    }
  }
  if (frames > b.model->config().max_position) {
    throw CommandError(kExitShapeMismatch, "clip is longer than the model's position range");
  }
  const ModelCondition cond = make_condition(e.skeleton, e.stats, *b.embedder);
  topodiff::SampleOptions o;
  o.frames = frames;
  o.seed = c.seed;
  const MotionTensor y = edit_sample(*b.model, b.schedule, cond, e.stats, raw, fixed, o);
  const std::string stem = fs::path(c.input).stem().string() + "_edit";
  export_motion(y, e, fs::path(c.out_dir) / stem, m);
  log << "wrote " << stem << " (" << std::count(fixed.begin(), fixed.end(), 1) << " of "
      << fixed.size() << " tokens fixed)\n";
}

void cmd_eval(const EvalCommand& c, RunManifest& m, std::ostream& log) {
  if (c.out_dir.empty()) throw CommandError(kExitUsage, "no output directory given");
  try {
    c.metrics.validate();
  } catch (const Error& e) {
    throw CommandError(kExitUsage, e.what());
  }
  const Dataset dataset = open_dataset(c.dataset, m);
  if (!fs::is_directory(c.generated)) {
    throw CommandError(kExitData, "generated directory '" + c.generated + "' not found");
  }
  m.inputs.emplace_back(c.generated, path_fingerprint(c.generated));
  MetricReport report;
  report.config = c.metrics;
  for (const auto& dir : sorted_entries(c.generated, true)) {
    const std::string id = dir.filename().string();
    const SkeletonEntry* e = nullptr;
    for (const auto& x : dataset.entries) {
      if (x.id == id) e = &x;
    }
    if (!e) {
      m.warnings.push_back("skipping '" + id + "': not in the dataset");
      continue;
    }
    std::vector<MotionTensor> gen;
    for (const auto& f : sorted_entries(dir, false)) {
      MotionTensor raw;
      if (has_extension(f, ".tdmt")) {
        raw = load_tensor(f.string());
      } else if (has_extension(f, ".bvh")) {
        raw = tensor_from_canonical(f.string(), *e);
      } else {
        continue;
      }
      if (raw.joints != e->skeleton.joint_count()) {
        throw CommandError(kExitShapeMismatch, "'" + f.string() + "' does not match skeleton '" +
                                                   id + "'");
      }
      gen.push_back(normalize(raw, e->stats));
    }
    if (gen.empty()) {
      m.warnings.push_back("skipping '" + id + "': no motions");
      continue;
    }
    std::vector<MotionTensor> gt;
    for (const auto& x : e->clips) gt.push_back(normalize(x, e->stats));
    report.skeletons.push_back(evaluate_skeleton(id, gt, gen, c.metrics));
  }
  if (report.skeletons.empty()) throw CommandError(kExitData, "nothing to evaluate");
  report.aggregate();
  const fs::path out(c.out_dir);
  write_file_atomic((out / "metrics.json").string(), report.to_json());
  write_file_atomic((out / "metrics.txt").string(), report.table());
  m.outputs.push_back((out / "metrics.json").string());
  m.outputs.push_back((out / "metrics.txt").string());
  log << report.table();
}

void cmd_analyze(const AnalyzeCommand& c, RunManifest& m, std::ostream& log) {
  if (c.out_dir.empty()) throw CommandError(kExitUsage, "no output directory given");
  if (c.mode != "spatial" && c.mode != "temporal" && c.mode != "segment") {
    throw CommandError(kExitUsage, "unknown analysis mode '" + c.mode + "'");
  }
  try {
    c.analysis.validate();
  } catch (const Error& e) {
    throw CommandError(kExitUsage, e.what());
  }
  const ModelBundle b = open_checkpoint(c.checkpoint, m);
  const Dataset dataset = open_dataset(c.dataset, m);
  const auto [re, ri] = find_clip(dataset, c.reference);
  check_fits(b.model->config(), *re);
  const MotionTensor xr = normalize(re->clips[ri], re->stats);
  const ModelCondition cr = make_condition(re->skeleton, re->stats, *b.embedder);
  const fs::path out(c.out_dir);
  fs::create_directories(out);

  if (c.mode == "segment") {
    const SegmentationResult seg =
        temporal_segmentation(*b.model, b.schedule, xr, cr, c.k, c.analysis);
    write_file_atomic((out / "segmentation.json").string(), segmentation_to_json(seg));
    write_file_atomic((out / "segmentation_colors.json").string(), segmentation_colors_json(seg));
    m.outputs.push_back((out / "segmentation.json").string());
    m.outputs.push_back((out / "segmentation_colors.json").string());
    log << "segments:";
    for (int l : seg.labels) log << " " << l;
    log << "\n";
    return;
  }
  if (c.target.empty()) throw CommandError(kExitUsage, "correspondence needs a target motion");
  const auto [te, ti] = find_clip(dataset, c.target);
  check_fits(b.model->config(), *te);
  const MotionTensor xt = normalize(te->clips[ti], te->stats);
  const ModelCondition ct = make_condition(te->skeleton, te->stats, *b.embedder);
  CorrespondenceMap map;
  std::string text;
  if (c.mode == "spatial") {
    map = spatial_correspondence(*b.model, b.schedule, xr, cr, xt, ct, c.analysis);
    text = correspondence_to_json(map, re->skeleton.names, te->skeleton.names);
    for (std::size_t j = 0; j < map.match.size(); ++j) {
      if (map.match[j] >= 0) {
        log << te->skeleton.names[j] << " -> " << re->skeleton.names[map.match[j]] << "\n";
      }
    }
  } else {
    map = temporal_correspondence(*b.model, b.schedule, xr, cr, xt, ct, c.analysis);
    text = correspondence_to_json(map);
    log << "matched " << std::count_if(map.match.begin(), map.match.end(),
                                       [](int v) { return v >= 0; })
        << " frames\n";
  }
  write_file_atomic((out / "correspondence.json").string(), text);
  write_file_atomic((out / "correspondence_colors.json").string(),
                    correspondence_colors_json(map));
  m.outputs.push_back((out / "correspondence.json").string());
  m.outputs.push_back((out / "correspondence_colors.json").string());
}

}  // namespace topodiff::cli
