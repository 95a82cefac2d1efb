#include "topodiff/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace topodiff {

void MetricConfig::validate() const {
  if (window < 2) throw Error("metric config: window must be at least 2 frames");
  if (stride < 1) throw Error("metric config: stride must be at least 1");
  if (!(coverage_percentile >= 0.0 && coverage_percentile <= 100.0)) {
    throw Error("metric config: coverage percentile must lie in [0, 100]");
  }
}

WindowSet extract_windows(std::span<const MotionTensor> motions, const MetricConfig& config) {
  config.validate();
  WindowSet w;
  w.motion_count = static_cast<int>(motions.size());
  int joints = -1;
  for (std::size_t m = 0; m < motions.size(); ++m) {
    const MotionTensor& x = motions[m];
    int frames = 0;
    while (frames < x.frames && x.frame_mask[frames]) ++frames;
    std::vector<int> valid_joints;
    for (int j = 0; j < x.joints; ++j) {
      if (x.joint_mask[j]) valid_joints.push_back(j);
    }
    if (joints < 0) joints = static_cast<int>(valid_joints.size());
    if (joints != static_cast<int>(valid_joints.size())) {
      throw Error("metrics: motions of one set must share a skeleton");
    }
    const int len = config.window * joints * 12;
    for (int s = 0; s + config.window <= frames; s += config.stride) {
      Eigen::VectorXd v(len);
      int k = 0;
      for (int f = s; f < s + config.window; ++f) {
        for (int j : valid_joints) {
          v.segment(k, 12) = x.data.row(x.row(f, j)).segment(0, 12).transpose();
          k += 12;
        }
      }
      w.data.push_back(std::move(v));
      w.motion.push_back(static_cast<int>(m));
      w.start.push_back(s);
    }
  }
  return w;
}

double window_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0) throw Error("metrics: window size mismatch");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

void require_windows(const WindowSet& w, const char* what) {
  if (w.size() == 0) throw Error(std::string("metrics: no windows in ") + what);
}

void check_compatible(const WindowSet& a, const WindowSet& b) {
  if (a.data.front().size() != b.data.front().size()) {
    throw Error("metrics: motion sets have different joint counts");
  }
}

double nearest(const Eigen::VectorXd& q, const WindowSet& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& v : set.data) best = std::min(best, window_distance(q, v));
  return best;
}

}  // namespace

double coverage_threshold(const WindowSet& gt, const MetricConfig& config) {
  require_windows(gt, "ground truth");
  if (gt.size() == 1) return 0.0;
  std::vector<double> nn;
  nn.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    double fallback = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (i == j) continue;
      const double d = window_distance(gt.data[i], gt.data[j]);
      fallback = std::min(fallback, d);
      const bool overlaps =
          gt.motion[i] == gt.motion[j] && std::abs(gt.start[i] - gt.start[j]) < config.window;
      if (!overlaps) best = std::min(best, d);
    }
    nn.push_back(std::isfinite(best) ? best : fallback);
  }
  return percentile(nn, config.coverage_percentile);
}

double coverage(std::span<const MotionTensor> gt, std::span<const MotionTensor> gen,
                const MetricConfig& config) {
  const WindowSet m = extract_windows(gt, config);
  const WindowSet g = extract_windows(gen, config);
  require_windows(m, "ground truth");
  require_windows(g, "generated set");
  check_compatible(m, g);
  const double tau = coverage_threshold(m, config);
  std::size_t covered = 0;
  for (const auto& w : m.data) {
    if (nearest(w, g) <= tau) ++covered;
  }
  return 100.0 * static_cast<double>(covered) / static_cast<double>(m.size());
}

double local_diversity(std::span<const MotionTensor> gen, std::span<const MotionTensor> gt,
                       const MetricConfig& config) {
  const WindowSet g = extract_windows(gen, config);
  const WindowSet m = extract_windows(gt, config);
  require_windows(m, "ground truth");
  require_windows(g, "generated set");
  check_compatible(m, g);
  double sum = 0.0;
  for (const auto& w : g.data) sum += nearest(w, m);
  return sum / static_cast<double>(g.size());
}

double inter_diversity(std::span<const MotionTensor> gen, const MetricConfig& config) {
  if (gen.size() < 2) throw Error("inter diversity needs at least two motions");
  const WindowSet g = extract_windows(gen, config);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = i + 1; j < g.size(); ++j) {
      if (g.motion[i] == g.motion[j]) continue;
      sum += window_distance(g.data[i], g.data[j]);
      ++n;
    }
  }
  if (n == 0) throw Error("inter diversity: motions are shorter than one window");
  return sum / static_cast<double>(n);
}

double intra_diversity(std::span<const MotionTensor> set, const MetricConfig& config) {
  if (set.empty()) throw Error("intra diversity of an empty set");
  double total = 0.0;
  for (const auto& motion : set) {
    const WindowSet w = extract_windows(std::span<const MotionTensor>(&motion, 1), config);
    if (w.size() < 2) throw Error("intra diversity needs at least two windows per motion");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t j = i + 1; j < w.size(); ++j) {
        sum += window_distance(w.data[i], w.data[j]);
        ++n;
      }
    }
    total += sum / static_cast<double>(n);
  }
  return total / static_cast<double>(set.size());
}

double intra_diversity_diff(std::span<const MotionTensor> gen, std::span<const MotionTensor> gt,
                            const MetricConfig& config) {
  return std::abs(intra_diversity(gen, config) - intra_diversity(gt, config));
}

SkeletonMetrics evaluate_skeleton(const std::string& id, std::span<const MotionTensor> gt,
                                  std::span<const MotionTensor> gen, const MetricConfig& config) {
  SkeletonMetrics s;
  s.id = id;
  s.gt_motions = static_cast<int>(gt.size());
  s.generated_motions = static_cast<int>(gen.size());
  s.threshold = coverage_threshold(extract_windows(gt, config), config);
  s.coverage = coverage(gt, gen, config);
  s.local_diversity = local_diversity(gen, gt, config);
  s.inter_diversity = gen.size() >= 2 ? inter_diversity(gen, config)
                                      : std::numeric_limits<double>::quiet_NaN();
  s.intra_diversity_diff = intra_diversity_diff(gen, gt, config);
  return s;
}

namespace {

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd r;
  std::vector<double> v;
  for (double x : values) {
    if (std::isfinite(x)) v.push_back(x);
  }
  r.count = static_cast<int>(v.size());
  if (v.empty()) {
    r.mean = r.std = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / v.size());
  return r;
}

}  // namespace

void MetricReport::aggregate() {
  std::vector<double> c, l, i, d;
  for (const auto& s : skeletons) {
    c.push_back(s.coverage);
    l.push_back(s.local_diversity);
    i.push_back(s.inter_diversity);
    d.push_back(s.intra_diversity_diff);
  }
  coverage = mean_std(c);
  local_diversity = mean_std(l);
  inter_diversity = mean_std(i);
  intra_diversity_diff = mean_std(d);
}

std::string format_mean_std(const MeanStd& v, int precision) {
  if (v.count == 0) return "n/a";
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", precision, v.mean, precision, v.std);
  return buf;
}

std::string MetricReport::table() const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %10s %10s %10s %10s\n", "skeleton", "coverage", "local",
                "inter", "intra_diff");
  os << buf;
  for (const auto& s : skeletons) {
    std::snprintf(buf, sizeof buf, "%-24s %10.1f %10.3f %10.3f %10.3f\n", s.id.c_str(),
                  s.coverage, s.local_diversity, s.inter_diversity, s.intra_diversity_diff);
    os << buf;
  }
  os << "coverage " << format_mean_std(coverage, 1) << "  local "
     << format_mean_std(local_diversity) << "  inter " << format_mean_std(inter_diversity)
     << "  intra_diff " << format_mean_std(intra_diversity_diff) << "\n";
  os << "window " << config.window << ", stride " << config.stride << ", threshold percentile "
     << config.coverage_percentile << "\n";
  return os.str();
}

std::string MetricReport::to_json() const {
  using nlohmann::json;
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  auto ms = [&](const MeanStd& v) {
    return json{{"mean", num(v.mean)}, {"std", num(v.std)}, {"count", v.count}};
  };
  json j;
  j["config"] = {{"window", config.window},
                 {"stride", config.stride},
                 {"coverage_percentile", config.coverage_percentile}};
  j["skeletons"] = json::array();
  for (const auto& s : skeletons) {
    j["skeletons"].push_back({{"id", s.id},
                              {"gt_motions", s.gt_motions},
                              {"generated_motions", s.generated_motions},
                              {"threshold", num(s.threshold)},
                              {"coverage", num(s.coverage)},
                              {"local_diversity", num(s.local_diversity)},
                              {"inter_diversity", num(s.inter_diversity)},
                              {"intra_diversity_diff", num(s.intra_diversity_diff)}});
  }
  j["aggregate"] = {{"coverage", ms(coverage)},
                    {"local_diversity", ms(local_diversity)},
                    {"inter_diversity", ms(inter_diversity)},
                    {"intra_diversity_diff", ms(intra_diversity_diff)}};
  return j.dump(2) + "\n";
}

std::map<std::string, double> default_category_shares() {
  return {{"quadruped", 0.43}, {"biped", 0.17}, {"flying", 0.23}, {"insect", 0.17}};
}

namespace {

template <typename V>
void shuffle(V& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) std::swap(v[i], v[rng.uniform_int(0, i)]);
}

}  // namespace

std::vector<std::string> select_benchmark(std::span<const BenchmarkCandidate> candidates, Rng& rng,
                                          int count, int min_frames, int max_frames,
                                          const std::map<std::string, double>& shares) {
  std::vector<BenchmarkCandidate> ok;
  for (const auto& c : candidates) {
    if (c.total_frames >= min_frames && c.total_frames <= max_frames) ok.push_back(c);
  }
  if (ok.empty()) {
    throw Error("benchmark: no skeleton has between " + std::to_string(min_frames) + " and " +
                std::to_string(max_frames) + " frames");
  }
  shuffle(ok, rng);
  const int target = std::min<int>(count, static_cast<int>(ok.size()));
  const bool labeled = std::all_of(ok.begin(), ok.end(),
                                   [&](const auto& c) { return shares.count(c.category) > 0; });
  std::vector<std::string> picked;
  std::vector<bool> used(ok.size(), false);
  if (labeled) {
    // Largest-remainder quotas.
    double share_sum = 0.0;
    for (const auto& [k, v] : shares) share_sum += v;
    std::vector<std::pair<std::string, double>> exact;
    for (const auto& [k, v] : shares) exact.emplace_back(k, target * v / share_sum);
    std::map<std::string, int> quota;
    int assigned = 0;
    for (const auto& [k, x] : exact) {
      quota[k] = static_cast<int>(std::floor(x));
      assigned += quota[k];
    }
    std::vector<std::pair<double, std::string>> rema;
    for (const auto& [k, x] : exact) rema.emplace_back(x - std::floor(x), k);
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < target && i < rema.size(); ++i, ++assigned) {
      ++quota[rema[i].second];
    }
    for (std::size_t i = 0; i < ok.size(); ++i) {
      int& q = quota[ok[i].category];
      if (q > 0) {
        --q;
        used[i] = true;
        picked.push_back(ok[i].id);
      }
    }
  }
  for (std::size_t i = 0; i < ok.size() && static_cast<int>(picked.size()) < target; ++i) {
    if (!used[i]) {
      used[i] = true;
      picked.push_back(ok[i].id);
    }
  }
  return picked;
}

std::vector<int> kinematic_chains(const Topology& topology) {
  const auto children = topology.children();
  std::vector<int> chains;
  // A chain starts on every edge leaving the root or a branching joint and
  // follows single-child joints until it meets a leaf or another branch.
  for (int j = 0; j < topology.joint_count(); ++j) {
    const bool is_start = topology.parent[j] == kNoParent || children[j].size() != 1;
    if (!is_start) continue;
    for (int c : children[j]) {
      int len = 1;
      int cur = c;
      while (children[cur].size() == 1) {
        cur = children[cur][0];
        ++len;
      }
      chains.push_back(len);
    }
  }
  return chains;
}

GraphFeatureVector graph_features(const Topology& topology) {
  GraphFeatureVector g;
  g.joint_count = topology.joint_count();
  const auto children = topology.children();
  for (const auto& c : children) g.degrees.push_back(static_cast<double>(c.size()));
  for (int len : kinematic_chains(topology)) g.chain_lengths.push_back(len);
  g.end_effector_count = static_cast<int>(topology.leaves().size());
  if (g.joint_count == 1) g.end_effector_count = 1;
  return g;
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error("wasserstein distance of an empty distribution");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> xs(a);
  xs.insert(xs.end(), b.begin(), b.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  double dist = 0.0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    while (ia < a.size() && a[ia] <= xs[k]) ++ia;
    while (ib < b.size() && b[ib] <= xs[k]) ++ib;
    const double fa = static_cast<double>(ia) / a.size();
    const double fb = static_cast<double>(ib) / b.size();
    dist += std::abs(fa - fb) * (xs[k + 1] - xs[k]);
  }
  return dist;
}

OodBreakdown ood_score(const Topology& skeleton, std::span<const Topology> training) {
  if (training.empty()) throw Error("ood score needs at least one training skeleton");
  const GraphFeatureVector s = graph_features(skeleton);
  std::vector<double> counts, degrees, chains, effectors;
  for (const auto& t : training) {
    const GraphFeatureVector g = graph_features(t);
    counts.push_back(g.joint_count);
    effectors.push_back(g.end_effector_count);
    degrees.insert(degrees.end(), g.degrees.begin(), g.degrees.end());
    chains.insert(chains.end(), g.chain_lengths.begin(), g.chain_lengths.end());
  }
  auto scaled = [](const std::vector<double>& mine, const std::vector<double>& pool) {
    const double mean = std::accumulate(pool.begin(), pool.end(), 0.0) / pool.size();
    const double w = wasserstein_1d(mine, pool);
    return mean > 0.0 ? w / mean : w;
  };
  OodBreakdown o;
  o.joint_count = scaled({static_cast<double>(s.joint_count)}, counts);
  o.degree = scaled(s.degrees, degrees);
  o.chain_length = s.chain_lengths.empty() ? 0.0 : scaled(s.chain_lengths, chains);
  o.end_effectors = scaled({static_cast<double>(s.end_effector_count)}, effectors);
  o.score = (o.joint_count + o.degree + o.chain_length + o.end_effectors) / 4.0;
  return o;
}

}  // namespace topodiff
