#pragma once

#include "topodiff/motion.hpp"
#include "topodiff/skeleton.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace topodiff {

struct MetricConfig {
  int window = 20;
  int stride = 1;
  double coverage_percentile = 95.0;

  void validate() const;
};

/// Flattened windows of a motion set. Features 0..11 of every valid joint,
/// contact excluded. Motions are expected in normalized space.
struct WindowSet {
  std::vector<Eigen::VectorXd> data;
  std::vector<int> motion;  ///< source motion index
  std::vector<int> start;   ///< start frame within the motion
  int motion_count = 0;

  std::size_t size() const { return data.size(); }
};

WindowSet extract_windows(std::span<const MotionTensor> motions, const MetricConfig& config);

/// Mean squared difference over the entries of two windows.
double window_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// 95th percentile (linear interpolation) of leave-one-out nearest-neighbour
/// distances among GT windows. Windows of the same motion that overlap the
/// query are not candidates; if that leaves none, only the query itself is
/// excluded.
double coverage_threshold(const WindowSet& gt, const MetricConfig& config);

/// Percentage of GT windows whose nearest generated window is within the
/// threshold.
double coverage(std::span<const MotionTensor> gt, std::span<const MotionTensor> gen,
                const MetricConfig& config);
/// Mean distance from each generated window to its nearest GT window.
double local_diversity(std::span<const MotionTensor> gen, std::span<const MotionTensor> gt,
                       const MetricConfig& config);
/// Mean distance over all pairs of windows taken from distinct motions.
double inter_diversity(std::span<const MotionTensor> gen, const MetricConfig& config);
/// Mean over motions of the mean distance among the motion's own windows.
double intra_diversity(std::span<const MotionTensor> set, const MetricConfig& config);
double intra_diversity_diff(std::span<const MotionTensor> gen, std::span<const MotionTensor> gt,
                            const MetricConfig& config);

/// Linear-interpolation percentile of unsorted values, p in [0, 100].
double percentile(std::vector<double> values, double p);

struct SkeletonMetrics {
  std::string id;
  int gt_motions = 0;
  int generated_motions = 0;
  double threshold = 0.0;
  double coverage = 0.0;
  double local_diversity = 0.0;
  double inter_diversity = 0.0;  ///< NaN when fewer than two generated motions
  double intra_diversity_diff = 0.0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
  int count = 0;
};

struct MetricReport {
  MetricConfig config;
  std::vector<SkeletonMetrics> skeletons;
  MeanStd coverage, local_diversity, inter_diversity, intra_diversity_diff;

  void aggregate();
  std::string table() const;
  std::string to_json() const;
};

SkeletonMetrics evaluate_skeleton(const std::string& id, std::span<const MotionTensor> gt,
                                  std::span<const MotionTensor> gen, const MetricConfig& config);

/// "80.5±20.0"
std::string format_mean_std(const MeanStd& v, int precision = 3);

struct BenchmarkCandidate {
  std::string id;
  int total_frames = 0;
  std::string category;  ///< empty when unlabeled
};

/// Category shares of the benchmark.
std::map<std::string, double> default_category_shares();

/// Picks up to `count` skeletons with total frames in [min_frames, max_frames].
/// With labels, per-category quotas follow the shares by largest remainder;
/// shortfalls are filled at random from the remaining qualifiers.
std::vector<std::string> select_benchmark(std::span<const BenchmarkCandidate> candidates, Rng& rng,
                                          int count = 30, int min_frames = 600,
                                          int max_frames = 1200,
                                          const std::map<std::string, double>& shares =
                                              default_category_shares());

/// Topology descriptors used for out-of-distribution scoring.
struct GraphFeatureVector {
  int joint_count = 0;
  int end_effector_count = 0;
  std::vector<double> degrees;        ///< child count of every joint
  std::vector<double> chain_lengths;  ///< edges per kinematic chain
};

GraphFeatureVector graph_features(const Topology& topology);

/// Lengths (in edges) of the maximal single-child paths between branch
/// points, the root and the leaves.
std::vector<int> kinematic_chains(const Topology& topology);

/// 1-D Wasserstein-1 distance between two empirical distributions.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

struct OodBreakdown {
  double joint_count = 0.0;
  double degree = 0.0;
  double chain_length = 0.0;
  double end_effectors = 0.0;
  double score = 0.0;  ///< mean of the four
};

/// Each component is the Wasserstein distance between the skeleton's values
/// and the values pooled over the training skeletons, divided by the pooled
/// mean so the components share a scale.
OodBreakdown ood_score(const Topology& skeleton, std::span<const Topology> training);

}  // namespace topodiff
