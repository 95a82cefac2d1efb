#include "topodiff/normalization.hpp"

#include "topodiff/io_util.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace topodiff {

NormalizationStats compute_stats(std::span<const MotionTensor> clips, double epsilon) {
  if (clips.empty()) throw Error("compute_stats: no clips");
  const int joints = clips.front().joints;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(joints, kFeatureDim);
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(joints, kFeatureDim);
  std::vector<double> count(joints, 0.0);
  for (const auto& c : clips) {
    if (c.joints != joints) throw Error("compute_stats: clips disagree on joint count");
    for (int f = 0; f < c.frames; ++f) {
      for (int j = 0; j < joints; ++j) {
        if (!c.valid(f, j)) continue;
        const auto tok = c.data.row(c.row(f, j));
        sum.row(j) += tok;
        count[j] += 1.0;
      }
    }
  }
  NormalizationStats s;
  s.epsilon = epsilon;
  s.mean = RowMatrixXd::Zero(joints, kFeatureDim);
  s.std = RowMatrixXd::Ones(joints, kFeatureDim);
  for (int j = 0; j < joints; ++j) {
    if (count[j] > 0) s.mean.row(j) = sum.row(j) / count[j];
  }
  // Second pass for numerically stable variance.
  for (const auto& c : clips) {
    for (int f = 0; f < c.frames; ++f) {
      for (int j = 0; j < joints; ++j) {
        if (!c.valid(f, j)) continue;
        const auto d = c.data.row(c.row(f, j)) - s.mean.row(j);
        sq.row(j) += d.cwiseProduct(d);
      }
    }
  }
  for (int j = 0; j < joints; ++j) {
    for (int k = 0; k < kFeatureDim; ++k) {
      const double var = count[j] > 0 ? sq(j, k) / count[j] : 0.0;
      s.std(j, k) = std::max(std::sqrt(var), epsilon);
    }
    s.mean(j, kContactOffset) = 0.0;
    s.std(j, kContactOffset) = 1.0;
  }
  return s;
}

namespace {

void check(const MotionTensor& x, const NormalizationStats& stats) {
  if (x.joints > stats.joint_count()) {
    throw Error("normalization stats cover fewer joints than the tensor");
  }
}

}  // namespace

MotionTensor normalize(const MotionTensor& x, const NormalizationStats& stats) {
  check(x, stats);
  MotionTensor out = x;
  for (int f = 0; f < x.frames; ++f) {
    for (int j = 0; j < x.joints; ++j) {
      auto tok = out.data.row(out.row(f, j));
      if (!x.valid(f, j)) {
        tok.setZero();
        continue;
      }
      tok = (tok - stats.mean.row(j)).cwiseQuotient(stats.std.row(j));
    }
  }
  return out;
}

MotionTensor denormalize(const MotionTensor& x, const NormalizationStats& stats) {
  check(x, stats);
  MotionTensor out = x;
  for (int f = 0; f < x.frames; ++f) {
    for (int j = 0; j < x.joints; ++j) {
      auto tok = out.data.row(out.row(f, j));
      if (!x.valid(f, j)) {
        tok.setZero();
        continue;
      }
      tok = tok.cwiseProduct(stats.std.row(j)) + stats.mean.row(j);
    }
  }
  return out;
}

RowMatrixXd normalize_pose(const RowMatrixXd& pose, const NormalizationStats& stats) {
  if (pose.rows() > stats.joint_count()) throw Error("normalize_pose: joint count");
  RowMatrixXd out(pose.rows(), pose.cols());
  for (Eigen::Index j = 0; j < pose.rows(); ++j) {
    out.row(j) = (pose.row(j) - stats.mean.row(j)).cwiseQuotient(stats.std.row(j));
  }
  return out;
}

NormalizationStats remap_stats(const NormalizationStats& stats,
                               std::span<const int> new_to_old,
                               const Topology& new_topology) {
  const int n = static_cast<int>(new_to_old.size());
  NormalizationStats out;
  out.epsilon = stats.epsilon;
  out.mean.resize(n, kFeatureDim);
  out.std.resize(n, kFeatureDim);
  const auto kids = new_topology.children();
  for (int j = 0; j < n; ++j) {
    if (new_to_old[j] >= 0) {
      out.mean.row(j) = stats.mean.row(new_to_old[j]);
      out.std.row(j) = stats.std.row(new_to_old[j]);
      continue;
    }
    const int p = new_topology.parent[j];
    const int c = kids[j].empty() ? -1 : kids[j].front();
    const int po = p >= 0 ? new_to_old[p] : -1;
    const int co = c >= 0 ? new_to_old[c] : -1;
    if (po < 0 || co < 0) throw Error("remap_stats: inserted joint needs mapped neighbours");
    out.mean.row(j) = 0.5 * (stats.mean.row(po) + stats.mean.row(co));
    out.std.row(j) = 0.5 * (stats.std.row(po) + stats.std.row(co));
  }
  return out;
}

std::string stats_to_json(const NormalizationStats& stats) {
  nlohmann::json j;
  j["format"] = "topodiff-stats";
  j["epsilon"] = stats.epsilon;
  j["joints"] = stats.joint_count();
  auto rows = [](const RowMatrixXd& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(m.row(r).data(), m.row(r).data() + m.cols());
      a.push_back(row);
    }
    return a;
  };
  j["mean"] = rows(stats.mean);
  j["std"] = rows(stats.std);
  return j.dump();
}

NormalizationStats stats_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("format", "") != "topodiff-stats") throw Error("not a stats file");
  NormalizationStats s;
  s.epsilon = j.at("epsilon").get<double>();
  const int n = j.at("joints").get<int>();
  s.mean.resize(n, kFeatureDim);
  s.std.resize(n, kFeatureDim);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < kFeatureDim; ++c) {
      s.mean(r, c) = j.at("mean").at(r).at(c).get<double>();
      s.std(r, c) = j.at("std").at(r).at(c).get<double>();
    }
  }
  return s;
}

void save_stats(const NormalizationStats& stats, const std::string& path) {
  write_file_atomic(path, stats_to_json(stats) + "\n");
}

NormalizationStats load_stats(const std::string& path) {
  return stats_from_json(read_text_file(path));
}

}  // namespace topodiff
