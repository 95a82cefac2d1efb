#include "topodiff/denoiser.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

namespace topodiff {

using nlohmann::json;

void DenoiserConfig::validate() const {
  if (layers < 1 || latent < 1 || heads < 1 || window < 1 || d_max < 1 ||
      max_joints < 1 || diffusion_steps < 1 || name_dim < 1 || ffn_mult < 1 ||
      max_position < 1) {
    throw Error("denoiser config: all sizes must be positive");
  }
  if (latent % heads != 0) throw Error("denoiser config: latent size not divisible by heads");
  if (window % 2 == 0) throw Error("denoiser config: temporal window must be odd");
  if (feature_dim != kFeatureDim) throw Error("denoiser config: feature dim must be 13");
}

std::string denoiser_config_to_json(const DenoiserConfig& c) {
  json j{{"layers", c.layers},         {"latent", c.latent},
         {"heads", c.heads},           {"window", c.window},
         {"d_max", c.d_max},           {"max_joints", c.max_joints},
         {"diffusion_steps", c.diffusion_steps},
         {"feature_dim", c.feature_dim}, {"name_dim", c.name_dim},
         {"max_position", c.max_position}, {"ffn_mult", c.ffn_mult},
         {"norm_eps", c.norm_eps}};
  return j.dump(2);
}

DenoiserConfig denoiser_config_from_json(const std::string& text) {
  const auto j = json::parse(text);
  DenoiserConfig c;
  c.layers = j.value("layers", c.layers);
  c.latent = j.value("latent", c.latent);
  c.heads = j.value("heads", c.heads);
  c.window = j.value("window", c.window);
  c.d_max = j.value("d_max", c.d_max);
  c.max_joints = j.value("max_joints", c.max_joints);
  c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.name_dim = j.value("name_dim", c.name_dim);
  c.max_position = j.value("max_position", c.max_position);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  c.validate();
  return c;
}

ModelCondition make_condition(const Skeleton& skeleton, const NormalizationStats& stats,
                              const NameEmbedder& embedder) {
  const int J = skeleton.joint_count();
  if (stats.joint_count() != J) throw Error("make_condition: stats joint count mismatch");
  ModelCondition c;
  c.rest_features = normalize_pose(skeleton.pose_features, stats);
  c.relations = skeleton.relations;
  c.distances = skeleton.distances;
  c.names = skeleton.names;
  c.name_embeddings.resize(J, embedder.dim());
  for (int j = 0; j < J; ++j) {
    c.name_embeddings.row(j) = embedder.embed(skeleton.names[j]).transpose();
  }
  return c;
}

ModelCondition permute_condition(const ModelCondition& cond, std::span<const int> perm) {
  const int J = cond.joint_count();
  if (static_cast<int>(perm.size()) != J) throw Error("permute_condition: size mismatch");
  ModelCondition c;
  c.rest_features.resize(J, cond.rest_features.cols());
  c.name_embeddings.resize(J, cond.name_embeddings.cols());
  c.relations.resize(J, J);
  c.distances.resize(J, J);
  c.names.assign(J, "");
  for (int i = 0; i < J; ++i) {
    c.rest_features.row(perm[i]) = cond.rest_features.row(i);
    c.name_embeddings.row(perm[i]) = cond.name_embeddings.row(i);
    if (!cond.names.empty()) c.names[perm[i]] = cond.names[i];
    for (int j = 0; j < J; ++j) {
      c.relations(perm[i], perm[j]) = cond.relations(i, j);
      c.distances(perm[i], perm[j]) = cond.distances(i, j);
    }
  }
  return c;
}

MotionTensor permute_joints(const MotionTensor& x, std::span<const int> perm) {
  if (static_cast<int>(perm.size()) != x.joints) throw Error("permute_joints: size mismatch");
  MotionTensor out = x;
  for (int j = 0; j < x.joints; ++j) out.joint_mask[perm[j]] = x.joint_mask[j];
  for (int f = 0; f < x.frames; ++f) {
    for (int j = 0; j < x.joints; ++j) out.data.row(out.row(f, perm[j])) = x.data.row(x.row(f, j));
  }
  return out;
}

ModelCondition pad_condition(const ModelCondition& cond, int joints, int d_max) {
  const int J = cond.joint_count();
  if (joints < J) throw Error("pad_condition: target smaller than condition");
  ModelCondition c;
  c.rest_features = RowMatrixXd::Zero(joints, cond.rest_features.cols());
  c.rest_features.topRows(J) = cond.rest_features;
  c.name_embeddings = RowMatrixXd::Zero(joints, cond.name_embeddings.cols());
  c.name_embeddings.topRows(J) = cond.name_embeddings;
  c.relations = Eigen::MatrixXi::Constant(joints, joints, static_cast<int>(RelationKind::kNoRelation));
  c.distances = Eigen::MatrixXi::Constant(joints, joints, d_max);
  c.relations.topLeftCorner(J, J) = cond.relations;
  c.distances.topLeftCorner(J, J) = cond.distances;
  for (int j = J; j < joints; ++j) {
    c.relations(j, j) = static_cast<int>(RelationKind::kSelf);
    c.distances(j, j) = 0;
  }
  c.names = cond.names;
  c.names.resize(joints, "");
  return c;
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
int ParamStore<T>::add(const std::string& name, int rows, int cols) {
  names.push_back(name);
  values.push_back(Mat<T>::Zero(rows, cols));
  return static_cast<int>(values.size()) - 1;
}

template <typename T>
int ParamStore<T>::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw Error("no parameter named '" + name + "'");
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values) n += static_cast<std::size_t>(v.size());
  return n;
}

template <typename T>
ParamStore<T> ParamStore<T>::zeros_like() const {
  ParamStore out;
  out.names = names;
  for (const auto& v : values) out.values.push_back(Mat<T>::Zero(v.rows(), v.cols()));
  return out;
}

template <typename T>
void ParamStore<T>::set_zero() {
  for (auto& v : values) v.setZero();
}

namespace {

template <typename U>
void put(std::string& s, const U& v) {
  s.append(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(const std::string& s, std::size_t& at) {
  if (at + sizeof(U) > s.size()) throw Error("parameter file truncated");
  U v;
  std::memcpy(&v, s.data() + at, sizeof(U));
  at += sizeof(U);
  return v;
}

}  // namespace

template <typename T>
std::string params_to_bytes(const ParamStore<T>& params) {
  std::string s = "TDPS";
  put(s, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    put(s, static_cast<std::uint32_t>(params.names[i].size()));
    s += params.names[i];
    const auto& v = params.values[i];
    put(s, static_cast<std::uint32_t>(v.rows()));
    put(s, static_cast<std::uint32_t>(v.cols()));
    for (Eigen::Index k = 0; k < v.size(); ++k) put(s, static_cast<double>(v.data()[k]));
  }
  return s;
}

template <typename T>
ParamStore<T> params_from_bytes(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "TDPS") != 0) throw Error("not a parameter file");
  std::size_t at = 4;
  ParamStore<T> p;
  const auto n = get<std::uint32_t>(bytes, at);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(bytes, at);
    if (at + len > bytes.size()) throw Error("parameter file truncated");
    const std::string name = bytes.substr(at, len);
    at += len;
    const auto rows = get<std::uint32_t>(bytes, at);
    const auto cols = get<std::uint32_t>(bytes, at);
    const int idx = p.add(name, static_cast<int>(rows), static_cast<int>(cols));
    auto& v = p.values[idx];
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = static_cast<T>(get<double>(bytes, at));
  }
  if (at != bytes.size()) throw Error("trailing bytes in parameter file");
  return p;
}

template struct ParamStore<float>;
template struct ParamStore<double>;
template std::string params_to_bytes(const ParamStore<float>&);
template std::string params_to_bytes(const ParamStore<double>&);
template ParamStore<float> params_from_bytes(const std::string&);
template ParamStore<double> params_from_bytes(const std::string&);

// ---------------------------------------------------------------------------
// Building blocks

template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> sinusoid(double position, int dim) {
  Eigen::Matrix<T, 1, Eigen::Dynamic> e(dim);
  for (int i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
    e[i] = static_cast<T>(std::sin(position * freq));
    if (i + 1 < dim) e[i + 1] = static_cast<T>(std::cos(position * freq));
  }
  return e;
}

template Eigen::Matrix<float, 1, Eigen::Dynamic> sinusoid<float>(double, int);
template Eigen::Matrix<double, 1, Eigen::Dynamic> sinusoid<double>(double, int);

template <typename T>
Mat<T> skeletal_bias(const Mat<T>& q, const Mat<T>& k, const Eigen::MatrixXi& distances,
                     const Eigen::MatrixXi& relations, const Mat<T>& ed_q,
                     const Mat<T>& ed_k, const Mat<T>& er_q, const Mat<T>& er_k) {
  const Eigen::Index J = q.rows();
  const Mat<T> qd = q * ed_q.transpose();
  const Mat<T> kd = k * ed_k.transpose();
  const Mat<T> qr = q * er_q.transpose();
  const Mat<T> kr = k * er_k.transpose();
  Mat<T> b(J, J);
  for (Eigen::Index i = 0; i < J; ++i) {
    for (Eigen::Index j = 0; j < J; ++j) {
      const int d = distances(i, j);
      const int r = relations(i, j);
      b(i, j) = qd(i, d) + kd(j, d) + qr(i, r) + kr(j, r);
    }
  }
  return b;
}

template <typename T>
Mat<T> skeletal_logits(const Mat<T>& q, const Mat<T>& k, const Eigen::MatrixXi& distances,
                       const Eigen::MatrixXi& relations, const Mat<T>& ed_q,
                       const Mat<T>& ed_k, const Mat<T>& er_q, const Mat<T>& er_k,
                       T scale) {
  Mat<T> s = q * k.transpose();
  s += skeletal_bias<T>(q, k, distances, relations, ed_q, ed_k, er_q, er_k);
  s *= scale;
  return s;
}

template <typename T>
void masked_softmax_rows(Mat<T>& logits, const std::vector<std::uint8_t>& allowed) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (allowed[j]) mx = std::max(mx, logits(i, j));
    }
    T sum = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (allowed[j]) {
        logits(i, j) = std::exp(logits(i, j) - mx);
        sum += logits(i, j);
      } else {
        logits(i, j) = 0;
      }
    }
    if (sum > 0) logits.row(i) /= sum;
  }
}

template Mat<float> skeletal_bias(const Mat<float>&, const Mat<float>&, const Eigen::MatrixXi&,
                                  const Eigen::MatrixXi&, const Mat<float>&, const Mat<float>&,
                                  const Mat<float>&, const Mat<float>&);
template Mat<double> skeletal_bias(const Mat<double>&, const Mat<double>&, const Eigen::MatrixXi&,
                                   const Eigen::MatrixXi&, const Mat<double>&, const Mat<double>&,
                                   const Mat<double>&, const Mat<double>&);
template Mat<float> skeletal_logits(const Mat<float>&, const Mat<float>&, const Eigen::MatrixXi&,
                                    const Eigen::MatrixXi&, const Mat<float>&, const Mat<float>&,
                                    const Mat<float>&, const Mat<float>&, float);
template Mat<double> skeletal_logits(const Mat<double>&, const Mat<double>&,
                                     const Eigen::MatrixXi&, const Eigen::MatrixXi&,
                                     const Mat<double>&, const Mat<double>&, const Mat<double>&,
                                     const Mat<double>&, double);
template void masked_softmax_rows(Mat<float>&, const std::vector<std::uint8_t>&);
template void masked_softmax_rows(Mat<double>&, const std::vector<std::uint8_t>&);

namespace {

template <typename T>
Mat<T> linear_fwd(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> linear_bwd(const Mat<T>& x, const Mat<T>& dy, const Mat<T>& w, Mat<T>& dw, Mat<T>& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

template <typename T>
Mat<T> norm_fwd(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, T eps, NormCache<T>& c) {
  const Eigen::Index n = x.rows();
  const Eigen::Index f = x.cols();
  c.xhat.resize(n, f);
  c.rstd.resize(n);
  Mat<T> y(n, f);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().mean();
    const T rstd = T(1) / std::sqrt(var + eps);
    c.rstd[i] = rstd;
    c.xhat.row(i) = (x.row(i).array() - mu) * rstd;
    y.row(i) = c.xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return y;
}

template <typename T>
Mat<T> norm_bwd(const Mat<T>& dy, const Mat<T>& g, const NormCache<T>& c, Mat<T>& dg,
                Mat<T>& db) {
  const Eigen::Index n = dy.rows();
  Mat<T> dx(n, dy.cols());
  dg.row(0) += dy.cwiseProduct(c.xhat).colwise().sum();
  db.row(0) += dy.colwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dxhat = dy.row(i).cwiseProduct(g.row(0)).eval();
    const T m1 = dxhat.mean();
    const T m2 = dxhat.cwiseProduct(c.xhat.row(i)).mean();
    dx.row(i) = c.rstd[i] * (dxhat.array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T gelu(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  const T th = std::tanh(u);
  return T(0.5) * (T(1) + th) +
         T(0.5) * x * (T(1) - th * th) * T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
}

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

/// Rows joint, joint + J, joint + 2J, ... of columns [col, col + width).
template <typename T>
ConstStridedMap<T> joint_view(const Mat<T>& m, int joint, int J, int col, int width) {
  return ConstStridedMap<T>(m.data() + static_cast<Eigen::Index>(joint) * m.cols() + col,
                            m.rows() / J, width, Eigen::OuterStride<>(m.cols() * J));
}

template <typename T>
StridedMap<T> joint_view(Mat<T>& m, int joint, int J, int col, int width) {
  return StridedMap<T>(m.data() + static_cast<Eigen::Index>(joint) * m.cols() + col,
                       m.rows() / J, width, Eigen::OuterStride<>(m.cols() * J));
}

}  // namespace

template <typename T>
const Mat<T>& ForwardCache<T>::skeletal_probs(int layer, int frame, int head) const {
  return layers.at(layer).skel.probs.at(static_cast<std::size_t>(frame) * heads + head);
}

template <typename T>
const Mat<T>& ForwardCache<T>::temporal_probs(int layer, int joint, int head) const {
  return layers.at(layer).temp.probs.at(static_cast<std::size_t>(joint) * heads + head);
}

template struct ForwardCache<float>;
template struct ForwardCache<double>;

// ---------------------------------------------------------------------------
// Denoiser

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  build(&rng);
}

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, ParamStore<T> params) : config_(config) {
  config_.validate();
  build(nullptr);
  if (params.names != params_.names) throw Error("parameter layout does not match config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.values[i].rows() != params_.values[i].rows() ||
        params.values[i].cols() != params_.values[i].cols()) {
      throw Error("parameter '" + params.names[i] + "' has the wrong shape");
    }
  }
  params_ = std::move(params);
}

template <typename T>
typename Denoiser<T>::Linear Denoiser<T>::add_linear(const std::string& name, int in, int out,
                                                    Rng* rng) {
  Linear l;
  l.w = params_.add(name + ".w", in, out);
  l.b = params_.add(name + ".b", 1, out);
  if (rng) {
    const double a = std::sqrt(6.0 / (in + out));
    auto& w = params_.values[l.w];
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(rng->uniform(-a, a));
  }
  return l;
}

template <typename T>
typename Denoiser<T>::Norm Denoiser<T>::add_norm(const std::string& name) {
  Norm n;
  n.g = params_.add(name + ".g", 1, config_.latent);
  n.b = params_.add(name + ".b", 1, config_.latent);
  params_.values[n.g].setOnes();
  return n;
}

template <typename T>
void Denoiser<T>::build(Rng* rng) {
  const int F = config_.latent;
  motion_in_ = add_linear("enrich.motion", config_.feature_dim, F, rng);
  rest_in_ = add_linear("enrich.rest", config_.feature_dim, F, rng);
  name_in_ = add_linear("enrich.name", config_.name_dim, F, rng);
  time1_ = add_linear("time.fc1", F, F, rng);
  time2_ = add_linear("time.fc2", F, F, rng);
  auto table = [&](const std::string& name, int rows) {
    const int idx = params_.add(name, rows, F);
    if (rng) {
      auto& m = params_.values[idx];
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(0.1 * rng->normal());
    }
    return idx;
  };
  layers_.clear();
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer L;
    L.n1 = add_norm(p + "norm1");
    L.skel.q = add_linear(p + "skel.q", F, F, rng);
    L.skel.k = add_linear(p + "skel.k", F, F, rng);
    L.skel.v = add_linear(p + "skel.v", F, F, rng);
    L.skel.o = add_linear(p + "skel.o", F, F, rng);
    L.skel.ed_q = table(p + "skel.dist_q", config_.d_max + 1);
    L.skel.ed_k = table(p + "skel.dist_k", config_.d_max + 1);
    L.skel.er_q = table(p + "skel.rel_q", kRelationKindCount);
    L.skel.er_k = table(p + "skel.rel_k", kRelationKindCount);
    L.n2 = add_norm(p + "norm2");
    L.temp.q = add_linear(p + "temp.q", F, F, rng);
    L.temp.k = add_linear(p + "temp.k", F, F, rng);
    L.temp.v = add_linear(p + "temp.v", F, F, rng);
    L.temp.o = add_linear(p + "temp.o", F, F, rng);
    L.n3 = add_norm(p + "norm3");
    L.ff1 = add_linear(p + "ffn.fc1", F, config_.ffn_mult * F, rng);
    L.ff2 = add_linear(p + "ffn.fc2", config_.ffn_mult * F, F, rng);
    layers_.push_back(L);
  }
  final_norm_ = add_norm("final_norm");
  out_ = add_linear("output", F, config_.feature_dim, rng);
}

template <typename T>
ActivationTap Denoiser<T>::capture_activations(int layer) const {
  if (layer < 0 || layer >= config_.layers) {
    throw Error("activation tap: layer " + std::to_string(layer) + " outside [0, " +
                std::to_string(config_.layers) + ")");
  }
  ActivationTap tap;
  tap.layer = layer;
  return tap;
}

namespace {

template <typename T>
void check_inputs(const DenoiserConfig& cfg, const MotionTensor& x, const ModelCondition& cond) {
  if (x.joints != cond.joint_count()) {
    throw Error("denoiser: motion has " + std::to_string(x.joints) + " joints, condition has " +
                std::to_string(cond.joint_count()));
  }
  if (x.joints > cfg.max_joints) {
    throw Error("denoiser: " + std::to_string(x.joints) + " joints exceed the maximum of " +
                std::to_string(cfg.max_joints));
  }
  if (x.frames < 1) throw Error("denoiser: empty motion");
  if (x.data.rows() != static_cast<Eigen::Index>(x.frames) * x.joints ||
      x.data.cols() != kFeatureDim) {
    throw Error("denoiser: motion data shape mismatch");
  }
  if (cond.name_embeddings.cols() != cfg.name_dim) {
    throw Error("denoiser: name embedding dimension mismatch");
  }
  if (x.crop_index < 0 || x.crop_index + x.frames >= cfg.max_position) {
    throw Error("denoiser: frame positions exceed the positional range");
  }
  if (cond.distances.maxCoeff() > cfg.d_max || cond.distances.minCoeff() < 0) {
    throw Error("denoiser: distance entries outside [0, d_max]");
  }
  if (cond.relations.maxCoeff() >= kRelationKindCount || cond.relations.minCoeff() < 0) {
    throw Error("denoiser: invalid relation entries");
  }
}

}  // namespace

template <typename T>
RowMatrixXd Denoiser<T>::enrich(const MotionTensor& x_t, const ModelCondition& cond) const {
  check_inputs<T>(config_, x_t, cond);
  const int N = x_t.frames;
  const int J = x_t.joints;
  const int F = config_.latent;
  const auto& P = params_.values;
  const Mat<T> motion = x_t.data.cast<T>();
  const Mat<T> m = linear_fwd<T>(motion, P[motion_in_.w], P[motion_in_.b]);
  const Mat<T> r = linear_fwd<T>(cond.rest_features.cast<T>(), P[rest_in_.w], P[rest_in_.b]);
  const Mat<T> nm =
      linear_fwd<T>(cond.name_embeddings.cast<T>(), P[name_in_.w], P[name_in_.b]);
  Mat<T> h(static_cast<Eigen::Index>(N + 1) * J, F);
  h.topRows(J) = r + nm;
  h.topRows(J).rowwise() += sinusoid<T>(0.0, F);
  for (int n = 1; n <= N; ++n) {
    auto blk = h.middleRows(static_cast<Eigen::Index>(n) * J, J);
    blk = m.middleRows(static_cast<Eigen::Index>(n - 1) * J, J) + nm;
    blk.rowwise() += sinusoid<T>(static_cast<double>(x_t.crop_index + n), F);
  }
  return h.template cast<double>();
}

template <typename T>
MotionTensor Denoiser<T>::forward(const MotionTensor& x_t, int t, const ModelCondition& cond,
                                  ForwardCache<T>* cache_out, ActivationTap* tap) const {
  if (t < 1 || t > config_.diffusion_steps) {
    throw Error("denoiser: step " + std::to_string(t) + " outside [1, " +
                std::to_string(config_.diffusion_steps) + "]");
  }
  if (tap && (tap->layer < 0 || tap->layer >= config_.layers)) {
    throw Error("activation tap: invalid layer");
  }
  check_inputs<T>(config_, x_t, cond);
  ForwardCache<T> local;
  ForwardCache<T>& c = cache_out ? *cache_out : local;
  const int N = x_t.frames;
  const int J = x_t.joints;
  const int F = config_.latent;
  const int H = config_.heads;
  const int dh = config_.head_dim();
  const int half = config_.window / 2;
  const int rows = (N + 1) * J;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T eps = static_cast<T>(config_.norm_eps);
  const auto& P = params_.values;

  c = ForwardCache<T>{};
  c.frames = N;
  c.joints = J;
  c.t = t;
  c.heads = H;
  c.frame_valid.assign(N + 1, 1);
  for (int n = 0; n < N; ++n) c.frame_valid[n + 1] = x_t.frame_mask[n];
  c.joint_valid = x_t.joint_mask;
  c.relations = cond.relations;
  c.distances = cond.distances;
  c.token_valid = x_t.token_mask();

  // Enrichment and timestep conditioning.
  c.motion_in = x_t.data.cast<T>();
  c.rest_in = cond.rest_features.cast<T>();
  c.names_in = cond.name_embeddings.cast<T>();
  const Mat<T> m = linear_fwd<T>(c.motion_in, P[motion_in_.w], P[motion_in_.b]);
  const Mat<T> r = linear_fwd<T>(c.rest_in, P[rest_in_.w], P[rest_in_.b]);
  const Mat<T> nm = linear_fwd<T>(c.names_in, P[name_in_.w], P[name_in_.b]);
  c.time_sin = sinusoid<T>(static_cast<double>(t), F);
  c.time_pre = linear_fwd<T>(c.time_sin, P[time1_.w], P[time1_.b]);
  c.time_post = c.time_pre.unaryExpr([](T v) { return silu(v); });
  const Mat<T> temb = linear_fwd<T>(c.time_post, P[time2_.w], P[time2_.b]);

  Mat<T> h(rows, F);
  h.topRows(J) = r + nm;
  h.topRows(J).rowwise() += sinusoid<T>(0.0, F) + temb.row(0);
  for (int n = 1; n <= N; ++n) {
    auto blk = h.middleRows(static_cast<Eigen::Index>(n) * J, J);
    blk = m.middleRows(static_cast<Eigen::Index>(n - 1) * J, J) + nm;
    blk.rowwise() += sinusoid<T>(static_cast<double>(x_t.crop_index + n), F) + temb.row(0);
  }

  // Per-frame skeletal key mask and per-query temporal key mask.
  std::vector<std::uint8_t> temporal_allowed(N + 1);

  c.layers.resize(config_.layers);
  for (int l = 0; l < config_.layers; ++l) {
    const Layer& L = layers_[l];
    LayerCache<T>& lc = c.layers[l];

    // Skeletal attention.
    {
      AttentionCache<T>& ac = lc.skel;
      ac.input = norm_fwd<T>(h, P[L.n1.g], P[L.n1.b], eps, lc.n1);
      ac.q = linear_fwd<T>(ac.input, P[L.skel.q.w], P[L.skel.q.b]);
      ac.k = linear_fwd<T>(ac.input, P[L.skel.k.w], P[L.skel.k.b]);
      ac.v = linear_fwd<T>(ac.input, P[L.skel.v.w], P[L.skel.v.b]);
      ac.heads_out.setZero(rows, F);
      ac.probs.resize(static_cast<std::size_t>(N + 1) * H);
      for (int n = 0; n <= N; ++n) {
        for (int hd = 0; hd < H; ++hd) {
          const Eigen::Index r0 = static_cast<Eigen::Index>(n) * J;
          const Mat<T> qb = ac.q.block(r0, hd * dh, J, dh);
          const Mat<T> kb = ac.k.block(r0, hd * dh, J, dh);
          Mat<T> s = skeletal_logits<T>(
              qb, kb, c.distances, c.relations, P[L.skel.ed_q].middleCols(hd * dh, dh),
              P[L.skel.ed_k].middleCols(hd * dh, dh), P[L.skel.er_q].middleCols(hd * dh, dh),
              P[L.skel.er_k].middleCols(hd * dh, dh), scale);
          masked_softmax_rows<T>(s, c.joint_valid);
          ac.heads_out.block(r0, hd * dh, J, dh).noalias() = s * ac.v.block(r0, hd * dh, J, dh);
          ac.probs[static_cast<std::size_t>(n) * H + hd] = std::move(s);
        }
      }
      h += linear_fwd<T>(ac.heads_out, P[L.skel.o.w], P[L.skel.o.b]);
    }

    // Temporal attention.
    {
      AttentionCache<T>& ac = lc.temp;
      ac.input = norm_fwd<T>(h, P[L.n2.g], P[L.n2.b], eps, lc.n2);
      ac.q = linear_fwd<T>(ac.input, P[L.temp.q.w], P[L.temp.q.b]);
      ac.k = linear_fwd<T>(ac.input, P[L.temp.k.w], P[L.temp.k.b]);
      ac.v = linear_fwd<T>(ac.input, P[L.temp.v.w], P[L.temp.v.b]);
      ac.heads_out.setZero(rows, F);
      ac.probs.resize(static_cast<std::size_t>(J) * H);
      for (int j = 0; j < J; ++j) {
        for (int hd = 0; hd < H; ++hd) {
          const Mat<T> qb = joint_view<T>(ac.q, j, J, hd * dh, dh);
          const Mat<T> kb = joint_view<T>(ac.k, j, J, hd * dh, dh);
          Mat<T> s = (qb * kb.transpose()) * scale;
          for (int i = 0; i <= N; ++i) {
            for (int k = 0; k <= N; ++k) {
              temporal_allowed[k] =
                  c.frame_valid[k] && (i == 0 || k == 0 || std::abs(i - k) <= half);
            }
            Mat<T> row = s.row(i);
            masked_softmax_rows<T>(row, temporal_allowed);
            s.row(i) = row;
          }
          joint_view<T>(ac.heads_out, j, J, hd * dh, dh).noalias() =
              s * joint_view<T>(ac.v, j, J, hd * dh, dh);
          ac.probs[static_cast<std::size_t>(j) * H + hd] = std::move(s);
        }
      }
      h += linear_fwd<T>(ac.heads_out, P[L.temp.o.w], P[L.temp.o.b]);
    }

    // Feed-forward.
    lc.ff_in = norm_fwd<T>(h, P[L.n3.g], P[L.n3.b], eps, lc.n3);
    lc.ff_pre = linear_fwd<T>(lc.ff_in, P[L.ff1.w], P[L.ff1.b]);
    lc.ff_post = lc.ff_pre.unaryExpr([](T v) { return gelu(v); });
    h += linear_fwd<T>(lc.ff_post, P[L.ff2.w], P[L.ff2.b]);

    if (tap && tap->layer == l) {
      tap->frames = N;
      tap->joints = J;
      tap->activations = h.bottomRows(static_cast<Eigen::Index>(N) * J).template cast<double>();
      tap->captured = true;
    }
  }

  const Mat<T> motion_h = h.bottomRows(static_cast<Eigen::Index>(N) * J);
  const Mat<T> fn = norm_fwd<T>(motion_h, P[final_norm_.g], P[final_norm_.b], eps, c.final_norm);
  const Mat<T> y = linear_fwd<T>(fn, P[out_.w], P[out_.b]);

  MotionTensor out = MotionTensor::zeros(N, J);
  out.frame_mask = x_t.frame_mask;
  out.joint_mask = x_t.joint_mask;
  out.crop_index = x_t.crop_index;
  out.data = y.template cast<double>();
  out.apply_mask();
  return out;
}

template <typename T>
void Denoiser<T>::backward(const ForwardCache<T>& c, const RowMatrixXd& d_output,
                           ParamStore<T>& grads) const {
  const int N = c.frames;
  const int J = c.joints;
  const int F = config_.latent;
  const int H = config_.heads;
  const int dh = config_.head_dim();
  const int rows = (N + 1) * J;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& P = params_.values;
  auto& G = grads.values;
  if (d_output.rows() != static_cast<Eigen::Index>(N) * J || d_output.cols() != kFeatureDim) {
    throw Error("denoiser backward: gradient shape mismatch");
  }
  if (grads.size() != params_.size()) throw Error("denoiser backward: gradient store mismatch");

  Mat<T> dy = d_output.cast<T>();
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    if (!c.token_valid[i]) dy.row(i).setZero();
  }

  // Output projection and final norm. fn = xhat * g + b.
  const Mat<T> fn = (c.final_norm.xhat.array().rowwise() * P[final_norm_.g].row(0).array())
                        .matrix()
                        .rowwise() +
                    P[final_norm_.b].row(0);
  const Mat<T> dfn = linear_bwd<T>(fn, dy, P[out_.w], G[out_.w], G[out_.b]);
  Mat<T> dh_all = Mat<T>::Zero(rows, F);
  dh_all.bottomRows(static_cast<Eigen::Index>(N) * J) =
      norm_bwd<T>(dfn, P[final_norm_.g], c.final_norm, G[final_norm_.g], G[final_norm_.b]);

  for (int l = config_.layers - 1; l >= 0; --l) {
    const Layer& L = layers_[l];
    const LayerCache<T>& lc = c.layers[l];

    // Feed-forward.
    {
      const Mat<T> dpost = linear_bwd<T>(lc.ff_post, dh_all, P[L.ff2.w], G[L.ff2.w], G[L.ff2.b]);
      Mat<T> dpre(dpost.rows(), dpost.cols());
      for (Eigen::Index i = 0; i < dpre.size(); ++i) {
        dpre.data()[i] = dpost.data()[i] * gelu_grad(lc.ff_pre.data()[i]);
      }
      const Mat<T> din = linear_bwd<T>(lc.ff_in, dpre, P[L.ff1.w], G[L.ff1.w], G[L.ff1.b]);
      dh_all += norm_bwd<T>(din, P[L.n3.g], lc.n3, G[L.n3.g], G[L.n3.b]);
    }

    // Temporal attention.
    {
      const AttentionCache<T>& ac = lc.temp;
      const Mat<T> dheads =
          linear_bwd<T>(ac.heads_out, dh_all, P[L.temp.o.w], G[L.temp.o.w], G[L.temp.o.b]);
      Mat<T> dq = Mat<T>::Zero(rows, F);
      Mat<T> dk = Mat<T>::Zero(rows, F);
      Mat<T> dv = Mat<T>::Zero(rows, F);
      for (int j = 0; j < J; ++j) {
        for (int hd = 0; hd < H; ++hd) {
          const Mat<T>& p = ac.probs[static_cast<std::size_t>(j) * H + hd];
          const Mat<T> qb = joint_view<T>(ac.q, j, J, hd * dh, dh);
          const Mat<T> kb = joint_view<T>(ac.k, j, J, hd * dh, dh);
          const Mat<T> vb = joint_view<T>(ac.v, j, J, hd * dh, dh);
          const Mat<T> dob = joint_view<T>(dheads, j, J, hd * dh, dh);
          const Mat<T> dp = dob * vb.transpose();
          joint_view<T>(dv, j, J, hd * dh, dh).noalias() = p.transpose() * dob;
          Mat<T> ds = p.cwiseProduct(dp);
          const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = ds.rowwise().sum();
          ds -= p.cwiseProduct(rs.replicate(1, p.cols()));
          ds *= scale;
          joint_view<T>(dq, j, J, hd * dh, dh).noalias() = ds * kb;
          joint_view<T>(dk, j, J, hd * dh, dh).noalias() = ds.transpose() * qb;
        }
      }
      Mat<T> din = linear_bwd<T>(ac.input, dq, P[L.temp.q.w], G[L.temp.q.w], G[L.temp.q.b]);
      din += linear_bwd<T>(ac.input, dk, P[L.temp.k.w], G[L.temp.k.w], G[L.temp.k.b]);
      din += linear_bwd<T>(ac.input, dv, P[L.temp.v.w], G[L.temp.v.w], G[L.temp.v.b]);
      dh_all += norm_bwd<T>(din, P[L.n2.g], lc.n2, G[L.n2.g], G[L.n2.b]);
    }

    // Skeletal attention.
    {
      const AttentionCache<T>& ac = lc.skel;
      const Mat<T> dheads =
          linear_bwd<T>(ac.heads_out, dh_all, P[L.skel.o.w], G[L.skel.o.w], G[L.skel.o.b]);
      Mat<T> dq = Mat<T>::Zero(rows, F);
      Mat<T> dk = Mat<T>::Zero(rows, F);
      Mat<T> dv = Mat<T>::Zero(rows, F);
      const int nd = config_.d_max + 1;
      Mat<T> dqd(J, nd), dkd(J, nd), dqr(J, kRelationKindCount), dkr(J, kRelationKindCount);
      for (int n = 0; n <= N; ++n) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(n) * J;
        for (int hd = 0; hd < H; ++hd) {
          const Mat<T>& p = ac.probs[static_cast<std::size_t>(n) * H + hd];
          const auto qb = ac.q.block(r0, hd * dh, J, dh);
          const auto kb = ac.k.block(r0, hd * dh, J, dh);
          const auto vb = ac.v.block(r0, hd * dh, J, dh);
          const auto dob = dheads.block(r0, hd * dh, J, dh);
          const Mat<T> dp = dob * vb.transpose();
          dv.block(r0, hd * dh, J, dh).noalias() = p.transpose() * dob;
          Mat<T> ds = p.cwiseProduct(dp);
          const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = ds.rowwise().sum();
          ds -= p.cwiseProduct(rs.replicate(1, p.cols()));
          ds *= scale;
          dqd.setZero();
          dkd.setZero();
          dqr.setZero();
          dkr.setZero();
          for (int i = 0; i < J; ++i) {
            for (int j = 0; j < J; ++j) {
              const T g = ds(i, j);
              if (g == T(0)) continue;
              const int d = c.distances(i, j);
              const int rk = c.relations(i, j);
              dqd(i, d) += g;
              dkd(j, d) += g;
              dqr(i, rk) += g;
              dkr(j, rk) += g;
            }
          }
          const auto edq = P[L.skel.ed_q].middleCols(hd * dh, dh);
          const auto edk = P[L.skel.ed_k].middleCols(hd * dh, dh);
          const auto erq = P[L.skel.er_q].middleCols(hd * dh, dh);
          const auto erk = P[L.skel.er_k].middleCols(hd * dh, dh);
          auto dqb = dq.block(r0, hd * dh, J, dh);
          auto dkb = dk.block(r0, hd * dh, J, dh);
          dqb.noalias() = ds * kb;
          dqb.noalias() += dqd * edq;
          dqb.noalias() += dqr * erq;
          dkb.noalias() = ds.transpose() * qb;
          dkb.noalias() += dkd * edk;
          dkb.noalias() += dkr * erk;
          G[L.skel.ed_q].middleCols(hd * dh, dh).noalias() += dqd.transpose() * qb;
          G[L.skel.ed_k].middleCols(hd * dh, dh).noalias() += dkd.transpose() * kb;
          G[L.skel.er_q].middleCols(hd * dh, dh).noalias() += dqr.transpose() * qb;
          G[L.skel.er_k].middleCols(hd * dh, dh).noalias() += dkr.transpose() * kb;
        }
      }
      Mat<T> din = linear_bwd<T>(ac.input, dq, P[L.skel.q.w], G[L.skel.q.w], G[L.skel.q.b]);
      din += linear_bwd<T>(ac.input, dk, P[L.skel.k.w], G[L.skel.k.w], G[L.skel.k.b]);
      din += linear_bwd<T>(ac.input, dv, P[L.skel.v.w], G[L.skel.v.w], G[L.skel.v.b]);
      dh_all += norm_bwd<T>(din, P[L.n1.g], lc.n1, G[L.n1.g], G[L.n1.b]);
    }
  }

  // Enrichment. Every token carries the timestep embedding; every frame of a
  // joint carries that joint's name projection.
  const Mat<T> dtemb = dh_all.colwise().sum();
  const Mat<T> dtime_post = linear_bwd<T>(c.time_post, dtemb, P[time2_.w], G[time2_.w], G[time2_.b]);
  Mat<T> dtime_pre = dtime_post;
  for (Eigen::Index i = 0; i < dtime_pre.size(); ++i) {
    dtime_pre.data()[i] *= silu_grad(c.time_pre.data()[i]);
  }
  linear_bwd<T>(c.time_sin, dtime_pre, P[time1_.w], G[time1_.w], G[time1_.b]);

  Mat<T> dname = Mat<T>::Zero(J, F);
  for (int n = 0; n <= N; ++n) dname += dh_all.middleRows(static_cast<Eigen::Index>(n) * J, J);
  linear_bwd<T>(c.names_in, dname, P[name_in_.w], G[name_in_.w], G[name_in_.b]);
  linear_bwd<T>(c.rest_in, Mat<T>(dh_all.topRows(J)), P[rest_in_.w], G[rest_in_.w],
                G[rest_in_.b]);
  linear_bwd<T>(c.motion_in, Mat<T>(dh_all.bottomRows(static_cast<Eigen::Index>(N) * J)),
                P[motion_in_.w], G[motion_in_.w], G[motion_in_.b]);
}

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace topodiff
