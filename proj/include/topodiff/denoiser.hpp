#pragma once

#include "topodiff/motion.hpp"
#include "topodiff/name_embedder.hpp"
#include "topodiff/normalization.hpp"
#include "topodiff/skeleton.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace topodiff {

struct DenoiserConfig {
  int layers = 4;
  int latent = 128;  ///< F
  int heads = 4;
  int window = 31;   ///< W, odd
  int d_max = kDefaultDMax;
  int max_joints = 143;
  int diffusion_steps = 100;
  int feature_dim = kFeatureDim;
  int name_dim = 64;
  int max_position = 4096;  ///< largest crop_index + frames accepted
  int ffn_mult = 4;
  double norm_eps = 1e-5;

  int head_dim() const { return latent / heads; }
  void validate() const;
};

std::string denoiser_config_to_json(const DenoiserConfig& config);
DenoiserConfig denoiser_config_from_json(const std::string& text);

/// Everything the network sees about a character. Built from a Skeleton, or
/// assembled directly (e.g. after permuting joints).
struct ModelCondition {
  RowMatrixXd rest_features;    ///< J x 13, normalized like the motion
  Eigen::MatrixXi relations;    ///< J x J
  Eigen::MatrixXi distances;    ///< J x J
  RowMatrixXd name_embeddings;  ///< J x name_dim
  std::vector<std::string> names;

  int joint_count() const { return static_cast<int>(rest_features.rows()); }
};

ModelCondition make_condition(const Skeleton& skeleton,
                              const NormalizationStats& stats,
                              const NameEmbedder& embedder);

/// new index = perm[old index].
ModelCondition permute_condition(const ModelCondition& cond, std::span<const int> perm);
MotionTensor permute_joints(const MotionTensor& x, std::span<const int> perm);

/// Extends the condition to `joints` entries; padded joints get no-relation,
/// distance d_max and zero features.
ModelCondition pad_condition(const ModelCondition& cond, int joints, int d_max);

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named parameter matrices in a fixed order.
template <typename T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Mat<T>> values;

  int add(const std::string& name, int rows, int cols);
  int index(const std::string& name) const;
  std::size_t size() const { return values.size(); }
  std::size_t scalar_count() const;
  ParamStore zeros_like() const;
  void set_zero();

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    out.names = names;
    for (const auto& v : values) out.values.push_back(v.template cast<U>());
    return out;
  }
};

/// Raw little-endian dump: u32 count, then per entry name, rows, cols, f64 data.
template <typename T>
std::string params_to_bytes(const ParamStore<T>& params);
template <typename T>
ParamStore<T> params_from_bytes(const std::string& bytes);

/// Activations after the last residual of layer `layer`, motion frames only.
struct ActivationTap {
  int layer = 0;
  int frames = 0;
  int joints = 0;
  bool captured = false;
  RowMatrixXd activations;  ///< (frames * joints) x F, row = frame * joints + joint

  double at(int frame, int joint, int channel) const {
    return activations(static_cast<Eigen::Index>(frame) * joints + joint, channel);
  }
};

/// Logits of one skeletal attention head:
/// (q_i.k_j + q_i.EDq[D_ij] + k_j.EDk[D_ij] + q_i.ERq[R_ij] + k_j.ERk[R_ij]) * scale.
template <typename T>
Mat<T> skeletal_logits(const Mat<T>& q, const Mat<T>& k,
                       const Eigen::MatrixXi& distances,
                       const Eigen::MatrixXi& relations, const Mat<T>& ed_q,
                       const Mat<T>& ed_k, const Mat<T>& er_q,
                       const Mat<T>& er_k, T scale);

/// The graph bias alone (a^D + a^R), unscaled.
template <typename T>
Mat<T> skeletal_bias(const Mat<T>& q, const Mat<T>& k,
                     const Eigen::MatrixXi& distances,
                     const Eigen::MatrixXi& relations, const Mat<T>& ed_q,
                     const Mat<T>& ed_k, const Mat<T>& er_q, const Mat<T>& er_k);

/// Row-wise softmax restricted to allowed columns; other entries are exactly 0.
template <typename T>
void masked_softmax_rows(Mat<T>& logits, const std::vector<std::uint8_t>& allowed_cols);

template <typename T>
struct ForwardCache;

template <typename T>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);
  Denoiser(const DenoiserConfig& config, ParamStore<T> params);

  const DenoiserConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Number of optimizer steps the parameters have seen; 0 = untrained.
  std::int64_t trained_steps = 0;

  ActivationTap capture_activations(int layer) const;

  /// Enriched tokens before timestep conditioning, ((N + 1) * J) x F with
  /// row = frame * J + joint and frame 0 the rest pose.
  RowMatrixXd enrich(const MotionTensor& x_t, const ModelCondition& cond) const;

  /// Predicts the clean motion. Padded tokens of the output are zero.
  MotionTensor forward(const MotionTensor& x_t, int t, const ModelCondition& cond,
                       ForwardCache<T>* cache = nullptr,
                       ActivationTap* tap = nullptr) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
  void backward(const ForwardCache<T>& cache, const RowMatrixXd& d_output,
                ParamStore<T>& grads) const;

 private:
  struct Linear {
    int w = -1;
    int b = -1;
  };
  struct Norm {
    int g = -1;
    int b = -1;
  };
  struct Attention {
    Linear q, k, v, o;
    int ed_q = -1, ed_k = -1, er_q = -1, er_k = -1;  ///< skeletal only
  };
  struct Layer {
    Norm n1, n2, n3;
    Attention skel, temp;
    Linear ff1, ff2;
  };

  void build(Rng* rng);
  Linear add_linear(const std::string& name, int in, int out, Rng* rng);
  Norm add_norm(const std::string& name);

  DenoiserConfig config_;
  ParamStore<T> params_;
  Linear motion_in_, rest_in_, name_in_, time1_, time2_, out_;
  Norm final_norm_;
  std::vector<Layer> layers_;

  friend struct ForwardCache<T>;
};

template <typename T>
struct NormCache {
  Mat<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
struct AttentionCache {
  Mat<T> input;  ///< normalized input
  Mat<T> q, k, v, heads_out;
  /// Skeletal: index frame * H + head, J x J.
  /// Temporal: index joint * H + head, (N + 1) x (N + 1).
  std::vector<Mat<T>> probs;
};

template <typename T>
struct LayerCache {
  NormCache<T> n1, n2, n3;
  AttentionCache<T> skel, temp;
  Mat<T> ff_in, ff_pre, ff_post;
};

template <typename T>
struct ForwardCache {
  int frames = 0;  ///< motion frames N
  int joints = 0;
  int t = 0;
  std::vector<std::uint8_t> frame_valid;  ///< N + 1 entries, [0] is the rest token
  std::vector<std::uint8_t> joint_valid;
  Eigen::MatrixXi relations, distances;
  Mat<T> motion_in, rest_in, names_in;
  Mat<T> time_sin, time_pre, time_post;
  std::vector<LayerCache<T>> layers;
  NormCache<T> final_norm;
  std::vector<std::uint8_t> token_valid;  ///< N * J motion tokens

  const Mat<T>& skeletal_probs(int layer, int frame, int head) const;
  const Mat<T>& temporal_probs(int layer, int joint, int head) const;
  int heads = 0;
};

/// Sinusoidal encoding of a scalar position into `dim` channels.
template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> sinusoid(double position, int dim);

extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace topodiff
