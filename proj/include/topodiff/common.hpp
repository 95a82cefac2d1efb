#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace topodiff {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-joint motion feature count: position(3) + 6D rotation + velocity(3) +
/// foot contact(1).
inline constexpr int kFeatureDim = 13;
inline constexpr int kPosOffset = 0;
inline constexpr int kRotOffset = 3;
inline constexpr int kVelOffset = 9;
inline constexpr int kContactOffset = 12;

/// Base class for all library errors so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic random source. Distribution code is written by hand so that
/// sequences are identical across standard library implementations, and the
/// engine state can be checkpointed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
  }

  /// Standard normal via Box-Muller, no cached second value.
  double normal();

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a salt; used to derive independent streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

/// 64-bit FNV-1a over bytes.
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t basis = 1469598103934665603ULL);
inline std::uint64_t fnv1a(const std::string& s) {
  return fnv1a(s.data(), s.size());
}

std::string hex64(std::uint64_t v);

}  // namespace topodiff
