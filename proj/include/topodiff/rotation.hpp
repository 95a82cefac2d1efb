#pragma once

#include "topodiff/common.hpp"

#include <cstdint>
#include <optional>
#include <span>

namespace topodiff {

using Vec6 = Eigen::Matrix<double, 6, 1>;

class DegenerateRotationError : public Error {
 public:
  using Error::Error;
};

/// First two columns of a rotation matrix, column-major:
/// (R00, R10, R20, R01, R11, R21). Identity maps to (1,0,0,0,1,0).
Vec6 matrix_to_6d(const Mat3& m);

/// Gram-Schmidt decoding of a 6D block into a proper rotation. Returns
/// nullopt when the first column vanishes or the two columns are parallel.
std::optional<Mat3> try_gs_6d_to_matrix(const Vec6& r6, double eps = 1e-9);

/// Throws DegenerateRotationError on degenerate input.
Mat3 gs_6d_to_matrix(const Vec6& r6);

/// Rotation angle between two rotation matrices, arccos((tr(A B^T) - 1) / 2)
/// with the argument clamped to [-1, 1].
double geodesic_angle(const Mat3& a, const Mat3& b);

/// Sum of geodesic angles between GS(r) and GS(r_hat) over rows flagged valid.
/// Rows are tokens with 6 columns. When `grad_r_hat` is given it receives
/// d(loss)/d(r_hat); the arccos derivative is evaluated with its argument
/// kept inside [-1 + 1e-7, 1 - 1e-7].
double geodesic_loss(const RowMatrixXd& r, const RowMatrixXd& r_hat,
                     std::span<const std::uint8_t> valid,
                     RowMatrixXd* grad_r_hat = nullptr);

/// Unit quaternion -> matrix and back; used by tests and the BVH layer.
Mat3 rotation_about(const Vec3& axis, double angle);

}  // namespace topodiff
