#include "topodiff/rotation.hpp"

#include <algorithm>
#include <cmath>

namespace topodiff {

namespace {

constexpr double kArccosMargin = 1e-7;

struct GsParts {
  Vec3 a1, a2;
  double n1 = 0, n2 = 0;
  Vec3 b1, u2, b2, b3;
};

bool gs_forward(const Vec6& r6, GsParts& g, double eps) {
  g.a1 = r6.head<3>();
  g.a2 = r6.tail<3>();
  g.n1 = g.a1.norm();
  if (!(g.n1 > eps)) return false;
  g.b1 = g.a1 / g.n1;
  g.u2 = g.a2 - g.b1.dot(g.a2) * g.b1;
  g.n2 = g.u2.norm();
  if (!(g.n2 > eps * std::max(1.0, g.a2.norm()))) return false;
  g.b2 = g.u2 / g.n2;
  g.b3 = g.b1.cross(g.b2);
  return true;
}

// Back-propagates d(loss)/d(b1,b2,b3) to the 6D input.
Vec6 gs_backward(const GsParts& g, Vec3 db1, Vec3 db2, const Vec3& db3) {
  // b3 = b1 x b2
  db1 += g.b2.cross(db3);
  db2 += db3.cross(g.b1);
  // b2 = u2 / |u2|
  const Vec3 du2 = (db2 - db2.dot(g.b2) * g.b2) / g.n2;
  // u2 = a2 - (b1.a2) b1
  const double proj = g.b1.dot(g.a2);
  const Vec3 da2 = du2 - g.b1 * g.b1.dot(du2);
  db1 += -(proj * du2 + g.b1.dot(du2) * g.a2);
  // b1 = a1 / |a1|
  const Vec3 da1 = (db1 - db1.dot(g.b1) * g.b1) / g.n1;
  Vec6 out;
  out << da1, da2;
  return out;
}

}  // namespace

Vec6 matrix_to_6d(const Mat3& m) {
  Vec6 r;
  r << m.col(0), m.col(1);
  return r;
}

std::optional<Mat3> try_gs_6d_to_matrix(const Vec6& r6, double eps) {
  GsParts g;
  if (!r6.allFinite() || !gs_forward(r6, g, eps)) return std::nullopt;
  Mat3 m;
  m.col(0) = g.b1;
  m.col(1) = g.b2;
  m.col(2) = g.b3;
  return m;
}

Mat3 gs_6d_to_matrix(const Vec6& r6) {
  auto m = try_gs_6d_to_matrix(r6);
  if (!m) throw DegenerateRotationError("6D rotation columns are degenerate");
  return *m;
}

double geodesic_angle(const Mat3& a, const Mat3& b) {
  const double x = ((a * b.transpose()).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(x, -1.0, 1.0));
}

double geodesic_loss(const RowMatrixXd& r, const RowMatrixXd& r_hat,
                     std::span<const std::uint8_t> valid,
                     RowMatrixXd* grad_r_hat) {
  if (r.rows() != r_hat.rows() || r.cols() != 6 || r_hat.cols() != 6 ||
      static_cast<Eigen::Index>(valid.size()) != r.rows()) {
    throw Error("geodesic_loss: shape mismatch");
  }
  if (grad_r_hat) grad_r_hat->setZero(r_hat.rows(), 6);
  double total = 0.0;
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    if (!valid[i]) continue;
    GsParts gt;
    GsParts pr;
    if (!gs_forward(r.row(i).transpose(), gt, 1e-12) ||
        !gs_forward(r_hat.row(i).transpose(), pr, 1e-12)) {
      throw DegenerateRotationError("geodesic_loss: degenerate rotation at row " +
                                    std::to_string(i));
    }
    // tr(A B^T) = sum_k a_k . b_k over columns
    const double tr = gt.b1.dot(pr.b1) + gt.b2.dot(pr.b2) + gt.b3.dot(pr.b3);
    const double x = (tr - 1.0) / 2.0;
    total += std::acos(std::clamp(x, -1.0, 1.0));
    if (grad_r_hat) {
      const double xc = std::clamp(x, -1.0 + kArccosMargin, 1.0 - kArccosMargin);
      const double dx = -1.0 / std::sqrt(1.0 - xc * xc);
      const double dtr = 0.5 * dx;
      grad_r_hat->row(i) =
          gs_backward(pr, dtr * gt.b1, dtr * gt.b2, dtr * gt.b3).transpose();
    }
  }
  return total;
}

Mat3 rotation_about(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace topodiff
