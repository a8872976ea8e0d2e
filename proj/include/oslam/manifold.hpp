#pragma once

// Manifold primitives used by the landmark back end: SO(3), SE(3), the
// symmetric positive-definite cone SPD(3) with its affine-invariant geometry,
// Euclidean blocks, and products of these.
//
// Tangent coordinate conventions
// ------------------------------
//   SO(3):   omega (3), retraction R <- Exp(omega) R
//   SE(3):   (omega, v) (6), retraction T <- Exp(xi^) T
//   SPD(3):  (x00, x11, x22, sqrt2 x01, sqrt2 x02, sqrt2 x12) (6),
//            retraction P <- P^1/2 Exp(P^-1/2 X P^-1/2) P^1/2
//   R^n:     additive
//
// Matrix exponentials and logarithms are only ever applied to symmetric
// matrices here, so they are evaluated through an eigendecomposition.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <variant>
#include <vector>

#include "oslam/errors.hpp"

namespace oslam {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kSpdTolerance = 1e-12;

namespace detail {

inline Mat3 symmetrize(const Mat3& m) { return 0.5 * (m + m.transpose()); }

// f applied to the eigenvalues of a symmetric matrix.
template <class F>
Mat3 sym_apply(const Mat3& s, F f) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(s);
  const Mat3& v = es.eigenvectors();
  Vec3 d;
  for (int i = 0; i < 3; ++i) d(i) = f(es.eigenvalues()(i));
  return symmetrize(v * d.asDiagonal() * v.transpose());
}

}  // namespace detail

/// Exponential of a symmetric matrix.
inline Mat3 sym_exp(const Mat3& s) { return detail::sym_apply(s, [](double x) { return std::exp(x); }); }

/// Principal logarithm of a symmetric positive-definite matrix.
inline Mat3 sym_log(const Mat3& s) { return detail::sym_apply(s, [](double x) { return std::log(x); }); }

// ---------------------------------------------------------------------------
// SPD(3)

class SpdMatrix {
 public:
  struct Trusted {};

  /// Symmetrizes and checks positive-definiteness (min eigenvalue > 1e-12).
  explicit SpdMatrix(const Mat3& m) {
    if (!m.allFinite()) throw Error(ErrorCode::kInvalidInput, "SPD matrix has non-finite entries");
    m_ = detail::symmetrize(m);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Mat3>(m_, Eigen::EigenvaluesOnly).eigenvalues()(0);
    if (!(min_eig > kSpdTolerance)) {
      throw Error(ErrorCode::kInvalidInput, "matrix is not positive definite (min eigenvalue " +
                                                std::to_string(min_eig) + ")");
    }
  }

  /// Skips validation; for results of operations that stay on the manifold.
  SpdMatrix(const Mat3& m, Trusted) : m_(detail::symmetrize(m)) {}

  static SpdMatrix identity() { return SpdMatrix(Mat3::Identity(), Trusted{}); }

  const Mat3& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  Mat3 m_;
};

class SymTangent {
 public:
  static constexpr int kDim = 6;

  SymTangent() : x_(Mat3::Zero()) {}
  explicit SymTangent(const Mat3& x) : x_(detail::symmetrize(x)) {}

  static SymTangent from_coords(const Eigen::Ref<const Vec6>& c) {
    const double r = 1.0 / std::numbers::sqrt2;
    Mat3 x;
    x << c(0), r * c(3), r * c(4),
         r * c(3), c(1), r * c(5),
         r * c(4), r * c(5), c(2);
    SymTangent t;
    t.x_ = x;
    return t;
  }

  Vec6 coords() const {
    const double s = std::numbers::sqrt2;
    Vec6 c;
    c << x_(0, 0), x_(1, 1), x_(2, 2), s * x_(0, 1), s * x_(0, 2), s * x_(1, 2);
    return c;
  }

  const Mat3& matrix() const { return x_; }

 private:
  Mat3 x_;
};

/// P^1/2 from an explicit orthogonal decomposition P = R E R^T.
inline Mat3 spd_sqrt_from_decomposition(const Mat3& r, const Vec3& eigenvalues) {
  return detail::symmetrize(r * eigenvalues.cwiseSqrt().asDiagonal() * r.transpose());
}

inline SpdMatrix spd_sqrt(const SpdMatrix& p) {
  if (!p.matrix().allFinite()) throw Error(ErrorCode::kInvalidInput, "spd_sqrt: non-finite input");
  Eigen::SelfAdjointEigenSolver<Mat3> es(p.matrix());
  return SpdMatrix(spd_sqrt_from_decomposition(es.eigenvectors(), es.eigenvalues()), SpdMatrix::Trusted{});
}

namespace detail {

struct SqrtPair {
  Mat3 sqrt;
  Mat3 inv_sqrt;
};

inline SqrtPair sqrt_pair(const Mat3& p) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(p);
  const Mat3& v = es.eigenvectors();
  const Vec3 s = es.eigenvalues().cwiseSqrt();
  return {symmetrize(v * s.asDiagonal() * v.transpose()),
          symmetrize(v * s.cwiseInverse().asDiagonal() * v.transpose())};
}

}  // namespace detail

/// P^1/2 Exp(E) P^1/2 for a tangent given in whitened form E = P^-1/2 X P^-1/2.
/// Euclidean norms of E are affine-invariant norms of X.
inline SpdMatrix spd_retract_whitened(const SpdMatrix& p, const SymTangent& eta) {
  if (!eta.matrix().allFinite() || !p.matrix().allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "spd_retract: non-finite input");
  }
  if (eta.matrix().isZero(0.0)) return p;
  const Mat3 half = detail::sqrt_pair(p.matrix()).sqrt;
  Eigen::SelfAdjointEigenSolver<Mat3> es(eta.matrix());
  // Assembled as B B^T so the result is a Gram matrix. A step that collapses
  // an eigenvalue below working precision still fails the checked constructor.
  Vec3 half_exp;
  for (int i = 0; i < 3; ++i) half_exp(i) = std::exp(0.5 * es.eigenvalues()(i));
  const Mat3 b = half * es.eigenvectors() * half_exp.asDiagonal();
  return SpdMatrix(b * b.transpose());
}

/// Exponential retraction P^1/2 Exp(P^-1/2 X P^-1/2) P^1/2.
inline SpdMatrix spd_retract(const SpdMatrix& p, const SymTangent& xi) {
  if (!xi.matrix().allFinite() || !p.matrix().allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "spd_retract: non-finite input");
  }
  if (xi.matrix().isZero(0.0)) return p;
  const Mat3 inv_half = detail::sqrt_pair(p.matrix()).inv_sqrt;
  return spd_retract_whitened(p, SymTangent(inv_half * xi.matrix() * inv_half));
}

/// Logarithmic map log_p q = p^1/2 Log(p^-1/2 q p^-1/2) p^1/2.
inline SymTangent spd_log(const SpdMatrix& p, const SpdMatrix& q) {
  const auto [half, inv_half] = detail::sqrt_pair(p.matrix());
  const Mat3 inner = detail::symmetrize(inv_half * q.matrix() * inv_half);
  return SymTangent(half * sym_log(inner) * half);
}

/// Affine-invariant metric tr(P^-1 A P^-1 B).
inline double spd_metric(const SpdMatrix& p, const SymTangent& a, const SymTangent& b) {
  const Mat3 p_inv = p.matrix().inverse();
  return (p_inv * a.matrix() * p_inv * b.matrix()).trace();
}

// ---------------------------------------------------------------------------
// SO(3) / SE(3)

inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w(2), w(1),
       w(2), 0.0, -w(0),
       -w(1), w(0), 0.0;
  return m;
}

inline Vec3 vee(const Mat3& m) { return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5; }

class Rotation {
 public:
  static constexpr double kTolerance = 1e-10;
  struct Trusted {};

  Rotation() : r_(Mat3::Identity()) {}

  explicit Rotation(const Mat3& r) : r_(r) {
    if (!r.allFinite() || (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > kTolerance ||
        std::abs(r.determinant() - 1.0) > kTolerance) {
      throw Error(ErrorCode::kInvalidInput, "matrix is not a proper rotation");
    }
  }

  Rotation(const Mat3& r, Trusted) : r_(r) {}

  /// Closest rotation in the Frobenius sense.
  static Rotation nearest(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    const Mat3& v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
    return Rotation(u * v.transpose(), Trusted{});
  }

  const Mat3& matrix() const { return r_; }
  Rotation inverse() const { return Rotation(r_.transpose(), Trusted{}); }
  Rotation operator*(const Rotation& o) const { return Rotation(r_ * o.r_, Trusted{}); }
  Vec3 operator*(const Vec3& x) const { return r_ * x; }

  double orthogonality_error() const { return (r_ * r_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(); }

 private:
  Mat3 r_;
};

/// Rodrigues' formula.
inline Rotation so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = hat(omega);
  double a, b;
  if (theta < 1e-5) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Rotation(Mat3::Identity() + a * w + b * w * w, Rotation::Trusted{});
}

/// Inverse of so3_exp with rotation angle in [0, pi].
inline Vec3 so3_log(const Rotation& rot) {
  const Mat3& r = rot.matrix();
  const Vec3 s = vee(r);  // sin(theta) * axis
  const double sin_theta = s.norm();
  const double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta < 1e-5) return s * (1.0 + theta * theta / 6.0);
  if (std::numbers::pi - theta > 1e-3) return s * (theta / sin_theta);
  // Near pi: axis from the symmetric part, (R + R^T)/2 = cos I + (1 - cos) n n^T.
  const Mat3 nn = (0.5 * (r + r.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
  int k = 0;
  nn.diagonal().maxCoeff(&k);
  Vec3 n = nn.col(k) / std::sqrt(std::max(nn(k, k), 1e-300));
  n.normalize();
  if (n.dot(s) < 0.0) n = -n;
  return n * theta;
}

class Pose {
 public:
  Pose() : translation_(Vec3::Zero()) {}
  Pose(const Rotation& r, const Vec3& t) : rotation_(r), translation_(t) {}

  const Rotation& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Pose operator*(const Pose& o) const {
    return Pose(rotation_ * o.rotation_, rotation_ * o.translation_ + translation_);
  }
  Vec3 operator*(const Vec3& x) const { return rotation_ * x + translation_; }

  Pose inverse() const {
    const Rotation ri = rotation_.inverse();
    return Pose(ri, -(ri * translation_));
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_.matrix();
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

 private:
  Rotation rotation_;
  Vec3 translation_;
};

namespace detail {

// Left Jacobian V of SO(3) and its inverse, used by the SE(3) exp/log.
inline Mat3 so3_left_jacobian(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = hat(omega);
  double b, c;
  if (theta < 1e-5) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + b * w + c * w * w;
}

inline Mat3 so3_left_jacobian_inverse(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = hat(omega);
  double c;
  if (theta < 1e-5) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    c = (1.0 - theta * std::sin(theta) / (2.0 * (1.0 - std::cos(theta)))) / theta2;
  }
  return Mat3::Identity() - 0.5 * w + c * w * w;
}

}  // namespace detail

/// xi = (omega, v).
inline Pose se3_exp(const Vec6& xi) {
  const Vec3 omega = xi.head<3>();
  return Pose(so3_exp(omega), detail::so3_left_jacobian(omega) * xi.tail<3>());
}

inline Vec6 se3_log(const Pose& pose) {
  const Vec3 omega = so3_log(pose.rotation());
  Vec6 xi;
  xi.head<3>() = omega;
  xi.tail<3>() = detail::so3_left_jacobian_inverse(omega) * pose.translation();
  return xi;
}

inline Rotation rotation_retract(const Rotation& r, const Vec3& omega) {
  Rotation out = so3_exp(omega) * r;
  if (out.orthogonality_error() > 1e-8) out = Rotation::nearest(out.matrix());
  return out;
}

inline Pose pose_retract(const Pose& t, const Vec6& xi) {
  Pose out = se3_exp(xi) * t;
  if (out.rotation().orthogonality_error() > 1e-8) {
    out = Pose(Rotation::nearest(out.rotation().matrix()), out.translation());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Products

using ManifoldPoint = std::variant<Rotation, Pose, SpdMatrix, Eigen::VectorXd>;

inline int tangent_dim(const ManifoldPoint& p) {
  struct Visitor {
    int operator()(const Rotation&) const { return 3; }
    int operator()(const Pose&) const { return 6; }
    int operator()(const SpdMatrix&) const { return SymTangent::kDim; }
    int operator()(const Eigen::VectorXd& v) const { return static_cast<int>(v.size()); }
  };
  return std::visit(Visitor{}, p);
}

inline ManifoldPoint retract(const ManifoldPoint& p, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (delta.size() != tangent_dim(p)) throw Error(ErrorCode::kDimension, "tangent size does not match manifold");
  struct Visitor {
    const Eigen::Ref<const Eigen::VectorXd>& d;
    ManifoldPoint operator()(const Rotation& r) const { return rotation_retract(r, d); }
    ManifoldPoint operator()(const Pose& t) const { return pose_retract(t, d); }
    ManifoldPoint operator()(const SpdMatrix& s) const { return spd_retract(s, SymTangent::from_coords(d)); }
    ManifoldPoint operator()(const Eigen::VectorXd& v) const { return Eigen::VectorXd(v + d); }
  };
  return std::visit(Visitor{delta}, p);
}

/// Component-wise retraction; delta is the concatenation of the component
/// tangent coordinates in the order of `point`.
inline std::vector<ManifoldPoint> product_retract(const std::vector<ManifoldPoint>& point,
                                                  const Eigen::Ref<const Eigen::VectorXd>& delta) {
  int total = 0;
  for (const auto& p : point) total += tangent_dim(p);
  if (delta.size() != total) {
    throw Error(ErrorCode::kDimension, "product_retract: delta has " + std::to_string(delta.size()) +
                                           " entries, expected " + std::to_string(total));
  }
  std::vector<ManifoldPoint> out;
  out.reserve(point.size());
  int offset = 0;
  for (const auto& p : point) {
    const int n = tangent_dim(p);
    out.push_back(retract(p, delta.segment(offset, n)));
    offset += n;
  }
  return out;
}

}  // namespace oslam
