#pragma once

// Ellipsoid landmarks as dual quadrics and the three landmark
// parameterizations that compose into them.
//
// Canonical dual form (q33 = -1):
//
//   Q* = T diag(s1^2, s2^2, s3^2, -1) T^T = [ P - t t^T   -t ]
//                                          [   -t^T      -1 ]
//
// with T the homogeneous object pose and P = R diag(s^2) R^T the shape.
// A plane pi = (n, d) is tangent to the ellipsoid iff pi^T Q* pi = 0.

#include <array>
#include <variant>

#include "oslam/manifold.hpp"

namespace oslam {

using Vec10 = Eigen::Matrix<double, 10, 1>;

class DualQuadric {
 public:
  /// Normalizes to q33 = -1 and checks that the matrix is a nondegenerate ellipsoid.
  static DualQuadric from_matrix(const Mat4& m) {
    DualQuadric q = normalized_unchecked(m);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Mat3>(q.shape(), Eigen::EigenvaluesOnly).eigenvalues()(0);
    if (!(min_eig > kSpdTolerance)) {
      throw Error(ErrorCode::kDegenerateLandmark, "dual quadric shape block is not positive definite");
    }
    return q;
  }

  /// Normalizes to q33 = -1 without checking the shape block. Used for
  /// intermediate states of unconstrained parameterizations.
  static DualQuadric normalized_unchecked(const Mat4& m) {
    if (!m.allFinite()) throw Error(ErrorCode::kInvalidInput, "dual quadric has non-finite entries");
    const Mat4 s = 0.5 * (m + m.transpose());
    const double scale = s.cwiseAbs().maxCoeff();
    if (scale == 0.0 || std::abs(s(3, 3)) <= 1e-12 * scale) {
      throw Error(ErrorCode::kDegenerateLandmark, "dual quadric has vanishing homogeneous corner");
    }
    DualQuadric q;
    q.q_ = s / -s(3, 3);
    q.q_(3, 3) = -1.0;
    return q;
  }

  const Mat4& matrix() const { return q_; }
  Vec3 center() const { return -q_.topRightCorner<3, 1>(); }
  Mat3 shape() const {
    const Vec3 t = center();
    return q_.topLeftCorner<3, 3>() + t * t.transpose();
  }

 private:
  DualQuadric() = default;
  Mat4 q_;
};

struct RtsState {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  Vec3 scale = Vec3::Ones();  // semi-axis i lies along rotation column i
};

struct SpdState {
  SpdMatrix shape = SpdMatrix::identity();
  Vec3 translation = Vec3::Zero();
};

/// Coefficients (A, B, C, D, E, F, G, H, I, J) of the symmetric 4x4 matrix
///   [A D F G; D B E H; F E C I; G H I J],
/// holding the dual quadric.
struct FullState {
  Vec10 v = Vec10::Zero();
};

enum class Parameterization { kFull, kRts, kSpd };

inline const char* to_string(Parameterization p) {
  switch (p) {
    case Parameterization::kFull: return "full";
    case Parameterization::kRts: return "rts";
    case Parameterization::kSpd: return "spd";
  }
  return "?";
}

using LandmarkState = std::variant<FullState, RtsState, SpdState>;

inline Parameterization parameterization_of(const LandmarkState& s) {
  return static_cast<Parameterization>(s.index());
}

inline Mat4 assemble_full(const Vec10& v) {
  Mat4 m;
  m << v(0), v(3), v(5), v(6),
       v(3), v(1), v(4), v(7),
       v(5), v(4), v(2), v(8),
       v(6), v(7), v(8), v(9);
  return m;
}

inline Vec10 serialize_full(const Mat4& m) {
  Vec10 v;
  v << m(0, 0), m(1, 1), m(2, 2), m(0, 1), m(1, 2), m(0, 2), m(0, 3), m(1, 3), m(2, 3), m(3, 3);
  return v;
}

namespace detail {

inline DualQuadric dual_from_shape(const Mat3& p, const Vec3& t) {
  Mat4 t_hom = Mat4::Identity();
  t_hom.topRightCorner<3, 1>() = t;
  Mat4 core = Mat4::Zero();
  core.topLeftCorner<3, 3>() = p;
  core(3, 3) = -1.0;
  return DualQuadric::normalized_unchecked(t_hom * core * t_hom.transpose());
}

}  // namespace detail

inline DualQuadric dual_from_rts(const RtsState& s) {
  const Mat3& r = s.rotation.matrix();
  const Mat3 p = r * s.scale.cwiseAbs2().asDiagonal() * r.transpose();
  return detail::dual_from_shape(p, s.translation);
}

inline DualQuadric dual_from_spd(const SpdState& s) { return detail::dual_from_shape(s.shape.matrix(), s.translation); }

inline DualQuadric dual_from_full(const FullState& s) { return DualQuadric::normalized_unchecked(assemble_full(s.v)); }

inline SpdState spd_from_dual(const DualQuadric& q) {
  try {
    return SpdState{SpdMatrix(q.shape()), q.center()};
  } catch (const Error&) {
    throw Error(ErrorCode::kDegenerateLandmark, "shape block is not positive definite");
  }
}

/// Semi-axes sorted s1 >= s2 >= s3 with a proper rotation whose columns are
/// the corresponding axes.
inline RtsState rts_from_dual(const DualQuadric& q) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(q.shape());
  const Vec3 ev = es.eigenvalues();  // ascending
  if (!(ev(0) > kSpdTolerance)) throw Error(ErrorCode::kDegenerateLandmark, "shape block is not positive definite");
  Mat3 r;
  Vec3 s;
  for (int i = 0; i < 3; ++i) {
    r.col(i) = es.eigenvectors().col(2 - i);
    s(i) = std::sqrt(ev(2 - i));
  }
  if (r.determinant() < 0.0) r.col(2) *= -1.0;
  return RtsState{Rotation(r, Rotation::Trusted{}), q.center(), s};
}

inline FullState full_from_dual(const DualQuadric& q) { return FullState{serialize_full(q.matrix())}; }

inline constexpr double kFullMinEigenvalue = 1e-6;

/// Projects a raw coefficient vector back onto valid ellipsoids: normalize,
/// clamp the shape eigenvalues to >= 1e-6 m^2, re-serialize.
inline FullState regularize_full(const FullState& s) {
  if (!s.v.allFinite()) throw Error(ErrorCode::kInvalidInput, "regularize_full: non-finite coefficients");
  if (s.v.isZero(0.0)) throw Error(ErrorCode::kDegenerateLandmark, "regularize_full: all-zero coefficients");
  const DualQuadric q = DualQuadric::normalized_unchecked(assemble_full(s.v));
  Eigen::SelfAdjointEigenSolver<Mat3> es(q.shape());
  if (es.eigenvalues()(0) >= kFullMinEigenvalue) return FullState{serialize_full(q.matrix())};
  const Vec3 clamped = es.eigenvalues().cwiseMax(kFullMinEigenvalue);
  const Mat3 p = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
  return FullState{serialize_full(detail::dual_from_shape(p, q.center()).matrix())};
}

/// Point-quadric (primal) matrix: x^T Q x = 0 on the surface, < 0 inside.
inline Mat4 primal_from_rts(const RtsState& s) {
  Mat4 t_inv = Pose(s.rotation, s.translation).inverse().matrix();
  Mat4 core = Mat4::Zero();
  core.topLeftCorner<3, 3>() = s.scale.cwiseAbs2().cwiseInverse().asDiagonal();
  core(3, 3) = -1.0;
  return t_inv.transpose() * core * t_inv;
}

inline DualQuadric to_dual(const LandmarkState& s) {
  struct Visitor {
    DualQuadric operator()(const FullState& f) const { return dual_from_full(f); }
    DualQuadric operator()(const RtsState& r) const { return dual_from_rts(r); }
    DualQuadric operator()(const SpdState& p) const { return dual_from_spd(p); }
  };
  return std::visit(Visitor{}, s);
}

inline LandmarkState landmark_from_dual(const DualQuadric& q, Parameterization p) {
  switch (p) {
    case Parameterization::kFull: return full_from_dual(q);
    case Parameterization::kRts: return rts_from_dual(q);
    case Parameterization::kSpd: return spd_from_dual(q);
  }
  throw Error(ErrorCode::kInvalidInput, "unknown parameterization");
}

/// Converts an RTS state without re-sorting its axes when the target is RTS.
inline LandmarkState landmark_from_rts(const RtsState& s, Parameterization p) {
  if (p == Parameterization::kRts) return s;
  if (p == Parameterization::kFull) return full_from_dual(dual_from_rts(s));
  return SpdState{SpdMatrix(s.rotation.matrix() * s.scale.cwiseAbs2().asDiagonal() * s.rotation.matrix().transpose()),
                  s.translation};
}

/// Tangent dimension: Full 10, RTS 9 (rotation, translation, scale), SPD 9 (shape, translation).
inline int tangent_dim(const LandmarkState& s) { return s.index() == 0 ? 10 : 9; }

inline constexpr double kMinSemiAxis = 1e-9;

/// Retraction of a landmark through the product of its component manifolds.
/// Full-parameterization states are not regularized here.
inline LandmarkState retract(const LandmarkState& s, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (delta.size() != tangent_dim(s)) throw Error(ErrorCode::kDimension, "landmark tangent size mismatch");
  struct Visitor {
    const Eigen::Ref<const Eigen::VectorXd>& d;
    LandmarkState operator()(const FullState& f) const { return FullState{f.v + d}; }
    LandmarkState operator()(const RtsState& r) const {
      const auto out = product_retract({r.rotation, Eigen::VectorXd(r.translation), Eigen::VectorXd(r.scale)}, d);
      // s and -s describe the same ellipsoid; keep the semi-axes positive.
      const Vec3 scale = std::get<Eigen::VectorXd>(out[2]).cwiseAbs().cwiseMax(kMinSemiAxis);
      return RtsState{std::get<Rotation>(out[0]), std::get<Eigen::VectorXd>(out[1]), scale};
    }
    // Shape coordinates are whitened, so the solver's Euclidean step norm is
    // the affine-invariant one.
    LandmarkState operator()(const SpdState& p) const {
      const SpdMatrix shape = spd_retract_whitened(p.shape, SymTangent::from_coords(d.head<6>()));
      return SpdState{shape, p.translation + d.tail<3>()};
    }
  };
  return std::visit(Visitor{delta}, s);
}

/// Magnitude of each tangent coordinate's underlying value, for scaling
/// finite-difference steps. Zero for coordinates that live on a curved factor.
inline Eigen::VectorXd coordinate_magnitudes(const LandmarkState& s) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(tangent_dim(s));
  if (const auto* f = std::get_if<FullState>(&s)) {
    m = f->v.cwiseAbs();
  } else if (const auto* r = std::get_if<RtsState>(&s)) {
    m.segment<3>(3) = r->translation.cwiseAbs();
    m.segment<3>(6) = r->scale.cwiseAbs();
  } else if (const auto* p = std::get_if<SpdState>(&s)) {
    m.segment<3>(6) = p->translation.cwiseAbs();
  }
  return m;
}

/// The 24 signed permutation matrices with determinant +1.
inline const std::array<Mat3, 24>& proper_axis_permutations() {
  static const std::array<Mat3, 24> perms = [] {
    std::array<Mat3, 24> out;
    const std::array<std::array<int, 3>, 6> orders = {{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    int k = 0;
    for (const auto& o : orders) {
      for (int signs = 0; signs < 8; ++signs) {
        Mat3 m = Mat3::Zero();
        for (int i = 0; i < 3; ++i) m(o[i], i) = (signs >> i) & 1 ? -1.0 : 1.0;
        if (m.determinant() > 0.0) out[k++] = m;
      }
    }
    return out;
  }();
  return perms;
}

}  // namespace oslam
