#pragma once

// Pinhole camera geometry for dual quadrics and every residual of the
// landmark least-squares problem.

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "oslam/quadric.hpp"

namespace oslam {

struct CameraIntrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw Error(ErrorCode::kInvalidInput, "focal lengths must be positive");
    if (!(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height)) {
      throw Error(ErrorCode::kInvalidInput, "principal point outside the image");
    }
  }
};

struct CameraFrame {
  CameraIntrinsics intrinsics;
  Pose pose;  // world-from-camera
  int id = 0;

  /// K [R_c | t_c], the world-to-image projection.
  Eigen::Matrix<double, 3, 4> projection() const {
    const Pose cw = pose.inverse();
    Eigen::Matrix<double, 3, 4> rt;
    rt.leftCols<3>() = cw.rotation().matrix();
    rt.col(3) = cw.translation();
    return intrinsics.matrix() * rt;
  }
};

struct BoundingBox {
  double u_l = 0.0;
  double u_r = 0.0;
  double v_u = 0.0;
  double v_d = 0.0;

  Vec4 vector() const { return Vec4(u_l, u_r, v_u, v_d); }
  static BoundingBox from_vector(const Vec4& v) { return {v(0), v(1), v(2), v(3)}; }
};

struct Conic {
  Mat3 g;  // dual conic, g(2,2) = 1
};

struct Plane {
  Vec4 pi;  // (n, d) with |n| = 1

  static Plane normalized(const Vec4& raw) {
    const double n = raw.head<3>().norm();
    if (!(n > 0.0)) throw Error(ErrorCode::kInvalidInput, "plane has zero normal");
    return Plane{raw / n};
  }
};

// ---------------------------------------------------------------------------
// Projection

inline Conic project_dual(const DualQuadric& q, const CameraFrame& frame) {
  const Vec3 center_cam = frame.pose.inverse() * q.center();
  if (!(center_cam.z() > 0.0)) throw Error(ErrorCode::kBehindCamera, "ellipsoid center is behind the camera");
  const Eigen::Matrix<double, 3, 4> p = frame.projection();
  const Mat3 g = p * q.matrix() * p.transpose();
  if (!(std::abs(g(2, 2)) > 0.0)) throw Error(ErrorCode::kDegenerateProjection, "projected conic is degenerate");
  Mat3 out = 0.5 * (g + g.transpose()) / g(2, 2);
  out(2, 2) = 1.0;
  return Conic{out};
}

/// Closed-form tangent lines u = const and v = const of a normalized dual conic.
inline BoundingBox conic_bbox(const Conic& c) {
  const Mat3& g = c.g;
  const double du = g(0, 2) * g(0, 2) - g(0, 0) * g(2, 2);
  const double dv = g(1, 2) * g(1, 2) - g(1, 1) * g(2, 2);
  if (!(du >= 0.0 && dv >= 0.0)) throw Error(ErrorCode::kDegenerateProjection, "conic has negative discriminant");
  const double su = std::sqrt(du);
  const double sv = std::sqrt(dv);
  return BoundingBox{g(0, 2) - su, g(0, 2) + su, g(1, 2) - sv, g(1, 2) + sv};
}

inline BoundingBox predict_box(const DualQuadric& q, const CameraFrame& frame) { return conic_bbox(project_dual(q, frame)); }

/// Plane through the camera center containing the back-projection of the
/// image line l, pi = (K [R_c | t_c])^T l.
inline Plane backproject_edge(const CameraFrame& frame, const Vec3& line) {
  return Plane::normalized(frame.projection().transpose() * line);
}

/// Planes of the four box edges in the order (u_l, u_r, v_u, v_d).
inline std::array<Plane, 4> box_edge_planes(const CameraFrame& frame, const BoundingBox& b) {
  return {backproject_edge(frame, Vec3(1.0, 0.0, -b.u_l)), backproject_edge(frame, Vec3(1.0, 0.0, -b.u_r)),
          backproject_edge(frame, Vec3(0.0, 1.0, -b.v_u)), backproject_edge(frame, Vec3(0.0, 1.0, -b.v_d))};
}

// ---------------------------------------------------------------------------
// Residuals

/// Predicted minus observed box, in pixels.
inline Vec4 residual_box_inverse(const CameraFrame& frame, const DualQuadric& q, const BoundingBox& observed) {
  return predict_box(q, frame).vector() - observed.vector();
}

/// Tangency defect pi_i^T Q* pi_i for each back-projected edge plane, with Q*
/// normalized to q33 = -1 and unit-normal planes: the squared support
/// distance minus the squared plane-center distance, in m^2.
inline Vec4 residual_box_semi(const CameraFrame& frame, const DualQuadric& q, const BoundingBox& observed) {
  const auto planes = box_edge_planes(frame, observed);
  Vec4 r;
  for (int i = 0; i < 4; ++i) r(i) = planes[i].pi.dot(q.matrix() * planes[i].pi);
  return r;
}

/// For each object axis n: (n x m)(n . m), stacked. Zero iff m is aligned
/// with one of the axes.
inline Eigen::Matrix<double, 9, 1> residual_orientation(const DualQuadric& q, const Vec3& m) {
  const double norm = m.norm();
  if (!(norm > 0.0) || !m.allFinite()) throw Error(ErrorCode::kInvalidInput, "orientation prior must be nonzero");
  const Vec3 mu = m / norm;
  const Mat3 r = rts_from_dual(q).rotation.matrix();
  Eigen::Matrix<double, 9, 1> out;
  for (int i = 0; i < 3; ++i) {
    const Vec3 n = r.col(i);
    out.segment<3>(3 * i) = n.cross(mu) * n.dot(mu);
  }
  return out;
}

/// Scale-free shape term [s1/s3 - a/c, s2/s3 - b/c] on sorted semi-axes.
inline Eigen::Vector2d residual_shape(const DualQuadric& q, const Vec3& prior) {
  if (!(prior(0) >= prior(1) && prior(1) >= prior(2) && prior(2) > 0.0)) {
    throw Error(ErrorCode::kInvalidInput, "shape prior must satisfy a >= b >= c > 0");
  }
  const Vec3 s = rts_from_dual(q).scale;
  return Eigen::Vector2d(s(0) / s(2) - prior(0) / prior(2), s(1) / s(2) - prior(1) / prior(2));
}

enum class SizeForm {
  kSqrt,   // s1 s2 s3 - abc
  kDet,  // det(P) - abc, i.e. (s1 s2 s3)^2 - abc
};

inline const char* to_string(SizeForm f) { return f == SizeForm::kSqrt ? "sqrt" : "det"; }

inline double residual_size(const DualQuadric& q, const Vec3& prior, SizeForm form = SizeForm::kSqrt) {
  const double det = q.shape().determinant();
  const double abc = prior.prod();
  return form == SizeForm::kSqrt ? std::sqrt(std::max(det, 0.0)) - abc : det - abc;
}

inline double residual_support(const DualQuadric& q, const Plane& plane) {
  const Vec4 pi = Plane::normalized(plane.pi).pi;
  return pi.dot(q.matrix() * pi);
}

inline Vec6 residual_pose_prior(const Pose& x, const Pose& observed) { return se3_log(observed.inverse() * x); }

// ---------------------------------------------------------------------------
// Factors

enum class FactorKind { kBoxInverse, kBoxSemi, kOrientation, kShape, kSize, kSupport, kPosePrior };

inline constexpr std::array<FactorKind, 7> kAllFactorKinds = {
    FactorKind::kBoxInverse, FactorKind::kBoxSemi, FactorKind::kOrientation, FactorKind::kShape,
    FactorKind::kSize,       FactorKind::kSupport, FactorKind::kPosePrior};

inline const char* to_string(FactorKind k) {
  switch (k) {
    case FactorKind::kBoxInverse: return "box-inverse";
    case FactorKind::kBoxSemi: return "box-semi";
    case FactorKind::kOrientation: return "orientation";
    case FactorKind::kShape: return "shape";
    case FactorKind::kSize: return "size";
    case FactorKind::kSupport: return "support";
    case FactorKind::kPosePrior: return "pose-prior";
  }
  return "?";
}

inline int residual_dim(FactorKind k) {
  switch (k) {
    case FactorKind::kBoxInverse:
    case FactorKind::kBoxSemi: return 4;
    case FactorKind::kOrientation: return 9;
    case FactorKind::kShape: return 2;
    case FactorKind::kSize:
    case FactorKind::kSupport: return 1;
    case FactorKind::kPosePrior: return 6;
  }
  return 0;
}

struct BoxObservation {
  CameraIntrinsics intrinsics;
  BoundingBox box;
};
struct OrientationPrior {
  Vec3 m;
};
struct ScalePrior {
  Vec3 abc;  // sorted a >= b >= c
};
struct SupportPrior {
  Plane plane;
};
struct PosePrior {
  Pose observed;
};

using FactorPayload = std::variant<BoxObservation, OrientationPrior, ScalePrior, SupportPrior, PosePrior>;

/// Per-residual-component variances. The semi-inverse box residual is a
/// dimensionless tangency defect and has its own default.
struct Covariances {
  double box_inverse = 5.0 * 5.0;   // px^2
  double box_semi = 0.1 * 0.1;
  double orientation = 0.1 * 0.1;
  double shape = 0.5 * 0.5;
  double size = 0.2 * 0.2;
  double support = 0.05 * 0.05;
  double pose_rotation = 0.01 * 0.01;     // rad^2
  double pose_translation = 0.01 * 0.01;  // m^2

  Eigen::VectorXd for_kind(FactorKind k) const {
    const int n = residual_dim(k);
    switch (k) {
      case FactorKind::kBoxInverse: return Eigen::VectorXd::Constant(n, box_inverse);
      case FactorKind::kBoxSemi: return Eigen::VectorXd::Constant(n, box_semi);
      case FactorKind::kOrientation: return Eigen::VectorXd::Constant(n, orientation);
      case FactorKind::kShape: return Eigen::VectorXd::Constant(n, shape);
      case FactorKind::kSize: return Eigen::VectorXd::Constant(n, size);
      case FactorKind::kSupport: return Eigen::VectorXd::Constant(n, support);
      case FactorKind::kPosePrior: {
        Eigen::VectorXd v(6);
        v << pose_rotation, pose_rotation, pose_rotation, pose_translation, pose_translation, pose_translation;
        return v;
      }
    }
    return {};
  }
};

/// One residual term. Box factors reference (camera pose, landmark); pose
/// priors reference a pose; the remaining kinds reference a landmark.
struct Factor {
  int id = 0;
  FactorKind kind = FactorKind::kBoxInverse;
  std::vector<int> variables;
  FactorPayload payload;
  Eigen::VectorXd variance;

  void validate() const {
    if (variance.size() != residual_dim(kind)) {
      throw Error(ErrorCode::kDimension, "factor " + std::to_string(id) + ": covariance size mismatch");
    }
    if (!(variance.array() > 0.0).all()) {
      throw Error(ErrorCode::kInvalidInput, "factor " + std::to_string(id) + ": covariance entries must be positive");
    }
    const bool box = kind == FactorKind::kBoxInverse || kind == FactorKind::kBoxSemi;
    const std::size_t nvars = box ? 2 : 1;
    if (variables.size() != nvars) {
      throw Error(ErrorCode::kDimension, "factor " + std::to_string(id) + ": wrong number of variables");
    }
    bool ok = false;
    switch (kind) {
      case FactorKind::kBoxInverse:
      case FactorKind::kBoxSemi: ok = std::holds_alternative<BoxObservation>(payload); break;
      case FactorKind::kOrientation: ok = std::holds_alternative<OrientationPrior>(payload); break;
      case FactorKind::kShape:
      case FactorKind::kSize: ok = std::holds_alternative<ScalePrior>(payload); break;
      case FactorKind::kSupport: ok = std::holds_alternative<SupportPrior>(payload); break;
      case FactorKind::kPosePrior: ok = std::holds_alternative<PosePrior>(payload); break;
    }
    if (!ok) throw Error(ErrorCode::kInvalidInput, "factor " + std::to_string(id) + ": payload does not match kind");
  }
};

inline Factor make_factor(int id, FactorKind kind, std::vector<int> variables, FactorPayload payload,
                          const Covariances& cov = {}) {
  Factor f{id, kind, std::move(variables), std::move(payload), cov.for_kind(kind)};
  f.validate();
  return f;
}

using VariableValue = std::variant<Pose, LandmarkState>;

/// Residual of a factor given the values of its variables, in the order of
/// factor.variables.
inline Eigen::VectorXd evaluate_factor(const Factor& f, std::span<const VariableValue* const> values,
                                       SizeForm size_form = SizeForm::kSqrt) {
  auto landmark = [&](std::size_t i) { return to_dual(std::get<LandmarkState>(*values[i])); };
  switch (f.kind) {
    case FactorKind::kBoxInverse:
    case FactorKind::kBoxSemi: {
      const auto& obs = std::get<BoxObservation>(f.payload);
      const CameraFrame frame{obs.intrinsics, std::get<Pose>(*values[0]), 0};
      const DualQuadric q = landmark(1);
      return f.kind == FactorKind::kBoxInverse ? residual_box_inverse(frame, q, obs.box)
                                               : residual_box_semi(frame, q, obs.box);
    }
    case FactorKind::kOrientation: return residual_orientation(landmark(0), std::get<OrientationPrior>(f.payload).m);
    case FactorKind::kShape: return residual_shape(landmark(0), std::get<ScalePrior>(f.payload).abc);
    case FactorKind::kSize:
      return Eigen::VectorXd::Constant(1, residual_size(landmark(0), std::get<ScalePrior>(f.payload).abc, size_form));
    case FactorKind::kSupport:
      return Eigen::VectorXd::Constant(1, residual_support(landmark(0), std::get<SupportPrior>(f.payload).plane));
    case FactorKind::kPosePrior:
      return residual_pose_prior(std::get<Pose>(*values[0]), std::get<PosePrior>(f.payload).observed);
  }
  return {};
}

}  // namespace oslam
