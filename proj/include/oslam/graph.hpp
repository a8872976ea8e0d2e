#pragma once

// In-memory form of a factor-graph file and its translation into a Problem.

#include <Eigen/Geometry>

#include "oslam/eval.hpp"

namespace oslam {

inline constexpr const char* kGraphVersion = "oslam-graph/1";

/// Rotation stored as the quaternion it was read or written as, so that a
/// file round trip reproduces the in-memory value exactly.
struct GraphPose {
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();  // world-from-camera
  Vec3 t = Vec3::Zero();

  Pose pose() const { return Pose(Rotation::nearest(q.normalized().toRotationMatrix()), t); }
  static GraphPose from(const Pose& p) { return {Eigen::Quaterniond(p.rotation().matrix()).normalized(), p.translation()}; }
  bool operator==(const GraphPose& o) const { return q.coeffs() == o.q.coeffs() && t == o.t; }
};

struct GraphRts {
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Vec3 t = Vec3::Zero();
  Vec3 s = Vec3::Ones();

  RtsState state() const { return {Rotation::nearest(q.normalized().toRotationMatrix()), t, s}; }
  static GraphRts from(const RtsState& r) {
    return {Eigen::Quaterniond(r.rotation.matrix()).normalized(), r.translation, r.scale};
  }
  bool operator==(const GraphRts& o) const { return q.coeffs() == o.q.coeffs() && t == o.t && s == o.s; }
};

struct GraphSpd {
  Mat3 shape = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  bool operator==(const GraphSpd&) const = default;
};

struct GraphFull {
  Vec10 coefficients = Vec10::Zero();
  bool operator==(const GraphFull&) const = default;
};

using GraphLandmarkState = std::variant<GraphFull, GraphRts, GraphSpd>;

inline LandmarkState to_landmark(const GraphLandmarkState& g) {
  struct V {
    LandmarkState operator()(const GraphFull& f) const { return FullState{f.coefficients}; }
    LandmarkState operator()(const GraphRts& r) const { return r.state(); }
    LandmarkState operator()(const GraphSpd& p) const { return SpdState{SpdMatrix(p.shape), p.t}; }
  };
  return std::visit(V{}, g);
}

inline GraphLandmarkState from_landmark(const LandmarkState& s) {
  struct V {
    GraphLandmarkState operator()(const FullState& f) const { return GraphFull{f.v}; }
    GraphLandmarkState operator()(const RtsState& r) const { return GraphRts::from(r); }
    GraphLandmarkState operator()(const SpdState& p) const { return GraphSpd{p.shape.matrix(), p.translation}; }
  };
  return std::visit(V{}, s);
}

inline Parameterization parameterization_of(const GraphLandmarkState& g) {
  return static_cast<Parameterization>(g.index());
}

struct GraphFrame {
  int id = 0;
  GraphPose pose;
  bool operator==(const GraphFrame&) const = default;
};

struct GraphDetection {
  int frame = 0;
  int landmark = 0;
  BoundingBox box;
  bool operator==(const GraphDetection& o) const {
    return frame == o.frame && landmark == o.landmark && box.vector() == o.box.vector();
  }
};

struct GraphLandmark {
  int id = 0;
  GraphLandmarkState initial;
  bool operator==(const GraphLandmark&) const = default;
};

struct OrientationEntry {
  int landmark = 0;
  Vec3 m = Vec3::UnitZ();
  bool operator==(const OrientationEntry&) const = default;
};

struct ScaleEntry {
  int landmark = 0;
  Vec3 abc = Vec3::Ones();
  bool operator==(const ScaleEntry&) const = default;
};

struct SupportEntry {
  int landmark = 0;
  Plane plane{Vec4(0.0, 0.0, 1.0, 0.0)};
  bool operator==(const SupportEntry& o) const { return landmark == o.landmark && plane.pi == o.plane.pi; }
};

struct PosePriorEntry {
  int frame = 0;
  GraphPose pose;
  bool operator==(const PosePriorEntry&) const = default;
};

struct TruthEntry {
  int landmark = 0;
  GraphRts state;
  bool operator==(const TruthEntry&) const = default;
};

struct Graph {
  std::string version = kGraphVersion;
  CameraIntrinsics intrinsics;
  std::vector<GraphFrame> frames;
  std::vector<GraphDetection> detections;
  std::vector<GraphLandmark> landmarks;
  std::vector<OrientationEntry> orientation_priors;
  std::vector<ScaleEntry> scale_priors;
  std::vector<SupportEntry> support_planes;
  std::vector<PosePriorEntry> pose_priors;
  std::vector<int> fixed;
  std::vector<TruthEntry> truth;  // optional ground truth block

  bool operator==(const Graph& o) const {
    return version == o.version && intrinsics.matrix() == o.intrinsics.matrix() &&
           intrinsics.width == o.intrinsics.width && intrinsics.height == o.intrinsics.height &&
           frames == o.frames && detections == o.detections && landmarks == o.landmarks &&
           orientation_priors == o.orientation_priors && scale_priors == o.scale_priors &&
           support_planes == o.support_planes && pose_priors == o.pose_priors && fixed == o.fixed && truth == o.truth;
  }
};

/// Checks that every reference resolves; errors name the offending entity.
inline void validate_graph(const Graph& g) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kSchema, m); };
  if (g.version != kGraphVersion) fail("unsupported graph version '" + g.version + "'");
  g.intrinsics.validate();
  std::set<int> frames, landmarks;
  for (const auto& f : g.frames) {
    if (!frames.insert(f.id).second) fail("duplicate frame id " + std::to_string(f.id));
  }
  for (const auto& l : g.landmarks) {
    if (!landmarks.insert(l.id).second) fail("duplicate landmark id " + std::to_string(l.id));
    if (frames.count(l.id)) fail("id " + std::to_string(l.id) + " is used by both a frame and a landmark");
    try {
      to_dual(to_landmark(l.initial));
    } catch (const Error& e) {
      fail("initial estimate of landmark " + std::to_string(l.id) + " is not a valid ellipsoid (" + e.what() + ")");
    }
  }
  auto need_frame = [&](int id, const char* what) {
    if (!frames.count(id)) fail(std::string(what) + " references unknown frame id " + std::to_string(id));
  };
  auto need_landmark = [&](int id, const char* what) {
    if (!landmarks.count(id)) fail(std::string(what) + " references unknown landmark id " + std::to_string(id));
  };
  for (const auto& d : g.detections) {
    need_frame(d.frame, "detection");
    need_landmark(d.landmark, "detection");
    if (!(d.box.u_l <= d.box.u_r && d.box.v_u <= d.box.v_d)) {
      fail("detection of landmark " + std::to_string(d.landmark) + " in frame " + std::to_string(d.frame) +
           " has inverted box edges");
    }
  }
  for (const auto& o : g.orientation_priors) {
    need_landmark(o.landmark, "orientation prior");
    if (!(o.m.norm() > 0.0)) fail("orientation prior of landmark " + std::to_string(o.landmark) + " is zero");
  }
  for (const auto& s : g.scale_priors) {
    need_landmark(s.landmark, "scale prior");
    if (!(s.abc(0) >= s.abc(1) && s.abc(1) >= s.abc(2) && s.abc(2) > 0.0)) {
      fail("scale prior of landmark " + std::to_string(s.landmark) + " must satisfy a >= b >= c > 0");
    }
  }
  for (const auto& s : g.support_planes) need_landmark(s.landmark, "support plane");
  for (const auto& p : g.pose_priors) need_frame(p.frame, "pose prior");
  for (const int id : g.fixed) {
    if (!frames.count(id) && !landmarks.count(id)) fail("fixed list references unknown id " + std::to_string(id));
  }
  for (const auto& t : g.truth) {
    need_landmark(t.landmark, "ground truth");
    if (!(t.state.s.array() > 0.0).all()) fail("ground truth of landmark " + std::to_string(t.landmark) + " has non-positive semi-axes");
  }
}

/// Every factor kind present in the graph becomes factors of the problem.
/// Landmarks are converted to `param`; a scale prior yields a shape and a
/// size factor.
inline Problem build_problem(const Graph& g, Parameterization param, MeasurementModel model,
                             SizeForm size_form = SizeForm::kSqrt, const Covariances& cov = {}) {
  validate_graph(g);
  Problem p;
  p.size_form = size_form;
  const std::set<int> fixed(g.fixed.begin(), g.fixed.end());
  for (const auto& f : g.frames) p.add_pose(f.id, f.pose.pose(), fixed.count(f.id) > 0);
  // A landmark given in the requested parameterization keeps its exact
  // coordinates (RTS axes are not re-sorted).
  for (const auto& l : g.landmarks) {
    const LandmarkState given = to_landmark(l.initial);
    const LandmarkState value = parameterization_of(given) == param ? given : landmark_from_dual(to_dual(given), param);
    p.add_landmark(l.id, value, fixed.count(l.id) > 0);
  }
  int id = 0;
  for (const auto& d : g.detections) {
    p.add_factor(make_factor(id++, box_factor_kind(model), {d.frame, d.landmark},
                             BoxObservation{g.intrinsics, d.box}, cov));
  }
  for (const auto& o : g.orientation_priors) {
    p.add_factor(make_factor(id++, FactorKind::kOrientation, {o.landmark}, OrientationPrior{o.m.normalized()}, cov));
  }
  for (const auto& s : g.scale_priors) {
    p.add_factor(make_factor(id++, FactorKind::kShape, {s.landmark}, ScalePrior{s.abc}, cov));
    p.add_factor(make_factor(id++, FactorKind::kSize, {s.landmark}, ScalePrior{s.abc}, cov));
  }
  for (const auto& s : g.support_planes) {
    p.add_factor(make_factor(id++, FactorKind::kSupport, {s.landmark}, SupportPrior{s.plane}, cov));
  }
  for (const auto& pp : g.pose_priors) {
    p.add_factor(make_factor(id++, FactorKind::kPosePrior, {pp.frame}, PosePrior{pp.pose.pose()}, cov));
  }
  return p;
}

struct LandmarkEvaluation {
  int landmark = 0;
  double iou = 0.0;
  double orientation_error_deg = 0.0;
};

struct GraphSolution {
  SolveReport report;
  CostBreakdown breakdown;  // at the solution
  Graph solved;             // input graph with estimates replaced
  std::vector<LandmarkEvaluation> evaluations;  // landmarks with ground truth
};

struct GraphSolveSettings {
  Parameterization param = Parameterization::kSpd;
  MeasurementModel model = MeasurementModel::kSemi;
  SizeForm size_form = SizeForm::kSqrt;
  SolveOptions solve;
  Covariances covariances;
  int iou_resolution = 128;
};

inline GraphSolution solve_graph(const Graph& g, const GraphSolveSettings& settings = {}) {
  Problem problem = build_problem(g, settings.param, settings.model, settings.size_form, settings.covariances);
  GraphSolution out;
  out.report = solve(problem, settings.solve);
  out.breakdown = evaluate_cost(problem);
  out.solved = g;
  for (auto& f : out.solved.frames) f.pose = GraphPose::from(std::get<Pose>(problem.variables.at(f.id).value));
  for (auto& l : out.solved.landmarks) {
    l.initial = from_landmark(std::get<LandmarkState>(problem.variables.at(l.id).value));
  }
  for (const auto& t : g.truth) {
    LandmarkEvaluation e{t.landmark};
    const DualQuadric truth = dual_from_rts(t.state.state());
    try {
      const DualQuadric est = to_dual(std::get<LandmarkState>(problem.variables.at(t.landmark).value));
      e.iou = iou_boxes(circumscribed_box(est), circumscribed_box(truth), settings.iou_resolution);
      e.orientation_error_deg = orientation_error_deg(rts_from_dual(est).rotation, t.state.state().rotation);
    } catch (const Error&) {
      e.orientation_error_deg = 90.0;
    }
    out.evaluations.push_back(e);
  }
  return out;
}

}  // namespace oslam
