#pragma once

// Synthetic single-landmark scenes, noise injection and the Monte-Carlo
// campaign over noise level x viewing arc x parameterization x model.
//
// Seeding is hierarchical: master seed -> (noise, arc, scene index) ->
// independent streams for scene geometry, initial-estimate perturbation and
// box noise. Every configuration of one cell therefore sees bit-identical
// observations and initial estimates, independent of scheduling.

#include <Eigen/Geometry>

#include <atomic>
#include <cstdint>
#include <random>
#include <thread>

#include "oslam/graph.hpp"

namespace oslam {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(master);
  for (const auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

enum class Stream : std::uint64_t { kScene = 1, kInitial = 2, kBoxes = 3, kPriors = 4 };

struct NoiseSpec {
  NoiseLevel level = NoiseLevel::kLow;
  double sigma_box_px = 0.0;
  double sigma_rot_rad = 0.0;
  double sigma_trans_m = 0.0;
  double sigma_rel = 0.0;  // relative semi-axis perturbation

  static NoiseSpec table(NoiseLevel level) {
    constexpr double deg = std::numbers::pi / 180.0;
    switch (level) {
      case NoiseLevel::kLow: return {level, 0.0, 10.0 * deg, 0.1, 0.10};
      case NoiseLevel::kMedium: return {level, 5.0, 20.0 * deg, 1.0, 0.30};
      case NoiseLevel::kHigh: return {level, 10.0, 40.0 * deg, 3.0, 0.50};
    }
    return {};
  }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  double arc_deg = 60.0;
  int frame_count = 10;
  Vec3 region = Vec3(1.0, 2.0, 3.0);  // landmark centers, centered at the origin
  double radius_min = 4.0;
  double radius_max = 8.0;
  double elevation_deg = 15.0;
  double semi_axis_min = 0.2;
  double semi_axis_max = 1.0;
  int max_attempts = 100;
  CameraIntrinsics intrinsics;

  void validate() const {
    if (!(arc_deg > 0.0 && arc_deg <= 360.0)) throw Error(ErrorCode::kInvalidInput, "arc must be in (0, 360]");
    if (frame_count < 2) throw Error(ErrorCode::kInvalidInput, "frame count must be at least 2");
    if (!(radius_min > 0.0 && radius_max >= radius_min)) throw Error(ErrorCode::kInvalidInput, "bad radius range");
    if (!(semi_axis_min > 0.0 && semi_axis_max >= semi_axis_min)) {
      throw Error(ErrorCode::kInvalidInput, "bad semi-axis range");
    }
    if (!(region.array() > 0.0).all()) throw Error(ErrorCode::kInvalidInput, "region must be positive");
    intrinsics.validate();
  }
};

struct Scene {
  RtsState truth;
  std::vector<CameraFrame> frames;
  std::vector<BoundingBox> boxes;  // noiseless
  std::vector<double> azimuths;    // radians
};

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// Uniform over SO(3): normalized quaternion of four standard normals.
inline Rotation random_rotation(Rng& rng) {
  Eigen::Quaterniond q(gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng));
  q.normalize();
  return Rotation::nearest(q.toRotationMatrix());
}

/// Camera at `position` looking at `target`, image y pointing down w.r.t. world z.
inline Pose look_at(const Vec3& position, const Vec3& target) {
  const Vec3 z = (target - position).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = z.cross(Vec3::UnitX());
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r << x, y, z;
  return Pose(Rotation::nearest(r), position);
}

inline bool box_inside_image(const BoundingBox& b, const CameraIntrinsics& k) {
  return b.u_l >= 0.0 && b.u_r <= k.width && b.v_u >= 0.0 && b.v_d <= k.height;
}

/// Random landmark in the region with cameras on an arc around it; noiseless
/// boxes from the closed-form conic bounds. Scenes whose landmark leaves the
/// image in any frame are resampled.
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  constexpr double deg = std::numbers::pi / 180.0;
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    Scene s;
    for (int i = 0; i < 3; ++i) s.truth.translation(i) = uniform(rng, -0.5 * spec.region(i), 0.5 * spec.region(i));
    for (int i = 0; i < 3; ++i) s.truth.scale(i) = uniform(rng, spec.semi_axis_min, spec.semi_axis_max);
    s.truth.rotation = random_rotation(rng);

    const double base = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double half_arc = 0.5 * spec.arc_deg * deg;
    bool ok = true;
    const DualQuadric q = dual_from_rts(s.truth);
    for (int f = 0; f < spec.frame_count; ++f) {
      const double az = base + uniform(rng, -half_arc, half_arc);
      const double el = uniform(rng, -spec.elevation_deg, spec.elevation_deg) * deg;
      const double radius = uniform(rng, spec.radius_min, spec.radius_max);
      const Vec3 pos = s.truth.translation +
                       radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      CameraFrame frame{spec.intrinsics, look_at(pos, s.truth.translation), f};
      try {
        const BoundingBox b = predict_box(q, frame);
        if (!box_inside_image(b, spec.intrinsics)) ok = false;
        s.boxes.push_back(b);
      } catch (const Error&) {
        ok = false;
      }
      s.azimuths.push_back(az);
      s.frames.push_back(frame);
    }
    if (ok) return s;
  }
  throw Error(ErrorCode::kInvalidInput, "could not place a landmark inside every image after " +
                                            std::to_string(spec.max_attempts) + " attempts");
}

/// T = Exp(xi^) T_truth with xi ~ N(0, diag(s_rot, s_rot, s_rot, s_t, s_t, s_t)),
/// s_i = s_i_truth + N(0, s_i_truth * s_rel), semi-axes clamped to >= 0.05 m.
inline RtsState perturb_initial(const RtsState& truth, const NoiseSpec& noise, Rng& rng) {
  Vec6 xi;
  for (int i = 0; i < 3; ++i) xi(i) = noise.sigma_rot_rad * gaussian(rng);
  for (int i = 3; i < 6; ++i) xi(i) = noise.sigma_trans_m * gaussian(rng);
  const Pose t = se3_exp(xi) * Pose(truth.rotation, truth.translation);
  RtsState out{t.rotation(), t.translation(), truth.scale};
  for (int i = 0; i < 3; ++i) {
    out.scale(i) = std::max(0.05, truth.scale(i) + truth.scale(i) * noise.sigma_rel * gaussian(rng));
  }
  return out;
}

inline std::vector<BoundingBox> perturb_boxes(const std::vector<BoundingBox>& boxes, double sigma_px, Rng& rng) {
  std::vector<BoundingBox> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) {
    BoundingBox n{b.u_l + sigma_px * gaussian(rng), b.u_r + sigma_px * gaussian(rng), b.v_u + sigma_px * gaussian(rng),
                  b.v_d + sigma_px * gaussian(rng)};
    if (n.u_l > n.u_r) std::swap(n.u_l, n.u_r);
    if (n.v_u > n.v_d) std::swap(n.v_u, n.v_d);
    out.push_back(n);
  }
  return out;
}

struct Trial {
  Scene scene;
  std::vector<BoundingBox> noisy_boxes;
  RtsState initial;
  Parameterization param = Parameterization::kSpd;
  MeasurementModel model = MeasurementModel::kSemi;
};

struct TrialOptions {
  SolveOptions solve;
  Covariances covariances;
  double success_factor = kDefaultSuccessFactor;
  int iou_resolution = 128;
};

inline constexpr int kLandmarkId = 1000;

/// Camera poses fixed at truth, one box factor per frame, landmark free.
inline Problem build_trial_problem(const Trial& t, const LandmarkState& landmark, const Covariances& cov) {
  Problem p;
  for (const auto& f : t.scene.frames) p.add_pose(f.id, f.pose, true);
  p.add_landmark(kLandmarkId, landmark);
  for (std::size_t i = 0; i < t.scene.frames.size(); ++i) {
    const auto& f = t.scene.frames[i];
    p.add_factor(make_factor(static_cast<int>(i), box_factor_kind(t.model), {f.id, kLandmarkId},
                             BoxObservation{f.intrinsics, t.noisy_boxes[i]}, cov));
  }
  return p;
}

inline TrialResult run_trial(const Trial& t, const TrialOptions& options = {}) {
  TrialResult out;
  Problem truth_problem = build_trial_problem(t, landmark_from_rts(t.scene.truth, t.param), options.covariances);
  out.truth_cost = total_cost(truth_problem);

  Problem problem = build_trial_problem(t, landmark_from_rts(t.initial, t.param), options.covariances);
  SolveReport report;
  try {
    report = solve(problem, options.solve);
  } catch (const Error& e) {
    out.termination = std::string("error: ") + e.what();
    return out;
  }
  out.iterations = report.iterations;
  out.attempts = report.attempts;
  out.initial_cost = report.initial_cost();
  out.final_cost = report.final_cost();
  out.termination = to_string(report.termination);
  out.dropped_factors = static_cast<int>(report.skipped_factors.size());
  out.cost_trace = report.cost_trace;
  out.iteration_ms = report.iteration_ms;
  out.success = declare_success(report, out.truth_cost, options.success_factor);

  const DualQuadric truth_q = dual_from_rts(t.scene.truth);
  try {
    const DualQuadric est = to_dual(std::get<LandmarkState>(report.variables.at(kLandmarkId).value));
    out.iou = iou_boxes(circumscribed_box(est), circumscribed_box(truth_q), options.iou_resolution);
    out.orientation_error_deg = orientation_error_deg(rts_from_dual(est).rotation, t.scene.truth.rotation);
  } catch (const Error&) {
    out.success = false;
    out.iou = 0.0;
    out.orientation_error_deg = 90.0;
  }
  return out;
}

struct CampaignSpec {
  std::uint64_t master_seed = 0;
  int trials_per_cell = 24;
  std::vector<NoiseLevel> noise_levels = {NoiseLevel::kLow, NoiseLevel::kMedium, NoiseLevel::kHigh};
  std::vector<int> arcs = {60, 120};
  std::vector<Parameterization> params = {Parameterization::kFull, Parameterization::kRts, Parameterization::kSpd};
  std::vector<MeasurementModel> models = {MeasurementModel::kInverse, MeasurementModel::kSemi};
  SceneSpec scene;  // seed and arc are set per scene
  TrialOptions trial;

  std::size_t solve_count() const {
    return noise_levels.size() * arcs.size() * params.size() * models.size() * static_cast<std::size_t>(trials_per_cell);
  }
};

struct SceneData {
  Scene scene;
  std::vector<BoundingBox> noisy_boxes;
  RtsState initial;
  std::string error;
};

/// Scene, noisy boxes and RTS initial estimate shared by every configuration
/// of scene `index` under (noise, arc).
inline SceneData make_scene_data(const CampaignSpec& spec, NoiseLevel noise, int arc, int index) {
  SceneData d;
  const auto n = static_cast<std::uint64_t>(noise);
  const auto a = static_cast<std::uint64_t>(arc);
  const auto i = static_cast<std::uint64_t>(index);
  SceneSpec ss = spec.scene;
  ss.arc_deg = arc;
  ss.seed = derive_seed(spec.master_seed, {n, a, i, static_cast<std::uint64_t>(Stream::kScene)});
  try {
    d.scene = generate_scene(ss);
  } catch (const Error& e) {
    d.error = e.what();
    return d;
  }
  const NoiseSpec ns = NoiseSpec::table(noise);
  Rng init_rng(derive_seed(spec.master_seed, {n, a, i, static_cast<std::uint64_t>(Stream::kInitial)}));
  d.initial = perturb_initial(d.scene.truth, ns, init_rng);
  Rng box_rng(derive_seed(spec.master_seed, {n, a, i, static_cast<std::uint64_t>(Stream::kBoxes)}));
  d.noisy_boxes = perturb_boxes(d.scene.boxes, ns.sigma_box_px, box_rng);
  return d;
}

/// Runs `count` independent jobs on `jobs` workers; fn(i) must only write
/// to slot i of its own output.
template <class Fn>
void parallel_for(std::size_t count, int jobs, Fn fn) {
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

inline CampaignResult run_campaign(const CampaignSpec& spec, int jobs = 1) {
  struct SceneSlot {
    NoiseLevel noise;
    int arc;
    int index;
  };
  std::vector<SceneSlot> slots;
  for (const auto n : spec.noise_levels) {
    for (const int a : spec.arcs) {
      for (int i = 0; i < spec.trials_per_cell; ++i) slots.push_back({n, a, i});
    }
  }
  std::vector<SceneData> scenes(slots.size());
  parallel_for(slots.size(), jobs,
               [&](std::size_t k) { scenes[k] = make_scene_data(spec, slots[k].noise, slots[k].arc, slots[k].index); });

  CampaignResult result;
  std::vector<std::pair<std::size_t, std::size_t>> work;  // (cell, scene slot)
  std::size_t slot_base = 0;
  for (const auto n : spec.noise_levels) {
    for (const int a : spec.arcs) {
      for (const auto p : spec.params) {
        for (const auto m : spec.models) {
          Cell c;
          c.key = CellKey{n, a, p, m};
          c.trials.resize(spec.trials_per_cell);
          for (int i = 0; i < spec.trials_per_cell; ++i) work.emplace_back(result.cells.size(), slot_base + i);
          result.cells.push_back(std::move(c));
        }
      }
      slot_base += spec.trials_per_cell;
    }
  }

  parallel_for(work.size(), jobs, [&](std::size_t w) {
    const auto [cell_index, slot] = work[w];
    Cell& cell = result.cells[cell_index];
    const SceneData& sd = scenes[slot];
    TrialResult& out = cell.trials[slots[slot].index];
    if (!sd.error.empty()) {
      out.scene = slots[slot].index;
      out.termination = "error: " + sd.error;
      return;
    }
    const Trial trial{sd.scene, sd.noisy_boxes, sd.initial, cell.key.param, cell.key.model};
    out = run_trial(trial, spec.trial);
    out.scene = slots[slot].index;
  });

  std::sort(result.cells.begin(), result.cells.end(), [](const Cell& a, const Cell& b) { return a.key < b.key; });
  return result;
}

// ---------------------------------------------------------------------------
// Multi-constraint scenes

struct MultiConstraintSpec {
  std::uint64_t seed = 0;
  NoiseLevel noise = NoiseLevel::kMedium;
  double arc_deg = 60.0;
  double scale_prior_rel_sigma = 0.1;
};

inline constexpr int kGraphLandmarkId = 100;

/// One upright landmark resting on the floor z = 0, observed from an arc of
/// fixed cameras, with box detections plus orientation (gravity), scale and
/// supporting-plane priors and a perturbed initial estimate.
inline Graph generate_multi_constraint_graph(const MultiConstraintSpec& spec) {
  Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(Stream::kScene)}));
  SceneSpec ss;
  ss.arc_deg = spec.arc_deg;
  ss.validate();
  constexpr double deg = std::numbers::pi / 180.0;

  Graph g;
  g.intrinsics = ss.intrinsics;
  RtsState truth;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= ss.max_attempts) throw Error(ErrorCode::kInvalidInput, "could not place landmark in view");
    for (int i = 0; i < 3; ++i) truth.scale(i) = uniform(rng, ss.semi_axis_min, ss.semi_axis_max);
    const double yaw = uniform(rng, -std::numbers::pi, std::numbers::pi);
    truth.rotation = so3_exp(Vec3(0.0, 0.0, yaw));
    truth.translation = Vec3(uniform(rng, -0.5, 0.5), uniform(rng, -1.0, 1.0), truth.scale(2));

    g.frames.clear();
    g.detections.clear();
    const DualQuadric q = dual_from_rts(truth);
    const double base = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    bool ok = true;
    for (int f = 0; f < ss.frame_count; ++f) {
      const double az = base + uniform(rng, -0.5, 0.5) * spec.arc_deg * deg;
      const double el = uniform(rng, 5.0, 30.0) * deg;
      const double radius = uniform(rng, ss.radius_min, ss.radius_max);
      const Vec3 pos = truth.translation + radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                                                         std::sin(el));
      const CameraFrame frame{ss.intrinsics, look_at(pos, truth.translation), f};
      try {
        const BoundingBox b = predict_box(q, frame);
        ok = ok && box_inside_image(b, ss.intrinsics);
        g.frames.push_back({f, GraphPose::from(frame.pose)});
        g.detections.push_back({f, kGraphLandmarkId, b});
      } catch (const Error&) {
        ok = false;
      }
    }
    if (ok) break;
  }

  const NoiseSpec ns = NoiseSpec::table(spec.noise);
  Rng box_rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(Stream::kBoxes)}));
  for (auto& d : g.detections) d.box = perturb_boxes({d.box}, ns.sigma_box_px, box_rng).front();

  Rng init_rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(Stream::kInitial)}));
  g.landmarks.push_back({kGraphLandmarkId, GraphRts::from(perturb_initial(truth, ns, init_rng))});

  Rng prior_rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(Stream::kPriors)}));
  Vec3 abc;
  for (int i = 0; i < 3; ++i) abc(i) = truth.scale(i) * std::max(0.2, 1.0 + spec.scale_prior_rel_sigma * gaussian(prior_rng));
  std::sort(abc.data(), abc.data() + 3, std::greater<>());
  g.orientation_priors.push_back({kGraphLandmarkId, Vec3::UnitZ()});
  g.scale_priors.push_back({kGraphLandmarkId, abc});
  g.support_planes.push_back({kGraphLandmarkId, Plane{Vec4(0.0, 0.0, 1.0, 0.0)}});
  for (const auto& f : g.frames) g.fixed.push_back(f.id);
  g.truth.push_back({kGraphLandmarkId, GraphRts::from(truth)});
  return g;
}

}  // namespace oslam
