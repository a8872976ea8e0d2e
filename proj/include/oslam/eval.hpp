#pragma once

// Accuracy metrics (circumscribed-box IoU, orientation error modulo axis
// relabeling) and aggregation of simulated trials into summary tables.

#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include "oslam/solver.hpp"

namespace oslam {

struct OrientedBox {
  Vec3 center = Vec3::Zero();
  Rotation rotation;
  Vec3 half_extents = Vec3::Ones();
};

inline OrientedBox circumscribed_box(const DualQuadric& q) {
  const RtsState s = rts_from_dual(q);
  return OrientedBox{s.translation, s.rotation, s.scale};
}

namespace detail {

struct Interval {
  double lo;
  double hi;
};

// Range of z for which (x, y, z) lies inside the box.
inline std::optional<Interval> box_z_interval(const OrientedBox& b, double x, double y) {
  Interval iv{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  const Mat3& r = b.rotation.matrix();
  for (int k = 0; k < 3; ++k) {
    const Vec3 a = r.col(k);
    const double base = a.x() * (x - b.center.x()) + a.y() * (y - b.center.y()) - a.z() * b.center.z();
    const double h = b.half_extents(k);
    if (std::abs(a.z()) < 1e-15) {
      if (std::abs(base) > h) return std::nullopt;
      continue;
    }
    double lo = (-h - base) / a.z();
    double hi = (h - base) / a.z();
    if (lo > hi) std::swap(lo, hi);
    iv.lo = std::max(iv.lo, lo);
    iv.hi = std::min(iv.hi, hi);
    if (iv.lo > iv.hi) return std::nullopt;
  }
  return iv;
}

// Number of cell centers z0 + (j + 0.5) dz, j in [0, n), inside [lo, hi].
inline long count_centers(const std::optional<Interval>& iv, double z0, double dz, int n) {
  if (!iv) return 0;
  const long jlo = std::max(0L, static_cast<long>(std::ceil((iv->lo - z0) / dz - 0.5)));
  const long jhi = std::min(static_cast<long>(n) - 1, static_cast<long>(std::floor((iv->hi - z0) / dz - 0.5)));
  return std::max(0L, jhi - jlo + 1);
}

inline void extend_bounds(const OrientedBox& b, Vec3& lo, Vec3& hi) {
  for (int c = 0; c < 8; ++c) {
    const Vec3 sign((c & 1) ? 1.0 : -1.0, (c & 2) ? 1.0 : -1.0, (c & 4) ? 1.0 : -1.0);
    const Vec3 p = b.center + b.rotation * sign.cwiseProduct(b.half_extents);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
}

}  // namespace detail

/// Voxel IoU on a resolution^3 grid of cell centers spanning the union's
/// axis-aligned bounds. Each grid column is intersected with the boxes in
/// closed form, which counts exactly the centers a per-voxel test would.
inline double iou_boxes(const OrientedBox& a, const OrientedBox& b, int resolution = 128) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  detail::extend_bounds(a, lo, hi);
  detail::extend_bounds(b, lo, hi);
  const Vec3 d = (hi - lo) / resolution;
  long in_a = 0, in_b = 0, in_both = 0;
  for (int i = 0; i < resolution; ++i) {
    const double x = lo.x() + (i + 0.5) * d.x();
    for (int j = 0; j < resolution; ++j) {
      const double y = lo.y() + (j + 0.5) * d.y();
      const auto ia = detail::box_z_interval(a, x, y);
      const auto ib = detail::box_z_interval(b, x, y);
      in_a += detail::count_centers(ia, lo.z(), d.z(), resolution);
      in_b += detail::count_centers(ib, lo.z(), d.z(), resolution);
      if (ia && ib) {
        const detail::Interval both{std::max(ia->lo, ib->lo), std::min(ia->hi, ib->hi)};
        if (both.lo <= both.hi) in_both += detail::count_centers(both, lo.z(), d.z(), resolution);
      }
    }
  }
  const long uni = in_a + in_b - in_both;
  return uni > 0 ? static_cast<double>(in_both) / static_cast<double>(uni) : 0.0;
}

inline double rotation_angle_deg(const Rotation& r) { return so3_log(r).norm() * 180.0 / std::numbers::pi; }

/// Smallest rotation angle aligning est with truth modulo the 24 proper
/// relabelings of the truth's axes, in degrees.
inline double orientation_error_deg(const Rotation& est, const Rotation& truth) {
  double best = std::numeric_limits<double>::infinity();
  for (const Mat3& perm : proper_axis_permutations()) {
    const Rotation aligned(truth.matrix() * perm, Rotation::Trusted{});
    best = std::min(best, rotation_angle_deg(aligned.inverse() * est));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Trial aggregation

enum class NoiseLevel { kLow, kMedium, kHigh };
enum class MeasurementModel { kInverse, kSemi };

inline const char* to_string(NoiseLevel n) {
  switch (n) {
    case NoiseLevel::kLow: return "L";
    case NoiseLevel::kMedium: return "M";
    case NoiseLevel::kHigh: return "H";
  }
  return "?";
}

inline const char* to_string(MeasurementModel m) { return m == MeasurementModel::kInverse ? "inverse" : "semi"; }

inline FactorKind box_factor_kind(MeasurementModel m) {
  return m == MeasurementModel::kInverse ? FactorKind::kBoxInverse : FactorKind::kBoxSemi;
}

struct TrialResult {
  int scene = 0;
  bool success = false;
  double iou = 0.0;
  double orientation_error_deg = 0.0;
  int iterations = 0;  // accepted steps
  int attempts = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double truth_cost = 0.0;
  std::string termination;
  int dropped_factors = 0;
  std::vector<double> cost_trace;
  std::vector<double> iteration_ms;  // wall time, not part of the deterministic record
};

struct CellKey {
  NoiseLevel noise = NoiseLevel::kLow;
  int arc_deg = 60;
  Parameterization param = Parameterization::kSpd;
  MeasurementModel model = MeasurementModel::kSemi;

  auto operator<=>(const CellKey&) const = default;

  std::string label() const {
    return std::string(to_string(noise)) + "/" + std::to_string(arc_deg) + "/" + to_string(param) + "/" +
           to_string(model);
  }
};

struct Cell {
  CellKey key;
  std::vector<TrialResult> trials;
};

struct CampaignResult {
  std::vector<Cell> cells;  // sorted by key

  const Cell* find(const CellKey& k) const {
    for (const auto& c : cells) {
      if (c.key == k) return &c;
    }
    return nullptr;
  }
};

struct CellSummary {
  int trials = 0;
  int successes = 0;
  double mean_iou = 0.0;
  std::optional<double> mean_success_iou;
  std::optional<double> mean_success_iterations;
  std::optional<double> median_success_iterations;
  std::optional<double> mean_orientation_error_deg;

  bool operator==(const CellSummary&) const = default;
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Aggregates trials in the given order. Averages over empty sets are absent.
inline CellSummary summarize(std::span<const TrialResult> trials) {
  CellSummary s;
  s.trials = static_cast<int>(trials.size());
  if (trials.empty()) return s;
  double iou_sum = 0.0, succ_iou = 0.0, ori = 0.0;
  std::vector<double> iters;
  for (const auto& t : trials) {
    iou_sum += t.iou;
    ori += t.orientation_error_deg;
    if (t.success) {
      ++s.successes;
      succ_iou += t.iou;
      iters.push_back(t.iterations);
    }
  }
  s.mean_iou = iou_sum / s.trials;
  s.mean_orientation_error_deg = ori / s.trials;
  if (s.successes > 0) {
    s.mean_success_iou = succ_iou / s.successes;
    s.mean_success_iterations = std::accumulate(iters.begin(), iters.end(), 0.0) / s.successes;
    s.median_success_iterations = median(iters);
  }
  return s;
}

/// Pools trials of all cells matching the predicate, in cell order.
template <class Pred>
std::vector<TrialResult> pool_trials(const CampaignResult& c, Pred pred) {
  std::vector<TrialResult> out;
  for (const auto& cell : c.cells) {
    if (pred(cell.key)) out.insert(out.end(), cell.trials.begin(), cell.trials.end());
  }
  return out;
}

inline std::optional<double> median_success_iterations(std::span<const TrialResult> trials) {
  std::vector<double> v;
  for (const auto& t : trials) {
    if (t.success) v.push_back(t.iterations);
  }
  if (v.empty()) return std::nullopt;
  return median(v);
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string short_iou(double v) {
  std::string s = fmt("%.2f", v);
  if (s.rfind("0.", 0) == 0) s.erase(0, 1);
  return s;
}

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); }

}  // namespace detail

/// Success counts (F+S+O), average IoU (F/S/O), average IoU of successful
/// trials pooled over parameterizations, and the RTS/SPD iteration
/// comparison, one column per (model, arc).
inline std::string render_report(const CampaignResult& campaign) {
  std::set<NoiseLevel> noises;
  std::set<int> arcs;
  for (const auto& c : campaign.cells) {
    noises.insert(c.key.noise);
    arcs.insert(c.key.arc_deg);
  }
  struct Column {
    MeasurementModel model;
    int arc;
  };
  std::vector<Column> cols;
  for (const int arc : arcs) {
    for (const auto m : {MeasurementModel::kInverse, MeasurementModel::kSemi}) cols.push_back({m, arc});
  }
  const std::array<Parameterization, 3> params = {Parameterization::kFull, Parameterization::kRts,
                                                  Parameterization::kSpd};
  constexpr std::size_t kW = 18;

  std::ostringstream os;
  auto header = [&](const std::string& title) {
    os << title << "\n" << detail::pad("", 4);
    for (const auto& c : cols) {
      os << detail::pad(std::string(c.model == MeasurementModel::kInverse ? "inv-" : "semi-") + std::to_string(c.arc),
                        kW);
    }
    os << "\n";
  };
  auto summary_of = [&](NoiseLevel n, const Column& c, Parameterization p) -> std::optional<CellSummary> {
    const Cell* cell = campaign.find(CellKey{n, c.arc, p, c.model});
    if (!cell) return std::nullopt;
    return summarize(cell->trials);
  };

  header("Success count F+S+O");
  for (const auto n : noises) {
    os << detail::pad(to_string(n), 4);
    for (const auto& c : cols) {
      std::string s;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto sum = summary_of(n, c, params[i]);
        s += (i ? "+" : "") + (sum ? std::to_string(sum->successes) : std::string("-"));
      }
      os << detail::pad(s, kW);
    }
    os << "\n";
  }

  header("Average IoU F/S/O");
  for (const auto n : noises) {
    os << detail::pad(to_string(n), 4);
    for (const auto& c : cols) {
      std::string s;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto sum = summary_of(n, c, params[i]);
        s += (i ? "/" : "") + (sum && sum->trials ? detail::short_iou(sum->mean_iou) : std::string("-"));
      }
      os << detail::pad(s, kW);
    }
    os << "\n";
  }

  header("Average success IoU");
  for (const auto n : noises) {
    os << detail::pad(to_string(n), 4);
    for (const auto& c : cols) {
      const auto pooled = pool_trials(campaign, [&](const CellKey& k) {
        return k.noise == n && k.arc_deg == c.arc && k.model == c.model;
      });
      const auto sum = summarize(pooled);
      os << detail::pad(sum.mean_success_iou ? detail::fmt("%.2f", *sum.mean_success_iou) : std::string("-"), kW);
    }
    os << "\n";
  }

  header("Median accepted iterations to success S/O (O:S)");
  for (const auto n : noises) {
    os << detail::pad(to_string(n), 4);
    for (const auto& c : cols) {
      const auto s = summary_of(n, c, Parameterization::kRts);
      const auto o = summary_of(n, c, Parameterization::kSpd);
      std::string txt = "-";
      if (s && o && s->median_success_iterations && o->median_success_iterations) {
        txt = detail::fmt("%.1f", *s->median_success_iterations) + "/" +
              detail::fmt("%.1f", *o->median_success_iterations) + " (" +
              detail::fmt("%.2f", *o->median_success_iterations / *s->median_success_iterations) + ")";
      }
      os << detail::pad(txt, kW);
    }
    os << "\n";
  }
  os << "IoU is measured on circumscribed boxes.\n";
  return os.str();
}

}  // namespace oslam
