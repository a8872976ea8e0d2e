#pragma once

// Levenberg-Marquardt over the product manifold of camera poses and
// landmarks. Jacobians are central finite differences through each
// variable's retraction, so every parameterization is handled by the same
// code path and only the retraction differs.

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <map>
#include <set>

#include "oslam/costs.hpp"

namespace oslam {

struct Variable {
  VariableValue value;
  bool fixed = false;

  bool is_pose() const { return std::holds_alternative<Pose>(value); }
};

inline int tangent_dim(const VariableValue& v) {
  return std::holds_alternative<Pose>(v) ? 6 : tangent_dim(std::get<LandmarkState>(v));
}

inline VariableValue retract(const VariableValue& v, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (const auto* p = std::get_if<Pose>(&v)) return pose_retract(*p, delta);
  return retract(std::get<LandmarkState>(v), delta);
}

inline Eigen::VectorXd coordinate_magnitudes(const VariableValue& v) {
  if (std::holds_alternative<Pose>(v)) return Eigen::VectorXd::Zero(6);
  return coordinate_magnitudes(std::get<LandmarkState>(v));
}

struct Problem {
  std::map<int, Variable> variables;
  std::vector<Factor> factors;  // sorted by id
  SizeForm size_form = SizeForm::kSqrt;

  void add_pose(int id, const Pose& pose, bool fixed = false) { add_variable(id, Variable{pose, fixed}); }
  void add_landmark(int id, const LandmarkState& state, bool fixed = false) {
    add_variable(id, Variable{state, fixed});
  }

  void add_variable(int id, Variable v) {
    if (!variables.emplace(id, std::move(v)).second) {
      throw Error(ErrorCode::kSchema, "duplicate variable id " + std::to_string(id));
    }
  }

  void add_factor(Factor f) {
    f.validate();
    const auto pos = std::lower_bound(factors.begin(), factors.end(), f.id,
                                      [](const Factor& a, int id) { return a.id < id; });
    if (pos != factors.end() && pos->id == f.id) {
      throw Error(ErrorCode::kSchema, "duplicate factor id " + std::to_string(f.id));
    }
    factors.insert(pos, std::move(f));
  }

  int next_factor_id() const { return factors.empty() ? 0 : factors.back().id + 1; }

  /// Every factor references existing variables of the right kind.
  void validate() const {
    for (const auto& f : factors) {
      f.validate();
      for (std::size_t i = 0; i < f.variables.size(); ++i) {
        const auto it = variables.find(f.variables[i]);
        if (it == variables.end()) {
          throw Error(ErrorCode::kSchema, "factor " + std::to_string(f.id) + " references unknown variable " +
                                              std::to_string(f.variables[i]));
        }
        const bool want_pose = f.kind == FactorKind::kPosePrior || (f.variables.size() == 2 && i == 0);
        if (it->second.is_pose() != want_pose) {
          throw Error(ErrorCode::kSchema, "factor " + std::to_string(f.id) + " expects a " +
                                              (want_pose ? "pose" : "landmark") + " for variable " +
                                              std::to_string(f.variables[i]));
        }
      }
    }
  }

  std::vector<int> unconstrained_variables() const {
    std::set<int> used;
    for (const auto& f : factors) used.insert(f.variables.begin(), f.variables.end());
    std::vector<int> out;
    for (const auto& [id, v] : variables) {
      if (!v.fixed && !used.count(id)) out.push_back(id);
    }
    return out;
  }
};

using VariableMap = std::map<int, Variable>;

namespace detail {

// Evaluates f, optionally substituting one variable's value. Returns nullopt
// when the factor cannot be evaluated at this point (behind camera,
// degenerate projection or landmark).
inline std::optional<Eigen::VectorXd> try_evaluate(const Factor& f, const VariableMap& vars, SizeForm size_form,
                                                   int override_id = -1, const VariableValue* override_value = nullptr,
                                                   std::string* why = nullptr) {
  std::array<const VariableValue*, 2> values{};
  for (std::size_t i = 0; i < f.variables.size(); ++i) {
    const int id = f.variables[i];
    values[i] = (id == override_id && override_value) ? override_value : &vars.at(id).value;
  }
  try {
    return evaluate_factor(f, std::span<const VariableValue* const>(values.data(), f.variables.size()), size_form);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBehindCamera || e.code() == ErrorCode::kDegenerateProjection ||
        e.code() == ErrorCode::kDegenerateLandmark) {
      if (why) *why = e.what();
      return std::nullopt;
    }
    throw;
  }
}

inline std::optional<VariableValue> try_retract(const VariableValue& x, const Eigen::VectorXd& delta) {
  try {
    return retract(x, delta);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDimension) throw;
    return std::nullopt;
  }
}

inline double mahalanobis(const Eigen::VectorXd& r, const Eigen::VectorXd& variance) {
  return (r.array().square() / variance.array()).sum();
}

}  // namespace detail

struct CostBreakdown {
  double total = 0.0;
  std::map<FactorKind, double> by_kind;
  std::vector<int> skipped_factors;  // ids, ascending
  std::vector<std::string> messages;
};

/// Sum over factors (ascending id) of r^T Sigma^-1 r. Factors that cannot be
/// evaluated contribute zero and are listed in skipped_factors.
inline CostBreakdown evaluate_cost(const std::vector<Factor>& factors, const VariableMap& vars,
                                   SizeForm size_form = SizeForm::kSqrt) {
  CostBreakdown out;
  for (const auto& f : factors) {
    std::string why;
    const auto r = detail::try_evaluate(f, vars, size_form, -1, nullptr, &why);
    if (!r) {
      out.skipped_factors.push_back(f.id);
      out.messages.push_back("factor " + std::to_string(f.id) + " skipped: " + why);
      continue;
    }
    const double c = detail::mahalanobis(*r, f.variance);
    out.total += c;
    out.by_kind[f.kind] += c;
  }
  return out;
}

inline CostBreakdown evaluate_cost(const Problem& p) { return evaluate_cost(p.factors, p.variables, p.size_form); }

inline double total_cost(const Problem& p) { return evaluate_cost(p).total; }

// Levenberg adds lambda * max(diag H) * I. With whitened SPD coordinates the
// damping term is then the affine-invariant norm of the shape step.
// Marquardt adds lambda * diag(H).
enum class Damping { kLevenberg, kMarquardt };

inline const char* to_string(Damping d) { return d == Damping::kLevenberg ? "levenberg" : "marquardt"; }

/// Coordinates of the SPD shape step that the damped normal equations are
/// solved in. Ambient: the symmetric tangent X itself, retracted as
/// P^1/2 Exp(P^-1/2 X P^-1/2) P^1/2. Whitened: E = P^-1/2 X P^-1/2, so the
/// Levenberg term is the affine-invariant length of the step. Jacobians are
/// always differenced in whitened coordinates, where a fixed step is well
/// scaled, and mapped exactly to ambient ones when needed.
enum class SpdCoordinates { kAmbient, kWhitened };

inline const char* to_string(SpdCoordinates c) { return c == SpdCoordinates::kAmbient ? "ambient" : "whitened"; }

struct SolveOptions {
  int max_iterations = 100;
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double relative_cost_tolerance = 1e-10;
  double gradient_tolerance = 1e-12;
  double fd_step = 1e-6;  // scaled by 1 + |coordinate|
  int max_inner_retries = 10;
  bool gauss_newton = false;  // lambda = 0, no retries
  Damping damping = Damping::kLevenberg;
  SpdCoordinates spd_coordinates = SpdCoordinates::kWhitened;
};

struct Linearization {
  Eigen::MatrixXd jacobian;
  Eigen::VectorXd residual;
  Eigen::VectorXd weights;  // inverse variances, per row
  std::vector<int> column_variables;  // free variable ids, ascending
  std::vector<int> column_offsets;
  std::vector<int> row_factors;  // active factor ids, ascending
  std::vector<int> row_offsets;
  std::vector<int> skipped_factors;
  std::vector<std::string> warnings;
};

namespace detail {

/// Matrix taking ambient SPD tangent coordinates at `p` to whitened ones.
inline Eigen::Matrix<double, 6, 6> whitening_map(const SpdMatrix& p) {
  const Mat3 inv_half = sqrt_pair(p.matrix()).inv_sqrt;
  Eigen::Matrix<double, 6, 6> m;
  for (int k = 0; k < SymTangent::kDim; ++k) {
    const Mat3 x = SymTangent::from_coords(Vec6::Unit(k)).matrix();
    m.col(k) = SymTangent(inv_half * x * inv_half).coords();
  }
  return m;
}

inline const SpdState* spd_state(const VariableValue& v) {
  const auto* ls = std::get_if<LandmarkState>(&v);
  return ls ? std::get_if<SpdState>(ls) : nullptr;
}

}  // namespace detail

inline Linearization linearize(const Problem& problem, const SolveOptions& options) {
  Linearization lin;
  const VariableMap& vars = problem.variables;

  int cols = 0;
  for (const auto& [id, v] : vars) {
    if (v.fixed) continue;
    lin.column_variables.push_back(id);
    lin.column_offsets.push_back(cols);
    cols += tangent_dim(v.value);
  }

  std::vector<const Factor*> active;
  std::vector<Eigen::VectorXd> base;
  int rows = 0;
  for (const auto& f : problem.factors) {
    std::string why;
    auto r = detail::try_evaluate(f, vars, problem.size_form, -1, nullptr, &why);
    if (!r) {
      lin.skipped_factors.push_back(f.id);
      lin.warnings.push_back("factor " + std::to_string(f.id) + " dropped: " + why);
      continue;
    }
    if (!r->allFinite()) {
      throw Error(ErrorCode::kLinearization, "factor " + std::to_string(f.id) + " (" + to_string(f.kind) +
                                                 ") produced a non-finite residual");
    }
    active.push_back(&f);
    lin.row_factors.push_back(f.id);
    lin.row_offsets.push_back(rows);
    rows += static_cast<int>(r->size());
    base.push_back(std::move(*r));
  }

  lin.jacobian = Eigen::MatrixXd::Zero(rows, cols);
  lin.residual.resize(rows);
  lin.weights.resize(rows);
  for (std::size_t k = 0; k < active.size(); ++k) {
    const int n = static_cast<int>(base[k].size());
    lin.residual.segment(lin.row_offsets[k], n) = base[k];
    lin.weights.segment(lin.row_offsets[k], n) = active[k]->variance.cwiseInverse();
  }

  for (std::size_t c = 0; c < lin.column_variables.size(); ++c) {
    const int vid = lin.column_variables[c];
    const VariableValue& x = vars.at(vid).value;
    const int dim = tangent_dim(x);
    const Eigen::VectorXd mag = coordinate_magnitudes(x);

    std::vector<std::size_t> touching;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const auto& fv = active[k]->variables;
      if (std::find(fv.begin(), fv.end(), vid) != fv.end()) touching.push_back(k);
    }
    if (touching.empty()) continue;

    for (int j = 0; j < dim; ++j) {
      const double h = options.fd_step * (1.0 + mag(j));
      Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
      e(j) = h;
      // A side whose retraction leaves the manifold is treated as unevaluable.
      const auto plus = detail::try_retract(x, e);
      const auto minus = detail::try_retract(x, -e);
      for (const std::size_t k : touching) {
        const Factor& f = *active[k];
        const auto rp = plus ? detail::try_evaluate(f, vars, problem.size_form, vid, &*plus) : std::nullopt;
        const auto rm = minus ? detail::try_evaluate(f, vars, problem.size_form, vid, &*minus) : std::nullopt;
        Eigen::VectorXd col;
        if (rp && rm) {
          col = (*rp - *rm) / (2.0 * h);
        } else if (rp) {
          col = (*rp - base[k]) / h;
        } else if (rm) {
          col = (base[k] - *rm) / h;
        } else {
          lin.warnings.push_back("factor " + std::to_string(f.id) + ": no finite difference along coordinate " +
                                 std::to_string(j) + " of variable " + std::to_string(vid));
          continue;
        }
        if (!col.allFinite()) {
          throw Error(ErrorCode::kLinearization, "factor " + std::to_string(f.id) + " (" + to_string(f.kind) +
                                                     ") produced a non-finite Jacobian");
        }
        lin.jacobian.block(lin.row_offsets[k], lin.column_offsets[c] + j, col.size(), 1) = col;
      }
    }
    if (const SpdState* spd = detail::spd_state(x); spd && options.spd_coordinates == SpdCoordinates::kAmbient) {
      auto block = lin.jacobian.middleCols<SymTangent::kDim>(lin.column_offsets[c]);
      block = (block * detail::whitening_map(spd->shape)).eval();
    }
  }
  return lin;
}

enum class Termination {
  kConverged,       // relative cost decrease below tolerance
  kSmallGradient,
  kNoImprovement,   // no decreasing step within the retry budget
  kMaxIterations,
  kDiverged,        // normal equations unsolvable at every damping tried
  kNoFreeVariables,
};

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kConverged: return "converged";
    case Termination::kSmallGradient: return "small-gradient";
    case Termination::kNoImprovement: return "no-improvement";
    case Termination::kMaxIterations: return "max-iterations";
    case Termination::kDiverged: return "diverged";
    case Termination::kNoFreeVariables: return "no-free-variables";
  }
  return "?";
}

struct SolveReport {
  std::vector<double> cost_trace;  // initial cost, then one entry per accepted step
  std::vector<double> iteration_ms;
  int iterations = 0;  // accepted steps
  int attempts = 0;    // candidate steps evaluated, accepted or not
  Termination termination = Termination::kMaxIterations;
  VariableMap variables;
  std::vector<int> skipped_factors;  // at the final state
  std::vector<std::string> warnings;

  double initial_cost() const { return cost_trace.empty() ? 0.0 : cost_trace.front(); }
  double final_cost() const { return cost_trace.empty() ? 0.0 : cost_trace.back(); }
};

namespace detail {

inline void push_warning(std::vector<std::string>& out, const std::string& w) {
  constexpr std::size_t kMaxWarnings = 64;
  if (out.size() < kMaxWarnings) out.push_back(w);
}

inline bool is_subset(const std::vector<int>& a, const std::vector<int>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace detail

/// Solves in place. A candidate step is accepted iff it lowers the cost
/// without dropping a factor that is evaluable at the current point.
/// Full-parameterization landmarks are regularized before the candidate is
/// evaluated, so every accepted state is a valid ellipsoid.
inline SolveReport solve(Problem& problem, const SolveOptions& options = {}) {
  using Clock = std::chrono::steady_clock;
  SolveReport report;
  problem.validate();

  for (const int id : problem.unconstrained_variables()) {
    problem.variables.at(id).fixed = true;
    detail::push_warning(report.warnings, "variable " + std::to_string(id) + " is unconstrained; held fixed");
  }

  CostBreakdown current = evaluate_cost(problem);
  report.cost_trace.push_back(current.total);
  for (const auto& m : current.messages) detail::push_warning(report.warnings, m);

  const bool any_free = std::any_of(problem.variables.begin(), problem.variables.end(),
                                    [](const auto& kv) { return !kv.second.fixed; });
  if (!any_free) {
    report.termination = Termination::kNoFreeVariables;
    report.variables = problem.variables;
    report.skipped_factors = current.skipped_factors;
    return report;
  }

  double lambda = options.gauss_newton ? 0.0 : options.initial_lambda;
  report.termination = Termination::kMaxIterations;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const auto t0 = Clock::now();
    const Linearization lin = linearize(problem, options);
    for (const auto& w : lin.warnings) detail::push_warning(report.warnings, w);

    const Eigen::MatrixXd jtw = lin.jacobian.transpose() * lin.weights.asDiagonal();
    const Eigen::MatrixXd hessian = jtw * lin.jacobian;
    const Eigen::VectorXd gradient = jtw * lin.residual;
    if (gradient.norm() <= options.gradient_tolerance) {
      report.termination = Termination::kSmallGradient;
      report.iteration_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
      break;
    }

    const Eigen::VectorXd diag_floor =
        hessian.diagonal().cwiseMax(1e-12 * std::max(hessian.diagonal().maxCoeff(), 1e-300));
    const int tries = options.gauss_newton ? 1 : options.max_inner_retries;
    bool accepted = false;
    bool any_solved = false;
    for (int t = 0; t < tries && !accepted; ++t) {
      Eigen::MatrixXd a = hessian;
      if (options.damping == Damping::kLevenberg) {
        a.diagonal().array() += lambda * diag_floor.maxCoeff();
      } else {
        a.diagonal() += lambda * diag_floor;
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      Eigen::VectorXd delta;
      if (ldlt.info() == Eigen::Success) delta = ldlt.solve(-gradient);
      if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
        lambda = std::max(lambda, 1e-12) * options.lambda_up;
        continue;
      }
      any_solved = true;
      ++report.attempts;

      VariableMap candidate = problem.variables;
      bool valid = true;
      for (std::size_t c = 0; c < lin.column_variables.size() && valid; ++c) {
        Variable& v = candidate.at(lin.column_variables[c]);
        const int n = tangent_dim(v.value);
        Eigen::VectorXd step = delta.segment(lin.column_offsets[c], n);
        if (const SpdState* spd = detail::spd_state(v.value); spd && options.spd_coordinates == SpdCoordinates::kAmbient) {
          step.head<SymTangent::kDim>() = detail::whitening_map(spd->shape) * step.head<SymTangent::kDim>();
        }
        try {
          v.value = retract(v.value, step);
          if (auto* ls = std::get_if<LandmarkState>(&v.value)) {
            if (auto* full = std::get_if<FullState>(ls)) *full = regularize_full(*full);
          }
        } catch (const Error&) {
          valid = false;
        }
      }
      if (valid) {
        CostBreakdown next = evaluate_cost(problem.factors, candidate, problem.size_form);
        if (next.total < current.total && detail::is_subset(next.skipped_factors, current.skipped_factors)) {
          const double rel = (current.total - next.total) / std::max(current.total, 1e-300);
          problem.variables = std::move(candidate);
          current = std::move(next);
          report.cost_trace.push_back(current.total);
          ++report.iterations;
          accepted = true;
          if (!options.gauss_newton) lambda = std::max(lambda * options.lambda_down, 1e-15);
          if (rel < options.relative_cost_tolerance) report.termination = Termination::kConverged;
          break;
        }
      }
      if (!options.gauss_newton) lambda *= options.lambda_up;
    }
    report.iteration_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());

    if (!accepted) {
      report.termination = any_solved ? Termination::kNoImprovement : Termination::kDiverged;
      break;
    }
    if (report.termination == Termination::kConverged) break;
  }

  report.variables = problem.variables;
  report.skipped_factors = current.skipped_factors;
  return report;
}

inline constexpr double kDefaultSuccessFactor = 1.5;
inline constexpr double kSuccessSlack = 1e-6;

/// Success iff the solve did not diverge, every factor is evaluable at the
/// result, and the final cost is within success_factor of the cost of the
/// ground truth on the same observations (plus a 1e-6 absolute slack).
inline bool declare_success(const SolveReport& report, double truth_cost,
                            double success_factor = kDefaultSuccessFactor) {
  if (report.termination == Termination::kDiverged) return false;
  if (!report.skipped_factors.empty()) return false;
  return report.final_cost() <= success_factor * truth_cost + kSuccessSlack;
}

inline bool declare_success(const SolveReport& report, const Problem& truth_problem,
                            double success_factor = kDefaultSuccessFactor) {
  return declare_success(report, total_cost(truth_problem), success_factor);
}

}  // namespace oslam
