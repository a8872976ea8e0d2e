#pragma once

// The simulate / solve / eval / validate commands behind the command-line
// tool. Each returns the process exit code: 0 success, 1 usage, config or
// input error, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>

#include "oslam/io.hpp"

namespace oslam {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr const char* kOutDirEnv = "OSLAM_OUT_DIR";

namespace detail {

/// --out, else $OSLAM_OUT_DIR; created if missing.
inline std::filesystem::path resolve_out_dir(const std::string& out) {
  std::string dir = out;
  if (dir.empty()) {
    const char* env = std::getenv(kOutDirEnv);
    if (env && *env) dir = env;
  }
  if (dir.empty()) {
    throw Error(ErrorCode::kInvalidInput, std::string("no output directory: pass --out or set ") + kOutDirEnv);
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kInvalidInput, "cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string cell_file_stem(const CellKey& k) {
  return std::string(to_string(k.noise)) + "_" + std::to_string(k.arc_deg) + "_" + to_string(k.param) + "_" +
         to_string(k.model);
}

inline std::string trace_csv(const Cell& c) {
  std::string s = "scene,iteration,cost\n";
  for (const auto& t : c.trials) {
    for (std::size_t i = 0; i < t.cost_trace.size(); ++i) {
      s += std::to_string(t.scene) + "," + std::to_string(i) + "," + full(t.cost_trace[i]) + "\n";
    }
  }
  return s;
}

inline std::string plot_script(const std::vector<std::string>& csvs) {
  std::string s =
      "#!/usr/bin/env python3\n"
      "# Cost traces per campaign cell: one line per scene, log cost against\n"
      "# accepted iteration. Writes traces.png next to this script.\n"
      "import csv\n"
      "import math\n"
      "import os\n"
      "\n"
      "import matplotlib\n"
      "matplotlib.use(\"Agg\")\n"
      "import matplotlib.pyplot as plt\n"
      "\n"
      "HERE = os.path.dirname(os.path.abspath(__file__))\n"
      "CSVS = [\n";
  for (const auto& c : csvs) s += "    \"" + c + "\",\n";
  s +=
      "]\n"
      "\n"
      "\n"
      "def load(path):\n"
      "    runs = {}\n"
      "    with open(path) as f:\n"
      "        for row in csv.DictReader(f):\n"
      "            runs.setdefault(int(row[\"scene\"]), []).append(float(row[\"cost\"]))\n"
      "    return runs\n"
      "\n"
      "\n"
      "cols = 4\n"
      "rows = max(1, math.ceil(len(CSVS) / cols))\n"
      "fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3 * rows), squeeze=False)\n"
      "for ax in axes.flat:\n"
      "    ax.set_visible(False)\n"
      "for ax, name in zip(axes.flat, CSVS):\n"
      "    ax.set_visible(True)\n"
      "    for costs in load(os.path.join(HERE, name)).values():\n"
      "        ax.plot(range(len(costs)), [max(c, 1e-12) for c in costs], lw=0.8)\n"
      "    ax.set_yscale(\"log\")\n"
      "    ax.set_title(os.path.splitext(os.path.basename(name))[0], fontsize=8)\n"
      "    ax.set_xlabel(\"iteration\")\n"
      "    ax.set_ylabel(\"cost\")\n"
      "fig.tight_layout()\n"
      "fig.savefig(os.path.join(HERE, \"traces.png\"), dpi=120)\n";
  return s;
}

inline std::string summary_csv(const ResultFile& r) {
  auto o = [](const std::optional<double>& v) { return v ? full(*v) : std::string(); };
  std::string s =
      "noise,arc_deg,param,model,trials,successes,mean_iou,mean_success_iou,mean_success_iterations,"
      "median_success_iterations,mean_orientation_error_deg\n";
  for (std::size_t i = 0; i < r.campaign.cells.size(); ++i) {
    const CellKey& k = r.campaign.cells[i].key;
    const CellSummary& m = r.summaries[i];
    s += std::string(to_string(k.noise)) + "," + std::to_string(k.arc_deg) + "," + to_string(k.param) + "," +
         to_string(k.model) + "," + std::to_string(m.trials) + "," + std::to_string(m.successes) + "," +
         full(m.mean_iou) + "," + o(m.mean_success_iou) + "," + o(m.mean_success_iterations) + "," +
         o(m.median_success_iterations) + "," + o(m.mean_orientation_error_deg) + "\n";
  }
  return s;
}

inline Json summary_list_json(const ResultFile& r) {
  Json out = Json::array();
  for (std::size_t i = 0; i < r.campaign.cells.size(); ++i) {
    const CellKey& k = r.campaign.cells[i].key;
    out.push_back({{"noise", to_string(k.noise)},
                   {"arc_deg", k.arc_deg},
                   {"param", to_string(k.param)},
                   {"model", to_string(k.model)},
                   {"summary", summary_json(r.summaries[i])}});
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;  // empty: built-in defaults
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string cells;
  std::string out;
};

/// Loads the configuration and applies the command-line overrides.
inline CampaignSpec simulate_spec(const SimulateArgs& a) {
  CampaignSpec spec = a.config.empty() ? CampaignSpec{} : read_campaign(read_text_file(a.config), a.config);
  if (a.seed) spec.master_seed = *a.seed;
  apply_cell_filter(spec, a.cells);
  return spec;
}

inline ResultFile run_simulation(const CampaignSpec& spec, int jobs) {
  const auto t0 = std::chrono::steady_clock::now();
  CampaignResult campaign = run_campaign(spec, jobs);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return make_result_file(spec, std::move(campaign), ResultTiming{detail::utc_timestamp(), wall, jobs});
}

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CampaignSpec spec;
  std::filesystem::path dir;
  try {
    if (a.jobs < 1) throw Error(ErrorCode::kInvalidInput, "--jobs must be at least 1");
    spec = simulate_spec(a);
    dir = detail::resolve_out_dir(a.out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    const ResultFile result = run_simulation(spec, a.jobs);
    write_text_file((dir / "result.json").string(), write_result(result));
    std::filesystem::create_directories(dir / "traces");
    std::vector<std::string> csvs;
    for (const auto& c : result.campaign.cells) {
      const std::string name = "traces/" + detail::cell_file_stem(c.key) + ".csv";
      write_text_file((dir / name).string(), detail::trace_csv(c));
      csvs.push_back(name);
    }
    write_text_file((dir / "plot_traces.py").string(), detail::plot_script(csvs));
    out << spec.solve_count() << " solves, master seed " << spec.master_seed << ", " << a.jobs << " job(s), "
        << detail::fmt("%.1f", result.timing.wall_seconds) << " s\n\n"
        << render_report(result.campaign) << "\nwrote " << (dir / "result.json").string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SolveArgs {
  std::string graph;
  Parameterization param = Parameterization::kSpd;
  MeasurementModel model = MeasurementModel::kSemi;
  SizeForm size_form = SizeForm::kSqrt;
  std::string out;
};

inline Json solution_report_json(const GraphSolution& s, const GraphSolveSettings& settings) {
  Json kinds = Json::object();
  for (const auto& [kind, cost] : s.breakdown.by_kind) kinds[to_string(kind)] = num(cost);
  Json landmarks = Json::array();
  for (const auto& e : s.evaluations) {
    landmarks.push_back({{"id", e.landmark}, {"iou", num(e.iou)}, {"orientation_error_deg", num(e.orientation_error_deg)}});
  }
  return {{"param", to_string(settings.param)},
          {"model", to_string(settings.model)},
          {"size_form", to_string(settings.size_form)},
          {"solve", solve_options_json(settings.solve)},
          {"covariances", covariances_json(settings.covariances)},
          {"termination", to_string(s.report.termination)},
          {"iterations", s.report.iterations},
          {"attempts", s.report.attempts},
          {"initial_cost", num(s.report.initial_cost())},
          {"final_cost", num(s.report.final_cost())},
          {"cost_by_kind", kinds},
          {"skipped_factors", s.breakdown.skipped_factors},
          {"warnings", s.report.warnings},
          {"landmarks", landmarks}};
}

inline int cmd_solve(const SolveArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Graph g;
  std::filesystem::path dir;
  try {
    g = read_graph(read_text_file(a.graph), a.graph);
    validate_graph(g);
    dir = detail::resolve_out_dir(a.out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    GraphSolveSettings settings;
    settings.param = a.param;
    settings.model = a.model;
    settings.size_form = a.size_form;
    const GraphSolution s = solve_graph(g, settings);
    for (const auto& w : s.report.warnings) err << "warning: " << w << "\n";
    write_text_file((dir / "solved_graph.json").string(), write_graph(s.solved));
    write_text_file((dir / "solve_report.json").string(), solution_report_json(s, settings).dump(2) + "\n");
    out << "param " << to_string(a.param) << ", model " << to_string(a.model) << ": "
        << to_string(s.report.termination) << " after " << s.report.iterations << " iterations\n"
        << "cost " << detail::full(s.report.initial_cost()) << " -> " << detail::full(s.report.final_cost()) << "\n";
    for (const auto& [kind, cost] : s.breakdown.by_kind) {
      out << "  " << detail::pad(to_string(kind), 12) << detail::full(cost) << "\n";
    }
    for (const auto& e : s.evaluations) {
      out << "landmark " << e.landmark << ": IoU " << detail::fmt("%.4f", e.iou) << ", orientation error "
          << detail::fmt("%.3f", e.orientation_error_deg) << " deg\n";
    }
    out << "wrote " << (dir / "solved_graph.json").string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

enum class EvalFormat { kTable, kCsv, kJson };

struct EvalArgs {
  std::string result;
  EvalFormat format = EvalFormat::kTable;
};

/// Cells whose stored summary differs from the one recomputed from their
/// trial records.
inline std::vector<std::string> summary_mismatches(const ResultFile& r) {
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < r.campaign.cells.size(); ++i) {
    if (!(summarize(r.campaign.cells[i].trials) == r.summaries[i])) bad.push_back(r.campaign.cells[i].key.label());
  }
  return bad;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  ResultFile r;
  try {
    r = read_result(read_text_file(a.result), a.result);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  const auto bad = summary_mismatches(r);
  if (!bad.empty()) {
    for (const auto& b : bad) err << "error: stored summary of cell " << b << " does not match its trial records\n";
    return kExitUsage;
  }
  switch (a.format) {
    case EvalFormat::kTable: out << render_report(r.campaign); break;
    case EvalFormat::kCsv: out << detail::summary_csv(r); break;
    case EvalFormat::kJson: out << detail::summary_list_json(r).dump(2) << "\n"; break;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int cmd_validate(const std::string& path, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    const Graph g = read_graph(read_text_file(path), path);
    validate_graph(g);
    out << path << ": ok (" << g.frames.size() << " frames, " << g.landmarks.size() << " landmarks, "
        << g.detections.size() << " detections)\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace oslam
