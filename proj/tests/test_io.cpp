#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "oslam/commands.hpp"

namespace oslam {
namespace {

namespace fs = std::filesystem;

const std::string kData = OSLAM_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("oslam_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

int line_containing(const std::string& text, const std::string& needle) {
  const auto pos = text.find(needle);
  EXPECT_NE(pos, std::string::npos) << needle;
  return line_at_offset(text, pos);
}

CampaignSpec tiny_campaign() {
  CampaignSpec c;
  c.master_seed = 3;
  c.trials_per_cell = 2;
  c.noise_levels = {NoiseLevel::kLow};
  c.arcs = {60};
  c.params = {Parameterization::kRts, Parameterization::kSpd};
  c.models = {MeasurementModel::kInverse};
  return c;
}

// ---------------------------------------------------------------------------
// Graph files

TEST(GraphIo, RoundTripIsExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = generate_multi_constraint_graph({seed});
    const std::string text = write_graph(g);
    const Graph back = read_graph(text);
    EXPECT_TRUE(back == g);
    EXPECT_EQ(write_graph(back), text);
  }
}

TEST(GraphIo, AllLandmarkFormsRoundTrip) {
  Graph g = generate_multi_constraint_graph({11});
  const RtsState truth = g.truth.front().state.state();
  g.landmarks.push_back({200, from_landmark(landmark_from_rts(truth, Parameterization::kSpd))});
  g.landmarks.push_back({201, from_landmark(landmark_from_rts(truth, Parameterization::kFull))});
  g.pose_priors.push_back({0, g.frames.front().pose});
  const std::string text = write_graph(g);
  EXPECT_TRUE(read_graph(text) == g);
  EXPECT_NE(text.find("\"coefficients\""), std::string::npos);
  EXPECT_NE(text.find("\"shape\""), std::string::npos);
  EXPECT_NO_THROW(validate_graph(read_graph(text)));
}

TEST(GraphIo, SampleFileIsValid) {
  const Graph g = read_graph(read_text_file(kData + "/multi_constraint_graph.json"));
  EXPECT_NO_THROW(validate_graph(g));
  EXPECT_EQ(g.landmarks.size(), 1u);
  EXPECT_EQ(g.truth.size(), 1u);
}

TEST(GraphIo, QuaternionNormTolerance) {
  const Graph g = generate_multi_constraint_graph({1});
  Json j = Json::parse(write_graph(g));
  j["frames"][0]["pose"]["q"] = Json::array({1.0 + 5e-7, 0.0, 0.0, 0.0});
  const Graph near = read_graph(j.dump(2));
  EXPECT_NEAR(near.frames[0].pose.q.norm(), 1.0, 1e-15);
  j["frames"][0]["pose"]["q"] = Json::array({1.0 + 2e-6, 0.0, 0.0, 0.0});
  const std::string msg = error_of([&] { read_graph(j.dump(2)); });
  EXPECT_NE(msg.find("/frames/0/pose/q"), std::string::npos) << msg;
  EXPECT_NE(msg.find("not 1 within 1e-6"), std::string::npos) << msg;
}

TEST(GraphIo, SchemaErrorsCarryTheLine) {
  const std::string text = write_graph(generate_multi_constraint_graph({2}));
  {
    std::string bad = text;
    const auto pos = bad.find("\"width\": 640");
    ASSERT_NE(pos, std::string::npos);
    bad.replace(pos, 12, "\"width\": 640.5");
    const std::string msg = error_of([&] { read_graph(bad, "g.json"); });
    EXPECT_NE(msg.find("g.json:" + std::to_string(line_containing(bad, "640.5")) + ": /intrinsics/width"),
              std::string::npos)
        << msg;
  }
  {
    std::string bad = text;
    const auto pos = bad.find("\"landmark\": 100");
    ASSERT_NE(pos, std::string::npos);
    bad.insert(pos, "\"colour\": 1, ");
    const std::string msg = error_of([&] { read_graph(bad, "g.json"); });
    EXPECT_NE(msg.find("g.json:" + std::to_string(line_containing(bad, "colour")) + ":"), std::string::npos) << msg;
    EXPECT_NE(msg.find("unknown key 'colour'"), std::string::npos) << msg;
  }
  {
    Json j = Json::parse(text);
    j.erase("frames");
    const std::string msg = error_of([&] { read_graph(j.dump(2), "g.json"); });
    EXPECT_NE(msg.find("missing key 'frames'"), std::string::npos) << msg;
  }
}

TEST(GraphIo, ParseErrorsReportByteAndLine) {
  const std::string text = "{\n  \"version\": \"oslam-graph/1\",\n  \"frames\": [,]\n}\n";
  const std::string msg = error_of([&] { read_graph(text, "g.json"); });
  const std::size_t byte = text.find(",]");
  EXPECT_NE(msg.find("parse error at byte " + std::to_string(byte) + " (line 3)"), std::string::npos) << msg;
  try {
    read_graph(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
  }
}

TEST(GraphIo, ValidationNamesDanglingReferences) {
  const Graph g = read_graph(read_text_file(std::string(OSLAM_TEST_DATA_DIR) + "/dangling_frame.json"));
  const std::string msg = error_of([&] { validate_graph(g); });
  EXPECT_NE(msg.find("unknown frame id 7"), std::string::npos) << msg;

  Graph h = generate_multi_constraint_graph({4});
  h.scale_priors.front().abc = Vec3(1, 2, 3);
  EXPECT_NE(error_of([&] { validate_graph(h); }).find("a >= b >= c > 0"), std::string::npos);
  h = generate_multi_constraint_graph({4});
  h.fixed.push_back(999);
  EXPECT_NE(error_of([&] { validate_graph(h); }).find("unknown id 999"), std::string::npos);
  h = generate_multi_constraint_graph({4});
  h.frames.push_back(h.frames.front());
  EXPECT_NE(error_of([&] { validate_graph(h); }).find("duplicate frame id"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Campaign configuration

TEST(ConfigIo, RoundTripAndDefaults) {
  CampaignSpec c = tiny_campaign();
  c.trial.solve.damping = Damping::kMarquardt;
  c.trial.solve.spd_coordinates = SpdCoordinates::kAmbient;
  c.trial.covariances.box_semi = 0.04;
  const std::string text = campaign_json(c).dump(2);
  EXPECT_EQ(campaign_json(read_campaign(text)).dump(2), text);
  EXPECT_EQ(campaign_json(read_campaign("{}")).dump(), campaign_json(CampaignSpec{}).dump());
  EXPECT_EQ(campaign_json(read_campaign(read_text_file(kData + "/campaign.json"))).dump(),
            campaign_json(CampaignSpec{}).dump());
  const CampaignSpec small = read_campaign(read_text_file(kData + "/campaign_small.json"));
  EXPECT_EQ(small.trials_per_cell, 2);
}

TEST(ConfigIo, RejectsBadFields) {
  const std::string unknown = "{\n  \"trials_per_cel\": 3\n}";
  const std::string msg = error_of([&] { read_campaign(unknown, "c.json"); });
  EXPECT_NE(msg.find("c.json:2: /trials_per_cel: unknown key"), std::string::npos) << msg;
  EXPECT_NE(error_of([] { read_campaign("{\"noise_levels\": [\"L\", \"L\"]}"); }).find("duplicate"), std::string::npos);
  EXPECT_NE(error_of([] { read_campaign("{\"noise_levels\": [\"X\"]}"); }), "");
  EXPECT_NE(error_of([] { read_campaign("{\"trials_per_cell\": 0}"); }).find("at least 1"), std::string::npos);
  EXPECT_NE(error_of([] { read_campaign("{\"master_seed\": -1}"); }).find("non-negative"), std::string::npos);
  EXPECT_NE(error_of([] { read_campaign("{\"success_factor\": 0.5}"); }), "");
}

TEST(ConfigIo, CellFilter) {
  CampaignSpec c;
  apply_cell_filter(c, "noise=M,noise=H,arc=60,param=spd");
  EXPECT_EQ(c.noise_levels, (std::vector<NoiseLevel>{NoiseLevel::kMedium, NoiseLevel::kHigh}));
  EXPECT_EQ(c.arcs, std::vector<int>{60});
  EXPECT_EQ(c.params, std::vector<Parameterization>{Parameterization::kSpd});
  EXPECT_EQ(c.models.size(), 2u);
  EXPECT_EQ(c.solve_count(), 2u * 1 * 1 * 2 * 24);
  CampaignSpec d;
  EXPECT_NE(error_of([&] { apply_cell_filter(d, "arc=90"); }).find("no configured arc"), std::string::npos);
  EXPECT_NE(error_of([&] { apply_cell_filter(d, "colour=red"); }).find("unknown key"), std::string::npos);
  EXPECT_NE(error_of([&] { apply_cell_filter(d, "arc=6x"); }).find("integer"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Result files

TEST(ResultIo, RoundTripIsExact) {
  const ResultFile r = run_simulation(tiny_campaign(), 1);
  const std::string text = write_result(r);
  const ResultFile back = read_result(text);
  EXPECT_EQ(write_result(back), text);
  EXPECT_EQ(records_text(back), records_text(r));
  ASSERT_EQ(back.campaign.cells.size(), 2u);
  for (std::size_t i = 0; i < back.campaign.cells.size(); ++i) {
    EXPECT_TRUE(back.summaries[i] == summarize(back.campaign.cells[i].trials));
    EXPECT_EQ(back.campaign.cells[i].trials.size(), 2u);
  }
  EXPECT_TRUE(summary_mismatches(back).empty());
}

TEST(ResultIo, NonFiniteValuesSurvive) {
  ResultFile r = run_simulation(tiny_campaign(), 1);
  r.campaign.cells[0].trials[0].final_cost = std::numeric_limits<double>::infinity();
  r.campaign.cells[0].trials[0].initial_cost = std::nan("");
  const ResultFile back = read_result(write_result(r));
  EXPECT_TRUE(std::isinf(back.campaign.cells[0].trials[0].final_cost));
  EXPECT_TRUE(std::isnan(back.campaign.cells[0].trials[0].initial_cost));
}

TEST(ResultIo, RecordsIgnoreTimingOnly) {
  const CampaignSpec spec = tiny_campaign();
  const ResultFile a = run_simulation(spec, 1);
  const ResultFile b = run_simulation(spec, 2);
  EXPECT_EQ(records_text(a), records_text(b));
  CampaignSpec other = spec;
  other.master_seed = 4;
  EXPECT_NE(records_text(a), records_text(run_simulation(other, 1)));
}

// ---------------------------------------------------------------------------
// Commands

class EnvGuard {
 public:
  EnvGuard() {
    const char* v = std::getenv(kOutDirEnv);
    if (v) saved_ = v;
    unsetenv(kOutDirEnv);
  }
  ~EnvGuard() {
    if (saved_) setenv(kOutDirEnv, saved_->c_str(), 1);
    else unsetenv(kOutDirEnv);
  }

 private:
  std::optional<std::string> saved_;
};

TEST(Commands, ValidateExitCodes) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_validate(kData + "/multi_constraint_graph.json", out, err), kExitOk);
  EXPECT_NE(out.str().find("ok"), std::string::npos);
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_validate(std::string(OSLAM_TEST_DATA_DIR) + "/dangling_frame.json", out2, err2), kExitUsage);
  EXPECT_NE(err2.str().find("unknown frame id 7"), std::string::npos) << err2.str();
  std::ostringstream out3, err3;
  EXPECT_EQ(cmd_validate("/nonexistent/graph.json", out3, err3), kExitUsage);
}

TEST(Commands, SimulateWritesResultAndTraces) {
  EnvGuard env;
  const fs::path dir = scratch("simulate");
  const fs::path config = dir / "config.json";
  write_text_file(config.string(), campaign_json(tiny_campaign()).dump(2));

  SimulateArgs a;
  a.config = config.string();
  a.out = (dir / "run1").string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_simulate(a, out, err), kExitOk) << err.str();
  EXPECT_TRUE(fs::exists(dir / "run1" / "result.json"));
  EXPECT_TRUE(fs::exists(dir / "run1" / "plot_traces.py"));
  EXPECT_TRUE(fs::exists(dir / "run1" / "traces" / "L_60_rts_inverse.csv"));
  EXPECT_NE(out.str().find("4 solves"), std::string::npos) << out.str();

  // Environment fallback for the output directory, more workers, same records.
  setenv(kOutDirEnv, (dir / "run2").string().c_str(), 1);
  a.out.clear();
  a.jobs = 2;
  std::ostringstream out2, err2;
  ASSERT_EQ(cmd_simulate(a, out2, err2), kExitOk) << err2.str();
  const ResultFile r1 = read_result(read_text_file((dir / "run1" / "result.json").string()));
  const ResultFile r2 = read_result(read_text_file((dir / "run2" / "result.json").string()));
  EXPECT_EQ(records_text(r1), records_text(r2));
  EXPECT_EQ(r2.timing.jobs, 2);

  // Seed override changes the records.
  a.seed = 99;
  a.out = (dir / "run3").string();
  std::ostringstream out3, err3;
  ASSERT_EQ(cmd_simulate(a, out3, err3), kExitOk);
  const ResultFile r3 = read_result(read_text_file((dir / "run3" / "result.json").string()));
  EXPECT_EQ(r3.config.master_seed, 99u);
  EXPECT_NE(records_text(r1), records_text(r3));
}

TEST(Commands, SimulateUsageErrors) {
  EnvGuard env;
  std::ostringstream out, err;
  SimulateArgs a;
  a.config = kData + "/campaign_small.json";
  EXPECT_EQ(cmd_simulate(a, out, err), kExitUsage);  // no output directory
  EXPECT_NE(err.str().find(kOutDirEnv), std::string::npos);
  a.out = scratch("usage").string();
  a.jobs = 0;
  EXPECT_EQ(cmd_simulate(a, out, err), kExitUsage);
  a.jobs = 1;
  a.cells = "noise=Q";
  EXPECT_EQ(cmd_simulate(a, out, err), kExitUsage);
  a.cells.clear();
  a.config = "/nonexistent/config.json";
  EXPECT_EQ(cmd_simulate(a, out, err), kExitUsage);
}

TEST(Commands, EvalFormatsAgree) {
  const fs::path dir = scratch("eval");
  const ResultFile r = run_simulation(tiny_campaign(), 1);
  const fs::path path = dir / "result.json";
  write_text_file(path.string(), write_result(r));

  std::ostringstream table, csv, json, err;
  EXPECT_EQ(cmd_eval({path.string(), EvalFormat::kTable}, table, err), kExitOk);
  EXPECT_EQ(table.str(), render_report(r.campaign));
  EXPECT_EQ(cmd_eval({path.string(), EvalFormat::kCsv}, csv, err), kExitOk);
  EXPECT_EQ(cmd_eval({path.string(), EvalFormat::kJson}, json, err), kExitOk);

  const Json list = Json::parse(json.str());
  ASSERT_EQ(list.size(), r.campaign.cells.size());
  std::istringstream lines(csv.str());
  std::string header, row;
  std::getline(lines, header);
  EXPECT_EQ(header.rfind("noise,arc_deg,param,model,trials,successes,mean_iou", 0), 0u);
  for (std::size_t i = 0; i < list.size(); ++i) {
    ASSERT_TRUE(std::getline(lines, row));
    const CellSummary& s = r.summaries[i];
    EXPECT_EQ(list[i]["summary"]["successes"].get<int>(), s.successes);
    EXPECT_EQ(list[i]["summary"]["mean_iou"].get<double>(), s.mean_iou);
    const std::string prefix = std::string(to_string(r.campaign.cells[i].key.noise)) + ",60," +
                               to_string(r.campaign.cells[i].key.param) + ",inverse,2," +
                               std::to_string(s.successes) + ",";
    EXPECT_EQ(row.rfind(prefix, 0), 0u) << row;
  }
}

TEST(Commands, EvalRejectsTamperedSummaries) {
  const fs::path dir = scratch("tamper");
  ResultFile r = run_simulation(tiny_campaign(), 1);
  r.summaries[1].successes += 1;
  const fs::path path = dir / "result.json";
  write_text_file(path.string(), write_result(r));
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval({path.string(), EvalFormat::kTable}, out, err), kExitUsage);
  EXPECT_NE(err.str().find(r.campaign.cells[1].key.label()), std::string::npos) << err.str();

  std::ostringstream out2, err2;
  write_text_file(path.string(), "{\"format\": \"oslam-result/1\",");
  EXPECT_EQ(cmd_eval({path.string(), EvalFormat::kTable}, out2, err2), kExitUsage);
  EXPECT_NE(err2.str().find("parse error"), std::string::npos);
}

TEST(Commands, SolveMatchesInProcessSolve) {
  EnvGuard env;
  const fs::path dir = scratch("solve");
  const Graph g = generate_multi_constraint_graph({5});
  const fs::path graph = dir / "graph.json";
  write_text_file(graph.string(), write_graph(g));

  for (const auto param : {Parameterization::kRts, Parameterization::kSpd}) {
    SolveArgs a;
    a.graph = graph.string();
    a.param = param;
    a.model = MeasurementModel::kSemi;
    a.out = (dir / to_string(param)).string();
    std::ostringstream out, err;
    ASSERT_EQ(cmd_solve(a, out, err), kExitOk) << err.str();

    GraphSolveSettings settings;
    settings.param = param;
    const GraphSolution s = solve_graph(g, settings);
    const Json report = Json::parse(read_text_file((dir / to_string(param) / "solve_report.json").string()));
    EXPECT_EQ(report["final_cost"].get<double>(), s.report.final_cost());
    EXPECT_EQ(report["iterations"].get<int>(), s.report.iterations);
    EXPECT_EQ(report["skipped_factors"].size(), 0u);
    for (const char* kind : {"box-semi", "orientation", "shape", "size", "support"}) {
      EXPECT_TRUE(report["cost_by_kind"].contains(kind)) << kind;
    }
    ASSERT_EQ(report["landmarks"].size(), 1u);
    EXPECT_EQ(report["landmarks"][0]["iou"].get<double>(), s.evaluations.front().iou);

    const Graph solved = read_graph(read_text_file((dir / to_string(param) / "solved_graph.json").string()));
    EXPECT_NO_THROW(validate_graph(solved));
    EXPECT_TRUE(solved == s.solved);
    EXPECT_EQ(parameterization_of(solved.landmarks.front().initial), param);
  }
}

TEST(Commands, SolveAgreesWithTheTrialHarness) {
  // A campaign trial written out as a graph file and solved through the
  // command gives the same estimate as the in-memory trial.
  CampaignSpec spec = tiny_campaign();
  const SceneData d = make_scene_data(spec, NoiseLevel::kLow, 60, 0);
  ASSERT_TRUE(d.error.empty());
  Graph g;
  g.intrinsics = d.scene.frames.front().intrinsics;
  for (std::size_t i = 0; i < d.scene.frames.size(); ++i) {
    const auto& f = d.scene.frames[i];
    g.frames.push_back({f.id, GraphPose::from(f.pose)});
    g.detections.push_back({f.id, kGraphLandmarkId, d.noisy_boxes[i]});
    g.fixed.push_back(f.id);
  }
  g.landmarks.push_back({kGraphLandmarkId, GraphRts::from(d.initial)});
  g.truth.push_back({kGraphLandmarkId, GraphRts::from(d.scene.truth)});

  EnvGuard env;
  const fs::path dir = scratch("trial");
  write_text_file((dir / "graph.json").string(), write_graph(g));
  SolveArgs a;
  a.graph = (dir / "graph.json").string();
  a.param = Parameterization::kSpd;
  a.model = MeasurementModel::kInverse;
  a.out = dir.string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_solve(a, out, err), kExitOk) << err.str();
  const Json report = Json::parse(read_text_file((dir / "solve_report.json").string()));

  const TrialResult t = run_trial({d.scene, d.noisy_boxes, d.initial, Parameterization::kSpd, MeasurementModel::kInverse});
  EXPECT_TRUE(t.success);
  EXPECT_GE(report["landmarks"][0]["iou"].get<double>(), 0.95);
  EXPECT_NEAR(report["landmarks"][0]["iou"].get<double>(), t.iou, 0.02);
  EXPECT_NEAR(report["final_cost"].get<double>(), t.final_cost, 1e-6 * (1.0 + t.final_cost));
}

TEST(Commands, SolveUsageErrors) {
  EnvGuard env;
  std::ostringstream out, err;
  SolveArgs a;
  a.graph = kData + "/multi_constraint_graph.json";
  EXPECT_EQ(cmd_solve(a, out, err), kExitUsage);  // no output directory
  a.graph = std::string(OSLAM_TEST_DATA_DIR) + "/dangling_frame.json";
  a.out = scratch("solve_usage").string();
  EXPECT_EQ(cmd_solve(a, out, err), kExitUsage);
  EXPECT_NE(err.str().find("unknown frame id 7"), std::string::npos);
}

}  // namespace
}  // namespace oslam
