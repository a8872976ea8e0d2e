// Command-line front end: simulate, solve, eval, validate.

#include <CLI11.hpp>

#include <thread>

#include "oslam/commands.hpp"

namespace {

template <class Enum, std::size_t N>
std::map<std::string, Enum> choices(const std::array<Enum, N>& values) {
  std::map<std::string, Enum> m;
  for (const auto v : values) m.emplace(oslam::to_string(v), v);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ellipsoid object-landmark estimation on SPD(3), RTS and full-quadric parameterizations"};
  app.require_subcommand(1);

  oslam::SimulateArgs sim;
  sim.jobs = std::max(1u, std::thread::hardware_concurrency());
  std::uint64_t seed = 0;
  auto* simulate = app.add_subcommand("simulate", "Run the Monte-Carlo campaign");
  simulate->add_option("--config", sim.config, "Campaign configuration (JSON); defaults when omitted")
      ->check(CLI::ExistingFile);
  auto* seed_opt = simulate->add_option("--seed", seed, "Master seed (overrides the configuration)");
  simulate->add_option("--jobs", sim.jobs, "Worker threads")->capture_default_str();
  simulate->add_option("--cells", sim.cells, "Grid filter, e.g. noise=H,arc=60");
  simulate->add_option("--out", sim.out, std::string("Output directory (default: $") + oslam::kOutDirEnv + ")");

  oslam::SolveArgs solve;
  auto* solve_cmd = app.add_subcommand("solve", "Solve a factor-graph file");
  solve_cmd->add_option("--graph", solve.graph, "Graph file (JSON)")->required()->check(CLI::ExistingFile);
  solve_cmd->add_option("--param", solve.param, "Landmark parameterization")
      ->required()
      ->transform(CLI::CheckedTransformer(choices(oslam::kParameterizations)));
  solve_cmd->add_option("--model", solve.model, "Box measurement model")
      ->required()
      ->transform(CLI::CheckedTransformer(choices(oslam::kModels)));
  solve_cmd->add_option("--size-form", solve.size_form, "Size residual form")
      ->transform(CLI::CheckedTransformer(choices(oslam::kSizeForms)));
  solve_cmd->add_option("--out", solve.out, std::string("Output directory (default: $") + oslam::kOutDirEnv + ")");

  oslam::EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Check and print the summaries of a result file");
  eval_cmd->add_option("--result", eval.result, "Result file written by simulate")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--format", eval.format, "Output format")
      ->transform(CLI::CheckedTransformer(std::map<std::string, oslam::EvalFormat>{
          {"table", oslam::EvalFormat::kTable}, {"csv", oslam::EvalFormat::kCsv}, {"json", oslam::EvalFormat::kJson}}));

  std::string graph;
  auto* validate = app.add_subcommand("validate", "Schema and reference check of a graph file");
  validate->add_option("--graph", graph, "Graph file (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? oslam::kExitOk : oslam::kExitUsage;
  }

  if (*simulate) {
    if (*seed_opt) sim.seed = seed;
    return oslam::cmd_simulate(sim);
  }
  if (*solve_cmd) return oslam::cmd_solve(solve);
  if (*eval_cmd) return oslam::cmd_eval(eval);
  return oslam::cmd_validate(graph);
}
