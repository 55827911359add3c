// rora-lab: run adapter scaling experiments and summarise their results.
//
//   rora-lab run <config.json> [--out-dir DIR] [--workers N]
//   rora-lab summarize <results.csv>
//   rora-lab gradcheck [--trials N] [--seed S] [--out-dir DIR] [--workers N]
//   rora-lab adapter-info <snapshot.bin>
//
// Exit codes: 0 ok, 1 invalid input, 2 numeric failure, 3 I/O error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "rora/run.hpp"

namespace {

using namespace rora;

template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kExitValidation;
  } catch (const SchemaError& e) {
    std::cerr << "invalid results file: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {  // ArgumentError, DimensionError
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const TrainingError& e) {
    std::cerr << "training failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

int run_command(const std::string& config_path, const std::string& out_dir_flag,
                std::size_t workers) {
  const std::string text = read_file(config_path);
  const RunConfig c = parse_config(text);
  const std::string out_dir = out_dir_flag.empty() ? c.out_dir : out_dir_flag;
  const RunArtifacts a = run_to_directory(text, c, out_dir, workers);
  std::cout << a.summary_text;
  std::cout << "\nwrote " << out_dir << "/results.csv\n";
  if (!a.checks_passed) {
    std::cerr << "gradient check failed for at least one trial\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int summarize_command(const std::string& path) {
  std::cout << summary_text(summarize_file(path));
  return kExitOk;
}

int gradcheck_command(std::size_t trials, std::uint64_t seed, const std::string& out_dir,
                      std::size_t workers) {
  RunConfig c;
  c.experiment = ExperimentKind::Gradcheck;
  c.seeds = {seed};
  c.gradcheck.trials = trials;
  c.out_dir = out_dir;
  RunOutcome outcome;
  if (out_dir.empty()) {
    outcome = run_experiment(c, workers);
  } else {
    const RunArtifacts a = run_to_directory(emit_config(c), c, out_dir, workers);
    outcome.checks_passed = a.checks_passed;
    outcome.rows = parse_results_csv(a.results_csv);
  }
  double worst = 0.0;
  std::size_t failed = 0, n = 0;
  for (const auto& r : outcome.rows) {
    if (r.metric == "max_rel_error") worst = std::max(worst, r.value);
    if (r.metric == "pass") {
      ++n;
      failed += r.value == 0.0;
    }
  }
  std::printf("gradcheck: %zu trials, %zu failed, worst relative error %.3g\n", n, failed, worst);
  return failed == 0 ? kExitOk : kExitNumeric;
}

int adapter_info_command(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  const LowRankAdapter a = load_adapter(in);
  const auto& c = a.config;
  std::printf("p_in        %zu\np_out       %zu\nrank        %zu\nalpha       %.17g\n", c.p_in,
              c.p_out, c.r, c.alpha);
  std::printf("policy      %s\ngamma       %.17g\ninit_std_A  %.17g\n", c.policy.name().c_str(),
              a.gamma, c.init_std_A);
  std::printf("||A||_F     %.17g\n||B||_F     %.17g\n", frobenius_norm(a.A), frobenius_norm(a.B));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank adapter scaling experiments"};
  app.require_subcommand(1);
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::string out_dir;

  auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
  std::string config_path;
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--out-dir", out_dir, "Output directory (overrides out_dir in the config)");
  run->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  auto* summ = app.add_subcommand("summarize", "Summarise a results.csv file");
  std::string results_path;
  summ->add_option("results", results_path, "results.csv")->required();

  auto* gc = app.add_subcommand("gradcheck", "Check analytic adapter gradients numerically");
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  gc->add_option("--trials", trials, "Number of random trials")->check(CLI::PositiveNumber);
  gc->add_option("--seed", seed, "Base seed");
  gc->add_option("--out-dir", out_dir, "Also write results here");
  gc->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  auto* info = app.add_subcommand("adapter-info", "Describe an adapter snapshot");
  std::string snapshot;
  info->add_option("snapshot", snapshot, "Snapshot file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (*run) return guarded([&] { return run_command(config_path, out_dir, workers); });
  if (*summ) return guarded([&] { return summarize_command(results_path); });
  if (*gc) return guarded([&] { return gradcheck_command(trials, seed, out_dir, workers); });
  return guarded([&] { return adapter_info_command(snapshot); });
}
