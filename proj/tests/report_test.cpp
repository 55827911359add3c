#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "rora/run.hpp"

namespace fs = std::filesystem;
using namespace rora;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rora_report_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) { return read_file(p.string()); }

// Runs the CLI and returns its exit status; stderr goes to `err`.
int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(RORA_LAB) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig small_variance() {
  RunConfig c;
  c.experiment = ExperimentKind::Variance;
  c.seeds = {5};
  c.variance.ranks = {1, 2};
  c.variance.p_ins = {4, 8};
  c.variance.gammas = {0.5, 1.0, 2.0};
  c.variance.n_samples = 5000;
  return c;
}

RunConfig small_sweep() {
  RunConfig c;
  c.experiment = ExperimentKind::Sweep;
  c.seeds = {4, 4, 4};
  auto& h = c.harness;
  h.task.d_in = 8;
  h.task.d_hidden = 16;
  h.task.d_out = 4;
  h.task.n_train = 128;
  h.task.n_eval = 64;
  h.task.shift = 0.3;
  h.hidden = {16};
  h.pretrain = {0.05, 200, 16};
  h.finetune = {0.002, 20, 16};
  h.ranks = {2, 4};
  return c;
}

}  // namespace

TEST(Config, EmitParseRoundTrip) {
  RunConfig c = small_sweep();
  c.variance.norm_sweep = NormSweepConfig{};
  c.harness.policies = {ScalingPolicy::custom(0.3), ScalingPolicy::unit()};
  c.harness.task.kind = TaskKind::Classification;
  c.harness.init = InitPreset::Analysis;
  c.harness.sparsities = {0.25, 0.5};
  c.gradcheck.h = 3e-6;
  EXPECT_EQ(parse_config(emit_config(c)), c);
  EXPECT_EQ(parse_config(emit_config(RunConfig{})), RunConfig{});
}

TEST(Config, ShippedConfigsAreValid) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(RORA_CONFIGS)) {
    const RunConfig c = parse_config(slurp(e.path()));
    EXPECT_NO_THROW(validate_config(c)) << e.path();
    EXPECT_EQ(parse_config(emit_config(c)), c);
    ++n;
  }
  EXPECT_GE(n, 4u);
}

TEST(Config, DefaultsFillOmittedSections) {
  const RunConfig c = parse_config(R"({"experiment": "gradcheck", "seeds": [9]})");
  EXPECT_EQ(c.experiment, ExperimentKind::Gradcheck);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{9});
  EXPECT_EQ(c.gradcheck, GradcheckConfig{});
}

TEST(Config, ErrorsNameTheField) {
  auto message = [](const std::string& text) -> std::string {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message(R"({"seeds": [1]})").find("'experiment'"), std::string::npos);
  EXPECT_NE(message(R"({"experiment": "sweep"})").find("'seeds'"), std::string::npos);
  EXPECT_NE(message(R"({"experiment": "sweep", "seeds": [1], "harness": {"task": {"d_inn": 3}}})")
                .find("'harness.task.d_inn'"),
            std::string::npos);
  EXPECT_NE(message(R"({"experiment": "sweep", "seeds": [1], "harness": {"ranks": [4, -1]}})")
                .find("'harness.ranks[1]'"),
            std::string::npos);
  EXPECT_NE(message(R"({"experiment": "sweep", "seeds": [1], "harness": {"policies": ["big"]}})")
                .find("'harness.policies[0]'"),
            std::string::npos);
  EXPECT_NE(message(R"({"experiment": "nope", "seeds": [1]})").find("'experiment'"),
            std::string::npos);
}

TEST(Config, ParseErrorReportsLine) {
  const std::string text = "{\n  \"experiment\": \"variance\",\n  \"seeds\": [1,]\n}\n";
  try {
    parse_config(text);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Config, SemanticValidation) {
  RunConfig c = small_sweep();
  c.seeds = {1, 2};
  EXPECT_THROW(validate_config(c), ConfigError);
  c = small_variance();
  c.variance.n_samples = 10;
  EXPECT_THROW(validate_config(c), ConfigError);
  c = small_variance();
  c.variance.gammas = {0.0};
  EXPECT_THROW(validate_config(c), ConfigError);
  c = small_sweep();
  c.experiment = ExperimentKind::PruneFinetune;
  c.harness.sparsities = {1.0};
  EXPECT_THROW(validate_config(c), ConfigError);
}

TEST(Config, HashTracksContent) {
  RunConfig a = small_variance();
  RunConfig b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.variance.eta = 0.2;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Csv, RoundTrip) {
  std::vector<ResultRow> rows{
      {"variance", "custom:0.5", 2, 4, 1, 0.5, std::nullopt, 7, std::nullopt, "empirical_var",
       0.1 + 0.2},
      {"train", "rora", 8, std::nullopt, std::nullopt, 5.65685424949238, 0.814, 1, 3, "loss",
       -1e-300},
  };
  const std::string text = results_csv(rows, "0123456789abcdef");
  EXPECT_EQ(parse_results_csv(text), rows);
  EXPECT_NE(text.find(",0.30000000000000004,"), std::string::npos);
}

TEST(Csv, EmptyAndHeaderOnly) {
  EXPECT_TRUE(parse_results_csv("").empty());
  EXPECT_TRUE(parse_results_csv(std::string(kResultsHeader) + "\n").empty());
  EXPECT_TRUE(summarize({}).empty());
  EXPECT_EQ(summary_text(summarize({})), "no results\n");
}

TEST(Csv, SchemaMismatchIsAVersionError) {
  EXPECT_THROW(parse_results_csv("a,b,c\n1,2,3\n"), SchemaError);
  std::string v2 = results_csv({{"variance", "", 1, 1, 1, 1.0, std::nullopt, 0, std::nullopt, "m", 1.0}}, "h");
  v2.replace(v2.find("\n1,") + 1, 1, "2");
  try {
    parse_results_csv(v2);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("schema version"), std::string::npos);
  }
}

TEST(Summary, IdenticalSeedsHaveZeroStd) {
  std::vector<ResultRow> rows;
  for (std::uint64_t s : {0, 1, 2}) {
    rows.push_back({"sweep", "lora", 4, std::nullopt, std::nullopt, 4.0, std::nullopt, s,
                    std::nullopt, "eval_mse", 0.37});
  }
  const Summary sum = summarize(rows);
  ASSERT_EQ(sum.stats.size(), 1u);
  EXPECT_EQ(sum.stats[0].n, 3u);
  EXPECT_EQ(sum.stats[0].std, 0.0);
  EXPECT_DOUBLE_EQ(sum.stats[0].mean, 0.37);
}

TEST(Summary, MatchesGoldenFixture) {
  const fs::path dir(RORA_FIXTURES);
  const Summary s = summarize_file((dir / "golden_results.csv").string());
  EXPECT_EQ(summary_text(s), slurp(dir / "golden_summary.txt"));
  ASSERT_EQ(s.fits.size(), 1u);
  EXPECT_NEAR(s.fits[0].slope, 1.0, 1e-12);
  EXPECT_NEAR(s.fits[0].intercept, -1.3545243011851158, 1e-12);
  EXPECT_NEAR(s.fits[0].residual, 0.044929649637164996, 1e-12);
  // The machine-readable form carries the same numbers.
  const std::string csv = summary_csv(s);
  EXPECT_EQ(csv.substr(0, kSummaryHeader.size()), kSummaryHeader);
  EXPECT_NE(csv.find(",eval_mse,3,2,1,,,\n"), std::string::npos) << csv;
}

TEST(Run, VarianceGridHasOneReportPerCell) {
  const RunConfig c = small_variance();
  const RunOutcome out = run_experiment(c, 2);
  std::size_t cells = 0;
  for (const auto& r : out.rows) cells += r.metric == "empirical_var";
  EXPECT_EQ(cells, 2u * 2u * 3u);
  // Every cell carries the same eight metrics.
  EXPECT_EQ(out.rows.size(), cells * 8);
}

TEST(Run, SameConfigSameBytesAcrossWorkers) {
  const RunConfig c = small_sweep();
  const std::string text = emit_config(c);
  const auto d1 = scratch("w1"), d4 = scratch("w4"), again = scratch("again");
  run_to_directory(text, c, d1.string(), 1);
  run_to_directory(text, c, d4.string(), 4);
  run_to_directory(text, c, again.string(), 1);
  EXPECT_EQ(slurp(d1 / "results.csv"), slurp(d4 / "results.csv"));
  EXPECT_EQ(slurp(d1 / "results.csv"), slurp(again / "results.csv"));
  EXPECT_EQ(slurp(d1 / "summary.txt"), slurp(d4 / "summary.txt"));
  EXPECT_EQ(slurp(d1 / "config_echo.json"), text);
}

TEST(Run, RepeatedSeedGivesZeroStd) {
  const RunConfig c = small_sweep();  // seeds {4, 4, 4}
  const Summary s = summarize(run_experiment(c, 3).rows);
  ASSERT_FALSE(s.stats.empty());
  for (const auto& st : s.stats) {
    EXPECT_EQ(st.n, 3u) << st.metric;
    EXPECT_EQ(st.std, 0.0) << st.metric;
  }
}

TEST(Run, PruneFinetuneSavesLoadableAdapters) {
  RunConfig c = small_sweep();
  c.experiment = ExperimentKind::PruneFinetune;
  c.seeds = {0, 1, 2};
  c.harness.ranks = {2};
  c.harness.save_adapters = true;
  const auto dir = scratch("adapters");
  run_to_directory(emit_config(c), c, dir.string(), 2);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "adapters")) {
    std::ifstream in(e.path(), std::ios::binary);
    const LowRankAdapter a = load_adapter(in);
    EXPECT_EQ(a.config.r, 2u);
    ++files;
  }
  // 2 policies x 3 seeds x 2 layers
  EXPECT_EQ(files, 12u);
}

TEST(Gradcheck, AllTrialsPass) {
  RunConfig c;
  c.experiment = ExperimentKind::Gradcheck;
  c.seeds = {0, 1};
  const RunOutcome out = run_experiment(c, 4);
  EXPECT_TRUE(out.checks_passed);
  std::size_t trials = 0;
  for (const auto& r : out.rows) trials += r.metric == "pass";
  EXPECT_EQ(trials, 200u);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const fs::path err = dir / "err.txt";
  const fs::path missing = dir / "missing.json";
  write_file(missing.string(), "{\n  \"experiment\": \"variance\"\n}\n");
  EXPECT_EQ(run_cli("run " + missing.string(), err), kExitValidation);
  EXPECT_NE(slurp(err).find("'seeds'"), std::string::npos) << slurp(err);

  EXPECT_EQ(run_cli("run " + (dir / "nope.json").string(), err), kExitIo);
  EXPECT_EQ(run_cli("summarize " + (dir / "nope.csv").string(), err), kExitIo);

  const fs::path bad_csv = dir / "bad.csv";
  write_file(bad_csv.string(), "version,stuff\n");
  EXPECT_EQ(run_cli("summarize " + bad_csv.string(), err), kExitValidation);

  const fs::path empty_csv = dir / "empty.csv";
  write_file(empty_csv.string(), "");
  EXPECT_EQ(run_cli("summarize " + empty_csv.string(), err), kExitOk);

  // Diverging fine-tune: the numeric failure code.
  RunConfig c = small_sweep();
  c.seeds = {0, 1, 2};
  c.harness.finetune.eta = 50.0;
  const fs::path diverge = dir / "diverge.json";
  write_file(diverge.string(), emit_config(c));
  EXPECT_EQ(run_cli("run " + diverge.string() + " --out-dir " + (dir / "out").string(), err),
            kExitNumeric);
  EXPECT_NE(slurp(err).find("non-finite"), std::string::npos) << slurp(err);

  EXPECT_EQ(run_cli("gradcheck --trials 20 --seed 3", err), kExitOk);
}

TEST(Cli, RunWritesArtifacts) {
  const auto dir = scratch("cli_run");
  const RunConfig c = small_variance();
  const fs::path cfg = dir / "cfg.json";
  const std::string text = emit_config(c);
  write_file(cfg.string(), text);
  const fs::path err = dir / "err.txt";
  ASSERT_EQ(run_cli("run " + cfg.string() + " --workers 2 --out-dir " + (dir / "o").string(), err),
            kExitOk)
      << slurp(err);
  for (const char* f : {"results.csv", "summary.txt", "summary.csv", "config_echo.json"}) {
    EXPECT_TRUE(fs::exists(dir / "o" / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "o" / "config_echo.json"), text);
  EXPECT_EQ(slurp(dir / "o" / "results.csv"), results_csv(run_experiment(c, 1).rows, config_hash(c)));
}
