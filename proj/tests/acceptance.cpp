// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "rora/run.hpp"

namespace fs = std::filesystem;
using namespace rora;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::size_t hw_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

// Sweeps collected along the way, checked together by criterion 9.
std::vector<std::pair<std::string, SweepResult>> g_sweeps;

Verdict gradient_oracle() {
  RunConfig c;
  c.experiment = ExperimentKind::Gradcheck;
  c.seeds = {0, 1, 2, 3};
  c.gradcheck = GradcheckConfig{};  // 100 trials, r in {1,2,4,8}, p in 2..32
  const RunOutcome out = run_experiment(c, 1);
  std::size_t trials = 0, failed = 0;
  double worst_abs = 0.0;
  std::vector<bool> rank_seen(9, false);
  for (const auto& r : out.rows) {
    if (r.metric == "pass") {
      ++trials;
      failed += r.value == 0.0;
      rank_seen[*r.rank] = true;
    }
    if (r.metric == "max_abs_error") worst_abs = std::max(worst_abs, r.value);
  }
  const bool spans = rank_seen[1] && rank_seen[2] && rank_seen[4] && rank_seen[8];
  return {failed == 0 && trials >= 100 && spans,
          fmt("%zu random configs, %zu outside rel 1e-6 / abs 1e-9, worst abs diff %.2e", trials,
              failed, worst_abs)};
}

Verdict two_step_equivalence() {
  static const ScalingPolicy kPolicies[] = {ScalingPolicy::lora(), ScalingPolicy::rora(),
                                            ScalingPolicy::unit()};
  static constexpr std::size_t kRanks[] = {1, 2, 4, 8};
  Rng rng(RngSeed{2024});
  double worst = 0.0;
  for (std::size_t t = 0; t < 100; ++t) {
    AdapterConfig cfg;
    cfg.r = kRanks[t % 4];
    cfg.p_in = std::max<std::size_t>(cfg.r, 2 + rng.below(31));
    cfg.p_out = std::max<std::size_t>(cfg.r, 2 + rng.below(31));
    cfg.policy = kPolicies[t % 3];
    cfg.init_std_A = preset_std(InitPreset::Analysis, cfg.p_in);
    const LowRankAdapter a0 = init_adapter(cfg, RngSeed{rng.next_u64()});
    const Vector x_prev = gaussian_vector(cfg.p_in, 0.0, 1.0, rng);
    const Vector x_next = gaussian_vector(cfg.p_in, 0.0, 1.0, rng);
    const Vector delta = gaussian_vector(cfg.p_out, 0.0, 1.0, rng);
    const double eta = 0.1;
    const LowRankAdapter a1 = sgd_step(a0, grad_adapter(a0, x_prev, {delta}), eta, true);
    const Vector composed = increment(a1, x_next);
    const Vector closed = two_step_increment(a0.A, x_prev, x_next, eta, delta, a0.gamma);
    double scale = 1.0;
    for (std::size_t i = 0; i < closed.size(); ++i) scale = std::max(scale, std::abs(closed[i]));
    for (std::size_t i = 0; i < closed.size(); ++i)
      worst = std::max(worst, std::abs(composed[i] - closed[i]) / scale);
  }
  return {worst < 1e-12,
          fmt("100 instances, worst |pipeline - closed form| / max(1, |w|) = %.2e", worst)};
}

Verdict variance_law() {
  RunConfig c;
  c.experiment = ExperimentKind::Variance;
  c.seeds = {0};
  c.variance = VarianceConfig{};  // full 5 x 3 x 3 grid, n = 2e5
  const RunOutcome out = run_experiment(c, 1);
  std::size_t cells = 0, rel_ok = 0, mean_ok = 0;
  double worst_rel = 0.0, best_rel = 1e300, worst_exact = 0.0;
  for (const auto& r : out.rows) {
    if (r.metric == "rel_error") {
      ++cells;
      rel_ok += r.value < 0.05;
      worst_rel = std::max(worst_rel, r.value);
      best_rel = std::min(best_rel, r.value);
    }
    if (r.metric == "mean_within_4sigma") mean_ok += r.value == 1.0;
    if (r.metric == "exact_rel_error") worst_exact = std::max(worst_exact, r.value);
  }
  return {cells == 45 && rel_ok == cells && mean_ok == cells,
          fmt("%zu cells; %zu/%zu within 5%% of eta^2 delta^2 gamma^4 r^2 p_in (rel error %.3g..%.3g); "
              "%zu/%zu means within 4 sigma; against r p_in (p_in + r + 1) the worst rel error is %.3g",
              cells, rel_ok, cells, best_rel, worst_rel, mean_ok, cells, worst_exact)};
}

Verdict scaling_trichotomy() {
  struct Expect {
    ScalingPolicy policy;
    double slope;
  };
  const Expect cases[] = {{ScalingPolicy::unit(), 1.0}, {ScalingPolicy::lora(), -1.0},
                          {ScalingPolicy::rora(), 0.0}};
  bool ok = true;
  std::string detail;
  std::uint64_t idx = 0;
  for (const auto& e : cases) {
    NormSweep s;
    s.policy = e.policy;
    s.ranks = {4, 8, 16, 32, 64};
    s.p_in = 1;
    s.p_out = 4;
    s.n_samples = 20000;
    s.seed = derive_seed(RngSeed{31}, idx++);
    const SlopeFit fit = rank_norm_sweep(s, hw_workers()).fit;
    const bool pass = std::abs(fit.slope - e.slope) <= 0.1 && fit.residual < 0.05;
    ok = ok && pass;
    detail += fmt("%s slope %+.3f (want %+.0f) residual %.3f; ", e.policy.name().c_str(), fit.slope,
                  e.slope, fit.residual);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Verdict rank_one_coincidence() {
  // Forward outputs from equally seeded adapters with a nonzero B.
  bool forward_same = true;
  for (std::uint64_t s = 0; s < 20; ++s) {
    AdapterConfig cl{6, 5, 1, kDefaultAlpha, ScalingPolicy::lora(), 1.0};
    AdapterConfig cr = cl;
    cr.policy = ScalingPolicy::rora();
    LowRankAdapter lo = init_adapter(cl, RngSeed{s});
    LowRankAdapter ro = init_adapter(cr, RngSeed{s});
    lo.B = ro.B = gaussian_matrix(5, 1, 0.0, 1.0, derive_seed(RngSeed{s}, 1));
    const Matrix m0 = gaussian_matrix(5, 6, 0.0, 1.0, derive_seed(RngSeed{s}, 2));
    Rng xr(derive_seed(RngSeed{s}, 3));
    const Vector x = gaussian_vector(6, 0.0, 1.0, xr);
    forward_same = forward_same && forward(AdaptedLinear(m0, lo), x) == forward(AdaptedLinear(m0, ro), x);
  }
  // Full fine-tuning trajectories.
  ToyTask task;
  task.d_in = 8;
  task.d_hidden = 16;
  task.d_out = 4;
  task.n_train = 256;
  task.n_eval = 128;
  task.shift = 0.3;
  const TaskData data = make_task(task);
  const ToyModel base = pretrain_base(data, ModelSpec{{16}, RngSeed{1}}, {0.05, 300, 16});
  bool traj_same = true;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Hyperparams h{0.001, 60, 16};
    const TrainRecord a = finetune(base, data, {ScalingPolicy::lora(), 1, kDefaultAlpha}, h, RngSeed{s});
    const TrainRecord b = finetune(base, data, {ScalingPolicy::rora(), 1, kDefaultAlpha}, h, RngSeed{s});
    traj_same = traj_same && a.losses == b.losses && a.update_norms == b.update_norms &&
                a.eval_metric == b.eval_metric;
    for (std::size_t l = 0; l < a.adapters.size(); ++l)
      traj_same = traj_same && a.adapters[l].A == b.adapters[l].A && a.adapters[l].B == b.adapters[l].B;
  }
  return {forward_same && traj_same,
          fmt("forward outputs %s over 20 adapters; 60-step trajectories %s over 3 seeds",
              forward_same ? "bit-identical" : "DIFFER", traj_same ? "bit-identical" : "DIFFER")};
}

SweepSpec teacher_student_spec() {
  SweepSpec s;
  s.task.kind = TaskKind::Regression;
  s.task.d_in = s.task.d_hidden = s.task.d_out = 64;
  s.task.n_train = 1024;
  s.task.n_eval = 512;
  s.task.shift = 0.5;
  s.task.seed = {7};
  s.model.hidden = {64};
  s.pretrain = {0.05, 1500, 32};
  s.finetune = {0.01, 50, 32};
  s.policies = {ScalingPolicy::lora(), ScalingPolicy::rora()};
  s.ranks = {4, 8, 16, 32, 64};
  s.seeds = {0, 1, 2};
  s.alpha = 16;
  s.early_steps = 50;
  return s;
}

Verdict training_rank_invariance() {
  const SweepSpec spec = teacher_student_spec();
  SweepResult res = rank_sweep_experiment(spec, hw_workers());
  double ratio[2] = {0, 0};
  std::string detail;
  for (std::size_t p = 0; p < 2; ++p) {
    double lo = 1e300, hi = 0.0;
    detail += res.records[p].policy.name() + " norms";
    for (const auto& row : res.records[p].rows) {
      lo = std::min(lo, row.mean_early_update_norm);
      hi = std::max(hi, row.mean_early_update_norm);
      detail += fmt(" r%zu=%.3g", row.rank, row.mean_early_update_norm);
    }
    ratio[p] = hi / lo;
    detail += fmt(" (max/min %.2f); ", ratio[p]);
  }
  detail += "want RoRA < 1.5, LoRA > 4";
  g_sweeps.emplace_back("teacher-student", std::move(res));
  return {ratio[1] < 1.5 && ratio[0] > 4.0, detail};
}

Verdict pruned_recovery() {
  SweepSpec s;
  s.task.kind = TaskKind::Regression;
  s.task.d_in = 32;
  s.task.d_hidden = 64;
  s.task.d_out = 16;
  s.task.n_train = 1024;
  s.task.n_eval = 512;
  s.task.seed = {11};
  s.model.hidden = {64};
  s.pretrain = {0.05, 3000, 32};
  s.finetune = {0.01, 200, 32};
  s.policies = {ScalingPolicy::lora(), ScalingPolicy::rora(), ScalingPolicy::unit()};
  s.ranks = {8, 16, 32};
  s.seeds = {0, 1, 2};
  SweepResult res = pruned_finetune_experiment(s, kDefaultPruneSparsity, hw_workers());
  bool pruned_worse = true;
  for (const auto& b : res.baselines)
    pruned_worse = pruned_worse && strictly_better(res.kind, b.base_metric, b.pruned_metric);
  std::size_t recovered = 0;
  for (const auto& c : res.cells) {
    const auto& b = *std::find_if(res.baselines.begin(), res.baselines.end(),
                                  [&](const SeedBaseline& x) { return x.seed == c.seed; });
    recovered += strictly_better(res.kind, c.eval_metric, b.pruned_metric);
  }
  std::string detail = "eval mse base/pruned per seed:";
  for (const auto& b : res.baselines) detail += fmt(" %.3f/%.3f", b.base_metric, b.pruned_metric);
  detail += fmt("; %zu/%zu adapted cells (r >= 8, 3 policies) beat the pruned model", recovered,
                res.cells.size());
  const bool ok = pruned_worse && recovered == res.cells.size();
  g_sweeps.emplace_back("pruned", std::move(res));
  return {ok, detail};
}

std::vector<RunConfig> determinism_configs() {
  std::vector<RunConfig> out;
  RunConfig g;
  g.experiment = ExperimentKind::Gradcheck;
  g.seeds = {5};
  out.push_back(g);

  RunConfig v;
  v.experiment = ExperimentKind::Variance;
  v.seeds = {5, 6};
  v.variance.ranks = {1, 4};
  v.variance.p_ins = {4, 16};
  v.variance.gammas = {0.5, 2.0};
  v.variance.n_samples = 20000;
  v.variance.norm_sweep = NormSweepConfig{};
  v.variance.norm_sweep->n_samples = 4000;
  out.push_back(v);

  RunConfig h;
  h.seeds = {0, 1, 2};
  h.harness.task.d_in = 8;
  h.harness.task.d_hidden = 16;
  h.harness.task.d_out = 4;
  h.harness.task.n_train = 256;
  h.harness.task.n_eval = 128;
  h.harness.task.shift = 0.3;
  h.harness.hidden = {16};
  h.harness.pretrain = {0.05, 300, 16};
  h.harness.finetune = {0.002, 40, 16};
  h.harness.policies = {ScalingPolicy::lora(), ScalingPolicy::rora(), ScalingPolicy::unit()};
  h.harness.ranks = {1, 2, 4, 8};
  for (auto kind : {ExperimentKind::Sweep, ExperimentKind::Train, ExperimentKind::PruneFinetune}) {
    h.experiment = kind;
    out.push_back(h);
  }
  h.experiment = ExperimentKind::Sweep;
  h.harness.task.kind = TaskKind::Classification;
  out.push_back(h);
  return out;
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "rora_acceptance_determinism";
  fs::remove_all(root);
  std::size_t configs = 0, identical = 0;
  std::string failures;
  for (const RunConfig& c : determinism_configs()) {
    const std::string text = emit_config(c);
    const std::string tag = std::string(experiment_name(c.experiment)) + std::to_string(configs);
    std::vector<std::string> csvs;
    for (std::size_t run = 0; run < 3; ++run) {
      const std::size_t workers = run == 1 ? 4 : 1;
      const fs::path dir = root / (tag + "_" + std::to_string(run));
      run_to_directory(text, c, dir.string(), workers);
      csvs.push_back(read_file((dir / "results.csv").string()));
    }
    ++configs;
    if (csvs[0] == csvs[1] && csvs[0] == csvs[2] && csvs[0].size() > kResultsHeader.size()) {
      ++identical;
    } else {
      failures += " " + tag;
    }
    // Harness configs also feed the zero-init check.
    if (c.experiment == ExperimentKind::Sweep) {
      g_sweeps.emplace_back(tag, rank_sweep_experiment(c.harness.sweep_spec(c.seeds), 2));
    }
  }
  fs::remove_all(root);
  return {identical == configs,
          fmt("%zu/%zu configs (all five experiment kinds) give byte-identical results.csv on "
              "rerun and with --workers 1 vs 4%s",
              identical, configs, failures.empty() ? "" : (";" + failures).c_str())};
}

Verdict zero_init_neutrality() {
  std::size_t cells = 0, exact = 0;
  std::string where;
  for (const auto& [name, res] : g_sweeps) {
    for (const auto& c : res.cells) {
      ++cells;
      if (c.step0_loss == c.frozen_loss) {
        ++exact;
      } else if (where.empty()) {
        where = fmt("; first mismatch in %s rank %zu seed %llu", name.c_str(), c.rank,
                    static_cast<unsigned long long>(c.seed));
      }
    }
  }
  return {cells > 0 && exact == cells,
          fmt("%zu/%zu cells across %zu sweeps have step-0 loss == frozen loss bitwise%s", exact, cells,
              g_sweeps.size(), where.c_str())};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient oracle", 10, gradient_oracle},
      {2, "two-step increment equivalence", 5, two_step_equivalence},
      {3, "variance law eta^2 delta^2 gamma^4 r^2 p_in", 300, variance_law},
      {4, "scaling-law slopes", 120, scaling_trichotomy},
      {5, "r = 1 policy coincidence", 1e9, rank_one_coincidence},
      {6, "training-time rank invariance", 180, training_rank_invariance},
      {7, "pruned recovery at 81.4% sparsity", 300, pruned_recovery},
      {8, "determinism", 1e9, determinism},
      {9, "zero-init neutrality", 1e9, zero_init_neutrality},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.1fs", secs);
    if (c.budget_s < 1e8) {
      timing += fmt(" of %.0fs", c.budget_s);
      if (secs > c.budget_s) v.pass = false;
    }
    std::printf("CRITERION %d %s  %s: %s [%s]\n", c.id, v.pass ? "PASS" : "FAIL", c.name,
                v.detail.c_str(), timing.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
