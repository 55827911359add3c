#pragma once

// Executes a RunConfig and writes results.csv, config_echo.json,
// summary.txt and summary.csv into the output directory.

#include <filesystem>
#include <string>
#include <vector>

#include "rora/config.hpp"
#include "rora/grad.hpp"
#include "rora/parallel.hpp"
#include "rora/report.hpp"
#include "rora/train.hpp"
#include "rora/variance.hpp"

namespace rora {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumeric = 2, kExitIo = 3 };

struct GradcheckTrial {
  ScalingPolicy policy = ScalingPolicy::lora();
  std::size_t r = 0, p_in = 0, p_out = 0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Analytic gradients against central differences of
// L = 0.5 * ||gamma B A x - target||^2 for random adapters at training
// scale: A ~ N(0, 1/p_in), B ~ N(0, 0.01).
inline GradcheckTrial gradcheck_trial(const GradcheckConfig& g, std::uint64_t base_seed,
                                      std::size_t t) {
  static const ScalingPolicy kPolicies[] = {ScalingPolicy::lora(), ScalingPolicy::rora(),
                                            ScalingPolicy::unit()};
  GradcheckTrial out;
  const RngSeed seed = derive_seed(RngSeed{base_seed}, t);
  Rng rng(seed);
  out.seed = seed.value;
  out.policy = kPolicies[t % 3];
  out.r = g.ranks[t % g.ranks.size()];
  const std::size_t span = g.p_max - g.p_min + 1;
  out.p_in = g.p_min + static_cast<std::size_t>(rng.below(span));
  out.p_out = g.p_min + static_cast<std::size_t>(rng.below(span));
  out.gamma = scaling_factor(out.policy, kDefaultAlpha, out.r);

  LowRankAdapter a;
  const double std_a = preset_std(InitPreset::Train, out.p_in);
  a.config = {out.p_in, out.p_out, out.r, kDefaultAlpha, out.policy, std_a};
  a.gamma = out.gamma;
  a.A = gaussian_matrix(out.r, out.p_in, 0.0, std_a, rng);
  a.B = gaussian_matrix(out.p_out, out.r, 0.0, 0.1, rng);
  const Vector x = gaussian_vector(out.p_in, 0.0, 1.0, rng);
  const Vector target = gaussian_vector(out.p_out, 0.0, 1.0, rng);

  auto loss = [&](const Vector& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += 0.5 * (w[i] - target[i]) * (w[i] - target[i]);
    return s;
  };
  const AdapterGrads analytic = grad_adapter(a, x, {increment(a, x) - target});
  const AdapterGrads numeric = finite_diff_grad(a, x, loss, g.h);

  out.pass = true;
  auto compare = [&](const Matrix& an, const Matrix& nu) {
    const auto av = an.values();
    const auto nv = nu.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double err = std::abs(av[i] - nv[i]);
      const double scale = std::max(std::abs(av[i]), std::abs(nv[i]));
      out.max_abs_error = std::max(out.max_abs_error, err);
      out.max_rel_error = std::max(out.max_rel_error, err / std::max(scale, g.abs_floor));
      if (err > g.rel_tol * scale + g.abs_floor) out.pass = false;
    }
  };
  compare(analytic.dA, numeric.dA);
  compare(analytic.dB, numeric.dB);
  return out;
}

struct RunOutcome {
  std::vector<ResultRow> rows;
  bool checks_passed = true;  // false when a gradcheck trial disagreed
};

namespace detail {

inline void run_gradcheck(const RunConfig& c, std::size_t workers, RunOutcome& out) {
  const auto& g = c.gradcheck;
  for (std::uint64_t seed : c.seeds) {
    std::vector<GradcheckTrial> trials(g.trials);
    parallel_for(g.trials, workers, [&](std::size_t t) { trials[t] = gradcheck_trial(g, seed, t); });
    std::size_t passed = 0;
    for (std::size_t t = 0; t < trials.size(); ++t) {
      const auto& tr = trials[t];
      auto row = [&](const char* metric, double v) {
        out.rows.push_back({"gradcheck", tr.policy.name(), tr.r, tr.p_in, tr.p_out, tr.gamma,
                            std::nullopt, seed, t, metric, v});
      };
      row("max_abs_error", tr.max_abs_error);
      row("max_rel_error", tr.max_rel_error);
      row("pass", tr.pass ? 1.0 : 0.0);
      passed += tr.pass;
    }
    out.rows.push_back({"gradcheck", "", std::nullopt, std::nullopt, std::nullopt, std::nullopt,
                        std::nullopt, seed, std::nullopt, "pass_fraction",
                        static_cast<double>(passed) / static_cast<double>(trials.size())});
    if (passed != trials.size()) out.checks_passed = false;
  }
}

inline void run_variance(const RunConfig& c, std::size_t workers, RunOutcome& out) {
  const auto& v = c.variance;
  for (std::uint64_t seed : c.seeds) {
    std::size_t cell = 0;
    for (std::size_t r : v.ranks) {
      for (std::size_t p_in : v.p_ins) {
        for (double gamma : v.gammas) {
          VarianceExperiment e;
          e.r = r;
          e.p_in = p_in;
          e.p_out = v.p_out;
          e.eta = v.eta;
          e.delta = v.delta;
          e.policy = ScalingPolicy::custom(gamma);
          e.n_samples = v.n_samples;
          e.seed = derive_seed(RngSeed{seed}, cell++);
          const VarianceReport rep = monte_carlo_increment_stats(e, workers);
          auto row = [&](const char* metric, double value) {
            out.rows.push_back({"variance", e.policy.name(), r, p_in, v.p_out, gamma,
                                std::nullopt, seed, std::nullopt, metric, value});
          };
          row("empirical_mean", rep.empirical_mean);
          row("empirical_var", rep.empirical_var);
          row("closed_form_var", rep.closed_form_var);
          row("rel_error", rep.rel_error);
          row("ci95_halfwidth", rep.ci95_halfwidth);
          row("exact_var", rep.exact_var);
          row("exact_rel_error", rep.exact_rel_error);
          row("mean_within_4sigma", rep.mean_consistent_with_zero() ? 1.0 : 0.0);
        }
      }
    }
    if (!v.norm_sweep) continue;
    const auto& ns = *v.norm_sweep;
    for (std::size_t pi = 0; pi < ns.policies.size(); ++pi) {
      NormSweep spec;
      spec.policy = ns.policies[pi];
      spec.alpha = ns.alpha;
      spec.ranks = ns.ranks;
      spec.p_in = ns.p_in;
      spec.p_out = ns.p_out;
      spec.eta = ns.eta;
      spec.delta = ns.delta;
      spec.n_samples = ns.n_samples;
      spec.seed = derive_seed(RngSeed{seed}, 0x6e6f726d00 + pi);
      const NormSweepResult res = rank_norm_sweep(spec, workers);
      const std::string name = spec.policy.name();
      for (const auto& pt : res.points) {
        auto row = [&](const char* metric, double value) {
          out.rows.push_back({"norm_sweep", name, pt.r, ns.p_in, ns.p_out, pt.gamma, std::nullopt,
                              seed, std::nullopt, metric, value});
        };
        row("mean_norm", pt.mean_norm);
        row("mean_norm_stderr", pt.mean_norm_stderr);
        row("closed_form_norm", pt.closed_form_norm);
      }
      auto row = [&](const char* metric, double value) {
        out.rows.push_back({"norm_sweep", name, std::nullopt, ns.p_in, ns.p_out, std::nullopt,
                            std::nullopt, seed, std::nullopt, metric, value});
      };
      row("norm_slope", res.fit.slope);
      row("norm_intercept", res.fit.intercept);
      row("norm_fit_residual", res.fit.residual);
    }
  }
}

inline void save_cell_adapters(const std::string& dir, const SweepSpec& spec,
                               const SweepResult& res, std::optional<double> sparsity) {
  namespace fs = std::filesystem;
  const fs::path root = fs::path(dir) / "adapters";
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());
  for (const auto& cell : res.cells) {
    std::string stem = spec.policies[cell.policy_index].name() + "_r" + std::to_string(cell.rank) +
                       "_s" + std::to_string(cell.seed);
    if (sparsity) stem += "_sp" + detail::short_num(*sparsity);
    for (std::size_t l = 0; l < cell.adapters.size(); ++l) {
      const fs::path p = root / (stem + "_l" + std::to_string(l) + ".bin");
      std::ofstream f(p, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot write '" + p.string() + "'");
      save_adapter(f, cell.adapters[l]);
      if (!f) throw IoError("error writing '" + p.string() + "'");
    }
  }
}

inline void sweep_rows(const RunConfig& c, const SweepSpec& spec, const SweepResult& res,
                       std::optional<double> sparsity, RunOutcome& out) {
  const std::string exp(experiment_name(c.experiment));
  const std::string metric(metric_name(res.kind));
  for (const auto& b : res.baselines) {
    auto row = [&](const std::string& m, double v) {
      out.rows.push_back({exp, "", std::nullopt, std::nullopt, std::nullopt, std::nullopt,
                          sparsity, b.seed, std::nullopt, m, v});
    };
    row("untrained_" + metric, b.untrained_metric);
    row("base_" + metric, b.base_metric);
    if (sparsity) {
      row("pruned_" + metric, b.pruned_metric);
      row("nonzero_fraction", b.nonzero_fraction);
    }
  }
  for (const auto& cell : res.cells) {
    const ScalingPolicy& p = spec.policies[cell.policy_index];
    const double gamma = scaling_factor(p, spec.alpha, cell.rank);
    auto row = [&](const std::string& m, std::optional<std::size_t> step, double v) {
      out.rows.push_back({exp, p.name(), cell.rank, std::nullopt, std::nullopt, gamma, sparsity,
                          cell.seed, step, m, v});
    };
    row(metric, std::nullopt, cell.eval_metric);
    row("step0_loss", std::nullopt, cell.step0_loss);
    row("frozen_loss", std::nullopt, cell.frozen_loss);
    row("final_loss", std::nullopt, cell.final_loss);
    row("early_update_norm", std::nullopt, cell.early_update_norm);
    row("final_update_norm", std::nullopt, cell.final_update_norm);
    if (c.experiment == ExperimentKind::Train) {
      for (std::size_t s = 0; s < cell.losses.size(); ++s) row("loss", s, cell.losses[s]);
      for (std::size_t s = 0; s < cell.update_norms.size(); ++s)
        row("update_norm", s, cell.update_norms[s]);
    }
  }
}

inline void run_harness(const RunConfig& c, std::size_t workers, const std::string& out_dir,
                        RunOutcome& out) {
  const SweepSpec spec = c.harness.sweep_spec(c.seeds);
  if (c.experiment == ExperimentKind::PruneFinetune) {
    for (double sparsity : c.harness.sparsities) {
      const SweepResult res = pruned_finetune_experiment(spec, sparsity, workers);
      sweep_rows(c, spec, res, sparsity, out);
      if (c.harness.save_adapters && !out_dir.empty()) save_cell_adapters(out_dir, spec, res, sparsity);
    }
    return;
  }
  const SweepResult res = rank_sweep_experiment(spec, workers);
  sweep_rows(c, spec, res, std::nullopt, out);
  if (c.harness.save_adapters && !out_dir.empty()) save_cell_adapters(out_dir, spec, res, std::nullopt);
}

}  // namespace detail

// Runs the experiment. `out_dir` is only used for adapter snapshots; pass
// an empty string to skip them.
inline RunOutcome run_experiment(const RunConfig& c, std::size_t workers,
                                 const std::string& out_dir = "") {
  validate_config(c);
  RunOutcome out;
  switch (c.experiment) {
    case ExperimentKind::Gradcheck: detail::run_gradcheck(c, workers, out); break;
    case ExperimentKind::Variance: detail::run_variance(c, workers, out); break;
    case ExperimentKind::Sweep:
    case ExperimentKind::Train:
    case ExperimentKind::PruneFinetune: detail::run_harness(c, workers, out_dir, out); break;
  }
  return out;
}

struct RunArtifacts {
  std::string results_csv;
  std::string summary_text;
  std::string summary_csv;
  bool checks_passed = true;
};

// Full pipeline from config text to files on disk. `config_text` is copied
// verbatim to config_echo.json.
inline RunArtifacts run_to_directory(const std::string& config_text, const RunConfig& c,
                                     const std::string& out_dir, std::size_t workers) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  const RunOutcome outcome = run_experiment(c, workers, out_dir);
  RunArtifacts a;
  a.results_csv = results_csv(outcome.rows, config_hash(c));
  const Summary s = summarize(outcome.rows);
  a.summary_text = summary_text(s);
  a.summary_csv = summary_csv(s);
  a.checks_passed = outcome.checks_passed;
  const fs::path dir(out_dir);
  write_file((dir / "config_echo.json").string(), config_text);
  write_file((dir / "results.csv").string(), a.results_csv);
  write_file((dir / "summary.txt").string(), a.summary_text);
  write_file((dir / "summary.csv").string(), a.summary_csv);
  return a;
}

}  // namespace rora
