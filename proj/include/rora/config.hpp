#pragma once

// Run configuration: a single JSON document, parsed strictly (unknown keys
// and wrongly typed values are errors naming the offending field).

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rora/adapters.hpp"
#include "rora/grad.hpp"
#include "rora/train.hpp"
#include "rora/variance.hpp"

namespace rora {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { Gradcheck, Variance, Sweep, Train, PruneFinetune };

inline std::string_view experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Gradcheck: return "gradcheck";
    case ExperimentKind::Variance: return "variance";
    case ExperimentKind::Sweep: return "sweep";
    case ExperimentKind::Train: return "train";
    case ExperimentKind::PruneFinetune: return "prune-finetune";
  }
  return "?";
}

struct GradcheckConfig {
  std::size_t trials = 100;
  std::vector<std::size_t> ranks{1, 2, 4, 8};
  std::size_t p_min = 2;
  std::size_t p_max = 32;
  double h = 1e-5;
  double rel_tol = 1e-6;
  double abs_floor = 1e-9;

  bool operator==(const GradcheckConfig&) const = default;
};

struct NormSweepConfig {
  std::vector<ScalingPolicy> policies{ScalingPolicy::unit(), ScalingPolicy::lora(),
                                      ScalingPolicy::rora()};
  std::vector<std::size_t> ranks{4, 8, 16, 32, 64};
  double alpha = kDefaultAlpha;
  std::size_t p_in = 1;
  std::size_t p_out = 4;
  double eta = 0.1;
  double delta = 1.0;
  std::size_t n_samples = 20000;

  bool operator==(const NormSweepConfig&) const = default;
};

struct VarianceConfig {
  std::vector<std::size_t> ranks{1, 2, 4, 8, 16};
  std::vector<std::size_t> p_ins{4, 16, 64};
  std::vector<double> gammas{0.25, 1.0, 2.0};
  std::size_t p_out = 1;
  double eta = 0.1;
  double delta = 1.0;
  std::size_t n_samples = 200000;
  std::optional<NormSweepConfig> norm_sweep;

  bool operator==(const VarianceConfig&) const = default;
};

struct HarnessConfig {
  ToyTask task;
  std::vector<std::size_t> hidden{32};
  std::uint64_t init_seed = 0;
  Hyperparams pretrain{0.05, 2000, 32};
  Hyperparams finetune{0.01, 200, 32};
  std::vector<ScalingPolicy> policies{ScalingPolicy::lora(), ScalingPolicy::rora()};
  std::vector<std::size_t> ranks{4, 8, 16, 32, 64, 128};
  double alpha = kDefaultAlpha;
  InitPreset init = InitPreset::Train;
  std::size_t early_steps = 50;
  std::vector<double> sparsities{kDefaultPruneSparsity};
  bool save_adapters = false;

  bool operator==(const HarnessConfig&) const = default;

  SweepSpec sweep_spec(const std::vector<std::uint64_t>& seeds) const {
    SweepSpec s;
    s.task = task;
    s.model.hidden = hidden;
    s.model.init_seed = {init_seed};
    s.pretrain = pretrain;
    s.finetune = finetune;
    s.policies = policies;
    s.ranks = ranks;
    s.seeds = seeds;
    s.alpha = alpha;
    s.init = init;
    s.early_steps = early_steps;
    return s;
  }
};

struct RunConfig {
  ExperimentKind experiment = ExperimentKind::Variance;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "results";
  GradcheckConfig gradcheck;
  VarianceConfig variance;
  HarnessConfig harness;

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

using nlohmann::json;

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read as size_t");

// Reads fields from one JSON object, tracking which keys were consumed so
// leftovers can be reported.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + display() + "' must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* raw(const char* key, bool required) {
    if (!j_.contains(key)) {
      if (required) throw ConfigError("missing required field '" + field(key) + "'");
      return nullptr;
    }
    seen_.insert(key);
    return &j_.at(key);
  }

  template <class T>
  void read(const char* key, T& out, bool required = false) {
    if (const json* v = raw(key, required)) convert(*v, out, field(key));
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown field '" + field(k.c_str()) + "'");
    }
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  static void convert(const json& v, std::size_t& out, const std::string& f) {
    if (!v.is_number_unsigned()) throw ConfigError("field '" + f + "' must be a non-negative integer");
    out = v.get<std::size_t>();
  }
  static void convert(const json& v, double& out, const std::string& f) {
    if (!v.is_number()) throw ConfigError("field '" + f + "' must be a number");
    out = v.get<double>();
  }
  static void convert(const json& v, bool& out, const std::string& f) {
    if (!v.is_boolean()) throw ConfigError("field '" + f + "' must be true or false");
    out = v.get<bool>();
  }
  static void convert(const json& v, std::string& out, const std::string& f) {
    if (!v.is_string()) throw ConfigError("field '" + f + "' must be a string");
    out = v.get<std::string>();
  }
  static void convert(const json& v, ScalingPolicy& out, const std::string& f) {
    std::string s;
    convert(v, s, f);
    try {
      out = ScalingPolicy::parse(s);
    } catch (const ArgumentError& e) {
      throw ConfigError("field '" + f + "': " + e.what());
    }
  }
  template <class T>
  static T blank() {
    if constexpr (std::is_same_v<T, ScalingPolicy>) {
      return ScalingPolicy::lora();
    } else {
      return T{};
    }
  }
  template <class T>
  static void convert(const json& v, std::vector<T>& out, const std::string& f) {
    if (!v.is_array()) throw ConfigError("field '" + f + "' must be an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T item = blank<T>();
      convert(v[i], item, f + "[" + std::to_string(i) + "]");
      out.push_back(item);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_hyper(FieldReader& parent, const char* key, Hyperparams& h) {
  if (const json* v = parent.raw(key, false)) {
    FieldReader r(*v, parent.field(key));
    r.read("eta", h.eta);
    r.read("steps", h.steps);
    r.read("batch", h.batch);
    r.finish();
  }
}

inline json policies_json(const std::vector<ScalingPolicy>& ps) {
  json a = json::array();
  for (const auto& p : ps) a.push_back(p.name());
  return a;
}

inline json hyper_json(const Hyperparams& h) {
  return {{"eta", h.eta}, {"steps", h.steps}, {"batch", h.batch}};
}

inline ExperimentKind parse_experiment(const std::string& s) {
  for (auto k : {ExperimentKind::Gradcheck, ExperimentKind::Variance, ExperimentKind::Sweep,
                 ExperimentKind::Train, ExperimentKind::PruneFinetune}) {
    if (s == experiment_name(k)) return k;
  }
  throw ConfigError("field 'experiment': unknown kind '" + s +
                    "' (expected gradcheck, variance, sweep, train or prune-finetune)");
}

// 1-based line and column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(offset, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::FieldReader;
  RunConfig c;
  FieldReader root(j, "");
  std::string kind;
  root.read("experiment", kind, true);
  c.experiment = detail::parse_experiment(kind);
  root.read("seeds", c.seeds, true);
  if (c.seeds.empty()) throw ConfigError("field 'seeds' must not be empty");
  root.read("out_dir", c.out_dir);

  if (const auto* v = root.raw("gradcheck", false)) {
    FieldReader r(*v, "gradcheck");
    auto& g = c.gradcheck;
    r.read("trials", g.trials);
    r.read("ranks", g.ranks);
    r.read("p_min", g.p_min);
    r.read("p_max", g.p_max);
    r.read("h", g.h);
    r.read("rel_tol", g.rel_tol);
    r.read("abs_floor", g.abs_floor);
    r.finish();
  }

  if (const auto* v = root.raw("variance", false)) {
    FieldReader r(*v, "variance");
    auto& g = c.variance;
    r.read("ranks", g.ranks);
    r.read("p_ins", g.p_ins);
    r.read("gammas", g.gammas);
    r.read("p_out", g.p_out);
    r.read("eta", g.eta);
    r.read("delta", g.delta);
    r.read("n_samples", g.n_samples);
    if (const auto* ns = r.raw("norm_sweep", false)) {
      FieldReader n(*ns, "variance.norm_sweep");
      NormSweepConfig s;
      n.read("policies", s.policies);
      n.read("ranks", s.ranks);
      n.read("alpha", s.alpha);
      n.read("p_in", s.p_in);
      n.read("p_out", s.p_out);
      n.read("eta", s.eta);
      n.read("delta", s.delta);
      n.read("n_samples", s.n_samples);
      n.finish();
      g.norm_sweep = s;
    }
    r.finish();
  }

  if (const auto* v = root.raw("harness", false)) {
    FieldReader r(*v, "harness");
    auto& h = c.harness;
    if (const auto* tv = r.raw("task", false)) {
      FieldReader t(*tv, "harness.task");
      std::string k = std::string(task_kind_name(h.task.kind));
      t.read("kind", k);
      if (k == "regression") h.task.kind = TaskKind::Regression;
      else if (k == "classification") h.task.kind = TaskKind::Classification;
      else throw ConfigError("field 'harness.task.kind' must be regression or classification");
      t.read("d_in", h.task.d_in);
      t.read("d_hidden", h.task.d_hidden);
      t.read("d_out", h.task.d_out);
      t.read("n_train", h.task.n_train);
      t.read("n_eval", h.task.n_eval);
      t.read("noise_std", h.task.noise_std);
      t.read("shift", h.task.shift);
      t.read("seed", h.task.seed.value);
      t.finish();
    }
    r.read("hidden", h.hidden);
    r.read("init_seed", h.init_seed);
    detail::read_hyper(r, "pretrain", h.pretrain);
    detail::read_hyper(r, "finetune", h.finetune);
    r.read("policies", h.policies);
    r.read("ranks", h.ranks);
    r.read("alpha", h.alpha);
    std::string init = std::string(preset_name(h.init));
    r.read("init", init);
    if (init == "train") h.init = InitPreset::Train;
    else if (init == "analysis") h.init = InitPreset::Analysis;
    else throw ConfigError("field 'harness.init' must be train or analysis");
    r.read("early_steps", h.early_steps);
    r.read("sparsities", h.sparsities);
    r.read("save_adapters", h.save_adapters);
    r.finish();
  }
  root.finish();
  return c;
}

inline RunConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ConfigError("config parse error at line " + std::to_string(line) + ", column " +
                      std::to_string(col) + ": " + e.what());
  }
  return config_from_json(j);
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& g = c.gradcheck;
  const auto& v = c.variance;
  const auto& h = c.harness;
  json variance = {{"ranks", v.ranks},   {"p_ins", v.p_ins}, {"gammas", v.gammas},
                   {"p_out", v.p_out},   {"eta", v.eta},     {"delta", v.delta},
                   {"n_samples", v.n_samples}};
  if (v.norm_sweep) {
    const auto& s = *v.norm_sweep;
    variance["norm_sweep"] = {{"policies", detail::policies_json(s.policies)},
                              {"ranks", s.ranks},
                              {"alpha", s.alpha},
                              {"p_in", s.p_in},
                              {"p_out", s.p_out},
                              {"eta", s.eta},
                              {"delta", s.delta},
                              {"n_samples", s.n_samples}};
  }
  return {
      {"experiment", std::string(experiment_name(c.experiment))},
      {"seeds", c.seeds},
      {"out_dir", c.out_dir},
      {"gradcheck",
       {{"trials", g.trials}, {"ranks", g.ranks}, {"p_min", g.p_min}, {"p_max", g.p_max},
        {"h", g.h}, {"rel_tol", g.rel_tol}, {"abs_floor", g.abs_floor}}},
      {"variance", variance},
      {"harness",
       {{"task",
         {{"kind", std::string(task_kind_name(h.task.kind))},
          {"d_in", h.task.d_in},
          {"d_hidden", h.task.d_hidden},
          {"d_out", h.task.d_out},
          {"n_train", h.task.n_train},
          {"n_eval", h.task.n_eval},
          {"noise_std", h.task.noise_std},
          {"shift", h.task.shift},
          {"seed", h.task.seed.value}}},
        {"hidden", h.hidden},
        {"init_seed", h.init_seed},
        {"pretrain", detail::hyper_json(h.pretrain)},
        {"finetune", detail::hyper_json(h.finetune)},
        {"policies", detail::policies_json(h.policies)},
        {"ranks", h.ranks},
        {"alpha", h.alpha},
        {"init", std::string(preset_name(h.init))},
        {"early_steps", h.early_steps},
        {"sparsities", h.sparsities},
        {"save_adapters", h.save_adapters}}},
  };
}

inline std::string emit_config(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

// FNV-1a over the canonical (sorted-key) serialisation.
inline std::string config_hash(const RunConfig& c) {
  const std::string canon = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

// Semantic checks that need more than one field.
inline void validate_config(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  switch (c.experiment) {
    case ExperimentKind::Gradcheck: {
      const auto& g = c.gradcheck;
      if (g.trials == 0) fail("field 'gradcheck.trials' must be >= 1");
      if (g.ranks.empty()) fail("field 'gradcheck.ranks' must not be empty");
      for (auto r : g.ranks)
        if (r == 0) fail("field 'gradcheck.ranks' entries must be >= 1");
      if (g.p_min < 1 || g.p_min > g.p_max) fail("fields 'gradcheck.p_min'/'p_max' must satisfy 1 <= p_min <= p_max");
      if (!(g.h > 0.0)) fail("field 'gradcheck.h' must be > 0");
      break;
    }
    case ExperimentKind::Variance: {
      const auto& v = c.variance;
      if (v.ranks.empty() || v.p_ins.empty() || v.gammas.empty()) fail("variance grid must be non-empty");
      for (auto r : v.ranks)
        if (r == 0) fail("field 'variance.ranks' entries must be >= 1");
      for (auto p : v.p_ins)
        if (p == 0) fail("field 'variance.p_ins' entries must be >= 1");
      for (auto g : v.gammas)
        if (!(g > 0.0)) fail("field 'variance.gammas' entries must be > 0");
      if (v.p_out == 0) fail("field 'variance.p_out' must be >= 1");
      if (!(v.eta > 0.0)) fail("field 'variance.eta' must be > 0");
      if (v.n_samples < kMinVarianceSamples) fail("field 'variance.n_samples' must be >= 1000");
      if (v.norm_sweep) {
        const auto& s = *v.norm_sweep;
        if (s.ranks.size() < 3) fail("field 'variance.norm_sweep.ranks' needs at least 3 ranks");
        if (s.n_samples < kMinVarianceSamples) fail("field 'variance.norm_sweep.n_samples' must be >= 1000");
        if (s.policies.empty()) fail("field 'variance.norm_sweep.policies' must not be empty");
      }
      break;
    }
    case ExperimentKind::Sweep:
    case ExperimentKind::Train:
    case ExperimentKind::PruneFinetune: {
      const auto& h = c.harness;
      if (c.seeds.size() < 3) fail("field 'seeds' needs at least 3 seeds for " + std::string(experiment_name(c.experiment)));
      if (h.policies.empty()) fail("field 'harness.policies' must not be empty");
      if (h.ranks.empty()) fail("field 'harness.ranks' must not be empty");
      for (auto r : h.ranks)
        if (r == 0) fail("field 'harness.ranks' entries must be >= 1");
      if (h.task.n_train == 0) fail("field 'harness.task.n_train' must be >= 1");
      if (h.pretrain.batch == 0 || h.finetune.batch == 0) fail("batch sizes must be >= 1");
      if (c.experiment == ExperimentKind::PruneFinetune) {
        if (h.sparsities.empty()) fail("field 'harness.sparsities' must not be empty");
        for (double s : h.sparsities)
          if (!(s >= 0.0 && s < 1.0)) fail("field 'harness.sparsities' entries must be in [0, 1)");
      }
      break;
    }
  }
}

}  // namespace rora
