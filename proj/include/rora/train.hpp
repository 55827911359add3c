#pragma once

// Small-scale fine-tuning experiments: synthetic tasks, a ReLU MLP whose
// frozen linear layers carry low-rank adapters, magnitude pruning, and
// rank sweeps across scaling policies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rora/adapters.hpp"
#include "rora/grad.hpp"
#include "rora/linalg.hpp"
#include "rora/parallel.hpp"

namespace rora {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { Regression, Classification };

inline std::string_view task_kind_name(TaskKind k) {
  return k == TaskKind::Regression ? "regression" : "classification";
}

struct ToyTask {
  TaskKind kind = TaskKind::Regression;
  std::size_t d_in = 16;
  std::size_t d_hidden = 32;
  std::size_t d_out = 4;
  std::size_t n_train = 512;
  std::size_t n_eval = 512;
  double noise_std = 0.0;
  // Relative perturbation between the pretraining teacher and the
  // fine-tuning teacher. 0 means both splits share one teacher.
  double shift = 0.0;
  RngSeed seed{0};

  bool operator==(const ToyTask&) const = default;
};

// Teacher networks. Regression: y = W2 relu(W1 x). Classification:
// label = argmax(C x) with unit-norm rows of C, stored in w2.
struct Teacher {
  Matrix w1;
  Matrix w2;
};

struct Dataset {
  Matrix inputs;   // n x d_in
  Matrix targets;  // n x d_out (one-hot for classification)
  std::vector<std::size_t> labels;  // classification only

  std::size_t size() const { return inputs.rows(); }
};

struct TaskData {
  TaskKind kind = TaskKind::Regression;
  Dataset base;   // pretraining split, labelled by the unshifted teacher
  Dataset train;  // fine-tuning split
  Dataset eval;   // held out, same teacher as train
  Teacher teacher;  // labels train and eval
};

namespace detail {

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

inline Matrix teacher_outputs(const Teacher& t, const Matrix& x) {
  Matrix h = matmul(x, transpose(t.w1));
  for (double& v : h.values()) v = relu(v);
  return matmul(h, transpose(t.w2));
}

inline Teacher perturb(const Teacher& t, double shift, Rng& rng) {
  Teacher out = t;
  auto jitter = [&](Matrix& m, double std) {
    for (double& v : m.values()) v += shift * rng.normal(0.0, std);
  };
  jitter(out.w1, 1.0 / std::sqrt(static_cast<double>(t.w1.cols())));
  jitter(out.w2, std::sqrt(2.0 / static_cast<double>(t.w2.cols())));
  return out;
}

inline void normalise_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    double s = 0.0;
    for (double v : row) s += v * v;
    s = std::sqrt(s);
    for (double& v : row) v /= s;
  }
}

inline std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

inline Dataset label_dataset(TaskKind kind, const Teacher& t, Matrix inputs, double noise_std,
                             Rng& rng) {
  Dataset d;
  if (kind == TaskKind::Regression) {
    d.targets = teacher_outputs(t, inputs);
    if (noise_std > 0.0)
      for (double& v : d.targets.values()) v += rng.normal(0.0, noise_std);
  } else {
    const Matrix logits = matmul(inputs, transpose(t.w2));
    d.labels = argmax_rows(logits);
    d.targets = Matrix(inputs.rows(), t.w2.rows());
    for (std::size_t i = 0; i < d.labels.size(); ++i) d.targets(i, d.labels[i]) = 1.0;
  }
  d.inputs = std::move(inputs);
  return d;
}

inline bool classes_balanced(const std::vector<std::size_t>& labels, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (auto l : labels) ++counts[l];
  const double floor = 0.05 * static_cast<double>(labels.size());
  return std::all_of(counts.begin(), counts.end(),
                     [&](std::size_t c) { return static_cast<double>(c) >= floor; });
}

}  // namespace detail

inline Teacher make_teacher(const ToyTask& spec, RngSeed seed) {
  Rng rng(seed);
  Teacher t;
  if (spec.kind == TaskKind::Regression) {
    t.w1 = gaussian_matrix(spec.d_hidden, spec.d_in, 0.0,
                           1.0 / std::sqrt(static_cast<double>(spec.d_in)), rng);
    t.w2 = gaussian_matrix(spec.d_out, spec.d_hidden, 0.0,
                           std::sqrt(2.0 / static_cast<double>(spec.d_hidden)), rng);
  } else {
    t.w1 = Matrix(0, 0);
    t.w2 = gaussian_matrix(spec.d_out, spec.d_in, 0.0, 1.0, rng);
    detail::normalise_rows(t.w2);
  }
  return t;
}

inline TaskData make_task(const ToyTask& spec) {
  if (spec.n_train == 0) throw ArgumentError("make_task: n_train must be >= 1");
  if (spec.n_eval == 0) throw ArgumentError("make_task: n_eval must be >= 1");
  if (spec.d_in == 0 || spec.d_out == 0 || spec.d_hidden == 0) {
    throw ArgumentError("make_task: widths must be >= 1");
  }
  if (spec.kind == TaskKind::Classification && spec.d_out < 2) {
    throw ArgumentError("make_task: classification needs d_out >= 2");
  }
  if (!(spec.noise_std >= 0.0) || !(spec.shift >= 0.0)) {
    throw ArgumentError("make_task: noise_std and shift must be >= 0");
  }

  // Classification redraws the label map until every class holds at least
  // 5% of the base and train splits.
  constexpr std::uint64_t kMaxAttempts = 64;
  for (std::uint64_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const RngSeed root = derive_seed(spec.seed, attempt);
    const Teacher base_teacher = make_teacher(spec, derive_seed(root, 0));
    Rng shift_rng(derive_seed(root, 1));
    Teacher task_teacher = base_teacher;
    if (spec.shift > 0.0) {
      task_teacher = detail::perturb(base_teacher, spec.shift, shift_rng);
      if (spec.kind == TaskKind::Classification) detail::normalise_rows(task_teacher.w2);
    }

    Rng base_rng(derive_seed(root, 2)), train_rng(derive_seed(root, 3)),
        eval_rng(derive_seed(root, 4));
    TaskData data;
    data.kind = spec.kind;
    data.teacher = task_teacher;
    data.base = detail::label_dataset(spec.kind, base_teacher,
                                      gaussian_matrix(spec.n_train, spec.d_in, 0, 1, base_rng),
                                      spec.noise_std, base_rng);
    data.train = detail::label_dataset(spec.kind, task_teacher,
                                       gaussian_matrix(spec.n_train, spec.d_in, 0, 1, train_rng),
                                       spec.noise_std, train_rng);
    data.eval = detail::label_dataset(spec.kind, task_teacher,
                                      gaussian_matrix(spec.n_eval, spec.d_in, 0, 1, eval_rng),
                                      spec.noise_std, eval_rng);
    if (spec.kind == TaskKind::Regression || spec.d_out > 8 ||
        (detail::classes_balanced(data.base.labels, spec.d_out) &&
         detail::classes_balanced(data.train.labels, spec.d_out))) {
      return data;
    }
  }
  throw ArgumentError("make_task: could not draw a balanced label map");
}

// ---------------------------------------------------------------------------
// Model

// Frozen base network: linear layers with ReLU between them (none after the
// last). Weights are fixed once constructed.
class ToyModel {
 public:
  ToyModel() = default;
  explicit ToyModel(std::vector<Matrix> weights) : weights_(std::move(weights)) {
    for (std::size_t l = 1; l < weights_.size(); ++l) {
      if (weights_[l].cols() != weights_[l - 1].rows()) {
        throw DimensionError("ToyModel: layer " + std::to_string(l) + " " + weights_[l].shape() +
                             " does not follow " + weights_[l - 1].shape());
      }
    }
  }

  const std::vector<Matrix>& weights() const { return weights_; }
  std::size_t layers() const { return weights_.size(); }
  std::size_t d_in() const { return weights_.front().cols(); }
  std::size_t d_out() const { return weights_.back().rows(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights_) n += w.size();
    return n;
  }

  bool operator==(const ToyModel&) const = default;

 private:
  std::vector<Matrix> weights_;
};

struct ModelSpec {
  std::vector<std::size_t> hidden{32};
  RngSeed init_seed{0};
};

inline ToyModel init_model(std::size_t d_in, std::size_t d_out, const ModelSpec& spec) {
  Rng rng(spec.init_seed);
  std::vector<std::size_t> widths{d_in};
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(d_out);
  std::vector<Matrix> ws;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const bool last = l + 2 == widths.size();
    const double fan_in = static_cast<double>(widths[l]);
    const double std = last ? 1.0 / std::sqrt(fan_in) : std::sqrt(2.0 / fan_in);
    ws.push_back(gaussian_matrix(widths[l + 1], widths[l], 0.0, std, rng));
  }
  return ToyModel(std::move(ws));
}

namespace detail {

struct BatchPass {
  std::vector<Matrix> activations;  // input to each layer, then the output
  double loss = 0.0;
  Matrix output_delta;  // per-example dloss_n / dz at the output
};

// Forward over a batch with the given effective weights; fills per-example
// output sensitivities for the mean loss.
inline BatchPass forward_batch(const std::vector<Matrix>& eff, TaskKind kind, const Matrix& inputs,
                               const Matrix& targets) {
  BatchPass pass;
  pass.activations.reserve(eff.size() + 1);
  pass.activations.push_back(inputs);
  for (std::size_t l = 0; l < eff.size(); ++l) {
    Matrix z = matmul(pass.activations.back(), transpose(eff[l]));
    if (l + 1 < eff.size())
      for (double& v : z.values()) v = relu(v);
    pass.activations.push_back(std::move(z));
  }
  const Matrix& out = pass.activations.back();
  const std::size_t n = out.rows(), k = out.cols();
  pass.output_delta = Matrix(n, k);
  double total = 0.0;
  if (kind == TaskKind::Regression) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double e = out(i, j) - targets(i, j);
        total += e * e / static_cast<double>(k);
        pass.output_delta(i, j) = 2.0 * e / static_cast<double>(k);
      }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = out.row(i);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      const double log_z = mx + std::log(z);
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(row[j] - log_z);
        pass.output_delta(i, j) = p - targets(i, j);
        if (targets(i, j) != 0.0) total -= targets(i, j) * (row[j] - log_z);
      }
    }
  }
  pass.loss = total / static_cast<double>(n);
  return pass;
}

// Per-layer per-example sensitivities dloss_n/dz_l, walking back from the
// output through the ReLU masks.
inline std::vector<Matrix> backward_batch(const std::vector<Matrix>& eff, const BatchPass& pass) {
  std::vector<Matrix> deltas(eff.size());
  deltas.back() = pass.output_delta;
  for (std::size_t l = eff.size() - 1; l > 0; --l) {
    Matrix d = matmul(deltas[l], eff[l]);
    const Matrix& act = pass.activations[l];
    auto dv = d.values();
    auto av = act.values();
    for (std::size_t i = 0; i < dv.size(); ++i)
      if (!(av[i] > 0.0)) dv[i] = 0.0;
    deltas[l - 1] = std::move(d);
  }
  return deltas;
}

inline void gather_rows(const Matrix& src, const std::vector<std::size_t>& idx, Matrix& dst) {
  dst = Matrix(idx.size(), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto s = src.row(idx[i]);
    std::copy(s.begin(), s.end(), dst.row(i).begin());
  }
}

inline std::vector<std::size_t> draw_batch(Rng& rng, std::size_t n, std::size_t batch) {
  std::vector<std::size_t> idx(std::min(batch, n));
  for (auto& i : idx) i = rng.below(n);
  return idx;
}

}  // namespace detail

// Eval metric: MSE for regression (lower is better), accuracy for
// classification (higher is better).
inline double evaluate(const std::vector<Matrix>& eff, TaskKind kind, const Dataset& data) {
  Matrix z = data.inputs;
  for (std::size_t l = 0; l < eff.size(); ++l) {
    z = matmul(z, transpose(eff[l]));
    if (l + 1 < eff.size())
      for (double& v : z.values()) v = detail::relu(v);
  }
  if (kind == TaskKind::Regression) {
    double s = 0.0;
    auto zv = z.values();
    auto tv = data.targets.values();
    for (std::size_t i = 0; i < zv.size(); ++i) s += (zv[i] - tv[i]) * (zv[i] - tv[i]);
    return s / static_cast<double>(zv.size());
  }
  const auto pred = detail::argmax_rows(z);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

inline double evaluate(const ToyModel& model, TaskKind kind, const Dataset& data) {
  return evaluate(model.weights(), kind, data);
}

inline bool higher_is_better(TaskKind kind) { return kind == TaskKind::Classification; }

// True when `candidate` is strictly better than `reference`.
inline bool strictly_better(TaskKind kind, double candidate, double reference) {
  return higher_is_better(kind) ? candidate > reference : candidate < reference;
}

inline std::string_view metric_name(TaskKind kind) {
  return kind == TaskKind::Regression ? "eval_mse" : "eval_accuracy";
}

// Trains every weight with plain SGD on the base split and returns the
// result as a frozen model.
inline ToyModel pretrain_base(const TaskData& data, const ModelSpec& spec, const Hyperparams& hyper) {
  hyper.validate();
  const ToyModel init = init_model(data.base.inputs.cols(), data.base.targets.cols(), spec);
  std::vector<Matrix> w = init.weights();
  Rng batch_rng(derive_seed(spec.init_seed, 0xba5e));
  Matrix xb, yb;
  for (std::size_t step = 0; step < hyper.steps; ++step) {
    const auto idx = detail::draw_batch(batch_rng, data.base.size(), hyper.batch);
    detail::gather_rows(data.base.inputs, idx, xb);
    detail::gather_rows(data.base.targets, idx, yb);
    const auto pass = detail::forward_batch(w, data.kind, xb, yb);
    if (!std::isfinite(pass.loss)) {
      throw TrainingError("pretrain_base: non-finite loss at step " + std::to_string(step));
    }
    const auto deltas = detail::backward_batch(w, pass);
    const double inv_n = 1.0 / static_cast<double>(idx.size());
    for (std::size_t l = 0; l < w.size(); ++l) {
      const Matrix g = inv_n * matmul(transpose(deltas[l]), pass.activations[l]);
      w[l] = w[l] - hyper.eta * g;
    }
  }
  return ToyModel(std::move(w));
}

// Global unstructured magnitude pruning: zeroes the round(sparsity * N)
// smallest-|w| base weights across all layers. Ties break by position.
inline ToyModel magnitude_prune(const ToyModel& model, double sparsity) {
  if (!(sparsity >= 0.0) || !(sparsity < 1.0)) {
    throw ArgumentError("magnitude_prune: sparsity must be in [0, 1)");
  }
  std::vector<Matrix> w = model.weights();
  struct Ref {
    double mag;
    std::size_t layer;
    std::size_t pos;
  };
  std::vector<Ref> refs;
  refs.reserve(model.parameter_count());
  for (std::size_t l = 0; l < w.size(); ++l) {
    const auto v = w[l].values();
    for (std::size_t i = 0; i < v.size(); ++i) refs.push_back({std::abs(v[i]), l, i});
  }
  const auto k = static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(refs.size())));
  if (k == 0) return model;
  std::nth_element(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(k - 1), refs.end(),
                   [](const Ref& a, const Ref& b) {
                     if (a.mag != b.mag) return a.mag < b.mag;
                     if (a.layer != b.layer) return a.layer < b.layer;
                     return a.pos < b.pos;
                   });
  for (std::size_t i = 0; i < k; ++i) w[refs[i].layer].values()[refs[i].pos] = 0.0;
  return ToyModel(std::move(w));
}

inline double nonzero_fraction(const ToyModel& model) {
  std::size_t nz = 0;
  for (const auto& w : model.weights())
    for (double v : w.values()) nz += v != 0.0;
  return static_cast<double>(nz) / static_cast<double>(model.parameter_count());
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneSpec {
  ScalingPolicy policy = ScalingPolicy::rora();
  std::size_t rank = 8;
  double alpha = kDefaultAlpha;
  InitPreset init = InitPreset::Train;

  bool operator==(const FinetuneSpec&) const = default;
};

struct TrainRecord {
  std::vector<double> losses;        // mini-batch loss before each step
  std::vector<double> update_norms;  // ||Delta(gamma B A)||_F per step, all layers
  double frozen_loss = 0.0;          // frozen model on the step-0 batch
  double eval_metric = 0.0;
  std::vector<std::size_t> layer_ranks;  // rank actually used on each layer
  std::vector<LowRankAdapter> adapters;  // final adapter state
  std::string config_echo;

  double mean_update_norm(std::size_t first_steps) const {
    const std::size_t n = std::min(first_steps, update_norms.size());
    if (n == 0) return 0.0;
    return std::accumulate(update_norms.begin(), update_norms.begin() + static_cast<std::ptrdiff_t>(n), 0.0) /
           static_cast<double>(n);
  }
};

inline std::string finetune_echo(const FinetuneSpec& spec, const Hyperparams& hyper, RngSeed seed) {
  std::ostringstream os;
  os.precision(17);
  os << "policy=" << spec.policy.name() << " rank=" << spec.rank << " alpha=" << spec.alpha
     << " init=" << preset_name(spec.init) << " eta=" << hyper.eta << " steps=" << hyper.steps
     << " batch=" << hyper.batch << " seed=" << seed.value << " targets=all-linear-layers";
  return os.str();
}

// Attaches fresh adapters to every layer and trains A and B with SGD; the
// base weights are only read. A layer narrower than the requested rank gets
// rank min(p_in, p_out) and the scaling factor for that rank.
inline TrainRecord finetune(const ToyModel& model, const TaskData& data, const FinetuneSpec& spec,
                            const Hyperparams& hyper, RngSeed seed) {
  hyper.validate();
  if (spec.rank == 0) throw ArgumentError("finetune: rank must be >= 1");
  TrainRecord rec;
  rec.config_echo = finetune_echo(spec, hyper, seed);

  const auto& base = model.weights();
  std::vector<LowRankAdapter> adapters;
  for (std::size_t l = 0; l < base.size(); ++l) {
    AdapterConfig c;
    c.p_in = base[l].cols();
    c.p_out = base[l].rows();
    c.r = std::min({spec.rank, c.p_in, c.p_out});
    c.alpha = spec.alpha;
    c.policy = spec.policy;
    c.init_std_A = preset_std(spec.init, c.p_in);
    adapters.push_back(init_adapter(c, derive_seed(seed, l)));
    rec.layer_ranks.push_back(c.r);
  }

  Rng batch_rng(derive_seed(seed, 0xbadc0ffee));
  std::vector<Matrix> products(base.size());
  for (std::size_t l = 0; l < base.size(); ++l) products[l] = matmul(adapters[l].B, adapters[l].A);
  std::vector<Matrix> eff(base.size());
  Matrix xb, yb;
  rec.losses.reserve(hyper.steps);
  rec.update_norms.reserve(hyper.steps);

  for (std::size_t step = 0; step < hyper.steps; ++step) {
    const auto idx = detail::draw_batch(batch_rng, data.train.size(), hyper.batch);
    detail::gather_rows(data.train.inputs, idx, xb);
    detail::gather_rows(data.train.targets, idx, yb);
    for (std::size_t l = 0; l < base.size(); ++l) eff[l] = base[l] + adapters[l].gamma * products[l];
    const auto pass = detail::forward_batch(eff, data.kind, xb, yb);
    if (step == 0) rec.frozen_loss = detail::forward_batch(base, data.kind, xb, yb).loss;
    if (!std::isfinite(pass.loss)) {
      throw TrainingError("finetune: non-finite loss at step " + std::to_string(step) + " [" +
                          rec.config_echo + "]");
    }
    rec.losses.push_back(pass.loss);
    const auto deltas = detail::backward_batch(eff, pass);
    double sq = 0.0;
    for (std::size_t l = 0; l < base.size(); ++l) {
      const auto grads = grad_adapter_batch(adapters[l], pass.activations[l], deltas[l]);
      adapters[l] = sgd_step(std::move(adapters[l]), grads, hyper.eta, false);
      Matrix next = matmul(adapters[l].B, adapters[l].A);
      const double d = adapters[l].gamma * frobenius_norm(next - products[l]);
      sq += d * d;
      products[l] = std::move(next);
    }
    rec.update_norms.push_back(std::sqrt(sq));
  }

  for (std::size_t l = 0; l < base.size(); ++l) eff[l] = base[l] + adapters[l].gamma * products[l];
  rec.eval_metric = evaluate(eff, data.kind, data.eval);
  if (!std::isfinite(rec.eval_metric)) {
    throw TrainingError("finetune: non-finite eval metric [" + rec.config_echo + "]");
  }
  rec.adapters = std::move(adapters);
  return rec;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
  ToyTask task;
  ModelSpec model;
  Hyperparams pretrain{0.05, 2000, 32};
  Hyperparams finetune{0.01, 200, 32};
  std::vector<ScalingPolicy> policies{ScalingPolicy::lora(), ScalingPolicy::rora()};
  std::vector<std::size_t> ranks{4, 8, 16, 32, 64, 128};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double alpha = kDefaultAlpha;
  InitPreset init = InitPreset::Train;
  // Window for the early mean update norm.
  std::size_t early_steps = 50;
};

struct CellResult {
  std::size_t policy_index = 0;
  std::size_t rank = 0;
  std::uint64_t seed = 0;
  double eval_metric = 0.0;
  double step0_loss = 0.0;
  double frozen_loss = 0.0;
  double final_loss = 0.0;
  double early_update_norm = 0.0;
  double final_update_norm = 0.0;
  std::vector<double> losses;
  std::vector<double> update_norms;
  std::vector<std::size_t> layer_ranks;
  std::vector<LowRankAdapter> adapters;
};

struct SweepRow {
  std::size_t rank = 0;
  double mean_metric = 0.0;
  double std_metric = 0.0;
  double mean_final_update_norm = 0.0;
  double mean_early_update_norm = 0.0;
};

struct SweepRecord {
  ScalingPolicy policy = ScalingPolicy::lora();
  std::vector<SweepRow> rows;
};

struct SeedBaseline {
  std::uint64_t seed = 0;
  double untrained_metric = 0.0;
  double base_metric = 0.0;    // pretrained, unpruned, unadapted
  double pruned_metric = 0.0;  // pretrained, pruned, unadapted (prune runs only)
  double nonzero_fraction = 1.0;
};

struct SweepResult {
  TaskKind kind = TaskKind::Regression;
  std::vector<SweepRecord> records;  // one per policy, in spec order
  std::vector<CellResult> cells;     // policy-major, then rank, then seed
  std::vector<SeedBaseline> baselines;
};

inline double sample_mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Sample standard deviation (n - 1); 0 for fewer than two values.
inline double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = sample_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

namespace detail {

struct PreparedSeed {
  TaskData data;
  ToyModel model;
  SeedBaseline baseline;
};

inline ToyTask task_for_seed(const ToyTask& task, std::uint64_t seed) {
  ToyTask t = task;
  t.seed = derive_seed(task.seed, seed);
  return t;
}

inline std::vector<PreparedSeed> prepare_seeds(const SweepSpec& spec, std::optional<double> sparsity,
                                               std::size_t workers) {
  std::vector<PreparedSeed> out(spec.seeds.size());
  parallel_for(spec.seeds.size(), workers, [&](std::size_t i) {
    const std::uint64_t s = spec.seeds[i];
    PreparedSeed p;
    p.data = make_task(task_for_seed(spec.task, s));
    ModelSpec ms = spec.model;
    ms.init_seed = derive_seed(spec.model.init_seed, s);
    p.baseline.seed = s;
    p.baseline.untrained_metric =
        evaluate(init_model(p.data.base.inputs.cols(), p.data.base.targets.cols(), ms), p.data.kind,
                 p.data.eval);
    ToyModel base = pretrain_base(p.data, ms, spec.pretrain);
    p.baseline.base_metric = evaluate(base, p.data.kind, p.data.eval);
    if (sparsity) {
      base = magnitude_prune(base, *sparsity);
      p.baseline.pruned_metric = evaluate(base, p.data.kind, p.data.eval);
      p.baseline.nonzero_fraction = nonzero_fraction(base);
    }
    p.model = std::move(base);
    out[i] = std::move(p);
  });
  return out;
}

inline SweepResult run_cells(const SweepSpec& spec, const std::vector<PreparedSeed>& prepared,
                             std::size_t workers) {
  if (spec.seeds.size() < 3) throw ArgumentError("sweep: need at least 3 seeds");
  if (spec.policies.empty() || spec.ranks.empty()) throw ArgumentError("sweep: empty policy or rank list");
  const std::size_t np = spec.policies.size(), nr = spec.ranks.size(), ns = spec.seeds.size();
  SweepResult res;
  res.kind = spec.task.kind;
  res.cells.resize(np * nr * ns);
  parallel_for(res.cells.size(), workers, [&](std::size_t c) {
    const std::size_t pi = c / (nr * ns), ri = (c / ns) % nr, si = c % ns;
    FinetuneSpec fs{spec.policies[pi], spec.ranks[ri], spec.alpha, spec.init};
    TrainRecord rec;
    try {
      rec = finetune(prepared[si].model, prepared[si].data, fs, spec.finetune,
                     RngSeed{spec.seeds[si]});
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " (policy=" + fs.policy.name() +
                          " rank=" + std::to_string(fs.rank) +
                          " seed=" + std::to_string(spec.seeds[si]) + ")");
    }
    CellResult& cell = res.cells[c];
    cell.policy_index = pi;
    cell.rank = spec.ranks[ri];
    cell.seed = spec.seeds[si];
    cell.eval_metric = rec.eval_metric;
    cell.frozen_loss = rec.frozen_loss;
    cell.step0_loss = rec.losses.empty() ? rec.frozen_loss : rec.losses.front();
    cell.final_loss = rec.losses.empty() ? rec.frozen_loss : rec.losses.back();
    cell.early_update_norm = rec.mean_update_norm(spec.early_steps);
    cell.final_update_norm = rec.update_norms.empty() ? 0.0 : rec.update_norms.back();
    cell.losses = std::move(rec.losses);
    cell.update_norms = std::move(rec.update_norms);
    cell.layer_ranks = std::move(rec.layer_ranks);
    cell.adapters = std::move(rec.adapters);
  });

  for (std::size_t pi = 0; pi < np; ++pi) {
    SweepRecord record{spec.policies[pi], {}};
    for (std::size_t ri = 0; ri < nr; ++ri) {
      std::vector<double> metric, final_norm, early_norm;
      for (std::size_t si = 0; si < ns; ++si) {
        const auto& cell = res.cells[(pi * nr + ri) * ns + si];
        metric.push_back(cell.eval_metric);
        final_norm.push_back(cell.final_update_norm);
        early_norm.push_back(cell.early_update_norm);
      }
      record.rows.push_back({spec.ranks[ri], sample_mean(metric), sample_std(metric),
                             sample_mean(final_norm), sample_mean(early_norm)});
    }
    res.records.push_back(std::move(record));
  }
  for (const auto& p : prepared) res.baselines.push_back(p.baseline);
  return res;
}

}  // namespace detail

inline SweepResult rank_sweep_experiment(const SweepSpec& spec, std::size_t workers = 1) {
  if (spec.seeds.size() < 3) throw ArgumentError("rank_sweep_experiment: need at least 3 seeds");
  const auto prepared = detail::prepare_seeds(spec, std::nullopt, workers);
  return detail::run_cells(spec, prepared, workers);
}

inline constexpr double kDefaultPruneSparsity = 0.814;

// Pretrain, prune, then sweep policies and ranks on the pruned base.
inline SweepResult pruned_finetune_experiment(const SweepSpec& spec,
                                              double sparsity = kDefaultPruneSparsity,
                                              std::size_t workers = 1) {
  if (spec.seeds.size() < 3) throw ArgumentError("pruned_finetune_experiment: need at least 3 seeds");
  if (!(sparsity >= 0.0) || !(sparsity < 1.0)) {
    throw ArgumentError("pruned_finetune_experiment: sparsity must be in [0, 1)");
  }
  const auto prepared = detail::prepare_seeds(spec, sparsity, workers);
  return detail::run_cells(spec, prepared, workers);
}

}  // namespace rora
