#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlayer/io.hpp"
#include "mlayer/model.hpp"
#include "mlayer/rng.hpp"
#include "mlayer/tasks.hpp"

namespace mlayer {

/// Training aborted because the loss became non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, int batch, const std::string& detail)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch) + ": " + detail),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

enum class OptimizerKind { kSgd, kRmsprop };
enum class LossKind { kSoftmaxXent, kMse, kPeriodicPenalty };

struct PlateauSchedule {
  int patience_epochs = 5;
  double factor = 0.2;  // multiplier applied to the learning rate
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kRmsprop;
  double learning_rate = 1e-3;
  double momentum = 0.9;       // SGD only
  double decay = 0.0;          // RMSprop per-step learning-rate decay
  int batch_size = 32;
  int max_epochs = 100;
  std::optional<PlateauSchedule> plateau;
  std::optional<int> early_stop_patience;
  LossKind loss = LossKind::kMse;
  double activity_lambda = 0.0;
  std::uint64_t seed = 0;
  double validation_fraction = 0.0;

  void validate() const {
    if (learning_rate <= 0.0) throw DomainError("TrainConfig: learning_rate must be > 0");
    if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 0) throw DomainError("TrainConfig: max_epochs must be >= 0");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
      throw DomainError("TrainConfig: validation_fraction must be in [0, 1)");
    if (activity_lambda < 0.0) throw DomainError("TrainConfig: activity_lambda must be >= 0");
    if (plateau && (plateau->factor <= 0.0 || plateau->factor >= 1.0))
      throw DomainError("TrainConfig: plateau factor must be in (0, 1)");
    if (plateau && plateau->patience_epochs < 1)
      throw DomainError("TrainConfig: plateau patience must be >= 1");
    if (early_stop_patience && *early_stop_patience < 1)
      throw DomainError("TrainConfig: early stop patience must be >= 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct Metrics {
  std::vector<EpochRecord> epochs;
};

/// epoch, train_loss, val_loss, val_acc, lr, seconds.
inline std::string metrics_to_csv(const Metrics& m) {
  std::string out = "epoch,train_loss,val_loss,val_acc,lr,seconds\n";
  for (const EpochRecord& r : m.epochs) {
    out += std::to_string(r.epoch);
    out += ',' + format_double(r.train_loss);
    out += ',' + format_double(r.val_loss);
    out += ',' + format_double(r.val_accuracy);
    out += ',' + format_double(r.learning_rate);
    out += ',' + format_double(r.seconds);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Cross-entropy with softmax in the stable log-sum-exp form. Returns the
/// loss and its gradient w.r.t. the logits: softmax(logits) - onehot(label).
inline std::pair<double, std::vector<double>> loss_softmax_xent(
    std::span<const double> logits, int label) {
  const int h = static_cast<int>(logits.size());
  if (label < 0 || label >= h)
    throw DomainError("loss_softmax_xent: label " + std::to_string(label) +
                      " out of range [0, " + std::to_string(h) + ")");
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - max_logit);
  const double log_sum_exp = max_logit + std::log(sum);
  std::vector<double> grad(h);
  for (int i = 0; i < h; ++i) grad[i] = std::exp(logits[i] - log_sum_exp);
  grad[label] -= 1.0;
  return {log_sum_exp - logits[label], std::move(grad)};
}

/// Squared error summed over outputs; gradient 2*(pred - target).
inline std::pair<double, std::vector<double>> loss_mse(std::span<const double> pred,
                                                       std::span<const double> target) {
  if (pred.size() != target.size()) throw DimensionError("loss_mse: size mismatch");
  double loss = 0.0;
  std::vector<double> grad(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred[i] - target[i];
    loss += diff * diff;
    grad[i] = 2.0 * diff;
  }
  return {loss, std::move(grad)};
}

struct PeriodicLoss {
  double value = 0.0;
  double d_f_x = 0.0;      // w.r.t. the model output at x
  double d_f_shift = 0.0;  // w.r.t. the model output at 2x + 6
};

/// (f(x) - y)^2 + max(0, |f(2x + 6)| - 100)^2: squared error plus a hinge
/// that punishes outputs beyond +-100 on the shifted input. At the hinge
/// boundary the subgradient 0 is used.
inline PeriodicLoss loss_periodic(double f_x, double y, double f_shift) {
  PeriodicLoss out;
  const double diff = f_x - y;
  out.value = diff * diff;
  out.d_f_x = 2.0 * diff;
  const double excess = std::abs(f_shift) - 100.0;
  if (excess > 0.0) {
    out.value += excess * excess;
    out.d_f_shift = 2.0 * excess * (f_shift > 0.0 ? 1.0 : -1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgd;
  MLayerParams slot;  // SGD velocity / RMSprop square accumulator
  long long step = 0;

  static OptimizerState zeros(OptimizerKind kind, const Dims& dims) {
    OptimizerState s;
    s.kind = kind;
    s.slot = MLayerParams::zeros(dims);
    return s;
  }
};

namespace detail {

template <typename F>
void zip_arrays(MLayerParams& a, MLayerParams& b, const MLayerParams& c, F&& f) {
  // Walks the three parameter sets in the same fixed order.
  std::vector<std::vector<double>*> as, bs;
  std::vector<const std::vector<double>*> cs;
  a.for_each_array([&as](std::vector<double>& v) { as.push_back(&v); });
  b.for_each_array([&bs](std::vector<double>& v) { bs.push_back(&v); });
  c.for_each_array([&cs](const std::vector<double>& v) { cs.push_back(&v); });
  for (std::size_t i = 0; i < as.size(); ++i) f(*as[i], *bs[i], *cs[i]);
}

}  // namespace detail

/// v <- momentum * v + g; theta <- theta - lr * v.
inline void sgd_step(MLayerParams& params, const Gradients& grads, OptimizerState& state,
                     double learning_rate, double momentum) {
  detail::zip_arrays(params, state.slot, grads,
                     [&](std::vector<double>& theta, std::vector<double>& vel,
                         const std::vector<double>& g) {
                       for (std::size_t i = 0; i < theta.size(); ++i) {
                         vel[i] = momentum * vel[i] + g[i];
                         theta[i] -= learning_rate * vel[i];
                       }
                     });
  ++state.step;
}

inline constexpr double kRmspropRho = 0.9;
inline constexpr double kRmspropEpsilon = 1e-7;

/// a <- rho * a + (1 - rho) * g^2; theta <- theta - lr_t * g / sqrt(a + eps)
/// with the per-step decay lr_t = lr / (1 + decay * t).
inline void rmsprop_step(MLayerParams& params, const Gradients& grads, OptimizerState& state,
                         double learning_rate, double decay) {
  const double lr_t = learning_rate / (1.0 + decay * static_cast<double>(state.step));
  detail::zip_arrays(params, state.slot, grads,
                     [&](std::vector<double>& theta, std::vector<double>& acc,
                         const std::vector<double>& g) {
                       for (std::size_t i = 0; i < theta.size(); ++i) {
                         acc[i] = kRmspropRho * acc[i] + (1.0 - kRmspropRho) * g[i] * g[i];
                         theta[i] -= lr_t * g[i] / std::sqrt(acc[i] + kRmspropEpsilon);
                       }
                     });
  ++state.step;
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct EvalResult {
  double loss = 0.0;                                            // mean per example
  double accuracy = std::numeric_limits<double>::quiet_NaN();   // classification only
  std::size_t count = 0;
};

namespace detail {

inline double shifted_input(double x) { return 2.0 * x + 6.0; }

/// Mean base loss (no activity term) and, for classification, accuracy.
inline EvalResult evaluate_subset(const MLayerParams& params, const Dataset& data,
                                  LossKind loss, const std::vector<std::size_t>& indices) {
  EvalResult r;
  r.count = indices.size();
  if (indices.empty()) return r;
  std::vector<double> x;
  std::size_t correct = 0;
  for (std::size_t i : indices) {
    data.example(i, x);
    const std::vector<double> out = forward_out(params, x);
    switch (loss) {
      case LossKind::kSoftmaxXent: {
        const int label = data.labels[i];
        r.loss += loss_softmax_xent(out, label).first;
        const int pred = static_cast<int>(std::max_element(out.begin(), out.end()) -
                                          out.begin());
        if (pred == label) ++correct;
        break;
      }
      case LossKind::kMse: {
        std::span<const double> target(&data.targets[i * data.target_dim],
                                       static_cast<std::size_t>(data.target_dim));
        r.loss += loss_mse(out, target).first;
        break;
      }
      case LossKind::kPeriodicPenalty: {
        const std::vector<double> xs = {shifted_input(x[0])};
        const double f_shift = forward_out(params, xs)[0];
        r.loss += loss_periodic(out[0], data.targets[i], f_shift).value;
        break;
      }
    }
  }
  r.loss /= static_cast<double>(indices.size());
  if (loss == LossKind::kSoftmaxXent)
    r.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  return r;
}

inline void accumulate(Gradients& sum, const Gradients& g) {
  zip_arrays(sum, sum, g,
             [](std::vector<double>& acc, std::vector<double>&, const std::vector<double>& v) {
               for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
             });
}

inline void scale(Gradients& g, double s) {
  g.for_each_array([s](std::vector<double>& a) {
    for (double& v : a) v *= s;
  });
}

}  // namespace detail

inline EvalResult evaluate(const MLayerParams& params, const Dataset& data, LossKind loss) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return detail::evaluate_subset(params, data, loss, all);
}

struct FitResult {
  MLayerParams best;
  Metrics metrics;
  OptimizerState optimizer;
};

/// Minibatch training. The dataset is split after a seeded shuffle when
/// validation_fraction > 0; the plateau schedule and early stopping count
/// full epochs without strict improvement of the validation metric
/// (accuracy for classification, loss otherwise); the parameters returned
/// are the ones that scored best on that metric.
MLAYER_NOINLINE inline FitResult fit(const MLayerParams& initial, const Dataset& data,
                                     const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw DomainError("fit: empty dataset");
  if (cfg.loss == LossKind::kSoftmaxXent && data.kind != TaskKind::kClassification)
    throw DomainError("fit: cross-entropy needs a classification dataset");
  if (cfg.loss != LossKind::kSoftmaxXent && data.kind != TaskKind::kRegression)
    throw DomainError("fit: regression loss needs a regression dataset");
  if (cfg.loss == LossKind::kPeriodicPenalty &&
      (initial.dims.p != 1 || initial.dims.h != 1))
    throw DomainError("fit: periodic penalty requires p = 1, h = 1");

  FitResult result;
  result.best = initial;
  result.optimizer = OptimizerState::zeros(cfg.optimizer, initial.dims);
  if (cfg.max_epochs == 0) return result;

  Rng rng(cfg.seed);
  std::vector<std::size_t> indices(data.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  std::vector<std::size_t> val_indices;
  std::vector<std::size_t> train_indices;
  if (cfg.validation_fraction > 0.0) {
    rng.shuffle(indices);
    const std::size_t n_val = static_cast<std::size_t>(
        cfg.validation_fraction * static_cast<double>(data.size()) + 0.5);
    val_indices.assign(indices.begin(), indices.begin() + n_val);
    train_indices.assign(indices.begin() + n_val, indices.end());
  } else {
    train_indices = indices;
  }
  if (train_indices.empty()) throw DomainError("fit: no training examples after split");

  MLayerParams params = initial;
  OptimizerState& opt = result.optimizer;
  const bool classification = cfg.loss == LossKind::kSoftmaxXent;
  const bool higher_is_better = classification && !val_indices.empty();
  double best_metric = higher_is_better ? -std::numeric_limits<double>::infinity()
                                        : std::numeric_limits<double>::infinity();
  double lr = cfg.learning_rate;
  int plateau_wait = 0;
  int early_wait = 0;

  std::vector<double> x, x_shift;
  Gradients batch_grad = MLayerParams::zeros(initial.dims);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(train_indices);
    double epoch_loss = 0.0;

    const std::size_t n_train = train_indices.size();
    int batch_index = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n_train, start + cfg.batch_size);
      const double batch_n = static_cast<double>(end - start);
      batch_grad.for_each_array([](std::vector<double>& a) {
        std::fill(a.begin(), a.end(), 0.0);
      });
      double batch_loss = 0.0;
      try {
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t i = train_indices[k];
          data.example(i, x);
          const Forward fwd = forward(params, x);
          double example_loss = 0.0;
          switch (cfg.loss) {
            case LossKind::kSoftmaxXent: {
              auto [l, g_out] = loss_softmax_xent(fwd.out, data.labels[i]);
              example_loss = l;
              detail::accumulate(batch_grad, backward(params, fwd, x, g_out,
                                                      cfg.activity_lambda));
              break;
            }
            case LossKind::kMse: {
              std::span<const double> target(&data.targets[i * data.target_dim],
                                             static_cast<std::size_t>(data.target_dim));
              auto [l, g_out] = loss_mse(fwd.out, target);
              example_loss = l;
              detail::accumulate(batch_grad, backward(params, fwd, x, g_out,
                                                      cfg.activity_lambda));
              break;
            }
            case LossKind::kPeriodicPenalty: {
              x_shift = {detail::shifted_input(x[0])};
              const Forward fwd_shift = forward(params, x_shift);
              const PeriodicLoss pl =
                  loss_periodic(fwd.out[0], data.targets[i], fwd_shift.out[0]);
              example_loss = pl.value;
              const std::vector<double> g_x = {pl.d_f_x};
              const std::vector<double> g_s = {pl.d_f_shift};
              detail::accumulate(batch_grad,
                                 backward(params, fwd, x, g_x, cfg.activity_lambda));
              detail::accumulate(batch_grad, backward(params, fwd_shift, x_shift, g_s,
                                                      cfg.activity_lambda));
              if (cfg.activity_lambda != 0.0) {
                const auto& e = fwd_shift.exp_m;
                example_loss +=
                    cfg.activity_lambda * e.frobenius_norm() * e.frobenius_norm();
              }
              break;
            }
          }
          if (cfg.activity_lambda != 0.0) {
            const double f = fwd.exp_m.frobenius_norm();
            example_loss += cfg.activity_lambda * f * f;
          }
          batch_loss += example_loss;
        }
      } catch (const DomainError& e) {
        // Overflowing parameters poison the exponential before the loss
        // itself turns NaN; report it as divergence either way.
        throw TrainingDiverged(epoch, batch_index, e.what());
      }
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged(epoch, batch_index, "non-finite loss");
      epoch_loss += batch_loss;
      detail::scale(batch_grad, 1.0 / batch_n);
      if (cfg.optimizer == OptimizerKind::kSgd)
        sgd_step(params, batch_grad, opt, lr, cfg.momentum);
      else
        rmsprop_step(params, batch_grad, opt, lr, cfg.decay);
    }
    epoch_loss /= static_cast<double>(n_train);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss;
    rec.learning_rate = lr;
    double metric = epoch_loss;
    if (!val_indices.empty()) {
      const EvalResult val = detail::evaluate_subset(params, data, cfg.loss, val_indices);
      rec.val_loss = val.loss;
      rec.val_accuracy = val.accuracy;
      metric = classification ? val.accuracy : val.loss;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.epochs.push_back(rec);

    const bool improved = higher_is_better ? metric > best_metric : metric < best_metric;
    if (improved) {
      best_metric = metric;
      result.best = params;
      plateau_wait = 0;
      early_wait = 0;
    } else {
      ++plateau_wait;
      ++early_wait;
      if (cfg.plateau && plateau_wait >= cfg.plateau->patience_epochs) {
        lr *= cfg.plateau->factor;
        plateau_wait = 0;
      }
      if (cfg.early_stop_patience && early_wait >= *cfg.early_stop_patience) break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: the model JSON plus the optimizer-state arrays.
// ---------------------------------------------------------------------------

inline std::string checkpoint_to_json(const MLayerParams& params, const OptimizerState& state) {
  std::string model = model_to_json(params);
  // Splice the optimizer object before the final "}\n".
  std::string opt = ",\"optimizer_state\":{\"kind\":\"";
  opt += state.kind == OptimizerKind::kSgd ? "sgd" : "rmsprop";
  opt += "\",\"step\":" + std::to_string(state.step) + ",\"slot\":";
  detail::JsonWriter w;
  w.begin_object();
  const Dims& d = params.dims;
  detail::write_tensor(w, "U", {d.d, d.p}, state.slot.u.data());
  detail::write_tensor(w, "u0", {d.d}, state.slot.u0);
  std::vector<double> t_flat;
  for (const auto& m : state.slot.t) t_flat.insert(t_flat.end(), m.data().begin(), m.data().end());
  detail::write_tensor(w, "T", {d.d, d.n, d.n}, t_flat);
  detail::write_tensor(w, "B", {d.n, d.n}, state.slot.b.data());
  std::vector<double> s_flat;
  for (const auto& m : state.slot.s) s_flat.insert(s_flat.end(), m.data().begin(), m.data().end());
  detail::write_tensor(w, "S", {d.h, d.n, d.n}, s_flat);
  detail::write_tensor(w, "V", {d.h}, state.slot.v);
  w.end_object();
  opt += w.str() + "}";
  const std::size_t close = model.rfind('}');
  model.insert(close, opt);
  return model;
}

inline void save_checkpoint(const MLayerParams& params, const OptimizerState& state,
                            const std::filesystem::path& path) {
  atomic_write(path, checkpoint_to_json(params, state));
}

inline std::pair<MLayerParams, OptimizerState> load_checkpoint(
    const std::filesystem::path& path) {
  const std::string text = read_file(path);
  MLayerParams params = model_from_json(text);
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("optimizer_state"))
    throw FormatError("checkpoint: missing optimizer_state", 0);
  const auto& o = j.at("optimizer_state");
  OptimizerState state;
  state.kind = o.at("kind").get<std::string>() == "sgd" ? OptimizerKind::kSgd
                                                        : OptimizerKind::kRmsprop;
  state.step = o.at("step").get<long long>();
  const Dims& d = params.dims;
  const auto& slot = o.at("slot");
  state.slot = MLayerParams::zeros(d);
  state.slot.u = Matrix(d.d, d.p, detail::read_tensor(slot, "U", {d.d, d.p}));
  state.slot.u0 = detail::read_tensor(slot, "u0", {d.d});
  std::vector<double> t_flat = detail::read_tensor(slot, "T", {d.d, d.n, d.n});
  const std::size_t nn = static_cast<std::size_t>(d.n) * d.n;
  for (int a = 0; a < d.d; ++a)
    state.slot.t[a] = Matrix(
        d.n, d.n, std::vector<double>(t_flat.begin() + a * nn, t_flat.begin() + (a + 1) * nn));
  state.slot.b = Matrix(d.n, d.n, detail::read_tensor(slot, "B", {d.n, d.n}));
  std::vector<double> s_flat = detail::read_tensor(slot, "S", {d.h, d.n, d.n});
  for (int m = 0; m < d.h; ++m)
    state.slot.s[m] = Matrix(
        d.n, d.n, std::vector<double>(s_flat.begin() + m * nn, s_flat.begin() + (m + 1) * nn));
  state.slot.v = detail::read_tensor(slot, "V", {d.h});
  return {std::move(params), std::move(state)};
}

}  // namespace mlayer
