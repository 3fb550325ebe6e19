#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "swapwm/synth_data.hpp"
#include "swapwm/toy_clip.hpp"

namespace swapwm {

// Inputs as columns plus label indices into an ordered class list.
struct LabeledBatch {
  Eigen::MatrixXd X;
  std::vector<int> labels;
};

inline LabeledBatch make_batch(const DualEncoderModel& m, const std::vector<LabeledSample>& samples,
                               const std::vector<std::string>& classes) {
  LabeledBatch b;
  b.X = stack_inputs(samples);
  for (const auto& s : samples) {
    require(s.y >= 0 && s.y < static_cast<int>(m.vocab.original.size()), "label outside original classes");
    auto it = std::find(classes.begin(), classes.end(), m.vocab.original[static_cast<std::size_t>(s.y)]);
    require(it != classes.end(), "label '" + m.vocab.original[static_cast<std::size_t>(s.y)] + "' not in class list");
    b.labels.push_back(static_cast<int>(it - classes.begin()));
  }
  return b;
}

inline std::vector<std::string> class_names(const DualEncoderModel& m, const std::vector<int>& ids) {
  std::vector<std::string> out;
  for (int k : ids) out.push_back(m.vocab.original.at(static_cast<std::size_t>(k)));
  return out;
}

inline std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Per-sample pieces of  w_f * CE(classes) + w_o * hinge-order(T).
struct ObjectiveEval {
  Eigen::VectorXd ce;     // per-sample cross-entropy over `classes`
  Eigen::VectorXd order;  // per-sample sum of active hinges over T
  double value = 0.0;     // mean of w_f*ce + w_o*order
  PromptParams grad;      // d value / d prompts (if requested)
  Eigen::MatrixXd dX;     // d value / d inputs, per column (if requested)
  Eigen::MatrixXd Z;      // logits over classes ++ T
};

inline ObjectiveEval evaluate_objective(const DualEncoderModel& m, const PromptParams& p, const Eigen::MatrixXd& X,
                                        const std::vector<int>& labels, const std::vector<std::string>& classes,
                                        const std::vector<std::string>& T, double epsilon, double w_f, double w_o,
                                        bool want_prompt_grad, bool want_input_grad) {
  const Eigen::Index N = X.cols();
  const Eigen::Index C = static_cast<Eigen::Index>(classes.size());
  const Eigen::Index n = static_cast<Eigen::Index>(T.size());
  require(N > 0, "empty batch");
  require(w_f == 0.0 || static_cast<Eigen::Index>(labels.size()) == N, "one label per sample required");
  for (const auto& t : T)
    require(std::find(classes.begin(), classes.end(), t) == classes.end(),
            "verification token also listed as a task class: " + t);

  std::vector<std::string> all = concat(classes, T);
  ObjectiveEval ev;
  LogitTape tape;
  if (all.empty()) return ev;
  tape = forward_logits(m, p, X, all);
  ev.Z = tape.Z;
  ev.ce = Eigen::VectorXd::Zero(N);
  ev.order = Eigen::VectorXd::Zero(N);
  Eigen::MatrixXd dZ = Eigen::MatrixXd::Zero(N, C + n);
  const double inv_n = 1.0 / static_cast<double>(N);

  if (C > 0 && w_f != 0.0) {
    Eigen::MatrixXd P = softmax_rows(tape.Z.leftCols(C));
    for (Eigen::Index i = 0; i < N; ++i) {
      int y = labels[static_cast<std::size_t>(i)];
      require(y >= 0 && y < C, "label index out of range");
      double zmax = tape.Z.row(i).head(C).maxCoeff();
      double lse = zmax + std::log((tape.Z.row(i).head(C).array() - zmax).exp().sum());
      ev.ce(i) = lse - tape.Z(i, y);
      dZ.row(i).head(C) = w_f * inv_n * P.row(i);
      dZ(i, y) -= w_f * inv_n;
    }
  }
  if (n >= 2) {
    for (Eigen::Index i = 0; i < N; ++i) {
      for (Eigen::Index j = 0; j + 1 < n; ++j) {
        double h = epsilon - (tape.Z(i, C + j + 1) - tape.Z(i, C + j));
        if (h > 0.0) {
          ev.order(i) += h;
          dZ(i, C + j + 1) -= w_o * inv_n;
          dZ(i, C + j) += w_o * inv_n;
        }
      }
    }
  }
  ev.value = (w_f * ev.ce + w_o * ev.order).mean();
  if (!std::isfinite(ev.value)) throw DivergenceError("non-finite objective");
  if (want_prompt_grad || want_input_grad) {
    Backprop bp = backward_logits(m, p, tape, dZ, want_input_grad);
    if (want_prompt_grad) ev.grad = std::move(bp.grad);
    if (want_input_grad) ev.dX = std::move(bp.dX);
  }
  return ev;
}

struct SwapConfig {
  double epsilon = 0.5;
  double lambda_ = 1.0;
  std::vector<std::string> verification_classes;
  int epochs = 200;
  double learning_rate = 0.05;
  int batch_size = 1024;  // >= training-set size means full-batch descent
  std::uint64_t seed = 0;

  void validate() const {
    require(verification_classes.size() >= 2, "need at least two verification classes");
    require(epsilon > 0.0, "epsilon must be positive");
    require(lambda_ >= 0.0, "lambda must be non-negative");
    require(epochs >= 0 && batch_size >= 1, "epochs must be >= 0 and batch_size >= 1");
    require(learning_rate >= 0.0, "learning_rate must be non-negative");
  }
};

// Mean cross-entropy over the task classes only.
inline double functionality_loss(const DualEncoderModel& m, const PromptParams& p, const LabeledBatch& b,
                                 const std::vector<std::string>& classes) {
  return evaluate_objective(m, p, b.X, b.labels, classes, {}, 0.0, 1.0, 0.0, false, false).ce.mean();
}

// Mean over samples of sum_i max(0, eps - (z_{i+1} - z_i)) on raw verification logits.
inline double order_loss(const DualEncoderModel& m, const PromptParams& p, const Eigen::MatrixXd& X,
                         const std::vector<std::string>& T, double epsilon) {
  require(T.size() >= 2, "order loss needs at least two verification classes");
  return evaluate_objective(m, p, X, {}, {}, T, epsilon, 0.0, 1.0, false, false).order.mean();
}

inline double order_loss_from_logits(const Eigen::MatrixXd& Zt, double epsilon) {
  require(Zt.cols() >= 2, "order loss needs at least two verification classes");
  double total = 0.0;
  for (Eigen::Index i = 0; i < Zt.rows(); ++i)
    for (Eigen::Index j = 0; j + 1 < Zt.cols(); ++j) total += std::max(0.0, epsilon - (Zt(i, j + 1) - Zt(i, j)));
  return total / static_cast<double>(Zt.rows());
}

inline double total_loss(const DualEncoderModel& m, const PromptParams& p, const LabeledBatch& b,
                         const std::vector<std::string>& classes, const SwapConfig& cfg, PromptParams* grad = nullptr) {
  auto ev = evaluate_objective(m, p, b.X, b.labels, classes, cfg.verification_classes, cfg.epsilon, 1.0, cfg.lambda_,
                               grad != nullptr, false);
  if (grad) *grad = std::move(ev.grad);
  return ev.value;
}

struct EpochRecord {
  int epoch = 0;
  double functionality = 0.0;  // L_f (clean part for the backdoor baseline)
  double order = 0.0;          // L_o, or poison cross-entropy for the backdoor baseline
  double total = 0.0;
  double base_accuracy = 0.0;
  double success_rate = 0.0;   // order satisfied exactly (SWAP) or triggered -> target (BWAP)
};

struct TrainingLog {
  std::string method;
  std::vector<EpochRecord> epochs;
  bool converged = true;
  double final_order_satisfied = 0.0;

  void write_jsonl(const std::string& path) const {
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write training log: " + path);
    for (const auto& r : epochs) {
      nlohmann::json j = {{"method", method},          {"epoch", r.epoch},
                          {"L_f", r.functionality},    {"L_o", r.order},
                          {"total", r.total},          {"base_accuracy", r.base_accuracy},
                          {"success_rate", r.success_rate}};
      out << j.dump() << "\n";
    }
    nlohmann::json summary = {{"method", method}, {"converged", converged},
                              {"final_order_satisfied", final_order_satisfied}};
    out << summary.dump() << "\n";
  }
};

namespace detail {

inline std::vector<std::vector<Eigen::Index>> minibatches(Eigen::Index n, int batch_size, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (batch_size < n) rng.shuffle(idx);
  std::vector<std::vector<Eigen::Index>> out;
  for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(batch_size))
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + static_cast<std::size_t>(batch_size))));
  return out;
}

inline LabeledBatch select(const LabeledBatch& b, const std::vector<Eigen::Index>& idx) {
  LabeledBatch s;
  s.X.resize(b.X.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    s.X.col(static_cast<Eigen::Index>(i)) = b.X.col(idx[i]);
    if (!b.labels.empty()) s.labels.push_back(b.labels[static_cast<std::size_t>(idx[i])]);
  }
  return s;
}

inline double argmax_accuracy(const Eigen::MatrixXd& Z, const std::vector<int>& labels, Eigen::Index cols) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    Eigen::Index k;
    Z.row(i).head(cols).maxCoeff(&k);
    hit += (k == labels[static_cast<std::size_t>(i)]);
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

inline double ordered_fraction(const Eigen::MatrixXd& Zt) {
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < Zt.rows(); ++i) {
    bool ok = true;
    for (Eigen::Index j = 0; j + 1 < Zt.cols(); ++j) ok = ok && Zt(i, j + 1) > Zt(i, j);
    hit += ok;
  }
  return static_cast<double>(hit) / static_cast<double>(Zt.rows());
}

}  // namespace detail

// Gradient descent on L_f + lambda * L_o (lambda may be negative for the unlearning attack).
inline std::pair<PromptParams, TrainingLog> descend_swap_objective(const DualEncoderModel& m, PromptParams p,
                                                                   const LabeledBatch& data,
                                                                   const std::vector<std::string>& classes,
                                                                   const std::vector<std::string>& T, double epsilon,
                                                                   double lambda_, int epochs, double lr, int batch_size,
                                                                   std::uint64_t seed, const std::string& method) {
  TrainingLog log;
  log.method = method;
  Rng rng(seed);
  const Eigen::Index C = static_cast<Eigen::Index>(classes.size());
  for (int e = 0; e < epochs; ++e) {
    for (const auto& idx : detail::minibatches(data.X.cols(), batch_size, rng)) {
      LabeledBatch mb = detail::select(data, idx);
      auto ev = evaluate_objective(m, p, mb.X, mb.labels, classes, T, epsilon, 1.0, lambda_, true, false);
      if (!ev.grad.all_finite()) throw DivergenceError(method + ": non-finite gradient at epoch " + std::to_string(e));
      p.axpy(-lr, ev.grad);
    }
    auto ev = evaluate_objective(m, p, data.X, data.labels, classes, T, epsilon, 1.0, lambda_, false, false);
    EpochRecord r;
    r.epoch = e + 1;
    r.functionality = ev.ce.mean();
    r.order = ev.order.mean();
    r.total = ev.value;
    r.base_accuracy = detail::argmax_accuracy(ev.Z, data.labels, C);
    r.success_rate = T.size() >= 2 ? detail::ordered_fraction(ev.Z.rightCols(static_cast<Eigen::Index>(T.size()))) : 0.0;
    if (!std::isfinite(r.total)) throw DivergenceError(method + ": non-finite loss at epoch " + std::to_string(e + 1));
    log.epochs.push_back(r);
  }
  if (T.size() >= 2) {
    auto ev = evaluate_objective(m, p, data.X, data.labels, classes, T, epsilon, 1.0, lambda_, false, false);
    std::size_t zero = 0;
    for (Eigen::Index i = 0; i < ev.order.size(); ++i) zero += (ev.order(i) == 0.0);
    log.final_order_satisfied = static_cast<double>(zero) / static_cast<double>(ev.order.size());
    log.converged = log.final_order_satisfied >= 0.95;
  }
  return {std::move(p), std::move(log)};
}

inline std::pair<PromptParams, TrainingLog> embed_swap(const DualEncoderModel& m, const PromptParams& init,
                                                       const std::vector<LabeledSample>& train,
                                                       const std::vector<std::string>& classes, const SwapConfig& cfg) {
  cfg.validate();
  LabeledBatch data = make_batch(m, train, classes);
  return descend_swap_objective(m, init, data, classes, cfg.verification_classes, cfg.epsilon, cfg.lambda_, cfg.epochs,
                                cfg.learning_rate, cfg.batch_size, cfg.seed, "swap");
}

struct BwapConfig {
  Eigen::VectorXd trigger_pattern;
  Eigen::VectorXd trigger_mask;
  std::string target_class = "Target";
  double poison_rate = 0.1;
  int epochs = 1000;
  double learning_rate = 0.05;
  // Step multiplier for the target's class-specific context vector.
  double context_lr_scale = 20.0;
  std::uint64_t seed = 0;

  // Coordinate patch: the last `width` inputs are replaced by `value`.
  static BwapConfig patch(int input_dim, int width, double value) {
    require(width >= 1 && width <= input_dim, "trigger width must lie in [1, input_dim]");
    BwapConfig c;
    c.trigger_mask = Eigen::VectorXd::Zero(input_dim);
    c.trigger_mask.tail(width).setOnes();
    c.trigger_pattern = Eigen::VectorXd::Constant(input_dim, value);
    return c;
  }

  void validate(int input_dim) const {
    require(trigger_pattern.size() == input_dim && trigger_mask.size() == input_dim,
            "trigger pattern and mask must have input_dim entries");
    require((trigger_mask.array() >= 0.0).all() && (trigger_mask.array() <= 1.0).all(), "trigger mask must lie in [0,1]");
    require(poison_rate >= 0.0 && poison_rate <= 1.0, "poison_rate must lie in [0,1]");
    require(epochs >= 0 && learning_rate >= 0.0, "epochs and learning_rate must be non-negative");
  }
};

// G(x) = (1 - alpha) * x + alpha * t, elementwise.
inline Eigen::VectorXd apply_trigger(const Eigen::VectorXd& x, const BwapConfig& cfg) {
  require(x.size() == cfg.trigger_mask.size() && x.size() == cfg.trigger_pattern.size(), "trigger shape mismatch");
  return ((1.0 - cfg.trigger_mask.array()) * x.array() + cfg.trigger_mask.array() * cfg.trigger_pattern.array()).matrix();
}

inline Eigen::MatrixXd apply_trigger_batch(const Eigen::MatrixXd& X, const BwapConfig& cfg) {
  Eigen::MatrixXd out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) out.col(i) = apply_trigger(X.col(i), cfg);
  return out;
}

struct PoisonedSet {
  std::vector<LabeledSample> samples;
  std::vector<bool> poisoned;  // poisoned samples carry the target label
};

inline PoisonedSet make_poisoned_dataset(const std::vector<LabeledSample>& train, const BwapConfig& cfg) {
  require(cfg.poison_rate > 0.0 && cfg.poison_rate <= 1.0, "poison_rate must lie in (0,1]");
  const std::size_t N = train.size();
  const std::size_t k = static_cast<std::size_t>(std::llround(cfg.poison_rate * static_cast<double>(N)));
  std::vector<std::size_t> idx(N);
  for (std::size_t i = 0; i < N; ++i) idx[i] = i;
  Rng rng(cfg.seed);
  rng.shuffle(idx);
  PoisonedSet out;
  out.samples = train;
  out.poisoned.assign(N, false);
  for (std::size_t j = 0; j < k; ++j) {
    out.poisoned[idx[j]] = true;
    out.samples[idx[j]].x = apply_trigger(train[idx[j]].x, cfg);
  }
  return out;
}

// Cross-entropy tuning over classes ++ {target} on the partly poisoned set.
inline std::pair<PromptParams, TrainingLog> embed_bwap(const DualEncoderModel& m, PromptParams p,
                                                       const std::vector<LabeledSample>& train,
                                                       const std::vector<std::string>& classes, const BwapConfig& cfg) {
  cfg.validate(m.config.input_dim);
  require(m.vocab.contains(cfg.target_class), "target class not registered: " + cfg.target_class);
  PoisonedSet mixed;
  if (cfg.poison_rate > 0.0) {
    mixed = make_poisoned_dataset(train, cfg);
  } else {
    mixed.samples = train;
    mixed.poisoned.assign(train.size(), false);
  }
  std::vector<std::string> all = concat(classes, {cfg.target_class});
  LabeledBatch data = make_batch(m, mixed.samples, classes);
  const int target = static_cast<int>(classes.size());
  for (std::size_t i = 0; i < mixed.poisoned.size(); ++i)
    if (mixed.poisoned[i]) data.labels[i] = target;
  if (!p.context.count(cfg.target_class)) p.context[cfg.target_class] = Eigen::VectorXd::Zero(m.config.token_dim);

  TrainingLog log;
  log.method = "bwap";
  for (int e = 0; e < cfg.epochs; ++e) {
    auto ev = evaluate_objective(m, p, data.X, data.labels, all, {}, 0.0, 1.0, 0.0, true, false);
    if (!ev.grad.all_finite()) throw DivergenceError("bwap: non-finite gradient at epoch " + std::to_string(e));
    p.visual -= cfg.learning_rate * ev.grad.visual;
    p.text -= cfg.learning_rate * ev.grad.text;
    for (auto& [k, v] : p.context) v -= cfg.learning_rate * cfg.context_lr_scale * ev.grad.context.at(k);

    auto after = evaluate_objective(m, p, data.X, data.labels, all, {}, 0.0, 1.0, 0.0, false, false);
    EpochRecord r;
    r.epoch = e + 1;
    double clean_loss = 0.0, poison_loss = 0.0;
    std::size_t n_clean = 0, n_poison = 0, clean_hit = 0, poison_hit = 0;
    for (Eigen::Index i = 0; i < after.Z.rows(); ++i) {
      Eigen::Index k;
      after.Z.row(i).maxCoeff(&k);
      if (mixed.poisoned[static_cast<std::size_t>(i)]) {
        ++n_poison;
        poison_loss += after.ce(i);
        poison_hit += (k == target);
      } else {
        ++n_clean;
        clean_loss += after.ce(i);
        clean_hit += (k == data.labels[static_cast<std::size_t>(i)]);
      }
    }
    r.functionality = n_clean ? clean_loss / static_cast<double>(n_clean) : 0.0;
    r.order = n_poison ? poison_loss / static_cast<double>(n_poison) : 0.0;
    r.total = after.value;
    r.base_accuracy = n_clean ? static_cast<double>(clean_hit) / static_cast<double>(n_clean) : 0.0;
    r.success_rate = n_poison ? static_cast<double>(poison_hit) / static_cast<double>(n_poison) : 0.0;
    if (!std::isfinite(r.total)) throw DivergenceError("bwap: non-finite loss at epoch " + std::to_string(e + 1));
    log.epochs.push_back(r);
  }
  return {std::move(p), std::move(log)};
}

}  // namespace swapwm
