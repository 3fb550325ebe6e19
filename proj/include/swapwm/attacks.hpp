#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swapwm/verification.hpp"
#include "swapwm/watermark.hpp"

namespace swapwm {

struct AttackResult {
  std::string name;
  nlohmann::json parameters = nlohmann::json::object();
  double wsr_before = 0.0, wsr_after = 0.0;
  double acc_base_before = 0.0, acc_base_after = 0.0;
  double acc_novel_before = 0.0, acc_novel_after = 0.0;
  double p_before = 1.0, p_after = 1.0;
  // False-claim attacks only.
  std::vector<double> reference_asr;
  double victim_asr = 0.0;
  double baseline_asr = 0.0;
  // Overwrite only: success rate of the newly embedded set.
  double new_wsr = 0.0;
  std::string timestamp_note;  // placeholder for third-party arbitration; never enforced
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"name", name},
            {"parameters", parameters},
            {"wsr_before", wsr_before},
            {"wsr_after", wsr_after},
            {"acc_base_before", acc_base_before},
            {"acc_base_after", acc_base_after},
            {"acc_novel_before", acc_novel_before},
            {"acc_novel_after", acc_novel_after},
            {"p_before", p_before},
            {"p_after", p_after},
            {"reference_asr", reference_asr},
            {"victim_asr", victim_asr},
            {"baseline_asr", baseline_asr},
            {"new_wsr", new_wsr},
            {"timestamp_note", timestamp_note},
            {"seed", seed}};
  }
};

// Cross-entropy-only descent on the adversary's clean data.
inline PromptParams finetune_attack(const DualEncoderModel& m, const PromptParams& p,
                                    const std::vector<LabeledSample>& clean, const std::vector<std::string>& classes,
                                    int epochs, double lr, std::uint64_t seed, TrainingLog* log = nullptr) {
  require(epochs >= 0 && lr >= 0.0, "epochs and lr must be non-negative");
  if (epochs == 0 || lr == 0.0) return p;
  auto [out, l] = descend_swap_objective(m, p, make_batch(m, clean, classes), classes, {}, 0.5, 0.0, epochs, lr,
                                         1 << 30, seed, "finetune");
  if (log) *log = std::move(l);
  return out;
}

// Descent on L_f - lambda * L_o with full knowledge of T.
inline PromptParams unlearn_attack(const DualEncoderModel& m, const PromptParams& p,
                                   const std::vector<LabeledSample>& clean, const std::vector<std::string>& classes,
                                   const std::vector<std::string>& T, double epsilon, double lambda_, int epochs,
                                   double lr, std::uint64_t seed, TrainingLog* log = nullptr) {
  require(T.size() >= 2, "unlearning needs the verification classes");
  require(epochs >= 0 && lr >= 0.0 && lambda_ >= 0.0, "epochs, lr and lambda must be non-negative");
  if (epochs == 0 || lr == 0.0) return p;
  auto [out, l] = descend_swap_objective(m, p, make_batch(m, clean, classes), classes, T, epsilon, -lambda_, epochs, lr,
                                         1 << 30, seed, "unlearn");
  if (log) *log = std::move(l);
  return out;
}

// Embeds a second watermark T' on top of the first.
inline PromptParams overwrite_attack(const DualEncoderModel& m, const PromptParams& p,
                                     const std::vector<LabeledSample>& clean, const std::vector<std::string>& classes,
                                     const std::vector<std::string>& original_T, const SwapConfig& cfg,
                                     TrainingLog* log = nullptr) {
  std::set<std::string> orig(original_T.begin(), original_T.end());
  for (const auto& t : cfg.verification_classes)
    if (orig.count(t)) throw ContractViolation("overwrite set shares token '" + t + "' with the original watermark");
  if (cfg.epochs == 0) return p;
  auto [out, l] = embed_swap(m, p, clean, classes, cfg);
  if (log) *log = std::move(l);
  return out;
}

namespace detail {

inline void prune_block(double* data, Eigen::Index size, double fraction) {
  const auto k = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(size)));
  if (k <= 0) return;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(size));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return std::abs(data[a]) < std::abs(data[b]); });
  for (Eigen::Index i = 0; i < std::min(k, size); ++i) data[idx[static_cast<std::size_t>(i)]] = 0.0;
}

}  // namespace detail

// Zeroes the round(fraction * size) smallest-magnitude entries of each prompt block; ties go to the lower index.
inline PromptParams prune_attack(const PromptParams& p, double fraction) {
  require(fraction >= 0.0 && fraction <= 1.0, "prune fraction must lie in [0,1]");
  PromptParams out = p;
  detail::prune_block(out.visual.data(), out.visual.size(), fraction);
  detail::prune_block(out.text.data(), out.text.size(), fraction);
  for (auto& [k, v] : out.context) detail::prune_block(v.data(), v.size(), fraction);
  return out;
}

struct PgdConfig {
  double epsilon_inf = 0.0;
  double step_size = 0.0;
  int steps = 40;
  bool targeted = false;
  double lower = -INFINITY;  // valid input range
  double upper = INFINITY;

  // epsilon = 8/255 of the input range, step = epsilon / 4.
  static PgdConfig scaled_default(double lo, double hi, int steps = 40) {
    PgdConfig c;
    c.epsilon_inf = 8.0 / 255.0 * (hi - lo);
    c.step_size = c.epsilon_inf / 4.0;
    c.steps = steps;
    c.lower = lo;
    c.upper = hi;
    return c;
  }

  void validate() const {
    require(epsilon_inf >= 0.0 && step_size >= 0.0, "PGD budget and step must be non-negative");
    require(steps >= 1, "PGD needs at least one step");
    require(lower <= upper, "PGD input bounds are inverted");
  }
};

enum class PgdLoss { CrossEntropy, Order };

// One white-box reference: prompts plus the objective weights applied to it.
struct PgdReference {
  const PromptParams* prompts = nullptr;
  double ce_weight = 0.0;     // > 0 descends CE (keeps labels); < 0 ascends it (misclassification)
  double order_weight = 0.0;  // > 0 descends the order loss on T
};

struct PgdOutcome {
  Eigen::MatrixXd X;
  std::vector<double> objective;  // best-so-far mean objective, index 0 = clean input
};

// Signed-gradient descent on sum_r [ce_weight * CE + order_weight * L_o]; each sample keeps its best iterate,
// so the recorded objective never worsens.
inline PgdOutcome pgd_minimize(const DualEncoderModel& m, const std::vector<PgdReference>& refs,
                               const Eigen::MatrixXd& X0, const std::vector<int>& labels,
                               const std::vector<std::string>& classes, const std::vector<std::string>& T,
                               double order_epsilon, const PgdConfig& cfg) {
  cfg.validate();
  require(!refs.empty(), "PGD needs at least one reference");
  auto eval = [&](const Eigen::MatrixXd& X, bool grad, Eigen::MatrixXd* dX) {
    Eigen::VectorXd per = Eigen::VectorXd::Zero(X.cols());
    if (dX) dX->setZero(X.rows(), X.cols());
    for (const auto& r : refs) {
      auto ev = evaluate_objective(m, *r.prompts, X, labels, r.ce_weight != 0.0 ? classes : std::vector<std::string>{},
                                   r.order_weight != 0.0 ? T : std::vector<std::string>{}, order_epsilon, r.ce_weight,
                                   r.order_weight, false, grad);
      if (r.ce_weight != 0.0) per += r.ce_weight * ev.ce;
      if (r.order_weight != 0.0) per += r.order_weight * ev.order;
      if (grad) *dX += ev.dX;
    }
    return per;
  };

  PgdOutcome out;
  Eigen::MatrixXd X = X0;
  out.X = X0;
  Eigen::VectorXd best = eval(X0, false, nullptr);
  out.objective.push_back(best.mean());
  Eigen::MatrixXd dX;
  for (int s = 0; s < cfg.steps; ++s) {
    eval(X, true, &dX);
    if (!dX.allFinite()) throw DivergenceError("PGD: non-finite input gradient at step " + std::to_string(s));
    X -= cfg.step_size * dX.unaryExpr([](double g) { return static_cast<double>((g > 0) - (g < 0)); });
    X = X.cwiseMin((X0.array() + cfg.epsilon_inf).matrix()).cwiseMax((X0.array() - cfg.epsilon_inf).matrix());
    X = X.cwiseMax(cfg.lower).cwiseMin(cfg.upper);
    Eigen::VectorXd cur = eval(X, false, nullptr);
    for (Eigen::Index i = 0; i < X.cols(); ++i)
      if (cur(i) < best(i)) {
        best(i) = cur(i);
        out.X.col(i) = X.col(i);
      }
    out.objective.push_back(best.mean());
  }
  return out;
}

// Single-reference false claim: CE ascent (misclassify) or order-loss descent toward T's ordering.
inline PgdOutcome pgd_false_claim(const DualEncoderModel& m, const PromptParams& reference, const Eigen::MatrixXd& X0,
                                  const std::vector<int>& labels, const std::vector<std::string>& classes,
                                  const std::vector<std::string>& T, PgdLoss loss, double order_epsilon,
                                  const PgdConfig& cfg) {
  PgdReference r{&reference, 0.0, 0.0};
  if (loss == PgdLoss::CrossEntropy)
    r.ce_weight = -1.0;
  else
    r.order_weight = 1.0;
  return pgd_minimize(m, {r}, X0, labels, classes, T, order_epsilon, cfg);
}

// Adaptive false claim: joint descent on CE + lambda * L_o over both references.
inline PgdOutcome adaptive_false_claim(const DualEncoderModel& m, const PromptParams& ref_a, const PromptParams& ref_b,
                                       const Eigen::MatrixXd& X0, const std::vector<int>& labels,
                                       const std::vector<std::string>& classes, const std::vector<std::string>& T,
                                       double lambda_, double order_epsilon, const PgdConfig& cfg) {
  return pgd_minimize(m, {{&ref_a, 1.0, lambda_}, {&ref_b, 1.0, lambda_}}, X0, labels, classes, T, order_epsilon, cfg);
}

inline double asr(const std::vector<bool>& success) {
  require(!success.empty(), "asr needs a non-empty sample set");
  return static_cast<double>(std::count(success.begin(), success.end(), true)) / static_cast<double>(success.size());
}

inline std::vector<bool> misclassified(const SuspiciousOracle& oracle, const Eigen::MatrixXd& X,
                                       const std::vector<int>& labels, const std::vector<std::string>& classes) {
  require(static_cast<Eigen::Index>(labels.size()) == X.cols(), "one label per sample required");
  Eigen::MatrixXd P = oracle.query_batch(X, classes);
  std::vector<bool> out;
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    Eigen::Index k;
    P.row(i).maxCoeff(&k);
    out.push_back(k != labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

inline std::vector<bool> sequence_matches(const SuspiciousOracle& oracle, const Eigen::MatrixXd& X,
                                          const std::vector<std::string>& candidates,
                                          const std::vector<std::string>& T) {
  auto d = rank_distances(oracle, X, candidates, T, identity_ranks(T.size()));
  std::vector<bool> out;
  for (double v : d) out.push_back(v == 0.0);
  return out;
}

}  // namespace swapwm
