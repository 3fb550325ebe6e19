#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swapwm/rng.hpp"
#include "swapwm/stats.hpp"
#include "swapwm/toy_clip.hpp"

namespace swapwm {

// Black-box access: (samples as columns, ordered class list) -> [N x C] probabilities.
class SuspiciousOracle {
 public:
  virtual ~SuspiciousOracle() = default;
  virtual Eigen::MatrixXd query_batch(const Eigen::MatrixXd& X, const std::vector<std::string>& classes) const = 0;

  ProbabilityVector query(const Eigen::VectorXd& x, const std::vector<std::string>& classes) const {
    Eigen::MatrixXd P = query_batch(x, classes);
    ProbabilityVector out;
    out.class_ids = classes;
    out.values.assign(P.data(), P.data() + P.size());
    return out;
  }
};

class ModelOracle : public SuspiciousOracle {
 public:
  // Holds references: both arguments must outlive the oracle.
  ModelOracle(const DualEncoderModel& m, const PromptParams& p) : model_(&m), prompts_(&p) {}
  ModelOracle(const DualEncoderModel&, PromptParams&&) = delete;
  ModelOracle(DualEncoderModel&&, const PromptParams&) = delete;
  Eigen::MatrixXd query_batch(const Eigen::MatrixXd& X, const std::vector<std::string>& classes) const override {
    return softmax_rows(batch_logits(*model_, *prompts_, X, classes));
  }

 private:
  const DualEncoderModel* model_;
  const PromptParams* prompts_;
};

// Ranks a keyed-random ordering of the last n queried classes; deterministic in (seed, sample bytes).
class RandomOrderOracle : public SuspiciousOracle {
 public:
  RandomOrderOracle(std::uint64_t seed, std::size_t n_tail) : seed_(seed), n_tail_(n_tail) {}
  Eigen::MatrixXd query_batch(const Eigen::MatrixXd& X, const std::vector<std::string>& classes) const override {
    const Eigen::Index C = static_cast<Eigen::Index>(classes.size());
    const Eigen::Index n = std::min<Eigen::Index>(static_cast<Eigen::Index>(n_tail_), C);
    Eigen::MatrixXd P(X.cols(), C);
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
      std::uint64_t h = seed_;
      for (Eigen::Index j = 0; j < X.rows(); ++j) {
        std::uint64_t bits;
        double v = X(j, i);
        std::memcpy(&bits, &v, sizeof bits);
        h = splitmix64(h ^ bits);
      }
      Rng rng(h);
      std::vector<double> w(static_cast<std::size_t>(n));
      for (Eigen::Index k = 0; k < n; ++k) w[static_cast<std::size_t>(k)] = static_cast<double>(k + 1);
      rng.shuffle(w);
      double head = static_cast<double>(C - n);
      double total = head + std::accumulate(w.begin(), w.end(), 0.0);
      for (Eigen::Index k = 0; k < C - n; ++k) P(i, k) = 1.0 / total;
      for (Eigen::Index k = 0; k < n; ++k) P(i, C - n + k) = w[static_cast<std::size_t>(k)] / total;
    }
    return P;
  }

 private:
  std::uint64_t seed_;
  std::size_t n_tail_;
};

namespace detail {

inline void check_probabilities(const Eigen::MatrixXd& P, Eigen::Index rows, Eigen::Index cols) {
  if (P.rows() != rows || P.cols() != cols)
    throw ProtocolError("oracle returned a " + std::to_string(P.rows()) + "x" + std::to_string(P.cols()) +
                        " response, expected " + std::to_string(rows) + "x" + std::to_string(cols));
  if (!P.allFinite() || (P.array() < 0.0).any()) throw ProtocolError("oracle returned non-finite or negative values");
  for (Eigen::Index i = 0; i < rows; ++i)
    if (std::abs(P.row(i).sum() - 1.0) > 1e-6) throw ProtocolError("oracle response does not sum to 1");
}

}  // namespace detail

// Probabilities of T for each sample, queried together with `candidates`; slice is not renormalized.
inline Eigen::MatrixXd extract_sequences(const SuspiciousOracle& oracle, const Eigen::MatrixXd& X,
                                         const std::vector<std::string>& candidates,
                                         const std::vector<std::string>& T) {
  require(!T.empty(), "verification class list must be non-empty");
  std::vector<std::string> all = candidates;
  all.insert(all.end(), T.begin(), T.end());
  Eigen::MatrixXd P = oracle.query_batch(X, all);
  detail::check_probabilities(P, X.cols(), static_cast<Eigen::Index>(all.size()));
  return P.rightCols(static_cast<Eigen::Index>(T.size()));
}

inline std::vector<double> extract_sequence(const SuspiciousOracle& oracle, const Eigen::VectorXd& x,
                                            const std::vector<std::string>& candidates,
                                            const std::vector<std::string>& T) {
  Eigen::MatrixXd s = extract_sequences(oracle, x, candidates, T);
  return {s.data(), s.data() + s.size()};
}

using Ranks = std::vector<int>;  // ranks[i] is the 1-based ascending rank of class i

inline Ranks rank_permutation(const std::vector<double>& seq) {
  require(!seq.empty(), "cannot rank an empty sequence");
  for (double v : seq) require(std::isfinite(v), "cannot rank a non-finite value");
  std::vector<int> order(seq.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return seq[static_cast<std::size_t>(a)] < seq[static_cast<std::size_t>(b)]; });
  Ranks r(seq.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) r[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos) + 1;
  return r;
}

inline Ranks identity_ranks(std::size_t n) {
  Ranks r(n);
  std::iota(r.begin(), r.end(), 1);
  return r;
}

inline int rank_distance(const Ranks& a, const Ranks& b) {
  if (a.size() != b.size()) throw ContractViolation("rank_distance: length mismatch");
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

inline int max_rank_distance(int n) { return n * n / 2; }

struct AuditReport {
  std::string method;               // "swap" or "bwap"
  std::vector<double> statistics;   // rank distances (swap) or paired differences (bwap), last repeat
  double mean = 0.0;
  double sd = 0.0;
  double t_statistic = 0.0;
  double p_value = 1.0;             // arithmetic mean over repeats
  bool underflow = false;
  bool verdict = false;             // p_value <= alpha
  std::vector<double> repeat_p_values;
  double wsr = 0.0;
  int m = 0;
  int n = 0;
  double tau = 0.0;
  double alpha = 0.0;

  nlohmann::json to_json() const {
    return {{"method", method}, {"statistics", statistics}, {"mean", mean}, {"sd", sd},
            {"t_statistic", std::isfinite(t_statistic) ? nlohmann::json(t_statistic) : nlohmann::json(t_statistic > 0 ? "inf" : "-inf")},
            {"p_value", p_value}, {"underflow", underflow}, {"verdict", verdict},
            {"repeat_p_values", repeat_p_values}, {"wsr", wsr}, {"m", m}, {"n", n}, {"tau", tau}, {"alpha", alpha}};
  }
};

inline std::vector<double> rank_distances(const SuspiciousOracle& oracle, const Eigen::MatrixXd& X,
                                          const std::vector<std::string>& candidates,
                                          const std::vector<std::string>& T, const Ranks& reference) {
  require(reference.size() == T.size(), "reference permutation length must equal |T|");
  Eigen::MatrixXd S = extract_sequences(oracle, X, candidates, T);
  std::vector<double> d(static_cast<std::size_t>(S.rows()));
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(S.cols()));
    for (Eigen::Index j = 0; j < S.cols(); ++j) row[static_cast<std::size_t>(j)] = S(i, j);
    d[static_cast<std::size_t>(i)] = rank_distance(rank_permutation(row), reference);
  }
  return d;
}

inline AuditReport report_from_test(const std::string& method, const std::vector<double>& stats, const TTestResult& r,
                                    int n, double tau, double alpha) {
  AuditReport a;
  a.method = method;
  a.statistics = stats;
  a.mean = r.mean;
  a.sd = r.sd;
  a.t_statistic = r.t;
  a.p_value = r.p;
  a.underflow = r.underflow;
  a.repeat_p_values = {r.p};
  a.m = static_cast<int>(stats.size());
  a.n = n;
  a.tau = tau;
  a.alpha = alpha;
  a.verdict = a.p_value <= alpha;
  return a;
}

// Lower-tail test of H0: mean distance = tau against H1: mean distance < tau.
inline AuditReport swap_test(const std::vector<double>& distances, int n, double tau, double alpha) {
  require(distances.size() >= 2, "an audit needs m >= 2 samples");
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
  AuditReport a = report_from_test("swap", distances, one_sample_t_test(distances, tau, Tail::Lower), n, tau, alpha);
  std::size_t hit = 0;
  for (double d : distances) hit += (d == 0.0);
  a.wsr = static_cast<double>(hit) / static_cast<double>(distances.size());
  return a;
}

inline AuditReport swap_verify(const SuspiciousOracle& oracle, const Eigen::MatrixXd& X,
                               const std::vector<std::string>& candidates, const std::vector<std::string>& T,
                               const Ranks& reference, double tau, double alpha) {
  require(X.cols() >= 2, "an audit needs m >= 2 samples");
  return swap_test(rank_distances(oracle, X, candidates, T, reference), static_cast<int>(T.size()), tau, alpha);
}

inline double wsr(const SuspiciousOracle& oracle, const Eigen::MatrixXd& X, const std::vector<std::string>& candidates,
                  const std::vector<std::string>& T, const Ranks& reference) {
  require(X.cols() > 0, "wsr needs a non-empty sample set");
  auto d = rank_distances(oracle, X, candidates, T, reference);
  return static_cast<double>(std::count(d.begin(), d.end(), 0.0)) / static_cast<double>(d.size());
}

namespace detail {

inline Eigen::MatrixXd draw_columns(const Eigen::MatrixXd& pool, int m, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pool.cols()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  rng.shuffle(idx);
  Eigen::MatrixXd X(pool.rows(), m);
  for (int i = 0; i < m; ++i) X.col(i) = pool.col(idx[static_cast<std::size_t>(i)]);
  return X;
}

}  // namespace detail

struct AuditConfig {
  int m = 100;
  double tau = 0.5;
  double alpha = 0.01;
  int repeats = 3;
  std::uint64_t seed = 0;
};

// Repeats the audit on seeded m-subsets of the pool and averages the p-values; WSR is taken over the full pool.
inline AuditReport swap_audit(const SuspiciousOracle& oracle, const Eigen::MatrixXd& pool,
                              const std::vector<std::string>& candidates, const std::vector<std::string>& T,
                              const AuditConfig& cfg) {
  require(cfg.repeats >= 1, "repeats must be >= 1");
  require(cfg.m >= 2 && cfg.m <= pool.cols(), "audit size m must lie in [2, pool size]");
  const Ranks ref = identity_ranks(T.size());
  Rng rng(cfg.seed);
  AuditReport out;
  std::vector<double> ps;
  bool underflow = true;
  for (int r = 0; r < cfg.repeats; ++r) {
    out = swap_verify(oracle, detail::draw_columns(pool, cfg.m, rng), candidates, T, ref, cfg.tau, cfg.alpha);
    ps.push_back(out.p_value);
    underflow = underflow && out.underflow;
  }
  out.repeat_p_values = ps;
  out.p_value = std::accumulate(ps.begin(), ps.end(), 0.0) / static_cast<double>(ps.size());
  out.underflow = underflow;
  out.verdict = out.p_value <= cfg.alpha;
  out.wsr = wsr(oracle, pool, candidates, T, ref);
  return out;
}

// Upper-tail paired test of H0: mean(P_w - P_b) = tau against H1: mean(P_w - P_b) > tau.
inline AuditReport bwap_verify(const SuspiciousOracle& oracle, const Eigen::MatrixXd& benign,
                               const Eigen::MatrixXd& triggered, const std::vector<std::string>& candidates,
                               const std::string& target, double tau, double alpha) {
  if (benign.cols() != triggered.cols() || benign.rows() != triggered.rows())
    throw ContractViolation("bwap_verify: benign and triggered sets must be paired");
  require(benign.cols() >= 2, "an audit needs m >= 2 samples");
  Eigen::MatrixXd Pb = extract_sequences(oracle, benign, candidates, {target});
  Eigen::MatrixXd Pw = extract_sequences(oracle, triggered, candidates, {target});
  std::vector<double> delta(static_cast<std::size_t>(benign.cols()));
  for (Eigen::Index i = 0; i < benign.cols(); ++i) delta[static_cast<std::size_t>(i)] = Pw(i, 0) - Pb(i, 0);
  AuditReport a = report_from_test("bwap", delta, one_sample_t_test(delta, tau, Tail::Upper), 1, tau, alpha);
  Eigen::MatrixXd full = oracle.query_batch(triggered, [&] {
    auto all = candidates;
    all.push_back(target);
    return all;
  }());
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < full.rows(); ++i) {
    Eigen::Index k;
    full.row(i).maxCoeff(&k);
    hit += (k == full.cols() - 1);
  }
  a.wsr = static_cast<double>(hit) / static_cast<double>(full.rows());
  return a;
}

struct TheoremBoundInputs {
  int m = 100;
  int n = 4;
  double tau = 0.5;
  double alpha = 0.01;

  int a() const { return 2 * ((n * n) / 4); }
};

struct TheoremBound {
  double d_star = 0.0;
  double a = 0.0;
  double t_alpha = 0.0;  // magnitude of the lower alpha-quantile, m - 1 dof
  double delta = 0.0;
  double residual = 0.0;  // f(d_star)
};

// f(d) = [(m-1) + t^2] d^2 - [2(m-1)tau + a t^2] d + (m-1) tau^2; rejection holds while f(mean distance) > 0
// and the mean distance lies below the smaller root.
inline double bound_quadratic(double d, int m, double a, double t_alpha, double tau) {
  const double k = m - 1.0, t2 = t_alpha * t_alpha;
  return (k + t2) * d * d - (2.0 * k * tau + a * t2) * d + k * tau * tau;
}

inline TheoremBound theorem_bound(const TheoremBoundInputs& in) {
  require(in.m >= 2, "theorem bound needs m >= 2");
  require(in.n >= 2, "theorem bound needs n >= 2");
  require(in.alpha > 0.0 && in.alpha < 1.0, "alpha must lie in (0,1)");
  TheoremBound b;
  b.a = in.a();
  require(in.tau > 0.0 && in.tau < b.a, "threshold must lie in (0, a)");
  b.t_alpha = std::abs(student_t_quantile(in.alpha, in.m - 1));
  const double k = in.m - 1.0, t2 = b.t_alpha * b.t_alpha;
  b.delta = b.a * b.a * t2 * t2 + 4.0 * k * t2 * in.tau * (b.a - in.tau);
  b.d_star = (2.0 * k * in.tau + b.a * t2 - std::sqrt(b.delta)) / (2.0 * (k + t2));
  b.residual = bound_quadratic(b.d_star, in.m, b.a, b.t_alpha, in.tau);
  return b;
}

enum class DistanceModel {
  QuasiBernoulli,     // 0 w.p. p, else uniform over {2, 4, ..., 2J}, J = floor(n^2/4)
  RandomPermutation,  // 0 w.p. p, else the distance of a uniformly random permutation to the identity
  Fixed,              // every distance equals `fixed_distance`
};

struct MonteCarloConfig {
  double p_success = 0.0;
  int m = 100;
  int n = 4;
  double tau = 0.5;
  double alpha = 0.01;
  int trials = 10000;
  DistanceModel model = DistanceModel::QuasiBernoulli;
  double fixed_distance = 0.0;
  std::uint64_t seed = 0;
};

inline double monte_carlo_validate(const MonteCarloConfig& c) {
  require(c.p_success >= 0.0 && c.p_success <= 1.0, "p_success must lie in [0,1]");
  require(c.trials >= 1000, "trials must be >= 1000");
  require(c.m >= 2 && c.n >= 2, "need m >= 2 and n >= 2");
  Rng rng(c.seed);
  const int J = (c.n * c.n) / 4;
  const Ranks id = identity_ranks(static_cast<std::size_t>(c.n));
  std::vector<double> d(static_cast<std::size_t>(c.m));
  int rejections = 0;
  for (int t = 0; t < c.trials; ++t) {
    for (auto& v : d) {
      if (c.model == DistanceModel::Fixed) {
        v = c.fixed_distance;
      } else if (rng.uniform() < c.p_success) {
        v = 0.0;
      } else if (c.model == DistanceModel::QuasiBernoulli) {
        v = 2.0 * static_cast<double>(1 + rng.index(static_cast<std::size_t>(J)));
      } else {
        Ranks p = id;
        rng.shuffle(p);
        v = rank_distance(p, id);
      }
    }
    rejections += one_sample_t_test(d, c.tau, Tail::Lower).p <= c.alpha;
  }
  return static_cast<double>(rejections) / static_cast<double>(c.trials);
}

}  // namespace swapwm
