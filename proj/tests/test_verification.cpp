#include <algorithm>
#include <numeric>

#include "support.hpp"

using namespace swapwm;
using namespace swapwm::testing;
using Catch::Approx;

namespace {

double t_pdf(double x, double nu) {
  return std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) / std::sqrt(nu * M_PI) *
         std::pow(1 + x * x / nu, -(nu + 1) / 2);
}

// Independent CDF: composite Simpson on [0, |t|] plus symmetry.
double simpson_t_cdf(double t, double nu) {
  const int n = 20000;
  const double h = std::abs(t) / n;
  double s = t_pdf(0, nu) + t_pdf(std::abs(t), nu);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * t_pdf(i * h, nu);
  const double half = s * h / 3;
  return t >= 0 ? 0.5 + half : 0.5 - half;
}

// Smaller root of the rejection quadratic by bisection on [0, tau].
double bisect_d_star(int m, double a, double t, double tau) {
  double lo = 0.0, hi = tau;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (bound_quadratic(mid, m, a, t, tau) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<std::vector<int>> all_permutations(int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 1);
  std::vector<std::vector<int>> out;
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

// Probabilities whose T slice (last n columns) follows the given per-sample strengths.
TableOracle tail_oracle(std::function<std::vector<double>(const Eigen::VectorXd&)> tail) {
  return TableOracle([tail](const Eigen::VectorXd& x, std::size_t C) {
    auto t = tail(x);
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Ones(static_cast<Eigen::Index>(C));
    for (std::size_t j = 0; j < t.size(); ++j) r(static_cast<Eigen::Index>(C - t.size() + j)) = t[j];
    return Eigen::RowVectorXd(r / r.sum());
  });
}

}  // namespace

TEST_CASE("rank permutation: ascending ranks, stable ties") {
  CHECK(rank_permutation({0.1, 0.3, 0.2, 0.4}) == Ranks{1, 3, 2, 4});
  CHECK(rank_permutation({0.4, 0.3, 0.2, 0.1}) == Ranks{4, 3, 2, 1});
  CHECK(rank_permutation({0.5, 0.5}) == Ranks{1, 2});
  CHECK(rank_permutation({0.2, 0.1, 0.2}) == Ranks{2, 1, 3});
  CHECK_THROWS_AS(rank_permutation({}), ContractViolation);
  CHECK_THROWS_AS(rank_permutation({0.1, NAN}), ContractViolation);
}

TEST_CASE("rank distance: worked examples and length mismatch") {
  CHECK(rank_distance({1, 3, 2, 4}, identity_ranks(4)) == 2);
  CHECK(rank_distance({4, 3, 2, 1}, identity_ranks(4)) == 8);
  CHECK(rank_distance(identity_ranks(5), identity_ranks(5)) == 0);
  CHECK_THROWS_AS(rank_distance({1, 2}, {1, 2, 3}), ContractViolation);
}

TEST_CASE("footrule over all permutations: metric, even, max floor(n^2/2), mean (n^2-1)/3") {
  for (int n = 2; n <= 6; ++n) {
    auto perms = all_permutations(n);
    int worst = 0;
    double sum = 0.0;
    for (const auto& p : perms) {
      int d = rank_distance(p, identity_ranks(static_cast<std::size_t>(n)));
      CHECK(d % 2 == 0);
      worst = std::max(worst, d);
      sum += d;
    }
    CHECK(worst == max_rank_distance(n));
    CHECK(worst == (n * n) / 2);
    CHECK(sum / static_cast<double>(perms.size()) == Approx((n * n - 1) / 3.0));
  }
  auto perms = all_permutations(4);
  for (const auto& a : perms)
    for (const auto& b : perms) {
      CHECK(rank_distance(a, b) == rank_distance(b, a));
      CHECK((rank_distance(a, b) == 0) == (a == b));
      for (std::size_t k = 0; k < perms.size(); k += 5)
        CHECK(rank_distance(a, b) <= rank_distance(a, perms[k]) + rank_distance(perms[k], b));
    }
}

TEST_CASE("t quantiles match published table values") {
  CHECK(std::abs(student_t_quantile(0.01, 99)) == Approx(2.364606).margin(5e-6));
  CHECK(std::abs(student_t_quantile(0.05, 99)) == Approx(1.660391).margin(5e-6));
  CHECK(std::abs(student_t_quantile(0.01, 19)) == Approx(2.539483).margin(5e-6));
  CHECK(student_t_quantile(0.5, 10) == Approx(0.0).margin(1e-12));
}

TEST_CASE("t-test statistic and p-value agree with a hand computation and a Simpson-integrated CDF") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    int m = 5 + static_cast<int>(rng.index(60));
    std::vector<double> xs;
    for (int i = 0; i < m; ++i) xs.push_back(0.4 + 0.5 * rng.normal());
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / m;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    double sd = std::sqrt(ss / (m - 1));
    double t = (mean - 0.5) / (sd / std::sqrt(static_cast<double>(m)));
    auto lower = one_sample_t_test(xs, 0.5, Tail::Lower);
    auto upper = one_sample_t_test(xs, 0.5, Tail::Upper);
    CHECK(lower.t == Approx(t).epsilon(1e-12));
    CHECK(lower.dof == m - 1);
    CHECK(lower.p == Approx(simpson_t_cdf(t, m - 1)).margin(1e-9));
    CHECK(upper.p == Approx(1.0 - lower.p).margin(1e-12));
  }
}

TEST_CASE("degenerate spread: p is 0 strictly below tau and 1 otherwise") {
  std::vector<double> zeros(100, 0.0), twos(100, 2.0), at(100, 0.5);
  auto r = one_sample_t_test(zeros, 0.5, Tail::Lower);
  CHECK(r.p == 0.0);
  CHECK(r.t == -INFINITY);
  CHECK(one_sample_t_test(twos, 0.5, Tail::Lower).p == 1.0);
  CHECK(one_sample_t_test(at, 0.5, Tail::Lower).p == 1.0);
  CHECK(one_sample_t_test(twos, 0.5, Tail::Upper).p == 0.0);
  CHECK_THROWS_AS(one_sample_t_test({1.0}, 0.5, Tail::Lower), ContractViolation);
}

TEST_CASE("p-values below the floor are reported as zero with the underflow flag") {
  std::vector<double> xs(1000, 0.0);
  xs[0] = 2.0;
  auto r = one_sample_t_test(xs, 0.5, Tail::Lower);
  CHECK(r.p == 0.0);
  CHECK(r.underflow);
  xs.assign(100, 0.0);
  xs[0] = 2.0;
  xs[1] = 4.0;
  r = one_sample_t_test(xs, 0.5, Tail::Lower);
  CHECK(r.p > 0.0);
  CHECK_FALSE(r.underflow);
}

TEST_CASE("theorem bound: worked value, bisection oracle, residual zero") {
  TheoremBound b = theorem_bound({100, 4, 0.5, 0.01});
  CHECK(b.a == 8.0);
  CHECK(b.t_alpha == Approx(2.364606).margin(5e-6));
  CHECK(b.d_star == Approx(0.2018).margin(1e-4));
  CHECK(b.residual == Approx(0.0).margin(1e-9));
  for (int m : {20, 50, 100, 400})
    for (int n : {2, 3, 4, 6})
      for (double tau : {0.25, 0.5, 1.0}) {
        TheoremBoundInputs in{m, n, tau, 0.01};
        TheoremBound bb = theorem_bound(in);
        CHECK(bb.d_star == Approx(bisect_d_star(m, bb.a, bb.t_alpha, tau)).margin(1e-9));
        CHECK(bb.d_star > 0.0);
        CHECK(bb.d_star < tau);
      }
  CHECK(theorem_bound({100, 4, 0.5, 0.01}).d_star < theorem_bound({400, 4, 0.5, 0.01}).d_star);
  // A zero quantile collapses the quadratic to (m-1)(d - tau)^2.
  CHECK(theorem_bound({100, 4, 0.5, 0.5}).d_star == Approx(0.5).margin(1e-9));
  CHECK_THROWS_AS(theorem_bound({1, 4, 0.5, 0.01}), ContractViolation);
  CHECK_THROWS_AS(theorem_bound({100, 4, 0.0, 0.01}), ContractViolation);
}

TEST_CASE("theorem bound is tight for the worst-case two-point distances") {
  // k samples at the maximum distance a, the rest at 0: variance is maximal for the mean.
  for (int m : {50, 100, 200})
    for (int n : {3, 4, 5}) {
      TheoremBound b = theorem_bound({m, n, 0.5, 0.01});
      for (int k = 1; k < m; ++k) {
        std::vector<double> d(static_cast<std::size_t>(m), 0.0);
        for (int i = 0; i < k; ++i) d[static_cast<std::size_t>(i)] = b.a;
        double mean = k * b.a / m;
        if (std::abs(mean - b.d_star) < 1e-9) continue;
        bool rejected = one_sample_t_test(d, 0.5, Tail::Lower).p <= 0.01;
        CHECK(rejected == (mean < b.d_star));
      }
    }
}

TEST_CASE("any distance vector with mean below the bound is rejected") {
  TheoremBound b = theorem_bound({100, 4, 0.5, 0.01});
  Rng rng(31);
  int tested = 0;
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> d(100, 0.0);
    double sum = 0.0;
    for (auto& v : d) {
      if (rng.uniform() < 0.03) v = 2.0 * static_cast<double>(1 + rng.index(4));
      sum += v;
    }
    if (sum / 100 >= b.d_star) continue;
    ++tested;
    CHECK(one_sample_t_test(d, 0.5, Tail::Lower).p <= 0.01);
  }
  CHECK(tested > 100);
}

TEST_CASE("Monte Carlo validator: extremes and fixed-distance model") {
  MonteCarloConfig c;
  c.trials = 1000;
  c.p_success = 1.0;
  CHECK(monte_carlo_validate(c) == 1.0);
  c.p_success = 0.0;
  CHECK(monte_carlo_validate(c) == 0.0);
  c.model = DistanceModel::RandomPermutation;
  CHECK(monte_carlo_validate(c) == 0.0);
  c.model = DistanceModel::Fixed;
  c.fixed_distance = 0.45;
  CHECK(monte_carlo_validate(c) == 1.0);
  c.fixed_distance = 0.55;
  CHECK(monte_carlo_validate(c) == 0.0);
  c.trials = 999;
  CHECK_THROWS_AS(monte_carlo_validate(c), ContractViolation);
}

TEST_CASE("Monte Carlo rejection rate is monotone in the success probability") {
  double prev = -1.0;
  for (double p : {0.80, 0.90, 0.95, 0.98, 1.0}) {
    MonteCarloConfig c;
    c.p_success = p;
    c.trials = 2000;
    c.seed = 4;
    double r = monte_carlo_validate(c);
    CHECK(r >= prev);
    prev = r;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("sequence extraction returns the unnormalized T slice and checks the oracle protocol") {
  auto o = tail_oracle([](const Eigen::VectorXd&) { return std::vector<double>{1, 2, 3, 4}; });
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(3, 2);
  auto s = extract_sequence(o, X.col(0), {"a", "b"}, {"t1", "t2", "t3", "t4"});
  REQUIRE(s.size() == 4);
  CHECK(s[0] == Approx(1.0 / 12));
  CHECK(s[3] == Approx(4.0 / 12));
  CHECK_THROWS_AS(extract_sequences(o, X, {"a"}, {}), ContractViolation);

  TableOracle bad([](const Eigen::VectorXd&, std::size_t C) {
    return Eigen::RowVectorXd(Eigen::RowVectorXd::Constant(static_cast<Eigen::Index>(C), 0.5));
  });
  CHECK_THROWS_AS(extract_sequences(bad, X, {"a", "b"}, {"t1", "t2"}), ProtocolError);
  class Short : public SuspiciousOracle {
   public:
    Eigen::MatrixXd query_batch(const Eigen::MatrixXd& X, const std::vector<std::string>&) const override {
      return Eigen::MatrixXd::Constant(X.cols(), 1, 1.0);
    }
  } short_oracle;
  CHECK_THROWS_AS(extract_sequences(short_oracle, X, {"a"}, {"t1", "t2"}), ProtocolError);
}

TEST_CASE("SWAP verification: ordered oracle detected, reversed oracle not") {
  Rng rng(5);
  Eigen::MatrixXd X = rng.normal_matrix(3, 100);
  const std::vector<std::string> T{"t1", "t2", "t3", "t4"};
  auto ordered = tail_oracle([](const Eigen::VectorXd&) { return std::vector<double>{1, 2, 3, 4}; });
  auto reversed = tail_oracle([](const Eigen::VectorXd&) { return std::vector<double>{4, 3, 2, 1}; });
  auto yes = swap_verify(ordered, X, {"a", "b"}, T, identity_ranks(4), 0.5, 0.01);
  CHECK(yes.verdict);
  CHECK(yes.p_value == 0.0);
  CHECK(yes.wsr == 1.0);
  CHECK(yes.mean == 0.0);
  auto no = swap_verify(reversed, X, {"a", "b"}, T, identity_ranks(4), 0.5, 0.01);
  CHECK_FALSE(no.verdict);
  CHECK(no.p_value == 1.0);
  CHECK(no.mean == 8.0);
  CHECK_THROWS_AS(swap_verify(ordered, X, {"a"}, T, identity_ranks(3), 0.5, 0.01), ContractViolation);
  CHECK(yes.to_json()["t_statistic"] == "-inf");
}

TEST_CASE("keyed random oracle: deterministic, valid, mean footrule near (n^2-1)/3") {
  RandomOrderOracle o(17, 4);
  Rng rng(6);
  Eigen::MatrixXd X = rng.normal_matrix(5, 3000);
  std::vector<std::string> cands{"a", "b", "c"}, T{"t1", "t2", "t3", "t4"};
  Eigen::MatrixXd P = o.query_batch(X, concat(cands, T));
  CHECK(P == o.query_batch(X, concat(cands, T)));
  for (Eigen::Index i = 0; i < P.rows(); ++i) CHECK(P.row(i).sum() == Approx(1.0));
  auto d = rank_distances(o, X, cands, T, identity_ranks(4));
  double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  CHECK(mean == Approx(5.0).margin(0.2));
  double hits = static_cast<double>(std::count(d.begin(), d.end(), 0.0)) / static_cast<double>(d.size());
  CHECK(hits == Approx(1.0 / 24).margin(0.015));
}

TEST_CASE("audit repeats average p-values and take WSR over the whole pool") {
  RandomOrderOracle o(3, 4);
  Rng rng(7);
  Eigen::MatrixXd pool = rng.normal_matrix(4, 300);
  AuditConfig c;
  c.seed = 11;
  auto r = swap_audit(o, pool, {"a", "b"}, {"t1", "t2", "t3", "t4"}, c);
  REQUIRE(r.repeat_p_values.size() == 3);
  CHECK(r.p_value == Approx((r.repeat_p_values[0] + r.repeat_p_values[1] + r.repeat_p_values[2]) / 3));
  CHECK(r.wsr == Approx(wsr(o, pool, {"a", "b"}, {"t1", "t2", "t3", "t4"}, identity_ranks(4))));
  CHECK_FALSE(r.verdict);
  c.m = 301;
  CHECK_THROWS_AS(swap_audit(o, pool, {"a", "b"}, {"t1", "t2", "t3", "t4"}, c), ContractViolation);
}

TEST_CASE("BWAP paired test: trigger-responsive oracle detected, inert oracle not") {
  Rng rng(8);
  Eigen::MatrixXd benign = rng.normal_matrix(4, 50);
  BwapConfig cfg = BwapConfig::patch(4, 1, 4.0);
  Eigen::MatrixXd triggered = apply_trigger_batch(benign, cfg);
  auto responsive = tail_oracle([](const Eigen::VectorXd& x) {
    return std::vector<double>{x(3) == 4.0 ? 18.0 : 0.1};
  });
  auto r = bwap_verify(responsive, benign, triggered, {"a", "b"}, "Target", 0.2, 0.01);
  CHECK(r.verdict);
  CHECK(r.wsr == 1.0);
  CHECK(r.mean == Approx(0.9 - 0.1 / 2.1));
  auto inert = tail_oracle([](const Eigen::VectorXd&) { return std::vector<double>{1.0}; });
  auto n = bwap_verify(inert, benign, triggered, {"a", "b"}, "Target", 0.2, 0.01);
  CHECK_FALSE(n.verdict);
  CHECK(n.p_value == 1.0);
  CHECK_THROWS_AS(bwap_verify(inert, benign, triggered.leftCols(10), {"a"}, "Target", 0.2, 0.01),
                  ContractViolation);
}
