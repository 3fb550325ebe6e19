// Acceptance checks: one PASS/FAIL line per criterion with the measured values and pinned tolerances.
// Usage: acceptance [--strict] [--seed N] [--report path]
// Without --strict the exit code only reflects crashes; failing criteria are reported, not hidden.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "swapwm/harness.hpp"

using namespace swapwm;

namespace {

struct Line {
  int id;
  bool pass;
  std::string text;
};

std::vector<Line> lines;

void report(int id, bool pass, const std::string& text) {
  lines.push_back({id, pass, text});
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, text.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Exact two-sided 99% binomial acceptance region [lo, hi] for counts out of n at rate p.
std::pair<int, int> binomial_region(int n, double p, double level) {
  std::vector<double> pmf(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k)
    pmf[static_cast<std::size_t>(k)] =
        std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                 (n - k) * std::log1p(-p));
  const double tail = (1.0 - level) / 2.0;
  int lo = 0, hi = n;
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    acc += pmf[static_cast<std::size_t>(k)];
    if (acc > tail) {
      lo = k;
      break;
    }
  }
  acc = 0.0;
  for (int k = n; k >= 0; --k) {
    acc += pmf[static_cast<std::size_t>(k)];
    if (acc > tail) {
      hi = k;
      break;
    }
  }
  return {lo, hi};
}

void criteria_from_record(const ResultRecord& r, const ExperimentConfig& cfg, double swap_seconds) {
  if (!r.failed_stage.empty()) {
    for (int id : {1, 2, 3, 7}) report(id, false, "scenario failed at stage " + r.failed_stage + ": " + r.error);
    return;
  }
  const double alpha = cfg.audit_alpha;
  {
    const double dbase = std::abs(r.watermarked.acc_base - r.baseline.acc_base);
    const double dnovel = std::abs(r.watermarked.acc_novel - r.baseline.acc_novel);
    const int K = cfg.data.num_classes;
    const int pool = cfg.data.samples_per_class * (K - static_cast<int>(std::lround(cfg.base_fraction * K)));
    bool pass = r.watermarked.wsr >= 0.95 && r.audit_watermarked.p_value <= 0.01 && dbase <= 0.02 &&
                dnovel <= 0.02 && swap_seconds <= 120.0;
    report(1, pass,
           fmt("WSR=%.3f (>=0.95 on %d novel samples), p=%.3g (<=0.01), |dACC base|=%.3f |dACC novel|=%.3f "
               "(<=0.02 vs lambda=0), SWAP stage runtime %.1fs (<=120s)",
               r.watermarked.wsr, pool, r.audit_watermarked.p_value, dbase, dnovel, swap_seconds));
  }
  {
    auto [lo, hi] = binomial_region(100, 1.0 / 24.0, 0.99);
    const double wlo = std::max(0.0, lo / 100.0), whi = std::min(0.12, hi / 100.0);
    const auto& ip = r.audit_independent_prompt;
    const auto& ic = r.audit_independent_classes;
    bool pass = ip.wsr >= wlo && ip.wsr <= whi && ic.wsr >= wlo && ic.wsr <= whi && ip.p_value > 0.05 &&
                ic.p_value > 0.05;
    report(2, pass,
           fmt("independent prompt WSR=%.3f p=%.3g; independent classes WSR=%.3f p=%.3g; "
               "need WSR in [%.2f, %.2f] (99%% binomial region of 1/24 at m=100, capped at 0.12) and p>0.05",
               ip.wsr, ip.p_value, ic.wsr, ic.p_value, wlo, whi));
  }
  {
    bool pass = std::abs(r.h_swap) <= 0.02 && r.h_bwap >= 0.5;
    report(3, pass, fmt("H(SWAP)=%.4f (|H|<=0.02), H(BWAP, triggered)=%.4f (>=0.5)", r.h_swap, r.h_bwap));
  }
  {
    const AttackResult* ft = r.attack("finetune");
    const AttackResult* un = r.attack("unlearn");
    const AttackResult* ow = r.attack("overwrite");
    const AttackResult* po = r.attack("pgd-order");
    const AttackResult* ad = r.attack("adaptive");
    const Curve* pr = r.curve("prune");
    if (!ft || !un || !ow || !po || !ad || !pr) {
      report(7, false, "attack results missing from the record");
      return;
    }
    bool c_ft = ft->wsr_after >= 0.90;
    bool c_un = un->wsr_after >= 0.90 && un->p_after <= alpha;
    bool c_ow = ow->wsr_after >= 0.95;
    bool c_pgd = po->victim_asr <= 0.20;
    bool c_ad = ad->reference_asr.size() == 2 && ad->reference_asr[0] >= 0.80 && ad->reference_asr[1] >= 0.80;
    bool c_pr = true;
    std::string prune_detail;
    const double acc0 = pr->acc_novel.front();
    for (std::size_t i = 0; i < pr->x.size(); ++i) {
      prune_detail += fmt(" %.1f:%.2f/%.2f", pr->x[i], pr->wsr[i], pr->acc_novel[i]);
      if (pr->wsr[i] < 0.5 && acc0 - pr->acc_novel[i] < 0.10) c_pr = false;
    }
    report(7, c_ft && c_un && c_ow && c_pgd && c_ad && c_pr,
           fmt("finetune WSR=%.3f(>=0.90)%s; unlearn WSR=%.3f p=%.3g(>=0.90, <=alpha)%s; overwrite orig WSR=%.3f"
               "(>=0.95, new WSR=%.3f)%s; PGD victim ASR=%.3f(<=0.20)%s; adaptive ref ASR=%.3f/%.3f(>=0.80)%s; "
               "prune fraction:WSR/ACCnovel%s (WSR<0.5 only with ACC drop>=0.10)%s",
               ft->wsr_after, c_ft ? "" : " X", un->wsr_after, un->p_after, c_un ? "" : " X", ow->wsr_after,
               ow->new_wsr, c_ow ? "" : " X", po->victim_asr, c_pgd ? "" : " X", ad->reference_asr[0],
               ad->reference_asr[1], c_ad ? "" : " X", prune_detail.c_str(), c_pr ? "" : " X"));
  }
}

void criterion4() {
  int checked = 0;
  bool pass = true;
  double worst_residual = 0.0, worst_low = 1.0, worst_high = 0.0;
  std::string failures;
  for (int m : {20, 50, 100})
    for (int n : {3, 4, 5})
      for (double tau : {0.3, 0.5, 1.0})
        for (double alpha : {0.01, 0.05}) {
          TheoremBound b = theorem_bound({m, n, tau, alpha});
          MonteCarloConfig mc;
          mc.m = m;
          mc.n = n;
          mc.tau = tau;
          mc.alpha = alpha;
          mc.trials = 10000;
          mc.model = DistanceModel::Fixed;
          mc.fixed_distance = 0.9 * b.d_star;
          double low = monte_carlo_validate(mc);
          mc.fixed_distance = 1.1 * tau;
          double high = monte_carlo_validate(mc);
          bool ok = std::abs(b.residual) <= 1e-8 && b.d_star > 0.0 && b.d_star < tau && low >= 0.99 &&
                    high <= alpha + 0.01;
          worst_residual = std::max(worst_residual, std::abs(b.residual));
          worst_low = std::min(worst_low, low);
          worst_high = std::max(worst_high, high - alpha);
          if (!ok) {
            pass = false;
            failures += fmt(" (m=%d,n=%d,tau=%.1f,alpha=%.2f)", m, n, tau, alpha);
          }
          ++checked;
        }
  TheoremBound ref = theorem_bound({100, 4, 0.5, 0.01});
  report(4, pass,
         fmt("%d grid points; max |f(d*)|=%.2e (<=1e-8); 0<d*<tau everywhere; min rejection at 0.9d*=%.4f (>=0.99); "
             "max rejection-alpha at 1.1tau=%.4f (<=0.01); d*(100,4,0.5,0.01)=%.4f%s",
             checked, worst_residual, worst_low, worst_high, ref.d_star, failures.c_str()));
}

// Brute-force reference: ranks by counting, distance by explicit summation.
int reference_distance(const std::vector<double>& pa, const std::vector<double>& pb) {
  auto ranks = [](const std::vector<double>& p) {
    std::vector<int> r(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      int below = 0;
      for (std::size_t j = 0; j < p.size(); ++j) below += p[j] < p[i] || (p[j] == p[i] && j < i);
      r[i] = below + 1;
    }
    return r;
  };
  auto ra = ranks(pa), rb = ranks(pb);
  int d = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) d += ra[i] > rb[i] ? ra[i] - rb[i] : rb[i] - ra[i];
  return d;
}

void criterion5() {
  long pairs = 0;
  bool equal = true, parity = true, symmetric = true, extremes = true;
  for (int n = 1; n <= 5; ++n) {
    std::vector<std::vector<int>> perms;
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i + 1;
    do perms.push_back(p);
    while (std::next_permutation(p.begin(), p.end()));
    auto probs = [n](const std::vector<int>& r) {
      std::vector<double> v;
      for (int x : r) v.push_back(static_cast<double>(x) / (n + 1.0));
      return v;
    };
    int max_seen = 0;
    for (const auto& a : perms) {
      for (const auto& b : perms) {
        int d = rank_distance(rank_permutation(probs(a)), rank_permutation(probs(b)));
        equal = equal && d == reference_distance(probs(a), probs(b));
        parity = parity && d % 2 == 0;
        symmetric = symmetric && d == rank_distance(rank_permutation(probs(b)), rank_permutation(probs(a)));
        max_seen = std::max(max_seen, d);
        ++pairs;
      }
      extremes = extremes && rank_distance(a, a) == 0;
    }
    std::vector<int> id = perms.front(), rev(id.rbegin(), id.rend());
    extremes = extremes && max_seen == (n * n) / 2 && rank_distance(id, rev) == (n * n) / 2;
  }
  report(5, equal && parity && symmetric && extremes,
         fmt("%ld permutation pairs (n<=5): oracle equality=%s parity=%s symmetry=%s extremes(0, floor(n^2/2))=%s",
             pairs, equal ? "ok" : "MISMATCH", parity ? "ok" : "odd value", symmetric ? "ok" : "asymmetric",
             extremes ? "ok" : "wrong"));
}

void criterion6(const World& w) {
  Rng rng(derive_seed(w.cfg.seed, "acceptance-gradient"));
  SwapConfig sc = w.cfg.swap_config(w.T, 0);
  int points = 0, skipped = 0;
  double worst = 0.0;
  while (points < 20) {
    PromptParams p = PromptParams::zeros(w.model.config);
    p.visual = rng.normal_matrix(p.visual.rows(), p.visual.cols(), 0.3);
    p.text = rng.normal_matrix(p.text.rows(), p.text.cols(), 0.5);
    std::vector<LabeledSample> pick;
    for (int i = 0; i < 12; ++i) pick.push_back(w.train[rng.index(w.train.size())]);
    LabeledBatch b = make_batch(w.model, pick, w.base_names);
    Eigen::MatrixXd Zt = batch_logits(w.model, p, b.X, w.T);
    bool near_kink = false;
    for (Eigen::Index i = 0; i < Zt.rows(); ++i)
      for (Eigen::Index j = 0; j + 1 < Zt.cols(); ++j)
        near_kink = near_kink || std::abs(sc.epsilon - (Zt(i, j + 1) - Zt(i, j))) < 1e-6;
    if (near_kink) {
      ++skipped;
      continue;
    }
    PromptParams g;
    total_loss(w.model, p, b, w.base_names, sc, &g);
    std::vector<double> analytic;
    g.for_each_entry([&](double& v) { analytic.push_back(v); });
    PromptParams q = p;
    std::size_t k = 0;
    const double h = 1e-4;
    q.for_each_entry([&](double& v) {
      const double orig = v;
      v = orig + h;
      const double up = total_loss(w.model, q, b, w.base_names, sc);
      v = orig - h;
      const double down = total_loss(w.model, q, b, w.base_names, sc);
      v = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k++];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
    });
    ++points;
  }
  report(6, worst <= 1e-3,
         fmt("%d random (prompt, batch) points, central differences h=1e-4: max elementwise relative error %.2e "
             "(<=1e-3); %d points skipped within 1e-6 of a hinge kink",
             points, worst, skipped));
}

void criterion8() {
  struct Row {
    int dof;
    double alpha;
    double table;  // upper alpha critical value from standard t tables
  };
  const Row rows[] = {{99, 0.01, 2.364606}, {99, 0.05, 1.660391}, {19, 0.01, 2.539483}};
  double worst_q = 0.0, worst_p = 0.0;
  for (const auto& r : rows) {
    worst_q = std::max(worst_q, std::abs(-student_t_quantile(r.alpha, r.dof) - r.table));
    worst_p = std::max(worst_p, std::abs(student_t_cdf(-r.table, r.dof) - r.alpha));
  }
  int rejections = 0;
  const int audits = 1000;
  Rng rng(20240101);
  const std::vector<std::string> candidates{"a", "b", "c"}, T{"t1", "t2", "t3", "t4"};
  for (int a = 0; a < audits; ++a) {
    RandomOrderOracle oracle(rng.engine()(), T.size());
    Eigen::MatrixXd X = rng.normal_matrix(8, 100);
    rejections += swap_verify(oracle, X, candidates, T, identity_ranks(4), 0.5, 0.01).verdict;
  }
  const double rate = static_cast<double>(rejections) / audits;
  report(8, worst_q <= 1e-4 && worst_p <= 1e-4 && rate <= 0.02,
         fmt("t quantiles vs tables at (99,.01),(99,.05),(19,.01): max |diff|=%.2e, p-value |diff|=%.2e (<=1e-4); "
             "null rejection rate %.3f over %d random-permutation audits (<=0.02 at alpha=0.01)",
             worst_q, worst_p, rate, audits));
}

void criterion9(const ExperimentConfig& cfg, const ResultRecord& first, const World& w) {
  ResultRecord second = run_experiment(cfg);
  const bool same = first.to_json(false) == second.to_json(false);
  const std::string path = "acceptance_roundtrip.ckpt";
  PromptParams p = w.init_prompts("acceptance-roundtrip");
  p.context["Target"] = Eigen::VectorXd::LinSpaced(w.model.config.token_dim, -1.0, 1.0);
  save_checkpoint(w.model, p, path);
  auto [m2, p2] = load_checkpoint(path);
  std::remove(path.c_str());
  bool bits = m2.same_backbone(w.model) && p2 == p && m2.vocab.names() == w.model.vocab.names() &&
              m2.vocab.original == w.model.vocab.original;
  for (const auto& name : w.model.vocab.names()) bits = bits && m2.vocab.embedding(name) == w.model.vocab.embedding(name);
  bits = bits && serialize_checkpoint(m2, p2) == serialize_checkpoint(w.model, p);
  report(9, same && bits,
         fmt("two runs with seed %llu give %s ResultRecords (timing excluded); checkpoint round-trip %s",
             static_cast<unsigned long long>(cfg.seed), same ? "identical" : "DIFFERENT",
             bits ? "bit-exact" : "NOT bit-exact"));
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::string report_path = "acceptance_report.txt";
  std::vector<std::string> overrides;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--strict")) strict = true;
    else if (!std::strcmp(argv[i], "--seed") && i + 1 < argc) overrides.push_back(std::string("experiment.seed=") + argv[++i]);
    else if (!std::strcmp(argv[i], "--report") && i + 1 < argc) report_path = argv[++i];
    else if (!std::strcmp(argv[i], "--set") && i + 1 < argc) overrides.push_back(argv[++i]);
  }
  try {
    ExperimentConfig cfg = load_config("", overrides);
    cfg.output_dir.clear();
    cfg.run_sweeps = false;

    auto t0 = std::chrono::steady_clock::now();
    ResultRecord rec = run_experiment(cfg);
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double swap_seconds = 0.0;
    for (const char* s : {"build", "embed-swap", "audit"})
      if (rec.timing.contains(s)) swap_seconds += rec.timing[s].get<double>();
    std::printf("scenario seed %llu finished in %.1fs\n", static_cast<unsigned long long>(cfg.seed), total);

    World w = build_world(cfg);
    criteria_from_record(rec, cfg, swap_seconds);
    criterion4();
    criterion5();
    criterion6(w);
    criterion8();
    criterion9(cfg, rec, w);

    std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
    int failed = 0;
    std::ofstream out(report_path);
    for (const auto& l : lines) {
      out << "[" << (l.pass ? "PASS" : "FAIL") << "] criterion " << l.id << ": " << l.text << "\n";
      failed += !l.pass;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(lines.size()) - failed, lines.size());
    return strict && failed ? 1 : 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance run aborted: %s\n", e.what());
    return 2;
  }
}
