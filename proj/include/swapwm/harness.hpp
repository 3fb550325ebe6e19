#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swapwm/attacks.hpp"
#include "swapwm/checkpoint.hpp"
#include "swapwm/config.hpp"
#include "swapwm/plot.hpp"
#include "swapwm/verification.hpp"
#include "swapwm/watermark.hpp"

namespace swapwm {

// Everything downstream stages share, rebuilt deterministically from (config, seed).
struct World {
  ExperimentConfig cfg;
  Dataset data;
  Split split;
  DualEncoderModel model;
  std::vector<std::string> base_names, novel_names;
  std::vector<std::string> T;              // defender's verification classes
  std::vector<std::string> independent_T;  // unrelated family used for the independent-classes audit and overwriting
  std::vector<std::string> claim_T;        // adversary's family for false claims
  // Pairwise-disjoint few-shot subsets of the base split.
  std::vector<LabeledSample> train, train_independent, train_attacker, train_ref_a, train_ref_b;
  std::vector<LabeledSample> base_test;    // base samples outside `train`
  Eigen::MatrixXd novel_pool;
  std::vector<int> novel_labels;           // indices into novel_names
  Eigen::MatrixXd base_test_X;
  std::vector<int> base_test_labels;       // indices into base_names
  std::pair<double, double> bounds;

  std::uint64_t seed(std::string_view tag) const { return derive_seed(cfg.seed, tag); }

  PromptParams init_prompts(std::string_view tag) const {
    Rng rng(seed(tag));
    return PromptParams::init(model.config, rng, cfg.prompt_init_std);
  }
};

inline std::vector<int> labels_in(const DualEncoderModel& m, const std::vector<LabeledSample>& samples,
                                  const std::vector<std::string>& names) {
  std::vector<int> out;
  for (const auto& s : samples) {
    const auto& name = m.vocab.original.at(static_cast<std::size_t>(s.y));
    auto it = std::find(names.begin(), names.end(), name);
    require(it != names.end(), "label '" + name + "' outside the class set");
    out.push_back(static_cast<int>(it - names.begin()));
  }
  return out;
}

inline World build_world(const ExperimentConfig& cfg) {
  cfg.validate();
  World w;
  w.cfg = cfg;
  DatasetSpec ds = cfg.data;
  ds.seed = w.seed("data");
  w.data = generate_dataset(ds);
  w.split = split_base_novel(w.data, cfg.base_fraction, w.seed("split"));

  ModelConfig mc = cfg.model;
  mc.input_dim = cfg.data.input_dim;
  mc.rng_seed = w.seed("model");
  w.model = DualEncoderModel::create(mc);

  std::vector<std::string> names;
  for (int k = 0; k < cfg.data.num_classes; ++k) names.push_back("class " + std::to_string(k));
  Rng vocab_rng(w.seed("vocab"));
  align_vocabulary(w.model, names, w.data.means, cfg.alignment, vocab_rng);
  w.T = add_token_family(w.model, "Target", cfg.num_verification_classes, cfg.family_spread, vocab_rng);
  w.independent_T = add_token_family(w.model, "Miqi", cfg.num_verification_classes, cfg.family_spread, vocab_rng);
  w.claim_T = add_token_family(w.model, "Claim", cfg.num_verification_classes, cfg.family_spread, vocab_rng);
  add_token(w.model, cfg.bwap_target, vocab_rng);

  w.base_names = class_names(w.model, w.split.spec.base_classes);
  w.novel_names = class_names(w.model, w.split.spec.novel_classes);

  std::vector<LabeledSample> rest = w.split.base;
  auto take = [&](std::string_view tag) {
    auto s = sample_few_shot(rest, cfg.shots_per_class, w.seed(tag));
    rest = exclude(rest, s);
    return s;
  };
  w.train = take("fewshot");
  w.train_independent = take("fewshot-independent");
  w.train_attacker = take("fewshot-attacker");
  w.train_ref_a = take("fewshot-reference-a");
  w.train_ref_b = take("fewshot-reference-b");
  w.base_test = exclude(w.split.base, w.train);

  w.novel_pool = stack_inputs(w.split.novel);
  w.novel_labels = labels_in(w.model, w.split.novel, w.novel_names);
  w.base_test_X = stack_inputs(w.base_test);
  w.base_test_labels = labels_in(w.model, w.base_test, w.base_names);
  w.bounds = input_bounds(w.data);
  return w;
}

// Top-1 accuracy; labels index into `candidates`, which may carry extra (verification) classes.
inline double acc(const SuspiciousOracle& oracle, const Eigen::MatrixXd& X, const std::vector<int>& labels,
                  const std::vector<std::string>& candidates) {
  require(X.cols() > 0, "accuracy needs a non-empty sample set");
  for (int y : labels) require(y >= 0 && y < static_cast<int>(candidates.size()), "label outside the class set");
  return 1.0 - asr(misclassified(oracle, X, labels, candidates));
}

inline double harmless_degree(const std::vector<bool>& wrong_watermarked, const std::vector<bool>& wrong_independent) {
  if (wrong_watermarked.size() != wrong_independent.size())
    throw ContractViolation("harmless_degree: evaluations cover different sample counts");
  require(!wrong_watermarked.empty(), "harmless_degree needs samples");
  double d = 0.0;
  for (std::size_t i = 0; i < wrong_watermarked.size(); ++i)
    d += static_cast<double>(wrong_watermarked[i]) - static_cast<double>(wrong_independent[i]);
  return d / static_cast<double>(wrong_watermarked.size());
}

inline double harmless_degree(const SuspiciousOracle& watermarked, const SuspiciousOracle& independent,
                              const Eigen::MatrixXd& X, const std::vector<int>& labels,
                              const std::vector<std::string>& candidates) {
  return harmless_degree(misclassified(watermarked, X, labels, candidates),
                         misclassified(independent, X, labels, candidates));
}

inline double harmonic_mean(double a, double b) {
  require(a > 0.0 && b > 0.0, "harmonic mean needs positive inputs");
  return 2.0 * a * b / (a + b);
}

struct PromptEval {
  double acc_base = 0.0;
  double acc_novel = 0.0;
  double wsr = 0.0;
};

inline std::vector<std::string> with_extra(std::vector<std::string> a, const std::vector<std::string>& extra) {
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

// Accuracy with T in the candidate set; WSR over the full novel pool.
inline PromptEval evaluate_prompts(const World& w, const PromptParams& p, const std::vector<std::string>& T) {
  ModelOracle o(w.model, p);
  PromptEval e;
  e.acc_base = acc(o, w.base_test_X, w.base_test_labels, with_extra(w.base_names, T));
  e.acc_novel = acc(o, w.novel_pool, w.novel_labels, with_extra(w.novel_names, T));
  e.wsr = wsr(o, w.novel_pool, w.model.vocab.original, T, identity_ranks(T.size()));
  return e;
}

inline AuditReport audit_prompts(const World& w, const PromptParams& p, const std::vector<std::string>& T,
                                 std::string_view tag = "audit") {
  ModelOracle o(w.model, p);
  return swap_audit(o, w.novel_pool, w.model.vocab.original, T, w.cfg.audit_config(w.seed(tag)));
}

struct Curve {
  std::string name;
  std::string x_label;
  std::vector<double> x, wsr, acc_novel;

  nlohmann::json to_json() const {
    return {{"name", name}, {"x_label", x_label}, {"x", x}, {"wsr", wsr}, {"acc_novel", acc_novel}};
  }
  static Curve from_json(const nlohmann::json& j) {
    Curve c;
    c.name = j.at("name").get<std::string>();
    c.x_label = j.at("x_label").get<std::string>();
    c.x = j.at("x").get<std::vector<double>>();
    c.wsr = j.at("wsr").get<std::vector<double>>();
    c.acc_novel = j.at("acc_novel").get<std::vector<double>>();
    return c;
  }
};

struct ResultRecord {
  std::string config_echo;
  std::uint64_t seed = 0;
  std::string failed_stage;  // empty when every stage completed
  std::string error;

  PromptEval watermarked, baseline, independent;
  double harmonic_mean_watermarked = 0.0;
  AuditReport audit_watermarked, audit_independent_prompt, audit_independent_classes;
  double h_swap = 0.0;
  std::vector<double> swap_loss_curve;
  bool swap_converged = false;

  double bwap_trigger_rate = 0.0;  // triggered novel samples predicted as the target
  double bwap_clean_acc_novel = 0.0;
  double h_bwap = 0.0;
  AuditReport audit_bwap, audit_bwap_independent;

  std::vector<AttackResult> attacks;
  std::vector<Curve> curves;  // finetune, prune, epsilon, lambda

  nlohmann::json timing = nlohmann::json::object();  // wall-clock seconds per stage

  const AttackResult* attack(const std::string& name) const {
    for (const auto& a : attacks)
      if (a.name == name) return &a;
    return nullptr;
  }

  const Curve* curve(const std::string& name) const {
    for (const auto& c : curves)
      if (c.name == name) return &c;
    return nullptr;
  }

  nlohmann::json to_json(bool with_timing = true) const {
    auto pe = [](const PromptEval& e) {
      return nlohmann::json{{"acc_base", e.acc_base}, {"acc_novel", e.acc_novel}, {"wsr", e.wsr}};
    };
    nlohmann::json j = {{"config_echo", config_echo},
                        {"seed", seed},
                        {"failed_stage", failed_stage},
                        {"error", error},
                        {"watermarked", pe(watermarked)},
                        {"baseline_lambda0", pe(baseline)},
                        {"independent_prompt", pe(independent)},
                        {"harmonic_mean", harmonic_mean_watermarked},
                        {"audit_watermarked", audit_watermarked.to_json()},
                        {"audit_independent_prompt", audit_independent_prompt.to_json()},
                        {"audit_independent_classes", audit_independent_classes.to_json()},
                        {"h_swap", h_swap},
                        {"swap_total_loss", swap_loss_curve},
                        {"swap_converged", swap_converged},
                        {"bwap_trigger_rate", bwap_trigger_rate},
                        {"bwap_clean_acc_novel", bwap_clean_acc_novel},
                        {"h_bwap", h_bwap},
                        {"audit_bwap", audit_bwap.to_json()},
                        {"audit_bwap_independent", audit_bwap_independent.to_json()}};
    j["attacks"] = nlohmann::json::array();
    for (const auto& a : attacks) j["attacks"].push_back(a.to_json());
    j["curves"] = nlohmann::json::array();
    for (const auto& c : curves) j["curves"].push_back(c.to_json());
    if (with_timing) j["timing"] = timing;
    return j;
  }
};

namespace detail {

class StageTimer {
 public:
  StageTimer(ResultRecord& r, std::string& stage) : record_(r), stage_(stage) {}
  void begin(const std::string& name) {
    stage_ = name;
    start_ = std::chrono::steady_clock::now();
  }
  void end() {
    record_.timing[stage_] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  ResultRecord& record_;
  std::string& stage_;
  std::chrono::steady_clock::time_point start_;
};

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  require(static_cast<bool>(out), "cannot write " + p.string());
  out << j.dump(2) << "\n";
}

inline std::vector<double> total_losses(const TrainingLog& log) {
  std::vector<double> v;
  for (const auto& e : log.epochs) v.push_back(e.total);
  return v;
}

}  // namespace detail

inline std::vector<std::string> emit_plots(const std::vector<ResultRecord>& records, const std::string& dir);

// generate -> split -> embed -> audits -> baseline backdoor -> attacks -> sweeps. With an empty output_dir nothing
// is persisted. A failing stage is named in the returned record instead of propagating.
inline ResultRecord run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  ResultRecord rec;
  rec.config_echo = config_text(cfg);
  rec.seed = cfg.seed;
  std::string stage;
  detail::StageTimer timer(rec, stage);
  const bool persist = !cfg.output_dir.empty();
  const fs::path root = cfg.output_dir;
  auto save = [&](const std::string& name, const World& w, const PromptParams& p) {
    if (persist) save_checkpoint(w.model, p, (root / "checkpoints" / (name + ".ckpt")).string());
  };
  auto save_log = [&](const std::string& name, const TrainingLog& log) {
    if (persist) log.write_jsonl((root / "checkpoints" / (name + ".log.jsonl")).string());
  };
  auto wants = [&](const std::string& a) {
    return std::find(cfg.attacks.begin(), cfg.attacks.end(), a) != cfg.attacks.end();
  };

  try {
    timer.begin("build");
    if (persist) {
      for (const char* sub : {"checkpoints", "audits", "attacks", "plots"}) fs::create_directories(root / sub);
      std::ofstream(root / "config.echo") << rec.config_echo;
    }
    const World w = build_world(cfg);
    const auto& T = w.T;
    timer.end();

    timer.begin("embed-swap");
    auto [wm, wm_log] = embed_swap(w.model, w.init_prompts("prompt-init"), w.train, w.base_names,
                                   cfg.swap_config(T, w.seed("embed-swap")));
    SwapConfig zero = cfg.swap_config(T, w.seed("embed-swap"));
    zero.lambda_ = 0.0;
    auto [base_p, base_log] = embed_swap(w.model, w.init_prompts("prompt-init"), w.train, w.base_names, zero);
    auto [ind_p, ind_log] = embed_swap(w.model, w.init_prompts("prompt-init-independent"), w.train_independent,
                                       w.base_names, zero);
    rec.swap_loss_curve = detail::total_losses(wm_log);
    rec.swap_converged = wm_log.converged;
    save("watermarked", w, wm);
    save("baseline_lambda0", w, base_p);
    save("independent", w, ind_p);
    save_log("watermarked", wm_log);
    timer.end();

    timer.begin("audit");
    rec.watermarked = evaluate_prompts(w, wm, T);
    rec.baseline = evaluate_prompts(w, base_p, T);
    rec.independent = evaluate_prompts(w, ind_p, T);
    rec.harmonic_mean_watermarked = harmonic_mean(rec.watermarked.acc_base, rec.watermarked.acc_novel);
    rec.audit_watermarked = audit_prompts(w, wm, T);
    rec.audit_independent_prompt = audit_prompts(w, ind_p, T);
    rec.audit_independent_classes = audit_prompts(w, wm, w.independent_T);
    ModelOracle wm_oracle(w.model, wm), ind_oracle(w.model, ind_p);
    rec.h_swap = harmless_degree(wm_oracle, ind_oracle, w.novel_pool, w.novel_labels, with_extra(w.novel_names, T));
    if (persist) {
      detail::write_json(root / "audits" / "watermarked.json", rec.audit_watermarked.to_json());
      detail::write_json(root / "audits" / "independent_prompt.json", rec.audit_independent_prompt.to_json());
      detail::write_json(root / "audits" / "independent_classes.json", rec.audit_independent_classes.to_json());
    }
    timer.end();

    timer.begin("embed-bwap");
    BwapConfig bc = cfg.bwap_config(w.seed("embed-bwap"));
    auto [bw, bw_log] = embed_bwap(w.model, w.init_prompts("prompt-init"), w.train, w.base_names, bc);
    save("bwap", w, bw);
    save_log("bwap", bw_log);
    {
      ModelOracle bw_oracle(w.model, bw);
      const auto cand = with_extra(w.novel_names, {bc.target_class});
      Eigen::MatrixXd trig = apply_trigger_batch(w.novel_pool, bc);
      std::vector<int> target_label(static_cast<std::size_t>(trig.cols()), static_cast<int>(w.novel_names.size()));
      rec.bwap_trigger_rate = 1.0 - asr(misclassified(bw_oracle, trig, target_label, cand));
      rec.bwap_clean_acc_novel = acc(bw_oracle, w.novel_pool, w.novel_labels, cand);
      rec.h_bwap = harmless_degree(bw_oracle, ind_oracle, trig, w.novel_labels, cand);
      Rng pick(w.seed("audit-bwap"));
      Eigen::MatrixXd benign = detail::draw_columns(w.novel_pool, cfg.audit_m, pick);
      Eigen::MatrixXd triggered = apply_trigger_batch(benign, bc);
      rec.audit_bwap = bwap_verify(bw_oracle, benign, triggered, w.novel_names, bc.target_class, cfg.bwap_tau,
                                   cfg.audit_alpha);
      rec.audit_bwap_independent = bwap_verify(ind_oracle, benign, triggered, w.novel_names, bc.target_class,
                                               cfg.bwap_tau, cfg.audit_alpha);
      if (persist) {
        detail::write_json(root / "audits" / "bwap.json", rec.audit_bwap.to_json());
        detail::write_json(root / "audits" / "bwap_independent.json", rec.audit_bwap_independent.to_json());
      }
    }
    timer.end();

    timer.begin("attacks");
    auto removal = [&](const std::string& name, const PromptParams& after, nlohmann::json params,
                       std::string_view stage_tag) {
      AttackResult r;
      r.name = name;
      r.parameters = std::move(params);
      r.seed = w.seed(stage_tag);
      r.wsr_before = rec.watermarked.wsr;
      r.acc_base_before = rec.watermarked.acc_base;
      r.acc_novel_before = rec.watermarked.acc_novel;
      r.p_before = rec.audit_watermarked.p_value;
      PromptEval e = evaluate_prompts(w, after, T);
      r.wsr_after = e.wsr;
      r.acc_base_after = e.acc_base;
      r.acc_novel_after = e.acc_novel;
      r.p_after = audit_prompts(w, after, T).p_value;
      return r;
    };

    if (wants("finetune")) {
      Curve c{"finetune", "fine-tuning epochs", {}, {}, {}};
      PromptParams p = wm;
      PromptParams at_budget = wm;
      const int horizon = std::max(cfg.finetune_curve_epochs, cfg.finetune_epochs);
      for (int e = 0; e <= horizon; ++e) {
        if (e > 0) p = finetune_attack(w.model, p, w.train_attacker, w.base_names, 1, cfg.finetune_lr, w.seed("finetune"));
        if (e == cfg.finetune_epochs) at_budget = p;
        PromptEval ev = evaluate_prompts(w, p, T);
        c.x.push_back(e);
        c.wsr.push_back(ev.wsr);
        c.acc_novel.push_back(ev.acc_novel);
      }
      rec.curves.push_back(c);
      rec.attacks.push_back(
          removal("finetune", at_budget, {{"epochs", cfg.finetune_epochs}, {"lr", cfg.finetune_lr}}, "finetune"));
      save("attacked_finetune", w, at_budget);
    }
    if (wants("prune")) {
      Curve c{"prune", "pruned fraction", {}, {}, {}};
      for (double f : cfg.prune_fractions) {
        PromptParams p = prune_attack(wm, f);
        PromptEval ev = evaluate_prompts(w, p, T);
        c.x.push_back(f);
        c.wsr.push_back(ev.wsr);
        c.acc_novel.push_back(ev.acc_novel);
      }
      rec.curves.push_back(c);
      if (!cfg.prune_fractions.empty()) {
        double f = cfg.prune_fractions.back();
        rec.attacks.push_back(removal("prune", prune_attack(wm, f), {{"fraction", f}}, "prune"));
      }
    }
    if (wants("unlearn")) {
      TrainingLog log;
      PromptParams p = unlearn_attack(w.model, wm, w.train_attacker, w.base_names, T, cfg.swap_epsilon,
                                      cfg.unlearn_lambda, cfg.unlearn_epochs, cfg.swap_lr, w.seed("unlearn"), &log);
      rec.attacks.push_back(removal("unlearn", p, {{"lambda", cfg.unlearn_lambda}, {"epochs", cfg.unlearn_epochs}},
                                    "unlearn"));
      save("attacked_unlearn", w, p);
    }
    if (wants("overwrite")) {
      SwapConfig oc = cfg.swap_config(w.independent_T, w.seed("overwrite"));
      oc.epochs = cfg.overwrite_epochs;
      PromptParams p = overwrite_attack(w.model, wm, w.train_attacker, w.base_names, T, oc);
      AttackResult r = removal("overwrite", p, {{"epochs", cfg.overwrite_epochs}, {"new_classes", w.independent_T}},
                               "overwrite");
      r.new_wsr = evaluate_prompts(w, p, w.independent_T).wsr;
      r.timestamp_note = "registration order not arbitrated";
      rec.attacks.push_back(r);
      save("attacked_overwrite", w, p);
    }
    if (wants("pgd") || wants("adaptive")) {
      PgdConfig pc = PgdConfig::scaled_default(w.bounds.first, w.bounds.second, cfg.pgd_steps);
      pc.epsilon_inf *= cfg.pgd_budget_scale;
      pc.step_size *= cfg.pgd_budget_scale;
      Rng pick(w.seed("pgd-samples"));
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(w.novel_pool.cols()));
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      pick.shuffle(idx);
      const int n = std::min<int>(cfg.pgd_samples, static_cast<int>(w.novel_pool.cols()));
      Eigen::MatrixXd X(w.novel_pool.rows(), n);
      std::vector<int> y;
      for (int i = 0; i < n; ++i) {
        X.col(i) = w.novel_pool.col(idx[static_cast<std::size_t>(i)]);
        y.push_back(w.novel_labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
      }
      const PromptParams promptless = PromptParams::zeros(w.model.config);
      ModelOracle ref0(w.model, promptless);
      nlohmann::json pj = {{"epsilon_inf", pc.epsilon_inf}, {"step_size", pc.step_size}, {"steps", pc.steps},
                           {"samples", n}};
      if (wants("pgd")) {
        AttackResult ce;
        ce.name = "pgd-ce";
        ce.parameters = pj;
        ce.seed = w.seed("pgd-samples");
        auto out = pgd_false_claim(w.model, promptless, X, y, w.novel_names, {}, PgdLoss::CrossEntropy,
                                   cfg.swap_epsilon, pc);
        ce.baseline_asr = asr(misclassified(ref0, X, y, w.novel_names));
        ce.reference_asr = {asr(misclassified(ref0, out.X, y, w.novel_names))};
        ce.victim_asr = asr(misclassified(wm_oracle, out.X, y, w.novel_names));
        rec.attacks.push_back(ce);

        AttackResult od;
        od.name = "pgd-order";
        od.parameters = pj;
        od.seed = ce.seed;
        auto oo = pgd_false_claim(w.model, promptless, X, y, w.novel_names, w.claim_T, PgdLoss::Order,
                                  cfg.swap_epsilon, pc);
        od.baseline_asr = asr(sequence_matches(wm_oracle, X, w.model.vocab.original, w.claim_T));
        od.reference_asr = {asr(sequence_matches(ref0, oo.X, w.model.vocab.original, w.claim_T))};
        od.victim_asr = asr(sequence_matches(wm_oracle, oo.X, w.model.vocab.original, w.claim_T));
        rec.attacks.push_back(od);
      }
      if (wants("adaptive")) {
        SwapConfig rc = cfg.swap_config(w.claim_T, w.seed("reference"));
        rc.lambda_ = 0.0;
        auto [ra, la] = embed_swap(w.model, w.init_prompts("prompt-init-reference-a"), w.train_ref_a, w.base_names, rc);
        auto [rb, lb] = embed_swap(w.model, w.init_prompts("prompt-init-reference-b"), w.train_ref_b, w.base_names, rc);
        save("reference_a", w, ra);
        save("reference_b", w, rb);
        auto out = adaptive_false_claim(w.model, ra, rb, X, y, w.novel_names, w.claim_T, cfg.adaptive_lambda,
                                        cfg.swap_epsilon, pc);
        ModelOracle oa(w.model, ra), ob(w.model, rb);
        AttackResult ad;
        ad.name = "adaptive";
        ad.parameters = pj;
        ad.parameters["lambda"] = cfg.adaptive_lambda;
        ad.seed = w.seed("reference");
        ad.baseline_asr = asr(sequence_matches(wm_oracle, X, w.model.vocab.original, w.claim_T));
        ad.reference_asr = {asr(sequence_matches(oa, out.X, w.model.vocab.original, w.claim_T)),
                            asr(sequence_matches(ob, out.X, w.model.vocab.original, w.claim_T))};
        ad.victim_asr = asr(sequence_matches(wm_oracle, out.X, w.model.vocab.original, w.claim_T));
        rec.attacks.push_back(ad);
      }
    }
    if (persist)
      for (const auto& a : rec.attacks) detail::write_json(root / "attacks" / (a.name + ".json"), a.to_json());
    timer.end();

    if (cfg.run_sweeps) {
      timer.begin("sweeps");
      auto sweep = [&](const std::string& name, const std::string& label, const std::vector<double>& values,
                       bool is_epsilon) {
        Curve c{name, label, {}, {}, {}};
        for (double v : values) {
          SwapConfig sc = cfg.swap_config(T, w.seed("embed-swap"));
          (is_epsilon ? sc.epsilon : sc.lambda_) = v;
          auto [p, log] = embed_swap(w.model, w.init_prompts("prompt-init"), w.train, w.base_names, sc);
          PromptEval ev = evaluate_prompts(w, p, T);
          c.x.push_back(v);
          c.wsr.push_back(ev.wsr);
          c.acc_novel.push_back(ev.acc_novel);
        }
        rec.curves.push_back(c);
      };
      sweep("epsilon", "margin epsilon", cfg.sweep_epsilons, true);
      sweep("lambda", "trade-off lambda", cfg.sweep_lambdas, false);
      timer.end();
    }

    if (persist) {
      timer.begin("plots");
      emit_plots({rec}, (root / "plots").string());
      timer.end();
    }
    stage.clear();
  } catch (const std::exception& e) {
    rec.failed_stage = stage.empty() ? "unknown" : stage;
    rec.error = e.what();
  }
  if (persist) detail::write_json(root / "result.json", rec.to_json());
  return rec;
}

inline ResultRecord record_from_json(const nlohmann::json& j) {
  ResultRecord r;
  r.config_echo = j.value("config_echo", "");
  r.seed = j.value("seed", std::uint64_t{0});
  for (const auto& c : j.at("curves")) r.curves.push_back(Curve::from_json(c));
  return r;
}

// One SVG plus one columnar .dat per figure; series from several records are overlaid.
inline std::vector<std::string> emit_plots(const std::vector<ResultRecord>& records, const std::string& dir) {
  require(!records.empty(), "emit_plots needs at least one record");
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  const std::vector<std::pair<std::string, std::string>> figures = {
      {"finetune", "Watermark and novel accuracy under fine-tuning"},
      {"prune", "Watermark and novel accuracy under prompt pruning"},
      {"epsilon", "Sensitivity to the margin epsilon"},
      {"lambda", "Sensitivity to the trade-off lambda"}};
  for (const auto& [name, title] : figures) {
    Figure fig;
    fig.title = title;
    fig.y_label = "rate";
    for (const auto& r : records) {
      const Curve* c = r.curve(name);
      if (!c) continue;
      fig.x_label = c->x_label;
      std::string suffix = records.size() > 1 ? " (seed " + std::to_string(r.seed) + ")" : "";
      fig.series.push_back({"WSR" + suffix, c->x, c->wsr});
      fig.series.push_back({"ACC novel" + suffix, c->x, c->acc_novel});
    }
    if (fig.series.empty()) continue;
    fig.log_x = name == "epsilon" || name == "lambda";
    const std::string base = (std::filesystem::path(dir) / name).string();
    write_svg(fig, base + ".svg");
    write_columns(fig, base + ".dat");
    written.push_back(base + ".svg");
    written.push_back(base + ".dat");
  }
  require(!written.empty(), "records contain no curves to plot");
  return written;
}

}  // namespace swapwm
