// Command-line front end: data generation, embedding, auditing, attacks, bound calculator, full scenario, plots.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "swapwm/harness.hpp"

namespace {

using namespace swapwm;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "INI config file (defaults apply to missing keys)");
    app->add_option("--set", overrides, "Override a config key, e.g. --set swap.epochs=300")->take_all();
    app->add_option("--seed", seed, "Master seed (overrides experiment.seed)");
  }

  ExperimentConfig load() const {
    auto ov = overrides;
    if (seed) ov.push_back("experiment.seed=" + std::to_string(*seed));
    return load_config(config_path, ov);
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  detail::from_text("list", s, out);
  return out;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential prompt watermarking toolkit on a toy dual encoder"};
  app.require_subcommand(1);

  Common gen_c, embed_c, verify_c, attack_c, bench_c;

  auto* gen = app.add_subcommand("gen-data", "Write the dataset, its base/novel split and the few-shot training set");
  gen_c.attach(gen);
  std::string gen_out = "data";
  gen->add_option("-o,--out", gen_out, "Output directory");

  auto* embed = app.add_subcommand("embed", "Tune prompts with a watermark and save a checkpoint");
  embed_c.attach(embed);
  std::string embed_method, embed_out = "watermarked.ckpt", embed_log;
  embed->add_option("method", embed_method, "swap or bwap (default: embed.method)")->check(CLI::IsMember({"swap", "bwap"}));
  embed->add_option("-o,--out", embed_out, "Checkpoint path");
  embed->add_option("--log", embed_log, "Training log (JSON lines)");

  auto* verify = app.add_subcommand("verify", "Audit a checkpoint; exit 0 if the watermark is detected, 1 otherwise");
  verify_c.attach(verify);
  std::string verify_ckpt, verify_data, verify_classes, verify_method = "swap", verify_json;
  verify->add_option("checkpoint", verify_ckpt, "Suspicious model checkpoint")->required()->check(CLI::ExistingFile);
  verify->add_option("--data", verify_data, "Audit pool (dataset text file); default: the config's novel split");
  verify->add_option("--classes", verify_classes, "Comma-separated verification classes (swap) or target (bwap)");
  verify->add_option("--method", verify_method, "swap or bwap")->check(CLI::IsMember({"swap", "bwap"}));
  verify->add_option("--json", verify_json, "Write the audit report here");

  auto* attack = app.add_subcommand("attack", "Run one attack against a watermarked checkpoint");
  attack_c.attach(attack);
  std::string attack_kind, attack_ckpt, attack_out;
  double prune_fraction = 0.5;
  attack->add_option("kind", attack_kind, "finetune|prune|unlearn|overwrite|pgd|adaptive")
      ->required()
      ->check(CLI::IsMember({"finetune", "prune", "unlearn", "overwrite", "pgd", "adaptive"}));
  attack->add_option("checkpoint", attack_ckpt, "Watermarked checkpoint")->required()->check(CLI::ExistingFile);
  attack->add_option("-o,--out", attack_out, "Attacked checkpoint (removal attacks)");
  attack->add_option("--fraction", prune_fraction, "Pruned fraction for the prune attack")->check(CLI::Range(0.0, 1.0));

  auto* bound = app.add_subcommand("bound", "Critical mean rank distance below which H0 is rejected");
  TheoremBoundInputs bin;
  bound->add_option("-m", bin.m, "Audit sample count");
  bound->add_option("-n", bin.n, "Verification class count");
  bound->add_option("--tau", bin.tau, "Test threshold");
  bound->add_option("--alpha", bin.alpha, "Significance level");

  auto* mc = app.add_subcommand("mc-validate", "Monte Carlo rejection rate under a distance model");
  MonteCarloConfig mcc;
  std::string mc_model = "quasi-bernoulli";
  mc->add_option("-p,--p-success", mcc.p_success, "Probability that a sample matches exactly");
  mc->add_option("-m", mcc.m, "Audit sample count");
  mc->add_option("-n", mcc.n, "Verification class count");
  mc->add_option("--tau", mcc.tau, "Test threshold");
  mc->add_option("--alpha", mcc.alpha, "Significance level");
  mc->add_option("--trials", mcc.trials, "Simulated audits");
  mc->add_option("--model", mc_model, "quasi-bernoulli|random-permutation|fixed")
      ->check(CLI::IsMember({"quasi-bernoulli", "random-permutation", "fixed"}));
  mc->add_option("--distance", mcc.fixed_distance, "Distance for the fixed model");
  mc->add_option("--seed", mcc.seed, "Simulation seed");

  auto* bench = app.add_subcommand("bench", "Full scenario: embed, audit, attack, re-audit, sweeps, plots");
  bench_c.attach(bench);
  std::string bench_out;
  bench->add_option("-o,--out", bench_out, "Results directory (overrides experiment.output_dir)");

  auto* plot = app.add_subcommand("plot", "Re-emit figures from one or more result.json files");
  std::vector<std::string> plot_inputs;
  std::string plot_out = "plots";
  plot->add_option("results", plot_inputs, "result.json files")->required()->check(CLI::ExistingFile);
  plot->add_option("-o,--out", plot_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      World w = build_world(gen_c.load());
      std::filesystem::create_directories(gen_out);
      const int d = w.cfg.data.input_dim, k = w.cfg.data.num_classes;
      auto path = [&](const char* f) { return (std::filesystem::path(gen_out) / f).string(); };
      export_dataset(w.data.samples, d, k, path("dataset.txt"));
      export_dataset(w.split.base, d, k, path("base.txt"));
      export_dataset(w.split.novel, d, k, path("novel.txt"));
      export_dataset(w.train, d, k, path("train.txt"));
      print({{"base_classes", w.split.spec.base_classes},
             {"novel_classes", w.split.spec.novel_classes},
             {"train_samples", w.train.size()}});
      return 0;
    }

    if (embed->parsed()) {
      ExperimentConfig cfg = embed_c.load();
      World w = build_world(cfg);
      const std::string method = embed_method.empty() ? cfg.method : embed_method;
      std::pair<PromptParams, TrainingLog> out;
      if (method == "swap")
        out = embed_swap(w.model, w.init_prompts("prompt-init"), w.train, w.base_names,
                         cfg.swap_config(w.T, w.seed("embed-swap")));
      else
        out = embed_bwap(w.model, w.init_prompts("prompt-init"), w.train, w.base_names,
                         cfg.bwap_config(w.seed("embed-bwap")));
      save_checkpoint(w.model, out.first, embed_out);
      if (!embed_log.empty()) out.second.write_jsonl(embed_log);
      const auto& last = out.second.epochs.back();
      print({{"method", method}, {"checkpoint", embed_out}, {"epochs", out.second.epochs.size()},
             {"final_total_loss", last.total}, {"train_base_accuracy", last.base_accuracy},
             {"train_success_rate", last.success_rate}, {"converged", out.second.converged}});
      return 0;
    }

    if (verify->parsed()) {
      ExperimentConfig cfg = verify_c.load();
      auto [model, prompts] = load_checkpoint(verify_ckpt);
      Eigen::MatrixXd pool;
      if (!verify_data.empty()) {
        pool = stack_inputs(import_dataset(verify_data));
      } else {
        pool = build_world(cfg).novel_pool;
      }
      ModelOracle oracle(model, prompts);
      AuditReport report;
      if (verify_method == "swap") {
        std::vector<std::string> T = verify_classes.empty() ? std::vector<std::string>{} : split_list(verify_classes);
        if (T.empty())
          for (int i = 1; i <= cfg.num_verification_classes; ++i) T.push_back("Target " + std::to_string(i));
        report = swap_audit(oracle, pool, model.vocab.original, T,
                            cfg.audit_config(derive_seed(cfg.seed, "audit")));
      } else {
        const std::string target = verify_classes.empty() ? cfg.bwap_target : verify_classes;
        BwapConfig bc = cfg.bwap_config(0);
        Rng pick(derive_seed(cfg.seed, "audit-bwap"));
        Eigen::MatrixXd benign = detail::draw_columns(pool, cfg.audit_m, pick);
        report = bwap_verify(oracle, benign, apply_trigger_batch(benign, bc), model.vocab.original, target,
                             cfg.bwap_tau, cfg.audit_alpha);
      }
      nlohmann::json j = report.to_json();
      j["seed"] = cfg.seed;
      j["checkpoint"] = verify_ckpt;
      if (!verify_json.empty()) std::ofstream(verify_json) << j.dump(2) << "\n";
      std::cout << (report.verdict ? "watermark detected" : "no watermark detected") << ": p=" << report.p_value
                << (report.underflow ? " (underflow)" : "") << " wsr=" << report.wsr << " mean=" << report.mean
                << std::endl;
      return report.verdict ? 0 : 1;
    }

    if (attack->parsed()) {
      ExperimentConfig cfg = attack_c.load();
      World w = build_world(cfg);
      auto [model, wm] = load_checkpoint(attack_ckpt);
      require(model.same_backbone(w.model), "checkpoint backbone does not match the configured model");
      PromptParams out;
      AttackResult r;
      r.name = attack_kind;
      r.seed = cfg.seed;
      if (attack_kind == "finetune") {
        out = finetune_attack(w.model, wm, w.train_attacker, w.base_names, cfg.finetune_epochs, cfg.finetune_lr,
                              w.seed("finetune"));
      } else if (attack_kind == "prune") {
        out = prune_attack(wm, prune_fraction);
        r.parameters["fraction"] = prune_fraction;
      } else if (attack_kind == "unlearn") {
        out = unlearn_attack(w.model, wm, w.train_attacker, w.base_names, w.T, cfg.swap_epsilon, cfg.unlearn_lambda,
                             cfg.unlearn_epochs, cfg.swap_lr, w.seed("unlearn"));
      } else if (attack_kind == "overwrite") {
        SwapConfig oc = cfg.swap_config(w.independent_T, w.seed("overwrite"));
        oc.epochs = cfg.overwrite_epochs;
        out = overwrite_attack(w.model, wm, w.train_attacker, w.base_names, w.T, oc);
        r.new_wsr = evaluate_prompts(w, out, w.independent_T).wsr;
      } else {
        ExperimentConfig only = cfg;
        only.attacks = {attack_kind};
        only.output_dir.clear();
        only.run_sweeps = false;
        ResultRecord rec = run_experiment(only);
        if (!rec.failed_stage.empty()) throw std::runtime_error(rec.failed_stage + ": " + rec.error);
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& a : rec.attacks) arr.push_back(a.to_json());
        print(arr);
        return 0;
      }
      PromptEval before = evaluate_prompts(w, wm, w.T), after = evaluate_prompts(w, out, w.T);
      r.wsr_before = before.wsr;
      r.wsr_after = after.wsr;
      r.acc_base_before = before.acc_base;
      r.acc_base_after = after.acc_base;
      r.acc_novel_before = before.acc_novel;
      r.acc_novel_after = after.acc_novel;
      r.p_before = audit_prompts(w, wm, w.T).p_value;
      r.p_after = audit_prompts(w, out, w.T).p_value;
      if (!attack_out.empty()) save_checkpoint(w.model, out, attack_out);
      print(r.to_json());
      return 0;
    }

    if (bound->parsed()) {
      TheoremBound b = theorem_bound(bin);
      print({{"m", bin.m}, {"n", bin.n}, {"tau", bin.tau}, {"alpha", bin.alpha}, {"a", b.a}, {"t_alpha", b.t_alpha},
             {"delta", b.delta}, {"d_star", b.d_star}, {"residual", b.residual}});
      return 0;
    }

    if (mc->parsed()) {
      mcc.model = mc_model == "fixed"                ? DistanceModel::Fixed
                  : mc_model == "random-permutation" ? DistanceModel::RandomPermutation
                                                     : DistanceModel::QuasiBernoulli;
      double rate = monte_carlo_validate(mcc);
      print({{"model", mc_model}, {"p_success", mcc.p_success}, {"m", mcc.m}, {"n", mcc.n}, {"tau", mcc.tau},
             {"alpha", mcc.alpha}, {"trials", mcc.trials}, {"rejection_rate", rate}});
      return 0;
    }

    if (bench->parsed()) {
      ExperimentConfig cfg = bench_c.load();
      if (!bench_out.empty()) cfg.output_dir = bench_out;
      ResultRecord rec = run_experiment(cfg);
      nlohmann::json j = rec.to_json();
      j.erase("config_echo");
      j.erase("swap_total_loss");
      print(j);
      return rec.failed_stage.empty() ? 0 : 1;
    }

    if (plot->parsed()) {
      std::vector<ResultRecord> recs;
      for (const auto& p : plot_inputs) {
        std::ifstream in(p);
        recs.push_back(record_from_json(nlohmann::json::parse(in)));
      }
      for (const auto& f : emit_plots(recs, plot_out)) std::cout << f << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
