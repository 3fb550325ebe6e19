#pragma once

#include <charconv>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "swapwm/attacks.hpp"
#include "swapwm/synth_data.hpp"
#include "swapwm/toy_clip.hpp"
#include "swapwm/verification.hpp"
#include "swapwm/watermark.hpp"

namespace swapwm {

struct ExperimentConfig {
  std::uint64_t seed = 8;
  std::string output_dir = "results";

  DatasetSpec data;
  double base_fraction = 0.5;
  int shots_per_class = 16;

  ModelConfig model;
  double prompt_init_std = 0.02;
  double family_spread = 0.3;
  AlignmentConfig alignment;

  std::string method = "swap";
  int num_verification_classes = 4;
  double swap_epsilon = 0.5;
  double swap_lambda = 1.0;
  int swap_epochs = 400;
  double swap_lr = 0.05;
  int swap_batch_size = 1024;

  int trigger_width = 4;
  double trigger_value = 4.0;
  std::string bwap_target = "Target";
  double poison_rate = 0.1;
  int bwap_epochs = 1000;
  double bwap_lr = 0.05;
  double bwap_context_lr_scale = 20.0;
  double bwap_tau = 0.2;

  int audit_m = 100;
  double audit_tau = 0.5;
  double audit_alpha = 0.01;
  int audit_repeats = 3;

  std::vector<std::string> attacks{"finetune", "prune", "unlearn", "overwrite", "pgd", "adaptive"};
  int finetune_epochs = 5;
  double finetune_lr = 0.05;
  int finetune_curve_epochs = 20;
  std::vector<double> prune_fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double unlearn_lambda = 1.0;
  int unlearn_epochs = 5;
  int overwrite_epochs = 5;
  double pgd_budget_scale = 1.0;
  int pgd_steps = 40;
  int pgd_samples = 100;
  double adaptive_lambda = 1.0;

  bool run_sweeps = true;
  std::vector<double> sweep_epsilons{0.05, 0.1, 0.5, 1.0};
  std::vector<double> sweep_lambdas{0.1, 0.5, 1.0, 2.0};

  // Visits every persisted field as ("section.key", field).
  template <typename Self, typename V>
  static void visit(Self& c, V&& v) {
    v("experiment.seed", c.seed);
    v("experiment.output_dir", c.output_dir);
    v("data.num_classes", c.data.num_classes);
    v("data.samples_per_class", c.data.samples_per_class);
    v("data.input_dim", c.data.input_dim);
    v("data.cluster_std", c.data.cluster_std);
    v("data.base_fraction", c.base_fraction);
    v("data.shots_per_class", c.shots_per_class);
    v("model.token_dim", c.model.token_dim);
    v("model.feature_dim", c.model.feature_dim);
    v("model.image_hidden", c.model.image_hidden);
    v("model.text_hidden", c.model.text_hidden);
    v("model.prompt_len_visual", c.model.prompt_len_visual);
    v("model.prompt_len_text", c.model.prompt_len_text);
    v("model.temperature", c.model.temperature);
    v("model.cone", c.model.cone);
    v("model.attention_scale", c.model.attention_scale);
    v("model.prompt_init_std", c.prompt_init_std);
    v("model.family_spread", c.family_spread);
    v("model.align_iterations", c.alignment.iterations);
    v("model.align_learning_rate", c.alignment.learning_rate);
    v("model.align_init_std", c.alignment.init_std);
    v("embed.method", c.method);
    v("swap.num_verification_classes", c.num_verification_classes);
    v("swap.epsilon", c.swap_epsilon);
    v("swap.lambda", c.swap_lambda);
    v("swap.epochs", c.swap_epochs);
    v("swap.learning_rate", c.swap_lr);
    v("swap.batch_size", c.swap_batch_size);
    v("bwap.trigger_width", c.trigger_width);
    v("bwap.trigger_value", c.trigger_value);
    v("bwap.target", c.bwap_target);
    v("bwap.poison_rate", c.poison_rate);
    v("bwap.epochs", c.bwap_epochs);
    v("bwap.learning_rate", c.bwap_lr);
    v("bwap.context_lr_scale", c.bwap_context_lr_scale);
    v("bwap.tau", c.bwap_tau);
    v("verify.m", c.audit_m);
    v("verify.tau", c.audit_tau);
    v("verify.alpha", c.audit_alpha);
    v("verify.repeats", c.audit_repeats);
    v("attacks.enabled", c.attacks);
    v("attacks.finetune_epochs", c.finetune_epochs);
    v("attacks.finetune_lr", c.finetune_lr);
    v("attacks.finetune_curve_epochs", c.finetune_curve_epochs);
    v("attacks.prune_fractions", c.prune_fractions);
    v("attacks.unlearn_lambda", c.unlearn_lambda);
    v("attacks.unlearn_epochs", c.unlearn_epochs);
    v("attacks.overwrite_epochs", c.overwrite_epochs);
    v("attacks.pgd_budget_scale", c.pgd_budget_scale);
    v("attacks.pgd_steps", c.pgd_steps);
    v("attacks.pgd_samples", c.pgd_samples);
    v("attacks.adaptive_lambda", c.adaptive_lambda);
    v("sweeps.enabled", c.run_sweeps);
    v("sweeps.epsilons", c.sweep_epsilons);
    v("sweeps.lambdas", c.sweep_lambdas);
  }

  void validate() const {
    data.validate();
    model.validate();
    require(method == "swap" || method == "bwap", "embed.method must be 'swap' or 'bwap'");
    require(num_verification_classes >= 2, "need at least two verification classes");
    require(shots_per_class >= 1, "shots_per_class must be >= 1");
    require(audit_m >= 2 && audit_repeats >= 1, "verify.m must be >= 2 and verify.repeats >= 1");
    require(audit_alpha > 0.0 && audit_alpha < 1.0, "verify.alpha must lie in (0,1)");
    require(trigger_width >= 1 && trigger_width <= data.input_dim, "bwap.trigger_width must lie in [1, input_dim]");
    require(pgd_samples >= 1 && pgd_steps >= 1, "pgd_samples and pgd_steps must be positive");
    for (const auto& a : attacks)
      require(a == "finetune" || a == "prune" || a == "unlearn" || a == "overwrite" || a == "pgd" || a == "adaptive",
              "unknown attack '" + a + "'");
  }

  SwapConfig swap_config(const std::vector<std::string>& T, std::uint64_t stage_seed) const {
    SwapConfig s;
    s.epsilon = swap_epsilon;
    s.lambda_ = swap_lambda;
    s.verification_classes = T;
    s.epochs = swap_epochs;
    s.learning_rate = swap_lr;
    s.batch_size = swap_batch_size;
    s.seed = stage_seed;
    return s;
  }

  BwapConfig bwap_config(std::uint64_t stage_seed) const {
    BwapConfig b = BwapConfig::patch(data.input_dim, trigger_width, trigger_value);
    b.target_class = bwap_target;
    b.poison_rate = poison_rate;
    b.epochs = bwap_epochs;
    b.learning_rate = bwap_lr;
    b.context_lr_scale = bwap_context_lr_scale;
    b.seed = stage_seed;
    return b;
  }

  AuditConfig audit_config(std::uint64_t stage_seed) const {
    return {audit_m, audit_tau, audit_alpha, audit_repeats, stage_seed};
  }
};

namespace detail {

template <typename T>
std::string to_text(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest text that round-trips
    return std::string(buf, r.ptr);
  } else {
    return std::to_string(v);
  }
}

template <typename T>
std::string to_text(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + to_text(v[i]);
  return s;
}

template <typename T>
void from_text(const std::string& key, const std::string& s, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1") out = true;
    else if (s == "false" || s == "0") out = false;
    else throw ContractViolation("config key " + key + ": expected true/false, got '" + s + "'");
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = s;
  } else {
    std::istringstream in(s);
    T v{};
    if (!(in >> v) || !(in >> std::ws).eof())
      throw ContractViolation("config key " + key + ": cannot parse '" + s + "'");
    out = v;
  }
}

template <typename T>
void from_text(const std::string& key, const std::string& s, std::vector<T>& out) {
  out.clear();
  if (s.empty()) return;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = s.find(',', start);
    std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    T v{};
    from_text(key, item, v);
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
}

}  // namespace detail

inline boost::property_tree::ptree to_ptree(const ExperimentConfig& c) {
  boost::property_tree::ptree pt;
  ExperimentConfig::visit(c, [&](const std::string& key, const auto& field) { pt.put(key, detail::to_text(field)); });
  return pt;
}

// Unknown keys are rejected so typos cannot silently fall back to defaults.
inline ExperimentConfig from_ptree(const boost::property_tree::ptree& pt) {
  ExperimentConfig c;
  std::set<std::string> known;
  ExperimentConfig::visit(c, [&](const std::string& key, auto& field) {
    known.insert(key);
    if (auto v = pt.get_optional<std::string>(key)) detail::from_text(key, *v, field);
  });
  for (const auto& [section, body] : pt)
    for (const auto& [key, value] : body)
      if (!known.count(section + "." + key)) throw ContractViolation("unknown config key: " + section + "." + key);
  c.validate();
  return c;
}

// `overrides` are "section.key=value" strings applied after the file.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  boost::property_tree::ptree pt = to_ptree(ExperimentConfig{});
  if (!path.empty()) {
    boost::property_tree::ptree file;
    boost::property_tree::read_ini(path, file);
    for (const auto& [section, body] : file)
      for (const auto& [key, value] : body) pt.put(section + "." + key, value.data());
  }
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    require(eq != std::string::npos && o.find('.') < eq, "override must look like section.key=value: " + o);
    pt.put(o.substr(0, eq), o.substr(eq + 1));
  }
  return from_ptree(pt);
}

inline std::string config_text(const ExperimentConfig& c) {
  std::ostringstream out;
  boost::property_tree::write_ini(out, to_ptree(c));
  return out.str();
}

}  // namespace swapwm
