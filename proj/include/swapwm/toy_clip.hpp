#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "swapwm/errors.hpp"
#include "swapwm/rng.hpp"

namespace swapwm {

struct ModelConfig {
  int input_dim = 32;
  int token_dim = 64;
  int feature_dim = 64;
  std::vector<int> image_hidden{256};
  std::vector<int> text_hidden{256};
  int prompt_len_visual = 1;
  int prompt_len_text = 4;
  double temperature = 0.07;
  // Norm of the shared offset added to every image feature before normalization.
  double cone = 5.0;
  // Sharpness of token-to-prompt attention in the text pool.
  double attention_scale = 4.0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(input_dim > 0 && token_dim > 0, "input_dim and token_dim must be positive");
    require(feature_dim >= 2, "feature_dim must be >= 2");
    for (int h : image_hidden) require(h > 0, "image hidden widths must be positive");
    for (int h : text_hidden) require(h > 0, "text hidden widths must be positive");
    require(prompt_len_visual >= 0 && prompt_len_text >= 0, "prompt lengths must be non-negative");
    require(temperature > 0.0, "temperature must be positive");
    require(cone >= 0.0 && attention_scale >= 0.0, "cone and attention_scale must be non-negative");
  }
};

// Trainable state. `context` holds class-specific context vectors; only the backdoor baseline uses it.
struct PromptParams {
  Eigen::MatrixXd visual;  // [prompt_len_visual x input_dim]
  Eigen::MatrixXd text;    // [prompt_len_text x token_dim]
  std::map<std::string, Eigen::VectorXd> context;

  static PromptParams zeros(const ModelConfig& c) {
    PromptParams p;
    p.visual = Eigen::MatrixXd::Zero(c.prompt_len_visual, c.input_dim);
    p.text = Eigen::MatrixXd::Zero(c.prompt_len_text, c.token_dim);
    return p;
  }

  // Small random text rows: an all-zero prompt is a saddle of the attention pool.
  static PromptParams init(const ModelConfig& c, Rng& rng, double text_std = 0.02) {
    PromptParams p = zeros(c);
    p.text = rng.normal_matrix(c.prompt_len_text, c.token_dim, text_std);
    return p;
  }

  PromptParams zeros_like() const {
    PromptParams p;
    p.visual = Eigen::MatrixXd::Zero(visual.rows(), visual.cols());
    p.text = Eigen::MatrixXd::Zero(text.rows(), text.cols());
    for (const auto& [k, v] : context) p.context[k] = Eigen::VectorXd::Zero(v.size());
    return p;
  }

  void axpy(double a, const PromptParams& g) {
    visual += a * g.visual;
    text += a * g.text;
    for (auto& [k, v] : context) {
      auto it = g.context.find(k);
      if (it != g.context.end()) v += a * it->second;
    }
  }

  bool all_finite() const {
    if (!visual.allFinite() || !text.allFinite()) return false;
    for (const auto& [k, v] : context)
      if (!v.allFinite()) return false;
    return true;
  }

  std::size_t size() const {
    std::size_t n = static_cast<std::size_t>(visual.size() + text.size());
    for (const auto& [k, v] : context) n += static_cast<std::size_t>(v.size());
    return n;
  }

  // Visits every scalar in a fixed order: visual, text, then context by key.
  template <typename F>
  void for_each_entry(F&& f) {
    for (Eigen::Index i = 0; i < visual.size(); ++i) f(visual.data()[i]);
    for (Eigen::Index i = 0; i < text.size(); ++i) f(text.data()[i]);
    for (auto& [k, v] : context)
      for (Eigen::Index i = 0; i < v.size(); ++i) f(v.data()[i]);
  }

  bool operator==(const PromptParams& o) const {
    if (visual.rows() != o.visual.rows() || visual.cols() != o.visual.cols()) return false;
    if (text.rows() != o.text.rows() || text.cols() != o.text.cols()) return false;
    if (visual != o.visual || text != o.text || context.size() != o.context.size()) return false;
    for (const auto& [k, v] : context) {
      auto it = o.context.find(k);
      if (it == o.context.end() || it->second.size() != v.size() || it->second != v) return false;
    }
    return true;
  }
};

class Vocabulary {
 public:
  void add(const std::string& name, Eigen::VectorXd embedding) {
    require(!name.empty(), "token name must be non-empty");
    require(name.find_first_of(",\n=") == std::string::npos, "token name may not contain ',', '=' or newline");
    require(!contains(name), "duplicate token: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    embeddings_.push_back(std::move(embedding));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Eigen::VectorXd& embedding(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UnknownToken(name);
    return embeddings_[it->second];
  }

  Eigen::VectorXd& embedding(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UnknownToken(name);
    return embeddings_[it->second];
  }

  const std::vector<std::string>& names() const { return names_; }

  // The K original (in-distribution) classes, in label order.
  std::vector<std::string> original;

 private:
  std::vector<std::string> names_;
  std::vector<Eigen::VectorXd> embeddings_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Dense {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

// tanh on hidden layers, linear output layer.
struct Mlp {
  std::vector<Dense> layers;

  struct Cache {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = input, acts[l + 1] = output of layer l
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& in, Cache* cache) const {
    Eigen::MatrixXd a = in;
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(in);
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Eigen::MatrixXd pre = (layers[l].W * a).colwise() + layers[l].b;
      a = (l + 1 < layers.size()) ? Eigen::MatrixXd(pre.array().tanh()) : pre;
      if (cache) cache->acts.push_back(a);
    }
    return a;
  }

  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& dout) const {
    Eigen::MatrixXd d = dout;
    for (std::size_t l = layers.size(); l-- > 0;) {
      if (l + 1 < layers.size()) d = (d.array() * (1.0 - cache.acts[l + 1].array().square())).matrix();
      d = layers[l].W.transpose() * d;
    }
    return d;
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(layers.front().W.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers.back().W.rows()); }
};

struct DualEncoderModel {
  ModelConfig config;
  Mlp image;
  Mlp text;
  Vocabulary vocab;

  // Frozen weights: Gaussian with std 1/sqrt(fan_in); the cone offset is folded into the image output bias.
  static DualEncoderModel create(const ModelConfig& cfg) {
    cfg.validate();
    DualEncoderModel m;
    m.config = cfg;
    Rng rng(cfg.rng_seed);
    auto build = [&rng](int in, const std::vector<int>& hidden, int out) {
      Mlp mlp;
      std::vector<int> dims{in};
      dims.insert(dims.end(), hidden.begin(), hidden.end());
      dims.push_back(out);
      for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        double s = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        Dense d;
        d.W = rng.normal_matrix(dims[l + 1], dims[l], s);
        d.b = rng.normal_vector(dims[l + 1], s);
        mlp.layers.push_back(std::move(d));
      }
      return mlp;
    };
    m.image = build(cfg.input_dim, cfg.image_hidden, cfg.feature_dim);
    m.text = build(cfg.token_dim, cfg.text_hidden, cfg.feature_dim);
    Eigen::VectorXd u = rng.normal_vector(cfg.feature_dim);
    m.image.layers.back().b += cfg.cone * u / u.norm();
    return m;
  }

  bool same_backbone(const DualEncoderModel& o) const {
    auto eq = [](const Mlp& a, const Mlp& b) {
      if (a.layers.size() != b.layers.size()) return false;
      for (std::size_t l = 0; l < a.layers.size(); ++l)
        if (a.layers[l].W != b.layers[l].W || a.layers[l].b != b.layers[l].b) return false;
      return true;
    };
    return eq(image, o.image) && eq(text, o.text);
  }
};

struct LogitVector {
  std::vector<double> values;
  std::vector<std::string> class_ids;
};

struct ProbabilityVector {
  std::vector<double> values;
  std::vector<std::string> class_ids;
};

// Forward pass over a batch (columns of X) against an ordered class list, with caches for backprop.
struct LogitTape {
  std::vector<std::string> classes;
  Eigen::MatrixXd X;
  Mlp::Cache image_cache;
  Eigen::MatrixXd image_raw;  // pre-normalization image output
  Eigen::VectorXd image_norm;
  Eigen::MatrixXd F;          // unit image features [feature_dim x N]
  Eigen::MatrixXd E;          // token embeddings incl. context [token_dim x C]
  Eigen::MatrixXd A;          // attention of tokens over prompt rows [prompt_len_text x C]
  Mlp::Cache text_cache;
  Eigen::MatrixXd text_raw;
  Eigen::VectorXd text_norm;
  Eigen::MatrixXd G;          // unit class features [feature_dim x C]
  Eigen::MatrixXd Z;          // logits [N x C]
};

namespace detail {

inline void normalize_columns(const Eigen::MatrixXd& raw, Eigen::MatrixXd& unit, Eigen::VectorXd& norms) {
  norms = raw.colwise().norm().transpose();
  unit = raw;
  for (Eigen::Index c = 0; c < raw.cols(); ++c) unit.col(c) /= norms(c);
}

inline Eigen::MatrixXd normalize_backward(const Eigen::MatrixXd& unit, const Eigen::VectorXd& norms,
                                          const Eigen::MatrixXd& dunit) {
  Eigen::MatrixXd d(unit.rows(), unit.cols());
  for (Eigen::Index c = 0; c < unit.cols(); ++c) {
    double proj = unit.col(c).dot(dunit.col(c));
    d.col(c) = (dunit.col(c) - proj * unit.col(c)) / norms(c);
  }
  return d;
}

}  // namespace detail

inline Eigen::MatrixXd pooled_visual_input(const DualEncoderModel& m, const PromptParams& p, const Eigen::MatrixXd& X) {
  require(X.rows() == m.config.input_dim, "sample dimension does not match input_dim");
  if (p.visual.rows() == 0) return X;
  require(p.visual.cols() == X.rows(), "visual prompt width does not match input_dim");
  Eigen::VectorXd mean = p.visual.colwise().mean().transpose();
  return X.colwise() + mean;
}

inline void forward_images(const DualEncoderModel& m, const PromptParams& p, const Eigen::MatrixXd& X, LogitTape& t) {
  require(X.allFinite(), "non-finite input sample");
  t.X = X;
  t.image_raw = m.image.forward(pooled_visual_input(m, p, X), &t.image_cache);
  detail::normalize_columns(t.image_raw, t.F, t.image_norm);
}

inline void forward_classes(const DualEncoderModel& m, const PromptParams& p, const std::vector<std::string>& classes,
                            LogitTape& t) {
  require(!classes.empty(), "class list must be non-empty");
  const Eigen::Index dt = m.config.token_dim;
  t.classes = classes;
  t.E.resize(dt, static_cast<Eigen::Index>(classes.size()));
  for (std::size_t c = 0; c < classes.size(); ++c) {
    Eigen::VectorXd e = m.vocab.embedding(classes[c]);
    auto it = p.context.find(classes[c]);
    if (it != p.context.end()) e += it->second;
    t.E.col(static_cast<Eigen::Index>(c)) = e;
  }
  Eigen::MatrixXd U = t.E;
  const Eigen::Index L = p.text.rows();
  if (L > 0) {
    require(p.text.cols() == dt, "text prompt width does not match token_dim");
    const double kappa = m.config.attention_scale / std::sqrt(static_cast<double>(dt));
    Eigen::MatrixXd S = kappa * (p.text * t.E);
    t.A.resize(L, S.cols());
    // Softmax over [null slot (score 0), prompt rows]; the null slot makes a zero prompt an exact identity.
    for (Eigen::Index c = 0; c < S.cols(); ++c) {
      double mx = std::max(0.0, S.col(c).maxCoeff());
      double z = std::exp(-mx);
      for (Eigen::Index j = 0; j < L; ++j) {
        t.A(j, c) = std::exp(S(j, c) - mx);
        z += t.A(j, c);
      }
      t.A.col(c) /= z;
    }
    U += p.text.transpose() * t.A;
  } else {
    t.A.resize(0, t.E.cols());
  }
  t.text_raw = m.text.forward(U, &t.text_cache);
  detail::normalize_columns(t.text_raw, t.G, t.text_norm);
}

inline LogitTape forward_logits(const DualEncoderModel& m, const PromptParams& p, const Eigen::MatrixXd& X,
                                const std::vector<std::string>& classes) {
  LogitTape t;
  forward_images(m, p, X, t);
  forward_classes(m, p, classes, t);
  t.Z = (t.F.transpose() * t.G) / m.config.temperature;
  return t;
}

struct Backprop {
  PromptParams grad;
  Eigen::MatrixXd dX;  // gradient w.r.t. raw inputs; empty unless requested
  Eigen::MatrixXd dE;  // gradient w.r.t. effective token embeddings [token_dim x C]
};

inline Backprop backward_logits(const DualEncoderModel& m, const PromptParams& p, const LogitTape& t,
                                const Eigen::MatrixXd& dZ, bool want_input_grad = false) {
  require(dZ.rows() == t.Z.rows() && dZ.cols() == t.Z.cols(), "dZ shape mismatch");
  Backprop out;
  out.grad = p.zeros_like();
  const double inv_tau = 1.0 / m.config.temperature;

  Eigen::MatrixXd dF = (t.G * dZ.transpose()) * inv_tau;
  Eigen::MatrixXd dG = (t.F * dZ) * inv_tau;

  Eigen::MatrixXd dIn = m.image.backward(t.image_cache, detail::normalize_backward(t.F, t.image_norm, dF));
  if (p.visual.rows() > 0) {
    Eigen::RowVectorXd dmean = dIn.rowwise().sum().transpose();
    out.grad.visual.rowwise() = dmean / static_cast<double>(p.visual.rows());
  }
  if (want_input_grad) out.dX = dIn;

  Eigen::MatrixXd dU = m.text.backward(t.text_cache, detail::normalize_backward(t.G, t.text_norm, dG));
  out.dE = dU;
  const Eigen::Index L = p.text.rows();
  if (L > 0) {
    const double kappa = m.config.attention_scale / std::sqrt(static_cast<double>(m.config.token_dim));
    Eigen::MatrixXd dA = p.text * dU;
    Eigen::MatrixXd dS(L, dA.cols());
    for (Eigen::Index c = 0; c < dA.cols(); ++c) {
      double abar = t.A.col(c).dot(dA.col(c));
      dS.col(c) = t.A.col(c).cwiseProduct(dA.col(c).array().matrix() - Eigen::VectorXd::Constant(L, abar));
    }
    out.grad.text = t.A * dU.transpose() + kappa * (dS * t.E.transpose());
    out.dE += kappa * (p.text.transpose() * dS);
  }
  for (std::size_t c = 0; c < t.classes.size(); ++c) {
    auto it = out.grad.context.find(t.classes[c]);
    if (it != out.grad.context.end()) it->second += out.dE.col(static_cast<Eigen::Index>(c));
  }
  return out;
}

inline Eigen::MatrixXd image_features(const DualEncoderModel& m, const PromptParams& p, const Eigen::MatrixXd& X) {
  LogitTape t;
  forward_images(m, p, X, t);
  return t.F;
}

inline Eigen::MatrixXd class_features(const DualEncoderModel& m, const PromptParams& p,
                                      const std::vector<std::string>& classes) {
  LogitTape t;
  forward_classes(m, p, classes, t);
  return t.G;
}

// [N x C] logits for a batch of column samples.
inline Eigen::MatrixXd batch_logits(const DualEncoderModel& m, const PromptParams& p, const Eigen::MatrixXd& X,
                                    const std::vector<std::string>& classes) {
  return (image_features(m, p, X).transpose() * class_features(m, p, classes)) / m.config.temperature;
}

inline Eigen::VectorXd encode_image(const DualEncoderModel& m, const PromptParams& p, const Eigen::VectorXd& x) {
  return image_features(m, p, x).col(0);
}

inline Eigen::VectorXd encode_class(const DualEncoderModel& m, const PromptParams& p, const std::string& token) {
  return class_features(m, p, {token}).col(0);
}

inline LogitVector similarity_logits(const DualEncoderModel& m, const PromptParams& p, const Eigen::VectorXd& x,
                                     const std::vector<std::string>& classes) {
  Eigen::MatrixXd z = batch_logits(m, p, x, classes);
  LogitVector out;
  out.class_ids = classes;
  out.values.assign(z.data(), z.data() + z.size());
  return out;
}

// Row-wise softmax with max subtraction.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& Z) {
  Eigen::MatrixXd P(Z.rows(), Z.cols());
  for (Eigen::Index r = 0; r < Z.rows(); ++r) {
    double mx = Z.row(r).maxCoeff();
    Eigen::RowVectorXd e = (Z.row(r).array() - mx).exp().matrix();
    P.row(r) = e / e.sum();
  }
  return P;
}

inline ProbabilityVector predict_probabilities(const LogitVector& logits) {
  require(!logits.values.empty(), "empty logit vector");
  Eigen::RowVectorXd z = Eigen::Map<const Eigen::RowVectorXd>(logits.values.data(),
                                                              static_cast<Eigen::Index>(logits.values.size()));
  require(z.allFinite(), "non-finite logits");
  Eigen::MatrixXd p = softmax_rows(z);
  ProbabilityVector out;
  out.class_ids = logits.class_ids;
  out.values.assign(p.data(), p.data() + p.size());
  return out;
}

using LossFn = std::function<double(const PromptParams&, PromptParams* grad)>;

struct GradientRecord {
  double loss = 0.0;
  PromptParams grad;
};

inline GradientRecord gradient(const LossFn& loss, const PromptParams& prompts) {
  GradientRecord r;
  r.grad = prompts.zeros_like();
  r.loss = loss(prompts, &r.grad);
  if (!std::isfinite(r.loss)) throw DivergenceError("non-finite loss");
  if (!r.grad.all_finite()) throw DivergenceError("non-finite gradient");
  return r;
}

// Fresh Gaussian token: the out-of-distribution label the backdoor baseline targets.
inline void add_token(DualEncoderModel& m, const std::string& name, Rng& rng) {
  m.vocab.add(name, rng.normal_vector(m.config.token_dim));
}

// "<prefix> 1".."<prefix> n": a shared Gaussian base plus per-member Gaussian spread.
inline std::vector<std::string> add_token_family(DualEncoderModel& m, const std::string& prefix, int n, double spread,
                                                 Rng& rng) {
  require(n >= 2, "a verification family needs at least two tokens");
  Eigen::VectorXd base = rng.normal_vector(m.config.token_dim);
  std::vector<std::string> names;
  for (int i = 1; i <= n; ++i) {
    std::string name = prefix + " " + std::to_string(i);
    m.vocab.add(name, base + rng.normal_vector(m.config.token_dim, spread));
    names.push_back(name);
  }
  return names;
}

struct AlignmentConfig {
  int iterations = 1500;
  double learning_rate = 0.05;
  double init_std = 0.1;
};

// Stands in for contrastive pretraining: fits each class token so its promptless text feature
// points at the image feature of its class anchor. Adam on mean (1 - cosine).
inline double align_vocabulary(DualEncoderModel& m, const std::vector<std::string>& names,
                               const Eigen::MatrixXd& anchors, const AlignmentConfig& cfg, Rng& rng) {
  require(anchors.cols() == static_cast<Eigen::Index>(names.size()), "one anchor per class required");
  require(names.size() >= 2, "at least two original classes required");
  for (const auto& n : names) m.vocab.add(n, rng.normal_vector(m.config.token_dim, cfg.init_std));
  m.vocab.original = names;

  const PromptParams zero = PromptParams::zeros(m.config);
  const Eigen::MatrixXd target = image_features(m, zero, anchors);
  const Eigen::Index K = anchors.cols();
  Eigen::MatrixXd C(m.config.token_dim, K);
  for (Eigen::Index k = 0; k < K; ++k) C.col(k) = m.vocab.embedding(names[static_cast<std::size_t>(k)]);

  Eigen::MatrixXd mom = Eigen::MatrixXd::Zero(C.rows(), C.cols());
  Eigen::MatrixXd vel = mom;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double loss = 0.0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    for (Eigen::Index k = 0; k < K; ++k) m.vocab.embedding(names[static_cast<std::size_t>(k)]) = C.col(k);
    LogitTape t;
    forward_classes(m, zero, names, t);
    loss = 1.0 - (t.G.cwiseProduct(target)).colwise().sum().mean();
    Eigen::MatrixXd dG = -target / static_cast<double>(K);
    Eigen::MatrixXd grad = m.text.backward(t.text_cache, detail::normalize_backward(t.G, t.text_norm, dG));
    mom = b1 * mom + (1 - b1) * grad;
    vel = b2 * vel + (1 - b2) * grad.cwiseProduct(grad);
    double c1 = 1 - std::pow(b1, it), c2 = 1 - std::pow(b2, it);
    C -= (cfg.learning_rate * (mom / c1).array() / ((vel / c2).array().sqrt() + eps)).matrix();
  }
  for (Eigen::Index k = 0; k < K; ++k) m.vocab.embedding(names[static_cast<std::size_t>(k)]) = C.col(k);
  return loss;
}

}  // namespace swapwm
