#pragma once

#include <cmath>
#include <vector>

#include "catch_amalgamated.hpp"
#include "swapwm/harness.hpp"

namespace swapwm::testing {

// Shared world with the shipped defaults; built once per test binary.
inline const World& default_world() {
  static const World w = [] {
    ExperimentConfig c;
    c.output_dir.clear();
    return build_world(c);
  }();
  return w;
}

inline ModelConfig small_model_config(std::uint64_t seed = 11) {
  ModelConfig c;
  c.input_dim = 6;
  c.token_dim = 5;
  c.feature_dim = 4;
  c.image_hidden = {7};
  c.text_hidden = {6};
  c.prompt_len_visual = 2;
  c.prompt_len_text = 3;
  c.rng_seed = seed;
  return c;
}

// Hand softmax, independent of the library's row-wise version.
inline std::vector<double> hand_softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = v > mx ? v : mx;
  std::vector<double> e;
  double s = 0.0;
  for (double v : z) {
    e.push_back(std::exp(v - mx));
    s += e.back();
  }
  for (double& v : e) v /= s;
  return e;
}

// Oracle answering with a fixed class ordering or a fixed prediction, for metric tests.
class TableOracle : public SuspiciousOracle {
 public:
  explicit TableOracle(std::function<Eigen::RowVectorXd(const Eigen::VectorXd&, std::size_t)> f) : f_(std::move(f)) {}
  Eigen::MatrixXd query_batch(const Eigen::MatrixXd& X, const std::vector<std::string>& classes) const override {
    Eigen::MatrixXd P(X.cols(), static_cast<Eigen::Index>(classes.size()));
    for (Eigen::Index i = 0; i < X.cols(); ++i) P.row(i) = f_(X.col(i), classes.size());
    return P;
  }

 private:
  std::function<Eigen::RowVectorXd(const Eigen::VectorXd&, std::size_t)> f_;
};

}  // namespace swapwm::testing
