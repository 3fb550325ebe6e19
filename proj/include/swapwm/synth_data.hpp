#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "swapwm/errors.hpp"
#include "swapwm/rng.hpp"

namespace swapwm {

struct DatasetSpec {
  int num_classes = 10;
  int samples_per_class = 100;
  int input_dim = 32;
  double cluster_std = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    require(num_classes >= 4, "num_classes must be >= 4");
    require(samples_per_class > 0 && input_dim > 0, "samples_per_class and input_dim must be positive");
    require(cluster_std >= 0.0, "cluster_std must be non-negative");
  }
};

struct LabeledSample {
  Eigen::VectorXd x;
  int y = 0;
  int id = 0;  // position in the generated dataset; identifies a sample across subsets
};

struct Dataset {
  DatasetSpec spec;
  Eigen::MatrixXd means;  // [input_dim x num_classes]
  std::vector<LabeledSample> samples;
};

struct SplitSpec {
  std::vector<int> base_classes;
  std::vector<int> novel_classes;
};

struct Split {
  std::vector<LabeledSample> base;
  std::vector<LabeledSample> novel;
  SplitSpec spec;
};

inline Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset d;
  d.spec = spec;
  d.means = rng.normal_matrix(spec.num_classes, spec.input_dim).transpose();
  for (int k = 0; k < spec.num_classes; ++k) {
    for (int i = 0; i < spec.samples_per_class; ++i) {
      LabeledSample s;
      s.x = d.means.col(k) + rng.normal_vector(spec.input_dim, spec.cluster_std);
      s.y = k;
      s.id = static_cast<int>(d.samples.size());
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

inline Split split_base_novel(const Dataset& d, double base_fraction, std::uint64_t seed) {
  require(base_fraction > 0.0 && base_fraction < 1.0, "base_fraction must lie in (0, 1)");
  const int K = d.spec.num_classes;
  const int n_base = static_cast<int>(std::lround(base_fraction * K));
  require(n_base >= 1 && n_base < K, "base_fraction leaves one side of the split empty");
  std::vector<int> classes(K);
  for (int k = 0; k < K; ++k) classes[k] = k;
  Rng rng(seed);
  rng.shuffle(classes);
  Split s;
  s.spec.base_classes.assign(classes.begin(), classes.begin() + n_base);
  s.spec.novel_classes.assign(classes.begin() + n_base, classes.end());
  std::sort(s.spec.base_classes.begin(), s.spec.base_classes.end());
  std::sort(s.spec.novel_classes.begin(), s.spec.novel_classes.end());
  std::set<int> base(s.spec.base_classes.begin(), s.spec.base_classes.end());
  for (const auto& smp : d.samples) (base.count(smp.y) ? s.base : s.novel).push_back(smp);
  return s;
}

inline std::vector<int> classes_of(const std::vector<LabeledSample>& samples) {
  std::set<int> c;
  for (const auto& s : samples) c.insert(s.y);
  return {c.begin(), c.end()};
}

// Exactly `shots` per class, without replacement; result order is shuffled.
inline std::vector<LabeledSample> sample_few_shot(const std::vector<LabeledSample>& base, int shots,
                                                  std::uint64_t seed) {
  require(shots >= 1, "shots_per_class must be >= 1");
  Rng rng(seed);
  std::vector<LabeledSample> out;
  for (int k : classes_of(base)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < base.size(); ++i)
      if (base[i].y == k) idx.push_back(i);
    require(static_cast<int>(idx.size()) >= shots,
            "class " + std::to_string(k) + " has " + std::to_string(idx.size()) + " samples, " +
                std::to_string(shots) + " requested");
    rng.shuffle(idx);
    for (int j = 0; j < shots; ++j) out.push_back(base[idx[static_cast<std::size_t>(j)]]);
  }
  rng.shuffle(out);
  return out;
}

inline std::vector<LabeledSample> exclude(const std::vector<LabeledSample>& from, const std::vector<LabeledSample>& drop) {
  std::set<int> ids;
  for (const auto& s : drop) ids.insert(s.id);
  std::vector<LabeledSample> out;
  for (const auto& s : from)
    if (!ids.count(s.id)) out.push_back(s);
  return out;
}

inline std::size_t overlap(const std::vector<LabeledSample>& a, const std::vector<LabeledSample>& b) {
  std::set<int> ids;
  for (const auto& s : a) ids.insert(s.id);
  std::size_t n = 0;
  for (const auto& s : b) n += ids.count(s.id);
  return n;
}

inline Eigen::MatrixXd stack_inputs(const std::vector<LabeledSample>& samples) {
  require(!samples.empty(), "empty sample set");
  Eigen::MatrixXd X(samples.front().x.size(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = samples[i].x;
  return X;
}

inline std::pair<double, double> input_bounds(const Dataset& d) {
  double lo = d.samples.front().x.minCoeff(), hi = d.samples.front().x.maxCoeff();
  for (const auto& s : d.samples) {
    lo = std::min(lo, s.x.minCoeff());
    hi = std::max(hi, s.x.maxCoeff());
  }
  return {lo, hi};
}

// Columnar text: "# swapwm-dataset input_dim=D num_samples=N num_classes=K", then one row per sample, label last.
inline void export_dataset(const std::vector<LabeledSample>& samples, int input_dim, int num_classes,
                           const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write dataset file: " + path);
  out << "# swapwm-dataset input_dim=" << input_dim << " num_samples=" << samples.size()
      << " num_classes=" << num_classes << "\n";
  out.precision(17);
  for (const auto& s : samples) {
    for (Eigen::Index j = 0; j < s.x.size(); ++j) out << s.x(j) << ' ';
    out << s.y << "\n";
  }
}

inline std::vector<LabeledSample> import_dataset(const std::string& path, int* num_classes = nullptr) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read dataset file: " + path);
  int dim = 0, k = 0;
  std::size_t n = 0;
  std::string header;
  std::getline(in, header);
  if (std::sscanf(header.c_str(), "# swapwm-dataset input_dim=%d num_samples=%zu num_classes=%d", &dim, &n, &k) != 3)
    throw ContractViolation("malformed dataset header in " + path);
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSample s;
    s.x.resize(dim);
    for (int j = 0; j < dim; ++j)
      if (!(in >> s.x(j))) throw ContractViolation("truncated dataset row " + std::to_string(i));
    if (!(in >> s.y) || s.y < 0 || s.y >= k) throw ContractViolation("bad label in row " + std::to_string(i));
    s.id = static_cast<int>(i);
    out.push_back(std::move(s));
  }
  if (num_classes) *num_classes = k;
  return out;
}

}  // namespace swapwm
