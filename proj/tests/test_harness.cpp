#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace swapwm;
using namespace swapwm::testing;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

// Small enough to run every stage in a couple of seconds.
std::vector<std::string> tiny_overrides() {
  return {"data.num_classes=6",        "data.samples_per_class=40", "data.input_dim=8",
          "data.shots_per_class=4",    "model.token_dim=16",        "model.feature_dim=16",
          "model.image_hidden=32",     "model.text_hidden=32",      "model.align_iterations=300",
          "swap.epochs=30",            "bwap.epochs=30",            "bwap.trigger_width=2",
          "verify.m=20",               "attacks.finetune_curve_epochs=2", "attacks.prune_fractions=0,0.5",
          "attacks.pgd_samples=10",    "attacks.pgd_steps=3",       "sweeps.epsilons=0.5",
          "sweeps.lambdas=1"};
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("swapwm_harness_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("harmless degree: worked example, sign, and mismatched sample counts") {
  CHECK(harmless_degree({true, false, false, true}, {true, true, false, false}) == 0.0);
  CHECK(harmless_degree({true, true, false, false}, {false, false, false, false}) == 0.5);
  CHECK(harmless_degree({false, false}, {true, false}) == -0.5);
  CHECK_THROWS_AS(harmless_degree({true}, {true, false}), ContractViolation);
}

TEST_CASE("harmonic mean and accuracy helpers") {
  CHECK(harmonic_mean(0.5, 1.0) == Approx(2.0 / 3.0));
  CHECK(harmonic_mean(0.8, 0.8) == Approx(0.8));
  CHECK_THROWS_AS(harmonic_mean(0.0, 1.0), ContractViolation);
  TableOracle second([](const Eigen::VectorXd&, std::size_t C) {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Constant(static_cast<Eigen::Index>(C), 0.0);
    r(1) = 1.0;
    return r;
  });
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, 4);
  CHECK(acc(second, X, {1, 1, 0, 2}, {"a", "b", "c"}) == 0.5);
  CHECK_THROWS_AS(acc(second, X, {1, 1, 0, 3}, {"a", "b", "c"}), ContractViolation);
}

TEST_CASE("config: defaults survive an INI round trip") {
  ExperimentConfig d;
  std::istringstream in(config_text(d));
  boost::property_tree::ptree pt;
  boost::property_tree::read_ini(in, pt);
  ExperimentConfig back = from_ptree(pt);
  CHECK(config_text(back) == config_text(d));
}

TEST_CASE("config: the shipped default.ini equals the built-in defaults") {
  ExperimentConfig shipped = load_config(SWAPWM_SOURCE_DIR "/configs/default.ini");
  CHECK(config_text(shipped) == config_text(ExperimentConfig{}));
}

TEST_CASE("config: overrides apply, unknown keys and bad values are rejected") {
  ExperimentConfig c = load_config("", {"swap.epsilon=0.25", "attacks.enabled=prune,finetune", "sweeps.enabled=false"});
  CHECK(c.swap_epsilon == 0.25);
  CHECK(c.attacks == std::vector<std::string>{"prune", "finetune"});
  CHECK_FALSE(c.run_sweeps);
  CHECK_THROWS_AS(load_config("", {"swap.epsilonn=0.25"}), ContractViolation);
  CHECK_THROWS_AS(load_config("", {"swap.epochs=many"}), ContractViolation);
  CHECK_THROWS_AS(load_config("", {"embed.method=other"}), ContractViolation);
  CHECK_THROWS_AS(load_config("", {"attacks.enabled=melt"}), ContractViolation);
  CHECK_THROWS_AS(load_config("", {"noequals"}), ContractViolation);
  CHECK(load_config("", {"model.image_hidden=8,16"}).model.image_hidden == std::vector<int>{8, 16});
}

TEST_CASE("stage seeds are distinct per tag and stable per master seed") {
  ExperimentConfig c;
  std::set<std::uint64_t> seen;
  for (const char* tag : {"data", "split", "model", "vocab", "fewshot", "embed-swap", "audit", "finetune"})
    CHECK(seen.insert(derive_seed(c.seed, tag)).second);
  CHECK(derive_seed(3, "data") == derive_seed(3, "data"));
  CHECK(derive_seed(3, "data") != derive_seed(4, "data"));
}

TEST_CASE("curves round-trip through JSON") {
  Curve c{"prune", "pruned fraction", {0.0, 0.5}, {1.0, 0.9}, {0.8, 0.7}};
  Curve back = Curve::from_json(c.to_json());
  CHECK(back.name == c.name);
  CHECK(back.x == c.x);
  CHECK(back.wsr == c.wsr);
  CHECK(back.acc_novel == c.acc_novel);
}

TEST_CASE("plot writers: escaped SVG and aligned columns") {
  fs::path dir = scratch("plot");
  fs::create_directories(dir);
  Figure f;
  f.title = "a < b & c";
  f.x_label = "x";
  f.series.push_back({"s1", {1, 2, 3}, {0.1, 0.2, 0.3}});
  f.series.push_back({"s2", {1, 2, 3}, {0.3, 0.2, 0.1}});
  write_svg(f, (dir / "f.svg").string());
  write_columns(f, (dir / "f.dat").string());
  std::ifstream svg(dir / "f.svg");
  std::string text((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
  CHECK(text.find("a &lt; b &amp; c") != std::string::npos);
  CHECK(text.find("<polyline") != std::string::npos);
  std::ifstream dat(dir / "f.dat");
  std::string line;
  int rows = 0;
  while (std::getline(dat, line))
    if (!line.empty() && line[0] != '#') ++rows;
  CHECK(rows == 3);
  f.series[1].x.pop_back();
  CHECK_THROWS_AS(write_svg(f, (dir / "g.svg").string()), ContractViolation);
  fs::remove_all(dir);
}

TEST_CASE("end-to-end scenario persists every artifact and is reproducible") {
  fs::path dir = scratch("run");
  auto ov = tiny_overrides();
  ov.push_back("experiment.output_dir=" + dir.string());
  ExperimentConfig cfg = load_config("", ov);
  ResultRecord r = run_experiment(cfg);
  INFO(r.error);
  REQUIRE(r.failed_stage.empty());
  for (const char* f : {"config.echo", "result.json", "checkpoints/watermarked.ckpt", "checkpoints/watermarked.log.jsonl",
                        "checkpoints/bwap.ckpt", "audits/watermarked.json", "audits/independent_prompt.json",
                        "audits/independent_classes.json", "audits/bwap.json", "attacks/finetune.json",
                        "attacks/prune.json", "attacks/unlearn.json", "attacks/overwrite.json", "attacks/pgd-ce.json",
                        "attacks/pgd-order.json", "attacks/adaptive.json", "plots/finetune.svg", "plots/prune.dat",
                        "plots/epsilon.svg", "plots/lambda.svg"})
    CHECK(fs::exists(dir / f));
  CHECK(r.swap_loss_curve.size() == 30);
  CHECK(r.curve("finetune")->x.size() == 6);
  CHECK(r.attack("overwrite") != nullptr);
  CHECK(r.watermarked.wsr >= 0.0);
  CHECK(r.watermarked.wsr <= 1.0);

  std::ifstream in(dir / "result.json");
  nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j == r.to_json());
  ResultRecord back = record_from_json(j);
  CHECK(back.curves.size() == r.curves.size());
  CHECK(back.seed == r.seed);

  auto [m, p] = load_checkpoint((dir / "checkpoints" / "watermarked.ckpt").string());
  CHECK(evaluate_prompts(build_world(cfg), p, build_world(cfg).T).wsr == Approx(r.watermarked.wsr));

  ResultRecord again = run_experiment(cfg);
  CHECK(again.to_json(false) == r.to_json(false));
  fs::remove_all(dir);
}

TEST_CASE("a failing stage is named in the record instead of propagating") {
  auto ov = tiny_overrides();
  ov.push_back("experiment.output_dir=");
  ov.push_back("verify.m=1000");
  ResultRecord r = run_experiment(load_config("", ov));
  CHECK(r.failed_stage == "audit");
  CHECK(r.error.find("audit size m") != std::string::npos);
}
