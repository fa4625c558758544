#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "teddy/dataset.hpp"
#include "teddy/experiment.hpp"
#include "teddy/pool.hpp"
#include "test_util.hpp"

using namespace teddy;
using nlohmann::json;
using teddy::testutil::TempDir;

namespace {

struct CliFixture {
  TempDir root{"cli"};
  std::ostringstream sink;
  cli::Env env;

  CliFixture() {
    env.data_root = root.path() / "data";
    env.out_root = root.path() / "out";
    env.out = &sink;
    std::filesystem::create_directories(env.data_root);
    std::filesystem::create_directories(env.out_root);
  }

  std::filesystem::path write_config(const std::string& name, const json& j) {
    auto path = root.path() / name;
    std::ofstream f(path);
    f << j.dump(2);
    return path;
  }

  std::string output() const { return sink.str(); }
};

json prior_config() {
  return json{{"seed", 11},
              {"data", {{"name", "gauss-grid-4"}}},
              {"arch", "toy-bn-1"},
              {"window", {{"T_b", 1}, {"T_e", 8}, {"m", 1}}},
              {"stage_unit", "step"},
              {"hp", {{"lr", 0.05}, {"batch_size", 32}, {"lr_schedule", "constant"}}},
              {"out", "pool_prior"}};
}

}  // namespace

TEST_CASE("pool-prior command") {
  CliFixture fx;

  SUBCASE("window arithmetic from the paper tables") {
    json cfg = prior_config();
    cfg["window"] = {{"T_b", 1}, {"T_e", 41}, {"m", 5}};
    REQUIRE(cli::cmd_pool_prior(fx.write_config("p.json", cfg), fx.env) == cli::kExitOk);
    PoolManifest pool = load_pool_manifest(fx.env.out_root / "pool_prior");
    CHECK(pool.size() == 9);
  }

  SUBCASE("missing window field names its path") {
    json cfg = prior_config();
    cfg["window"].erase("T_e");
    int code = cli::cmd_pool_prior(fx.write_config("p.json", cfg), fx.env);
    CHECK(code == cli::kExitValidation);
    CHECK(fx.output().find("window.T_e") != std::string::npos);
  }

  SUBCASE("existing artifact is refused without force") {
    json cfg = prior_config();
    REQUIRE(cli::cmd_pool_prior(fx.write_config("p.json", cfg), fx.env) == cli::kExitOk);
    CHECK(cli::cmd_pool_prior(fx.write_config("p.json", cfg), fx.env) == cli::kExitValidation);
    fx.env.force = true;
    CHECK(cli::cmd_pool_prior(fx.write_config("p.json", cfg), fx.env) == cli::kExitOk);
  }

  SUBCASE("a concurrent lock refuses the write") {
    json cfg = prior_config();
    std::filesystem::create_directories(fx.env.out_root / "pool_prior");
    std::ofstream(fx.env.out_root / "pool_prior" / ".lock") << "pid 0\n";
    CHECK(cli::cmd_pool_prior(fx.write_config("p.json", cfg), fx.env) == cli::kExitValidation);
  }
}

TEST_CASE("pool-post command") {
  CliFixture fx;
  json cfg{{"seed", 13},
           {"data", {{"name", "gauss-grid-4"}}},
           {"base", {{"arch", "convnet-3"}, {"train_epochs", 2},
                     {"hp", {{"lr", 0.1}, {"batch_size", 50}}}}},
           {"prune", {{"target_flops_ratio", 0.6}, {"finetune_steps", 2}}},
           {"count", 3},
           {"hp", {{"lr", 0.02}, {"batch_size", 50}}},
           {"out", "pool_post"}};
  REQUIRE(cli::cmd_pool_post(fx.write_config("pp.json", cfg), fx.env) == cli::kExitOk);
  PoolManifest pool = load_pool_manifest(fx.env.out_root / "pool_post");
  CHECK(pool.size() == 3);
  CHECK(pool.strategy == "post");
}

TEST_CASE("full pipeline chains records and artifacts") {
  CliFixture fx;

  REQUIRE(cli::cmd_pool_prior(fx.write_config("pool.json", prior_config()), fx.env) == cli::kExitOk);

  json distill_cfg{{"seed", 21},
                   {"pool", "pool_prior"},
                   {"data", {{"name", "gauss-grid-4"}}},
                   {"ipc", 2},
                   {"synthesis",
                    {{"iterations", 40}, {"ensemble_n", 2}, {"u", 1.0}, {"lr", 0.05}, {"init", "real"}}},
                   {"out", "synth"}};
  REQUIRE(cli::cmd_distill(fx.write_config("distill.json", distill_cfg), fx.env) == cli::kExitOk);
  CHECK(std::filesystem::exists(fx.env.out_root / "synth" / "data.tdy"));
  CHECK(std::filesystem::exists(fx.env.out_root / "synth" / "loss_history.tsv"));

  json relabel_cfg{{"seed", 23},
                   {"synth", "synth"},
                   {"pool", "pool_prior"},
                   {"augment", "dsa-basic"},
                   {"out", "synth_soft"}};
  REQUIRE(cli::cmd_relabel(fx.write_config("relabel.json", relabel_cfg), fx.env) == cli::kExitOk);
  SyntheticDataset soft = load_synthetic(fx.env.out_root / "synth_soft");
  CHECK(soft.soft_labels.has_value());

  json eval_cfg{{"seed", 25},
                {"synth", "synth_soft"},
                {"data", {{"name", "gauss-grid-4"}}},
                {"arch", "toy-bn-1"},
                {"seeds", {1}},
                {"soft_label_mode", "static"},
                {"hp", {{"epochs", 20}, {"batch_size", 8}}},
                {"out", "eval"}};
  REQUIRE(cli::cmd_eval(fx.write_config("eval.json", eval_cfg), fx.env) == cli::kExitOk);
  CHECK(std::filesystem::exists(fx.env.out_root / "eval" / "report_toy-bn-1.json"));

  // Records chain: eval -> distill -> pool.
  ExperimentRecord pool_rec = read_record(fx.env.out_root / "pool_prior");
  ExperimentRecord distill_rec = read_record(fx.env.out_root / "synth");
  ExperimentRecord relabel_rec = read_record(fx.env.out_root / "synth_soft");
  ExperimentRecord eval_rec = read_record(fx.env.out_root / "eval");
  CHECK(distill_rec.parents.at("pool") == pool_rec.id);
  CHECK(relabel_rec.parents.at("distill") == distill_rec.id);
  CHECK(eval_rec.parents.at("distill") == relabel_rec.id);

  // The report subcommand prints the chain.
  REQUIRE(cli::cmd_report(fx.env.out_root / "eval", fx.env) == cli::kExitOk);
  CHECK(fx.output().find(eval_rec.id) != std::string::npos);
  CHECK(fx.output().find(relabel_rec.id) != std::string::npos);

  // Eval prints the mean +/- std table.
  CHECK(fx.output().find("+/-") != std::string::npos);
}

TEST_CASE("eval command evaluates the random baseline branch") {
  CliFixture fx;
  json cfg{{"seed", 29},
           {"data", {{"name", "gauss-grid-4"}}},
           {"random_baseline", {{"data", {{"name", "gauss-grid-4"}}}, {"ipc", 2}}},
           {"arch", "toy-bn-1"},
           {"seeds", {1, 2}},
           {"hp", {{"epochs", 15}, {"batch_size", 8}}},
           {"out", "rb"}};
  REQUIRE(cli::cmd_eval(fx.write_config("rb.json", cfg), fx.env) == cli::kExitOk);
  CHECK(std::filesystem::exists(fx.env.out_root / "rb" / "report_toy-bn-1.json"));
}

TEST_CASE("dangling artifact paths are runtime errors") {
  CliFixture fx;
  json cfg{{"seed", 1}, {"pool", "nowhere"}, {"data", {{"name", "gauss-grid-4"}}},
           {"ipc", 1},  {"synthesis", json::object()}, {"out", "x"}};
  CHECK(cli::cmd_distill(fx.write_config("d.json", cfg), fx.env) == cli::kExitRuntime);
}

TEST_CASE("verify command") {
  CliFixture fx;

  SUBCASE("the full suite exits zero and writes a report") {
    auto report_path = fx.root.path() / "verify.jsonl";
    int code = cli::cmd_verify("all", 2024, report_path, fx.env);
    CHECK(code == cli::kExitOk);
    CHECK(fx.output().find("[PASS]") != std::string::npos);
    CHECK(fx.output().find("[FAIL]") == std::string::npos);

    std::ifstream rf(report_path);
    std::string line;
    int lines = 0;
    while (std::getline(rf, line)) {
      json record = json::parse(line);
      CHECK(record.contains("check_id"));
      CHECK(record.contains("lhs"));
      CHECK(record.contains("passed"));
      ++lines;
    }
    CHECK(lines >= 15);
  }

  SUBCASE("selector filters checks") {
    int code = cli::cmd_verify("cosine", 2024, "", fx.env);
    CHECK(code == cli::kExitOk);
    CHECK(fx.output().find("cosine-identity-sweep") != std::string::npos);
    CHECK(fx.output().find("gradient-statistic") == std::string::npos);
  }

  SUBCASE("unknown selector is a validation error") {
    CHECK(cli::cmd_verify("no-such-check", 2024, "", fx.env) == cli::kExitValidation);
  }
}
