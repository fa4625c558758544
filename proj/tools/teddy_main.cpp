#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"teddy: weak-teacher statistic-matching dataset distillation"};
  app.require_subcommand(1);

  teddy::cli::Env env = teddy::cli::Env::from_process();

  std::string config;
  bool force = false;

  auto add_config_cmd = [&](const char* name, const char* desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("-c,--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_flag("--force", force, "replace an existing output artifact");
    return sub;
  };

  CLI::App* pool_prior = add_config_cmd("pool-prior", "cache weak teachers along one training trajectory");
  CLI::App* pool_post = add_config_cmd("pool-post", "build weak teachers by structural pruning");
  CLI::App* distill = add_config_cmd("distill", "optimize synthetic images against a teacher pool");
  CLI::App* relabel = add_config_cmd("relabel", "attach ensemble soft labels to a synthetic set");
  CLI::App* eval = add_config_cmd("eval", "train fresh models on a synthetic set and score them");

  std::string selector = "all";
  std::uint64_t verify_seed = 2024;
  std::string verify_report;
  CLI::App* verify = app.add_subcommand("verify", "run the numerical verification suite");
  verify->add_flag_callback("--all", [] {}, "run every check (default)");
  verify->add_option("--check", selector, "run checks whose id contains this substring");
  verify->add_option("--seed", verify_seed, "sweep seed");
  verify->add_option("--out", verify_report, "write one JSON record per check");

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "print an artifact's experiment record");
  report->add_option("dir", report_dir, "artifact directory")->required();

  CLI11_PARSE(app, argc, argv);
  env.force = force;

  if (pool_prior->parsed()) return teddy::cli::cmd_pool_prior(config, env);
  if (pool_post->parsed()) return teddy::cli::cmd_pool_post(config, env);
  if (distill->parsed()) return teddy::cli::cmd_distill(config, env);
  if (relabel->parsed()) return teddy::cli::cmd_relabel(config, env);
  if (eval->parsed()) return teddy::cli::cmd_eval(config, env);
  if (verify->parsed()) return teddy::cli::cmd_verify(selector, verify_seed, verify_report, env);
  if (report->parsed()) return teddy::cli::cmd_report(report_dir, env);
  return teddy::cli::kExitValidation;
}
