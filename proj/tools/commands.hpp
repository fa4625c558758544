#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

namespace teddy::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheckFailure = 3;

struct Env {
  std::filesystem::path data_root;  // TEDDY_DATA_ROOT or cwd
  std::filesystem::path out_root;   // TEDDY_OUT_ROOT or cwd
  bool force = false;
  std::ostream* out = nullptr;  // defaults to std::cout

  static Env from_process();
};

int cmd_pool_prior(const std::filesystem::path& config_path, const Env& env);
int cmd_pool_post(const std::filesystem::path& config_path, const Env& env);
int cmd_distill(const std::filesystem::path& config_path, const Env& env);
int cmd_relabel(const std::filesystem::path& config_path, const Env& env);
int cmd_eval(const std::filesystem::path& config_path, const Env& env);

// selector: "--all" equivalent is "all"; otherwise a check id prefix.
int cmd_verify(const std::string& selector, std::uint64_t seed, const std::filesystem::path& report_path,
               const Env& env);
int cmd_report(const std::filesystem::path& artifact_dir, const Env& env);

}  // namespace teddy::cli
