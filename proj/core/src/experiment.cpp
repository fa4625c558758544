#include "teddy/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <unistd.h>
#include <fstream>

#include "teddy/container.hpp"
#include "teddy/error.hpp"
#include "teddy/rng.hpp"

namespace teddy {

using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

}  // namespace

ExperimentRecord ExperimentRecord::create(const std::string& command, const json& config,
                                          const std::map<std::string, std::string>& input_checksums) {
  ExperimentRecord r;
  r.command = command;
  r.config = config;
  r.input_checksums = input_checksums;
  r.created_at = utc_now();

  std::uint64_t h = fnv1a64(command);
  h = fnv1a64(config.dump(), h);
  for (const auto& [name, checksum] : input_checksums) {
    h = fnv1a64(name, h);
    h = fnv1a64(checksum, h);
  }
  r.id = checksum_hex(h);
  return r;
}

void write_record(const ExperimentRecord& record, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["id"] = record.id;
  j["created_at"] = record.created_at;
  j["command"] = record.command;
  j["config"] = record.config;
  j["input_checksums"] = record.input_checksums;
  j["outputs"] = record.outputs;
  j["metrics"] = record.metrics;
  j["parents"] = record.parents;
  std::ofstream f(dir / "record.json");
  require(f.good(), ErrorCode::io_failure, "cannot write record under " + dir.string());
  f << j.dump(2) << "\n";
}

ExperimentRecord read_record(const std::filesystem::path& dir) {
  std::ifstream f(dir / "record.json");
  if (!f.good()) fail(ErrorCode::missing_files, (dir / "record.json").string());
  json j = json::parse(f);
  ExperimentRecord r;
  r.id = j.value("id", "");
  r.created_at = j.value("created_at", "");
  r.command = j.value("command", "");
  r.config = j.value("config", json::object());
  r.input_checksums = j.value("input_checksums", std::map<std::string, std::string>{});
  r.outputs = j.value("outputs", std::vector<std::string>{});
  r.metrics = j.value("metrics", json::object());
  r.parents = j.value("parents", std::map<std::string, std::string>{});
  return r;
}

bool has_record(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "record.json");
}

DirLock::DirLock(const std::filesystem::path& dir) : lock_path_(dir / ".lock") {
  std::filesystem::create_directories(dir);
  // O_EXCL-style create; a stale or concurrent lock refuses the write.
  if (std::filesystem::exists(lock_path_))
    fail(ErrorCode::locked_output, "output directory is locked by another writer: " + dir.string());
  std::ofstream f(lock_path_);
  require(f.good(), ErrorCode::io_failure, "cannot create lock file in " + dir.string());
  f << "pid " << ::getpid() << "\n";
  held_ = true;
}

DirLock::~DirLock() {
  if (held_) {
    std::error_code ec;
    std::filesystem::remove(lock_path_, ec);
  }
}

}  // namespace teddy
