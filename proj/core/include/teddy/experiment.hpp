#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace teddy {

// Persisted run descriptor. Records chain: an eval record names the distill
// record it consumed, which names its pool record.
struct ExperimentRecord {
  std::string id;  // content hash of command + config + input checksums
  std::string created_at;
  std::string command;
  nlohmann::json config;
  std::map<std::string, std::string> input_checksums;  // logical name -> hex
  std::vector<std::string> outputs;                    // paths
  nlohmann::json metrics;
  std::map<std::string, std::string> parents;  // phase -> record id

  static ExperimentRecord create(const std::string& command, const nlohmann::json& config,
                                 const std::map<std::string, std::string>& input_checksums);
};

void write_record(const ExperimentRecord& record, const std::filesystem::path& dir);
ExperimentRecord read_record(const std::filesystem::path& dir);
bool has_record(const std::filesystem::path& dir);

// Exclusive advisory lock on an output directory; throws locked-output when
// another writer holds it. Removed on destruction.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path lock_path_;
  bool held_ = false;
};

}  // namespace teddy
