#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace imudiff::cli {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

// Reads IMUDIFF_LOG_LEVEL once (error|warn|info|debug, default info).
LogLevel log_level();
void log(LogLevel level, std::string_view message);

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_text(std::string_view text);

nlohmann::json read_json_file(const std::filesystem::path& path);

// Collects what a command read and wrote, then writes manifest.json atomically.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set_seed(unsigned long long seed) { seed_ = seed; has_seed_ = true; }
  void set_config_hash(std::string hash) { config_hash_ = std::move(hash); }
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

 private:
  std::string command_;
  std::string config_hash_;
  unsigned long long seed_ = 0;
  bool has_seed_ = false;
  std::vector<std::filesystem::path> inputs_;
  std::vector<std::filesystem::path> outputs_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace imudiff::cli
