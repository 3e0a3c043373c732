#include "support.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <openssl/evp.h>

#include "imudiff/core_data.hpp"
#include "imudiff/error.hpp"

namespace imudiff::cli {

namespace {

std::string hex_digest(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::io, "SHA-256 computation failed");
  }
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    out += buf;
  }
  return out;
}

}  // namespace

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("IMUDIFF_LOG_LEVEL");
    const std::string v = env ? env : "";
    if (v == "error") return LogLevel::error;
    if (v == "warn") return LogLevel::warn;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

void log(LogLevel level, std::string_view message) {
  if (level > log_level()) return;
  static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
  std::cerr << "imudiff: " << kNames[static_cast<int>(level)] << ": " << message << '\n';
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex_digest(ss.str());
}

std::string sha256_text(std::string_view text) { return hex_digest(text); }

nlohmann::json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::parse, path.string() + ": invalid JSON: " + e.what());
  }
}

RunManifest::RunManifest(std::string command)
    : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::filesystem::path& path) { inputs_.push_back(path); }
void RunManifest::add_output(const std::filesystem::path& path) { outputs_.push_back(path); }

void RunManifest::write(const std::filesystem::path& path) const {
  auto files = [](const std::vector<std::filesystem::path>& list) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : list) arr.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    return arr;
  };
  nlohmann::json j = {
      {"schema_version", 1},
      {"command", command_},
      {"tool_version", IMUDIFF_VERSION},
      {"config_sha256", config_hash_},
      {"inputs", files(inputs_)},
      {"outputs", files(outputs_)},
      {"wall_time_s",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
  if (has_seed_) j["seed"] = seed_;
  auto tmp = path;
  tmp += ".tmp";
  write_text_file(tmp, j.dump(2) + "\n");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot move manifest into place: " + ec.message());
}

}  // namespace imudiff::cli
