#include "imudiff/ad/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "imudiff/error.hpp"

namespace imudiff::ad {

namespace {

constexpr int kFormatVersion = 1;

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

const NamedTensor& TensorFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  fail(ErrorKind::format, "checkpoint has no tensor named '" + name + "'");
}

void save_tensor_file(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<NamedTensor>& tensors) {
  nlohmann::json dir = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    if (numel(t.shape) != t.values.size()) {
      fail(ErrorKind::contract, "tensor '" + t.name + "' shape does not match its values");
    }
    dir.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.values.size();
  }
  nlohmann::json header = {{"format", "imudiff-tensors"},
                           {"format_version", kFormatVersion},
                           {"meta", meta},
                           {"tensors", dir},
                           {"count", offset}};
  std::string blob = header.dump();
  blob.push_back('\n');
  blob.reserve(blob.size() + offset * 8);
  for (const auto& t : tensors) {
    for (double v : t.values) put_le(blob, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open checkpoint for writing: " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) fail(ErrorKind::io, "failed writing checkpoint: " + path.string());
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::format, "checkpoint is empty: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != "imudiff-tensors") {
    fail(ErrorKind::format, "not an imudiff checkpoint: " + path.string());
  }
  std::ostringstream rest;
  rest << in.rdbuf();
  const std::string payload = rest.str();
  const auto count = header.at("count").get<std::size_t>();
  if (payload.size() != count * 8) {
    fail(ErrorKind::format, "checkpoint payload has " + std::to_string(payload.size()) +
                                " bytes, expected " + std::to_string(count * 8));
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  TensorFile file;
  file.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = numel(t.shape);
    if (offset + n > count) fail(ErrorKind::format, "tensor '" + t.name + "' exceeds payload");
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.values[i] = get_le(bytes + (offset + i) * 8);
    file.tensors.push_back(std::move(t));
  }
  return file;
}

}  // namespace imudiff::ad
