#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "imudiff/ad/tensor.hpp"

namespace imudiff::ad {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// One JSON header line (caller metadata under "meta" plus a tensor directory
// of names/shapes/offsets), then little-endian float64 payload in directory order.
void save_tensor_file(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<NamedTensor>& tensors);

struct TensorFile {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor& find(const std::string& name) const;
};

TensorFile load_tensor_file(const std::filesystem::path& path);

}  // namespace imudiff::ad
