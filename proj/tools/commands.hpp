#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace imudiff::cli {

struct SimulateOptions {
  std::filesystem::path profile;
  std::string specs = "builtin";
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
};

struct AllanOptions {
  std::filesystem::path input;
  std::filesystem::path out;
  std::filesystem::path curve_out;
  std::filesystem::path svg_out;
};

struct TrainOptions {
  std::filesystem::path lowcost;
  std::filesystem::path reference;
  std::filesystem::path noise_params;
  std::filesystem::path config;
  std::filesystem::path out;
  std::filesystem::path loss_out;  // default: <out>.loss.csv
};

struct GenerateOptions {
  std::filesystem::path lowcost;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
  std::string stitch = "non-overlapping";
  std::size_t stride = 0;
  std::uint64_t seed = 0;
};

struct EvaluateOptions {
  std::filesystem::path candidate;
  std::filesystem::path baseline;
  std::filesystem::path reference;
  std::filesystem::path truth_nav;
  std::filesystem::path out;
  std::optional<double> segment_s;  // dead-reckon only the first segment_s seconds
  std::filesystem::path series_dir;  // default: directory of --out
};

int run_simulate(const SimulateOptions& o);
int run_allan(const AllanOptions& o);
int run_train(const TrainOptions& o);
int run_generate(const GenerateOptions& o);
int run_evaluate(const EvaluateOptions& o);

}  // namespace imudiff::cli
