#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "catdet/data/dataset.hpp"
#include "catdet/detector/detector.hpp"
#include "catdet/detector/train.hpp"

namespace catdet::config {

struct EvalSettings {
  std::size_t n_queries = 5;
  data::Split split = data::Split::kUnseen;
};

struct BenchSettings {
  std::size_t warmup = 10;
  std::size_t iters = 100;
  bool train = true;  // false reports fps/params only
  std::vector<std::size_t> layer_values{3, 4, 5, 6};
  std::vector<std::size_t> dm_values{128, 256, 512};
  std::vector<std::string> stream_values{"one_stream", "two_stream"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<data::Split> splits{data::Split::kUnseen};
};

// Every tunable of a run. Serialized as one JSON document; any key not listed
// here is rejected, missing keys keep their defaults.
struct RunConfig {
  std::string description;  // free text, not hashed
  std::uint64_t seed = 1;  // model initialization and sample order
  std::string data_dir = "data/glyphs";
  std::string out_dir = "runs/default";
  data::GenConfig data;
  // Desk scale: d_model 64, 4 heads, 4 layers. configs/full.json holds the
  // 256-wide, 8-head variant.
  det::DetectorConfig model = det::desk_config();
  det::TrainConfig train;
  EvalSettings eval;
  BenchSettings bench;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Model, training schedule and seed; used to build a detector and trainer.
  det::TrainConfig train_config() const;

  // First 16 hex digits of sha256 over the canonical JSON without paths and description.
  std::string hash() const;
  // Same digest over seed, data, model and train only: identifies trained weights.
  std::string training_hash() const;
};

}  // namespace catdet::config
