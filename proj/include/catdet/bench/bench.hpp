#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "catdet/config/run_config.hpp"
#include "catdet/data/dataset.hpp"
#include "catdet/detector/detector.hpp"

namespace catdet::bench {

// Element count over distinct parameter buffers; aliased (tied) tensors count once.
std::size_t count_params(const num::ParamRegistry& reg);
std::size_t count_params(const det::Detector& model);
std::size_t count_cat_params(const det::Detector& model);

// Per stream per layer: 4 d^2 projections, d d_ff + d_ff + d_ff d + d FFN,
// 4 d for the two norms, plus 4 d when projection biases are on. One stream is
// counted when the mode is one-stream or the streams are tied.
std::size_t cat_params_closed_form(const cat::CatConfig& cfg);

struct BenchReport {
  std::string config_hash;
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t layers = 0;
  std::string mode;
  std::size_t target_tokens = 0;
  std::size_t query_tokens = 0;
  std::size_t params = 0;
  std::size_t cat_params = 0;
  std::size_t warmup = 0;
  std::size_t iters = 0;
  double elapsed_seconds = 0.0;
  double fps = 0.0;
  std::string started;   // UTC, ISO 8601
  std::string finished;
  std::string environment;

  nlohmann::json to_json() const;
};

constexpr std::size_t kMinIters = 30;
constexpr std::size_t kMinWarmup = 5;

// Seeded noise images at the model's target and query sizes.
struct InputPair {
  data::Image target;
  data::Image query;
};
InputPair synthetic_pair(const det::DetectorConfig& cfg, std::uint64_t seed);

// Times iters calls of detect() after warmup untimed calls, on the calling
// thread. ConfigError if iters < kMinIters or warmup < kMinWarmup.
BenchReport measure_fps(const det::Detector& model, const InputPair& input, std::size_t warmup,
                        std::size_t iters, const std::string& config_hash = "");

enum class Axis { kLayers, kDm, kStream };
std::string_view axis_name(Axis a);
Axis parse_axis(std::string_view s);  // layers, d_m (or dm), stream

// Values of an axis as configured in cfg.bench.
std::vector<std::string> axis_values(const config::RunConfig& cfg, Axis axis);
// Copy of cfg with one axis set to value.
config::RunConfig apply_axis(const config::RunConfig& cfg, Axis axis, const std::string& value);

struct AblationRow {
  std::string config_hash;
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  std::string split;
  std::optional<double> ap;  // empty when training is disabled
  std::optional<double> ap50;
  double fps = 0.0;
  std::size_t params = 0;
};

struct AblationOptions {
  // Trained weights are cached here as <training hash>.ckpt; empty disables.
  std::filesystem::path cache_dir;
  std::ostream* log = nullptr;
  std::size_t eval_workers = 1;
};

// One row per (value, seed, split) in that nesting order. Each (value, seed)
// is trained on ds (unless cfg.bench.train is false), evaluated on every split
// in cfg.bench.splits, timed, and counted.
std::vector<AblationRow> run_ablation(const data::Dataset& ds, const config::RunConfig& cfg, Axis axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<std::uint64_t>& seeds,
                                      const AblationOptions& opt = {});

inline constexpr const char* kAblationHeader = "config_hash,axis,value,seed,split,AP,AP50,fps,params";
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace catdet::bench
