#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "catdet/common/box.hpp"
#include "catdet/data/glyph.hpp"
#include "catdet/data/image.hpp"

namespace catdet::data {

// train holds seen classes only; seen/unseen are the held-out evaluation splits.
enum class Split { kTrain, kSeen, kUnseen };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct GlyphClass {
  int id = 0;
  GlyphFamily family = GlyphFamily::kDisk;
  bool unseen = false;
  double base_hue = 0.0;
};

struct LabeledBox {
  int class_id = 0;
  Box box;
};

struct OneShotSample {
  int id = 0;
  Split split = Split::kTrain;
  Image target;
  Image query;
  int query_class = 0;
  std::vector<Box> gt_boxes;             // instances of query_class in target
  std::vector<LabeledBox> distractors;   // instances of other classes
};

struct GenConfig {
  std::uint64_t seed = 7;
  int n_seen = 12;
  int n_unseen = 4;
  int train_samples = 1200;
  int eval_samples_per_split = 120;
  int image_size = 208;
  int query_size = 64;
  double min_glyph = 36.0;
  double max_glyph = 60.0;
  int max_instances = 3;
  int max_distractors = 4;
  double max_rotation_deg = 15.0;
  double max_aspect_jitter = 0.15;
  // Instance hue = class base hue + U(-hue_jitter, +hue_jitter); 180 decouples color from class.
  double hue_jitter_deg = 180.0;
  double noise_sigma = 4.0;
  int max_placement_retries = 50;

  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
};

struct Dataset {
  GenConfig config;
  std::vector<GlyphClass> classes;
  std::vector<OneShotSample> samples;

  std::vector<const OneShotSample*> split(Split s) const;
  const GlyphClass& class_info(int id) const;
  std::vector<int> class_ids(bool unseen) const;
};

// Unseen ids are drawn from a fixed preference order so that the default
// 12/4 split holds out {triangle, star5, cross_x, hollow_square}.
std::vector<GlyphClass> make_classes(int n_seen, int n_unseen);

Dataset generate_dataset(const GenConfig& cfg);

// Renders a single sample; exposed for tests. Deterministic in (cfg.seed, split, index).
OneShotSample generate_sample(const GenConfig& cfg, const std::vector<GlyphClass>& classes,
                              Split split, int index, int id);

// Writes images/, queries/, annotations.jsonl, classes.json and manifest.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Loads and verifies every checksum in the manifest plus split disjointness.
Dataset load_dataset(const std::filesystem::path& dir);

// sha256 of manifest.json; identical for identical generator inputs.
std::string manifest_hash(const std::filesystem::path& dir);

// Throws ContractError if seen and unseen class sets intersect or if any
// train sample references an unseen class.
void check_split_disjoint(const Dataset& ds);

}  // namespace catdet::data
