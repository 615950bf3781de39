#include "catdet/config/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "catdet/common/errors.hpp"
#include "catdet/common/hash.hpp"

namespace catdet::config {

using nlohmann::json;

namespace {

// Reads members of one JSON object and reports anything left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& dst) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key " + path_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json gen_json(const data::GenConfig& g) { return g.to_json(); }

data::GenConfig gen_from(const json& j, const std::string& path) {
  data::GenConfig g;
  Section s(j, path);
  s.read("seed", g.seed);
  s.read("n_seen", g.n_seen);
  s.read("n_unseen", g.n_unseen);
  s.read("train_samples", g.train_samples);
  s.read("eval_samples_per_split", g.eval_samples_per_split);
  s.read("image_size", g.image_size);
  s.read("query_size", g.query_size);
  s.read("min_glyph", g.min_glyph);
  s.read("max_glyph", g.max_glyph);
  s.read("max_instances", g.max_instances);
  s.read("max_distractors", g.max_distractors);
  s.read("max_rotation_deg", g.max_rotation_deg);
  s.read("max_aspect_jitter", g.max_aspect_jitter);
  s.read("hue_jitter_deg", g.hue_jitter_deg);
  s.read("noise_sigma", g.noise_sigma);
  s.read("max_placement_retries", g.max_placement_retries);
  s.finish();
  return g;
}

json model_json(const det::DetectorConfig& m) {
  return json{{"d_model", m.cat.d_model},
              {"heads", m.cat.heads},
              {"layers", m.cat.layers},
              {"d_ff", m.cat.d_ff},
              {"mode", std::string(cat::mode_name(m.cat.mode))},
              {"variant", std::string(cat::variant_name(m.cat.variant))},
              {"tie_streams", m.cat.tie_streams},
              {"projection_bias", m.cat.projection_bias},
              {"ln_eps", m.cat.ln_eps},
              {"pe_temperature", m.cat.pe_temperature},
              {"image_size", m.image_size},
              {"query_size", m.query_size},
              {"anchor_sizes", m.anchor_sizes},
              {"roi_size", m.roi_size},
              {"num_proposals", m.num_proposals},
              {"max_detections", m.max_detections},
              {"score_threshold", m.score_threshold},
              {"nms_iou", m.nms_iou},
              {"pos_iou", m.pos_iou},
              {"neg_iou", m.neg_iou},
              {"box_weights", m.box_weights},
              {"hard_negatives", m.hard_negatives}};
}

det::DetectorConfig model_from(const json& j, const std::string& path) {
  auto m = det::desk_config();
  Section s(j, path);
  s.read("d_model", m.cat.d_model);
  s.read("heads", m.cat.heads);
  s.read("layers", m.cat.layers);
  s.read("d_ff", m.cat.d_ff);
  std::string mode(cat::mode_name(m.cat.mode)), variant(cat::variant_name(m.cat.variant));
  s.read("mode", mode);
  s.read("variant", variant);
  m.cat.mode = cat::parse_mode(mode);
  m.cat.variant = cat::parse_variant(variant);
  s.read("tie_streams", m.cat.tie_streams);
  s.read("projection_bias", m.cat.projection_bias);
  s.read("ln_eps", m.cat.ln_eps);
  s.read("pe_temperature", m.cat.pe_temperature);
  s.read("image_size", m.image_size);
  s.read("query_size", m.query_size);
  s.read("anchor_sizes", m.anchor_sizes);
  s.read("roi_size", m.roi_size);
  s.read("num_proposals", m.num_proposals);
  s.read("max_detections", m.max_detections);
  s.read("score_threshold", m.score_threshold);
  s.read("nms_iou", m.nms_iou);
  s.read("pos_iou", m.pos_iou);
  s.read("neg_iou", m.neg_iou);
  s.read("box_weights", m.box_weights);
  s.read("hard_negatives", m.hard_negatives);
  s.finish();
  m.validate();
  return m;
}

json train_json(const det::TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"lr", t.sgd.learning_rate},
              {"momentum", t.sgd.momentum},
              {"weight_decay", t.sgd.weight_decay},
              {"decay_epochs", t.decay_epochs},
              {"decay_factor", t.decay_factor},
              {"batch_size", t.batch_size},
              {"clip_norm", t.clip_norm},
              {"max_samples", t.max_samples}};
}

det::TrainConfig train_from(const json& j, const std::string& path) {
  det::TrainConfig t;
  Section s(j, path);
  s.read("epochs", t.epochs);
  s.read("lr", t.sgd.learning_rate);
  s.read("momentum", t.sgd.momentum);
  s.read("weight_decay", t.sgd.weight_decay);
  s.read("decay_epochs", t.decay_epochs);
  s.read("decay_factor", t.decay_factor);
  s.read("batch_size", t.batch_size);
  s.read("clip_norm", t.clip_norm);
  s.read("max_samples", t.max_samples);
  s.finish();
  if (t.epochs == 0 || t.batch_size == 0) throw ConfigError(path + ": epochs and batch_size must be positive");
  return t;
}

std::vector<std::string> split_names(const std::vector<data::Split>& v) {
  std::vector<std::string> out;
  for (auto s : v) out.emplace_back(data::split_name(s));
  return out;
}

}  // namespace

json RunConfig::to_json() const {
  return json{{"description", description},
              {"seed", seed},
              {"paths", {{"data", data_dir}, {"out", out_dir}}},
              {"data", gen_json(data)},
              {"model", model_json(model)},
              {"train", train_json(train)},
              {"eval", {{"n_queries", eval.n_queries}, {"split", std::string(data::split_name(eval.split))}}},
              {"bench",
               {{"warmup", bench.warmup},
                {"iters", bench.iters},
                {"train", bench.train},
                {"layer_values", bench.layer_values},
                {"dm_values", bench.dm_values},
                {"stream_values", bench.stream_values},
                {"seeds", bench.seeds},
                {"splits", split_names(bench.splits)}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section top(j, "config");
  top.read("description", c.description);
  top.read("seed", c.seed);
  if (const auto* p = top.child("paths")) {
    Section s(*p, top.path("paths"));
    s.read("data", c.data_dir);
    s.read("out", c.out_dir);
    s.finish();
  }
  if (const auto* p = top.child("data")) c.data = gen_from(*p, top.path("data"));
  if (const auto* p = top.child("model")) c.model = model_from(*p, top.path("model"));
  if (const auto* p = top.child("train")) c.train = train_from(*p, top.path("train"));
  if (const auto* p = top.child("eval")) {
    Section s(*p, top.path("eval"));
    s.read("n_queries", c.eval.n_queries);
    std::string split(data::split_name(c.eval.split));
    s.read("split", split);
    c.eval.split = data::parse_split(split);
    s.finish();
  }
  if (const auto* p = top.child("bench")) {
    Section s(*p, top.path("bench"));
    s.read("warmup", c.bench.warmup);
    s.read("iters", c.bench.iters);
    s.read("train", c.bench.train);
    s.read("layer_values", c.bench.layer_values);
    s.read("dm_values", c.bench.dm_values);
    s.read("stream_values", c.bench.stream_values);
    s.read("seeds", c.bench.seeds);
    std::vector<std::string> splits = split_names(c.bench.splits);
    s.read("splits", splits);
    c.bench.splits.clear();
    for (const auto& n : splits) c.bench.splits.push_back(data::parse_split(n));
    s.finish();
  }
  top.finish();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config " + path.string());
  f << to_json().dump(2) << '\n';
}

det::TrainConfig RunConfig::train_config() const {
  auto t = train;
  t.seed = seed;
  return t;
}

std::string RunConfig::hash() const {
  auto j = to_json();
  j.erase("paths");
  j.erase("description");
  return sha256_hex(j.dump()).substr(0, 16);
}

std::string RunConfig::training_hash() const {
  const auto full = to_json();
  const json j{{"seed", full.at("seed")}, {"data", full.at("data")}, {"model", full.at("model")}, {"train", full.at("train")}};
  return sha256_hex(j.dump()).substr(0, 16);
}

}  // namespace catdet::config
