#include "catdet/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "catdet/common/errors.hpp"
#include "catdet/common/hash.hpp"

namespace catdet::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kSeen: return "seen";
    case Split::kUnseen: return "unseen";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "seen") return Split::kSeen;
  if (name == "unseen") return Split::kUnseen;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

json GenConfig::to_json() const {
  return json{{"seed", seed},
              {"n_seen", n_seen},
              {"n_unseen", n_unseen},
              {"train_samples", train_samples},
              {"eval_samples_per_split", eval_samples_per_split},
              {"image_size", image_size},
              {"query_size", query_size},
              {"min_glyph", min_glyph},
              {"max_glyph", max_glyph},
              {"max_instances", max_instances},
              {"max_distractors", max_distractors},
              {"max_rotation_deg", max_rotation_deg},
              {"max_aspect_jitter", max_aspect_jitter},
              {"hue_jitter_deg", hue_jitter_deg},
              {"noise_sigma", noise_sigma},
              {"max_placement_retries", max_placement_retries}};
}

GenConfig GenConfig::from_json(const json& j) {
  GenConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_seen = j.at("n_seen");
  c.n_unseen = j.at("n_unseen");
  c.train_samples = j.at("train_samples");
  c.eval_samples_per_split = j.at("eval_samples_per_split");
  c.image_size = j.at("image_size");
  c.query_size = j.at("query_size");
  c.min_glyph = j.at("min_glyph");
  c.max_glyph = j.at("max_glyph");
  c.max_instances = j.at("max_instances");
  c.max_distractors = j.at("max_distractors");
  c.max_rotation_deg = j.at("max_rotation_deg");
  c.max_aspect_jitter = j.at("max_aspect_jitter");
  c.hue_jitter_deg = j.at("hue_jitter_deg");
  c.noise_sigma = j.at("noise_sigma");
  c.max_placement_retries = j.at("max_placement_retries");
  return c;
}

std::vector<const OneShotSample*> Dataset::split(Split s) const {
  std::vector<const OneShotSample*> out;
  for (const auto& smp : samples) {
    if (smp.split == s) out.push_back(&smp);
  }
  return out;
}

const GlyphClass& Dataset::class_info(int id) const {
  for (const auto& c : classes) {
    if (c.id == id) return c;
  }
  throw DataError("unknown class id " + std::to_string(id));
}

std::vector<int> Dataset::class_ids(bool unseen) const {
  std::vector<int> ids;
  for (const auto& c : classes) {
    if (c.unseen == unseen) ids.push_back(c.id);
  }
  return ids;
}

std::vector<GlyphClass> make_classes(int n_seen, int n_unseen) {
  if (n_seen < 1 || n_unseen < 1 || n_seen + n_unseen > kNumGlyphFamilies) {
    throw ConfigError("need at least one seen and one unseen class, at most " +
                      std::to_string(kNumGlyphFamilies) + " in total");
  }
  static constexpr std::array<int, kNumGlyphFamilies> kUnseenPreference = {
      2, 7, 10, 15, 5, 12, 0, 9, 3, 13, 1, 8, 4, 11, 6, 14};
  std::set<int> unseen(kUnseenPreference.begin(), kUnseenPreference.begin() + n_unseen);
  std::vector<GlyphClass> classes;
  int seen_taken = 0;
  for (int id = 0; id < kNumGlyphFamilies; ++id) {
    const bool is_unseen = unseen.count(id) > 0;
    if (!is_unseen) {
      if (seen_taken == n_seen) continue;
      ++seen_taken;
    }
    classes.push_back({id, static_cast<GlyphFamily>(id), is_unseen,
                       360.0 * id / kNumGlyphFamilies});
  }
  return classes;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Image noisy_background(Rng& rng, int h, int w, double sigma) {
  const double level = uniform(rng, 25.0, 85.0);
  Image img(h, w);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& b : img.bytes()) {
    b = static_cast<std::uint8_t>(std::clamp(std::lround(level + noise(rng)), 0L, 255L));
  }
  return img;
}

GlyphInstance random_instance(Rng& rng, const GenConfig& cfg, const GlyphClass& cls,
                              double min_size, double max_size) {
  GlyphInstance g;
  g.family = cls.family;
  g.size = uniform(rng, min_size, max_size);
  g.aspect = 1.0 + uniform(rng, -cfg.max_aspect_jitter, cfg.max_aspect_jitter);
  const double rot = cfg.max_rotation_deg * std::numbers::pi / 180.0;
  g.angle_rad = uniform(rng, -rot, rot);
  const double hue = cls.base_hue + uniform(rng, -cfg.hue_jitter_deg, cfg.hue_jitter_deg);
  g.color = hsv_to_rgb(hue, uniform(rng, 0.55, 1.0), uniform(rng, 0.7, 1.0));
  return g;
}

bool overlaps_any(const Box& b, const std::vector<Box>& placed, double gap) {
  const Box grown{b.x1 - gap, b.y1 - gap, b.x2 + gap, b.y2 + gap};
  return std::any_of(placed.begin(), placed.end(),
                     [&](const Box& p) { return intersection_area(grown, p) > 0.0; });
}

// Places one glyph without overlap; returns false after the retry budget.
// The glyph is rasterized once and moved by whole pixels, which shifts the
// mask exactly.
bool place(Rng& rng, const GenConfig& cfg, GlyphInstance& g, std::vector<Box>& placed,
           GlyphMask& mask_out) {
  g.cx = uniform(rng, 0.0, 1.0);
  g.cy = uniform(rng, 0.0, 1.0);
  GlyphMask m = rasterize(g);
  if (m.alpha.empty()) return false;
  const int lo_x = 1 - m.x0;
  const int hi_x = cfg.image_size - 1 - (m.x0 + m.width);
  const int lo_y = 1 - m.y0;
  const int hi_y = cfg.image_size - 1 - (m.y0 + m.height);
  if (hi_x < lo_x || hi_y < lo_y) return false;
  for (int attempt = 0; attempt < cfg.max_placement_retries; ++attempt) {
    const int dx = uniform_int(rng, lo_x, hi_x);
    const int dy = uniform_int(rng, lo_y, hi_y);
    const Box b{static_cast<double>(m.x0 + dx), static_cast<double>(m.y0 + dy),
                static_cast<double>(m.x0 + dx + m.width), static_cast<double>(m.y0 + dy + m.height)};
    if (overlaps_any(b, placed, 4.0)) continue;
    placed.push_back(b);
    g.cx += dx;
    g.cy += dy;
    m.x0 += dx;
    m.y0 += dy;
    mask_out = std::move(m);
    return true;
  }
  return false;
}

Image render_query(Rng& rng, const GenConfig& cfg, const GlyphClass& cls) {
  const int q = cfg.query_size;
  for (;;) {
    Image img = noisy_background(rng, q, q, cfg.noise_sigma);
    GlyphInstance g = random_instance(rng, cfg, cls, 0.6 * q, 0.8 * q);
    g.cx = 0.5 * q + uniform(rng, -0.04 * q, 0.04 * q);
    g.cy = 0.5 * q + uniform(rng, -0.04 * q, 0.04 * q);
    GlyphMask m = rasterize(g);
    const Box b = m.box();
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > q || b.y2 > q) continue;
    composite(img, m, g.color);
    return img;
  }
}

}  // namespace

OneShotSample generate_sample(const GenConfig& cfg, const std::vector<GlyphClass>& classes,
                              Split split, int index, int id) {
  std::vector<const GlyphClass*> pool;
  for (const auto& c : classes) {
    if (c.unseen == (split == Split::kUnseen)) pool.push_back(&c);
  }
  if (pool.empty()) throw ConfigError("split has no classes");
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index)));

  const GlyphClass& qcls = *pool[uniform_int(rng, 0, static_cast<int>(pool.size()) - 1)];
  for (;;) {
    OneShotSample s;
    s.id = id;
    s.split = split;
    s.query_class = qcls.id;
    s.target = noisy_background(rng, cfg.image_size, cfg.image_size, cfg.noise_sigma);

    const int n_pos = uniform_int(rng, 1, cfg.max_instances);
    const int n_dist = pool.size() > 1 ? uniform_int(rng, 0, cfg.max_distractors) : 0;
    std::vector<const GlyphClass*> todo(n_pos, &qcls);
    for (int k = 0; k < n_dist; ++k) {
      const GlyphClass* other;
      do {
        other = pool[uniform_int(rng, 0, static_cast<int>(pool.size()) - 1)];
      } while (other->id == qcls.id);
      todo.push_back(other);
    }

    std::vector<Box> placed;
    bool ok = true;
    for (const GlyphClass* cls : todo) {
      GlyphInstance g = random_instance(rng, cfg, *cls, cfg.min_glyph, cfg.max_glyph);
      GlyphMask mask;
      if (!place(rng, cfg, g, placed, mask)) {
        ok = false;
        break;
      }
      composite(s.target, mask, g.color);
      if (cls->id == qcls.id) {
        s.gt_boxes.push_back(mask.box());
      } else {
        s.distractors.push_back({cls->id, mask.box()});
      }
    }
    if (!ok) continue;  // fresh randomness from the same stream
    s.query = render_query(rng, cfg, qcls);
    return s;
  }
}

Dataset generate_dataset(const GenConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  ds.classes = make_classes(cfg.n_seen, cfg.n_unseen);
  const std::array<std::pair<Split, int>, 3> plan = {{{Split::kTrain, cfg.train_samples},
                                                      {Split::kSeen, cfg.eval_samples_per_split},
                                                      {Split::kUnseen, cfg.eval_samples_per_split}}};
  int id = 0;
  for (const auto& [split, count] : plan) {
    for (int i = 0; i < count; ++i) {
      ds.samples.push_back(generate_sample(cfg, ds.classes, split, i, id++));
    }
  }
  return ds;
}

namespace {

std::string sample_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", id);
  return buf;
}

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>()};
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json manifest_body(const json& manifest) {
  json body = manifest;
  body.erase("checksum");
  return body;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "queries");
  std::map<std::string, std::string> files;

  std::string annotations;
  for (const auto& s : ds.samples) {
    const std::string stem = sample_stem(s.id);
    const std::string img_rel = "images/" + stem + ".ppm";
    const std::string q_rel = "queries/" + stem + ".ppm";
    const std::string img_blob = encode_ppm(s.target);
    const std::string q_blob = encode_ppm(s.query);
    write_text(dir / img_rel, img_blob);
    write_text(dir / q_rel, q_blob);
    files[img_rel] = sha256_hex(img_blob);
    files[q_rel] = sha256_hex(q_blob);

    json rec{{"id", s.id},
             {"split", split_name(s.split)},
             {"image", img_rel},
             {"query", q_rel},
             {"query_class", s.query_class},
             {"boxes", json::array()},
             {"distractors", json::array()}};
    for (const auto& b : s.gt_boxes) rec["boxes"].push_back(box_json(b));
    for (const auto& d : s.distractors) {
      rec["distractors"].push_back({{"class", d.class_id}, {"box", box_json(d.box)}});
    }
    annotations += rec.dump() + "\n";
  }
  write_text(dir / "annotations.jsonl", annotations);
  files["annotations.jsonl"] = sha256_hex(annotations);

  json cls = {{"classes", json::array()}};
  for (const auto& c : ds.classes) {
    cls["classes"].push_back({{"id", c.id},
                              {"family", family_name(c.family)},
                              {"split", c.unseen ? "unseen" : "seen"},
                              {"base_hue", c.base_hue}});
  }
  cls["seen"] = ds.class_ids(false);
  cls["unseen"] = ds.class_ids(true);
  const std::string cls_text = cls.dump(2) + "\n";
  write_text(dir / "classes.json", cls_text);
  files["classes.json"] = sha256_hex(cls_text);

  json manifest{{"format", "catdet-dataset/1"},
                {"seed", ds.config.seed},
                {"generator", ds.config.to_json()},
                {"files", files}};
  manifest["checksum"] = sha256_hex(manifest_body(manifest).dump());
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::string manifest_hash(const fs::path& dir) { return sha256_file(dir / "manifest.json"); }

void check_split_disjoint(const Dataset& ds) {
  std::set<int> seen, unseen;
  for (const auto& c : ds.classes) (c.unseen ? unseen : seen).insert(c.id);
  for (int id : seen) {
    if (unseen.count(id)) throw ContractError("class " + std::to_string(id) + " is both seen and unseen");
  }
  for (const auto& s : ds.samples) {
    if (s.split != Split::kTrain) continue;
    auto leak = [&](int cid) {
      if (unseen.count(cid)) {
        throw ContractError("unseen class " + std::to_string(cid) + " leaked into training sample " +
                            std::to_string(s.id));
      }
    };
    leak(s.query_class);
    for (const auto& d : s.distractors) leak(d.class_id);
  }
}

Dataset load_dataset(const fs::path& dir) {
  const json manifest = json::parse(read_text(dir / "manifest.json"), nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("checksum")) {
    throw DataError("manifest.json is unreadable");
  }
  if (sha256_hex(manifest_body(manifest).dump()) != manifest.at("checksum").get<std::string>()) {
    throw DataError("manifest.json checksum mismatch");
  }
  for (const auto& [rel, digest] : manifest.at("files").items()) {
    if (!fs::exists(dir / rel)) throw DataError("missing dataset file " + rel);
    if (sha256_file(dir / rel) != digest.get<std::string>()) {
      throw DataError("checksum mismatch for " + rel);
    }
  }

  Dataset ds;
  ds.config = GenConfig::from_json(manifest.at("generator"));
  const json cls = json::parse(read_text(dir / "classes.json"));
  for (const auto& c : cls.at("classes")) {
    const int id = c.at("id");
    if (id < 0 || id >= kNumGlyphFamilies) throw DataError("bad class id");
    ds.classes.push_back({id, static_cast<GlyphFamily>(id), c.at("split") == "unseen",
                          c.at("base_hue").get<double>()});
  }

  std::ifstream ann(dir / "annotations.jsonl");
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    OneShotSample s;
    s.id = rec.at("id");
    s.split = parse_split(rec.at("split").get<std::string>());
    s.query_class = rec.at("query_class");
    s.target = read_ppm(dir / rec.at("image").get<std::string>());
    s.query = read_ppm(dir / rec.at("query").get<std::string>());
    for (const auto& b : rec.at("boxes")) s.gt_boxes.push_back(box_from_json(b));
    for (const auto& d : rec.at("distractors")) {
      s.distractors.push_back({d.at("class").get<int>(), box_from_json(d.at("box"))});
    }
    if (s.gt_boxes.empty()) throw DataError("sample " + std::to_string(s.id) + " has no ground truth");
    ds.samples.push_back(std::move(s));
  }
  check_split_disjoint(ds);
  return ds;
}

}  // namespace catdet::data
