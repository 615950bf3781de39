#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "catdet/common/errors.hpp"
#include "catdet/common/hash.hpp"
#include "catdet/data/dataset.hpp"
#include "catdet/data/evaluation.hpp"
#include "catdet/data/glyph.hpp"
#include "catdet/data/image.hpp"

using namespace catdet;
using namespace catdet::data;
namespace fs = std::filesystem;

namespace {

GenConfig tiny_config() {
  GenConfig g;
  g.train_samples = 12;
  g.eval_samples_per_split = 10;
  g.image_size = 96;
  g.query_size = 32;
  g.min_glyph = 18;
  g.max_glyph = 26;
  return g;
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("catdet_test_" + name);
  fs::remove_all(p);
  return p;
}

Detection det(Box b, double s) { return {b, s}; }

const Box kA{0, 0, 10, 10};
const Box kB{20, 20, 30, 30};

// Hand-built split whose detect oracle can be scripted per sample.
Dataset toy_dataset(const std::vector<int>& classes_of_samples) {
  Dataset ds;
  ds.classes = make_classes(2, 2);
  const int unseen = ds.class_ids(true).front();
  const int other = ds.class_ids(true).back();
  int id = 100;
  for (int c : classes_of_samples) {
    OneShotSample s;
    s.id = id++;
    s.split = Split::kUnseen;
    s.query_class = c == 0 ? unseen : other;
    s.target = Image(8, 8);
    s.query = Image(4, 4, Rgb{static_cast<std::uint8_t>(s.id), 0, 0});
    s.gt_boxes = {kA};
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

TEST_CASE("ppm round trip and header checks") {
  Image img(3, 5);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) img.set_pixel(y, x, {static_cast<std::uint8_t>(x * 40), static_cast<std::uint8_t>(y), 7});
  const auto dir = fresh_dir("ppm");
  fs::create_directories(dir);
  write_ppm(dir / "a.ppm", img);
  CHECK(read_ppm(dir / "a.ppm") == img);
  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), DataError);
  CHECK_THROWS_AS(Image(0, 4), InputError);
}

TEST_CASE("bilinear resize keeps constant images constant") {
  Image img(10, 14, Rgb{30, 60, 90});
  const auto r = resize_bilinear(img, 7, 3);
  CHECK(r.height() == 7);
  CHECK(r.width() == 3);
  CHECK(r == Image(7, 3, Rgb{30, 60, 90}));
}

TEST_CASE("glyph masks are tight and inside their nominal extent") {
  for (int f = 0; f < kNumGlyphFamilies; ++f) {
    GlyphInstance g;
    g.family = static_cast<GlyphFamily>(f);
    g.cx = 50;
    g.cy = 40;
    g.size = 30;
    const auto m = rasterize(g);
    REQUIRE(m.width > 0);
    REQUIRE(m.height > 0);
    CHECK(m.box().width() <= 31);
    CHECK(m.box().height() <= 31);
    double top = 0, left = 0;
    for (int x = 0; x < m.width; ++x) top = std::max(top, m.at(0, x));
    for (int y = 0; y < m.height; ++y) left = std::max(left, m.at(y, 0));
    CHECK(top > 0.0);
    CHECK(left > 0.0);
  }
}

TEST_CASE("class split holds out the configured number of families") {
  const auto classes = make_classes(12, 4);
  CHECK(classes.size() == 16);
  std::set<int> ids;
  int unseen = 0;
  for (const auto& c : classes) {
    ids.insert(c.id);
    unseen += c.unseen;
  }
  CHECK(ids.size() == 16);
  CHECK(unseen == 4);
  CHECK_THROWS_AS(make_classes(0, 4), ConfigError);
}

TEST_CASE("generated splits are class disjoint and train is seen-only") {
  const auto ds = generate_dataset(tiny_config());
  CHECK(ds.split(Split::kTrain).size() == 12);
  CHECK(ds.split(Split::kSeen).size() == 10);
  CHECK(ds.split(Split::kUnseen).size() == 10);
  for (const auto& s : ds.samples) {
    const bool unseen = ds.class_info(s.query_class).unseen;
    CHECK(unseen == (s.split == Split::kUnseen));
    CHECK(!s.gt_boxes.empty());
    for (const auto& b : s.gt_boxes) CHECK(inside_image(b, 96, 96));
    for (const auto& d : s.distractors) CHECK(ds.class_info(d.class_id).unseen == unseen);
    CHECK(s.query.height() == 32);
  }
  CHECK_NOTHROW(check_split_disjoint(ds));
}

TEST_CASE("leakage of an unseen class into train is a contract violation") {
  auto ds = generate_dataset(tiny_config());
  for (auto& s : ds.samples) {
    if (s.split == Split::kTrain) {
      s.query_class = ds.class_ids(true).front();
      break;
    }
  }
  CHECK_THROWS_AS(check_split_disjoint(ds), ContractError);
}

TEST_CASE("same seed gives an identical manifest hash, a different seed does not") {
  const auto a = fresh_dir("ds_a"), b = fresh_dir("ds_b"), c = fresh_dir("ds_c");
  save_dataset(generate_dataset(tiny_config()), a);
  save_dataset(generate_dataset(tiny_config()), b);
  auto other = tiny_config();
  other.seed = 8;
  save_dataset(generate_dataset(other), c);
  CHECK(manifest_hash(a) == manifest_hash(b));
  CHECK(manifest_hash(a) != manifest_hash(c));

  const auto loaded = load_dataset(a);
  const auto fresh = generate_dataset(tiny_config());
  REQUIRE(loaded.samples.size() == fresh.samples.size());
  for (std::size_t i = 0; i < fresh.samples.size(); ++i) {
    CHECK(loaded.samples[i].target == fresh.samples[i].target);
    CHECK(loaded.samples[i].query == fresh.samples[i].query);
    CHECK(loaded.samples[i].gt_boxes == fresh.samples[i].gt_boxes);
    CHECK(loaded.samples[i].query_class == fresh.samples[i].query_class);
  }
}

TEST_CASE("corrupted datasets are detected on load") {
  const auto dir = fresh_dir("ds_bad");
  save_dataset(generate_dataset(tiny_config()), dir);
  SUBCASE("edited manifest") {
    std::string text;
    {
      std::ifstream in(dir / "manifest.json");
      text.assign(std::istreambuf_iterator<char>(in), {});
    }
    const auto pos = text.find("\"n_seen\": 12");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"n_seen\": 11");
    std::ofstream(dir / "manifest.json") << text;
    CHECK_THROWS_AS(load_dataset(dir), DataError);
  }
  SUBCASE("edited annotation") {
    std::ofstream(dir / "annotations.jsonl", std::ios::app) << "\n";
    CHECK_THROWS_AS(load_dataset(dir), DataError);
  }
  SUBCASE("missing image") {
    fs::remove(dir / "images" / "000000.ppm");
    CHECK_THROWS_AS(load_dataset(dir), DataError);
  }
}

TEST_CASE("AP hand cases") {
  const std::vector<Box> gt{kA};
  SUBCASE("perfect detection") {
    std::vector<ImageResult> r{{{det(kA, 0.9)}, gt}};
    CHECK(evaluate_ap(r, 0.5) == 1.0);
  }
  SUBCASE("no detections") {
    std::vector<ImageResult> r{{{}, gt}};
    CHECK(evaluate_ap(r, 0.5) == 0.0);
  }
  SUBCASE("false positive ranked above the true positive") {
    std::vector<ImageResult> r{{{det(kB, 0.9), det(kA, 0.8)}, gt}};
    CHECK(evaluate_ap(r, 0.5) == 0.5);
  }
  SUBCASE("duplicate below the match does not lower AP") {
    std::vector<ImageResult> r{{{det(kA, 0.9), det(kA, 0.8)}, gt}};
    CHECK(evaluate_ap(r, 0.5) == 1.0);
  }
  SUBCASE("half the ground truth found") {
    std::vector<ImageResult> r{{{det(kA, 0.9)}, {kA, kB}}};
    CHECK(evaluate_ap(r, 0.5) == 0.5);
  }
  SUBCASE("coco AP counts passing thresholds") {
    // IoU 0.72 passes 0.50 through 0.70.
    std::vector<ImageResult> r{{{det({0, 0, 10, 7.2}, 0.9)}, gt}};
    CHECK(evaluate_coco_ap(r) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("no ground truth is rejected") {
    std::vector<ImageResult> r{{{det(kA, 0.9)}, {}}};
    CHECK_THROWS_AS(evaluate_ap(r, 0.5), ContractError);
  }
}

TEST_CASE("AP is non-increasing in the IoU threshold") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ImageResult> images(4);
    for (auto& im : images) {
      for (int g = 0; g < 2; ++g) {
        const double x = 40 * u(rng), y = 40 * u(rng);
        im.gt.push_back({x, y, x + 12, y + 12});
        for (int d = 0; d < 2; ++d) {
          const double j = 4 * (u(rng) - 0.5);
          im.dets.push_back(det({x + j, y - j, x + 12 + j, y + 12}, u(rng)));
        }
      }
    }
    double prev = 1.0;
    for (int t = 0; t <= 9; ++t) {
      const double ap = evaluate_ap(images, 0.5 + 0.05 * t);
      CHECK(ap <= prev + 1e-15);
      prev = ap;
    }
  }
}

TEST_CASE("AP ties keep image order") {
  // Both detections score 0.5; the image-0 false positive ranks first.
  std::vector<ImageResult> r{{{det(kB, 0.5)}, {kA}}, {{det(kA, 0.5)}, {kA}}};
  CHECK(evaluate_ap(r, 0.5) == doctest::Approx(0.25).epsilon(1e-12));
  std::swap(r[0], r[1]);
  CHECK(evaluate_ap(r, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("seeded permutation is a deterministic permutation") {
  const auto p = seeded_permutation(17, 42);
  CHECK(p == seeded_permutation(17, 42));
  CHECK(p != seeded_permutation(17, 43));
  auto s = p;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == i);
  CHECK(seeded_permutation(0, 1).empty());
}

TEST_CASE("protocol: oracle detector scores 1, silent detector scores 0") {
  const auto ds = generate_dataset(tiny_config());
  const auto perfect = [](const OneShotSample& t, const Image&) {
    std::vector<Detection> out;
    for (const auto& b : t.gt_boxes) out.push_back({b, 0.9});
    return out;
  };
  const auto silent = [](const OneShotSample&, const Image&) { return std::vector<Detection>{}; };
  const auto rep = evaluation_protocol(ds, Split::kUnseen, perfect);
  CHECK(rep.mean_ap == 1.0);
  CHECK(rep.mean_ap50 == 1.0);
  CHECK(evaluation_protocol(ds, Split::kUnseen, silent).mean_ap50 == 0.0);
  const auto unseen = ds.class_ids(true);
  for (const auto& m : rep.per_class) CHECK(std::find(unseen.begin(), unseen.end(), m.class_id) != unseen.end());
}

TEST_CASE("protocol output is independent of workers and sample order") {
  const auto ds = generate_dataset(tiny_config());
  // Score depends on the query so that query selection matters.
  const auto fn = [](const OneShotSample& t, const Image& q) {
    std::vector<Detection> out;
    const double s = (q.bytes()[0] + 1) / 257.0;
    out.push_back({kB, 1.0 - s});
    for (const auto& b : t.gt_boxes) out.push_back({b, s});
    return out;
  };
  ProtocolOptions one, many;
  many.workers = 3;
  const auto a = evaluation_protocol(ds, Split::kSeen, fn, one);
  const auto b = evaluation_protocol(ds, Split::kSeen, fn, many);
  auto shuffled = ds;
  std::mt19937_64 rng(5);
  std::shuffle(shuffled.samples.begin(), shuffled.samples.end(), rng);
  const auto c = evaluation_protocol(shuffled, Split::kSeen, fn, one);
  CHECK(a.mean_ap == b.mean_ap);
  CHECK(a.mean_ap50 == b.mean_ap50);
  CHECK(a.mean_ap == c.mean_ap);
  CHECK(a.mean_ap50 == c.mean_ap50);
  REQUIRE(a.per_class.size() == c.per_class.size());
  for (std::size_t i = 0; i < a.per_class.size(); ++i) CHECK(a.per_class[i].ap == c.per_class[i].ap);
}

TEST_CASE("protocol uses every candidate of a small pool and notes it") {
  // Class 0 has a single sample; class 1 has six.
  const auto ds = toy_dataset({0, 1, 1, 1, 1, 1, 1});
  std::vector<std::uint8_t> seen_queries;
  const auto fn = [&](const OneShotSample& t, const Image& q) {
    if (t.id == 100) seen_queries.push_back(q.bytes()[0]);
    return std::vector<Detection>{{kA, 0.9}};
  };
  const auto rep = evaluation_protocol(ds, Split::kUnseen, fn);
  REQUIRE(rep.per_class.size() == 2);
  CHECK(rep.per_class[0].rounds == 1);
  CHECK(rep.per_class[1].rounds == 5);
  CHECK(seen_queries == std::vector<std::uint8_t>{100});
  CHECK(!rep.notes.empty());
  CHECK(rep.mean_ap50 == 1.0);
  ProtocolOptions bad;
  bad.n_queries = 0;
  CHECK_THROWS_AS(evaluation_protocol(ds, Split::kUnseen, fn, bad), ConfigError);
  CHECK_THROWS_AS(evaluation_protocol(ds, Split::kSeen, fn), DataError);
}
