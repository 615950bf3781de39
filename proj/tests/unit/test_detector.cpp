#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "catdet/common/errors.hpp"
#include "catdet/data/dataset.hpp"
#include "catdet/detector/detector.hpp"
#include "catdet/detector/train.hpp"
#include "catdet/numerics/ops.hpp"
#include "gradcheck.hpp"

using namespace catdet;
using namespace catdet::det;
using catdet::testing::grad_check;
using catdet::testing::probe;
using catdet::testing::random_tensor;

namespace {

DetectorConfig tiny_detector() {
  DetectorConfig c;
  c.cat.d_model = 16;
  c.cat.heads = 2;
  c.cat.layers = 1;
  c.image_size = 64;
  c.query_size = 32;
  c.anchor_sizes = {16.0, 24.0};
  c.roi_size = 3;
  c.num_proposals = 6;
  return c;
}

data::GenConfig tiny_data() {
  data::GenConfig g;
  g.seed = 3;
  g.train_samples = 8;
  g.eval_samples_per_split = 4;
  g.image_size = 64;
  g.query_size = 32;
  g.min_glyph = 12;
  g.max_glyph = 18;
  g.max_instances = 2;
  g.max_distractors = 2;
  return g;
}

double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double bce(double z, double y) { return log1pexp(z) - y * z; }
double sl1(double x) { return std::abs(x) < 1 ? 0.5 * x * x : std::abs(x) - 0.5; }

}  // namespace

TEST_CASE("backbone output grid follows the stride-16 contract") {
  num::Initializer init(1);
  auto bb = BackboneParams::init(init);
  num::NoGradGuard g;
  auto f = backbone_forward(Tensor::zeros({3, 208, 208}), bb);
  CHECK(f.data.shape() == num::Shape{64, 13, 13});
  CHECK(f.stride == 16);
  CHECK(backbone_forward(Tensor::zeros({3, 64, 64}), bb).data.shape() == num::Shape{64, 4, 4});
  CHECK(backbone_forward(Tensor::zeros({3, 47, 80}), bb).data.shape() == num::Shape{64, 2, 5});
  CHECK_THROWS_AS(backbone_forward(Tensor::zeros({3, 31, 64}), bb), InputError);
  CHECK_THROWS_AS(backbone_forward(Tensor::zeros({1, 64, 64}), bb), InputError);
}

TEST_CASE("backbone gradient on a 32x32 input") {
  num::Initializer init(2);
  auto bb = BackboneParams::init(init);
  std::mt19937_64 rng(2);
  auto x = random_tensor(rng, {3, 32, 32});
  std::vector<Tensor> inputs{x, bb.layers[0].w, bb.layers[2].b, bb.layers[4].w};
  auto res = grad_check(
      [&](const std::vector<Tensor>& in) {
        auto p = bb;
        p.layers[0].w = in[1];
        p.layers[2].b = in[2];
        p.layers[4].w = in[3];
        return probe(backbone_forward(in[0], p).data, 1);
      },
      inputs, 1e-5, 60);
  INFO(res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("image tensor normalization") {
  data::Image img(2, 3, {255, 0, 114});
  auto t = image_tensor(img);
  CHECK(t.shape() == num::Shape{3, 2, 3});
  CHECK(t.at({0, 1, 2}) == doctest::Approx((1.0 - 0.45) / 0.25));
  CHECK(t.at({1, 0, 0}) == doctest::Approx(-0.45 / 0.25));
  CHECK(t.at({2, 1, 1}) == doctest::Approx((114 / 255.0 - 0.45) / 0.25));
}

TEST_CASE("anchors are ordered by row, column, size and clipped") {
  const double sizes[] = {32.0, 64.0};
  auto a = make_anchors(2, 3, 16, sizes, 48, 32);
  REQUIRE(a.size() == 12);
  // (row 1, col 2, size 32): centre (40, 24)
  CHECK(a[(1 * 3 + 2) * 2 + 0] == Box{24, 8, 48, 32});
  for (const auto& b : a) CHECK(inside_image(b, 48, 32));
}

TEST_CASE("proposal head firing at one cell yields a centred proposal") {
  const std::size_t C = 4, H = 13, W = 13;
  std::vector<double> f(C * H * W, 0.0);
  f[0 * H * W + 5 * W + 7] = 1.0;
  SpatialFeature ft{Tensor::from({C, H, W}, f), 16};
  std::vector<double> w(3 * C, 0.0);
  w[0 * C + 0] = 10.0;  // anchor 0 reads channel 0
  ProposalHeadParams head{Tensor::from({3, C, 1, 1}, w), Tensor::zeros({3})};
  auto logits = objectness_logits(ft, head);
  REQUIRE(logits.numel() == H * W * 3);
  const double sizes[] = {32.0, 48.0, 64.0};
  auto anc = make_anchors(H, W, 16, sizes, 208, 208);
  auto p = generate_proposals(logits.data(), anc, 1);
  REQUIRE(p.size() == 1);
  CHECK(p[0].anchor_index == (5 * W + 7) * 3);
  CHECK(p[0].box.center_x() == (7 + 0.5) * 16);
  CHECK(p[0].box.center_y() == (5 + 0.5) * 16);
}

TEST_CASE("proposal ordering: ties, full-sort oracle and oversized k") {
  const double sizes[] = {32.0, 48.0};
  auto anc = make_anchors(3, 3, 16, sizes, 48, 48);
  std::vector<double> flat(anc.size(), 0.25);
  auto p = generate_proposals(flat, anc, 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(p[i].anchor_index == i);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(0, 6);  // coarse values force ties
  std::vector<double> s(anc.size());
  for (auto& x : s) x = d(rng);
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  auto q = generate_proposals(s, anc, 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(q[i].anchor_index == idx[i]);

  CHECK(generate_proposals(s, anc, 100).size() == anc.size());
  CHECK_THROWS_AS(generate_proposals(s, anc, 0), ContractError);
}

TEST_CASE("roi_pool sampling") {
  std::mt19937_64 rng(4);
  auto f = random_tensor(rng, {3, 5, 6}, -1, 1, false);
  SpatialFeature ft{f, 16};

  // A box covering exactly cell (2,3) samples that cell.
  const Box cell{3 * 16, 2 * 16, 4 * 16, 3 * 16};
  auto one = roi_pool(ft, std::span(&cell, 1), 1);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(one.at({0, c}) - f.at({c, 2, 3})) <= 1e-12);

  // Samples landing on integer coordinates equal direct indexing.
  const Box grid{1 * 16, 0, 4 * 16, 3 * 16};  // 3x3 cells starting at (0,1)
  auto g = roi_pool(ft, std::span(&grid, 1), 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t by = 0; by < 3; ++by)
      for (std::size_t bx = 0; bx < 3; ++bx)
        CHECK(std::abs(g.at({0, c * 9 + by * 3 + bx}) - f.at({c, by, 1 + bx})) <= 1e-12);

  SpatialFeature flat{Tensor::full({2, 5, 6}, 0.7), 16};
  const Box boxes[] = {{3.3, 7.9, 50.2, 61.0}, {0, 0, 96, 80}, {80, 60, 95, 79}};
  auto c = roi_pool(flat, boxes, 4);
  for (double v : c.data()) CHECK(std::abs(v - 0.7) <= 1e-12);

  const Box bad[] = {{200, 200, 300, 300}};
  CHECK_THROWS_AS(roi_pool(ft, bad, 2), ContractError);
}

TEST_CASE("roi_pool gradient") {
  std::mt19937_64 rng(5);
  auto f = random_tensor(rng, {2, 4, 5});
  const std::vector<Box> boxes{{5.5, 3.0, 60.0, 41.0}, {20, 10, 79, 63}, {0, 0, 17, 12}};
  auto res = grad_check(
      [&](const std::vector<Tensor>& in) { return probe(roi_pool({in[0], 16}, boxes, 3), 2); }, {f});
  INFO(res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("similarity classifier") {
  num::Initializer init(6);
  auto p = ClassifierParams::init(init, 4);
  SpatialFeature fq{Tensor::full({4, 2, 2}, 3.0), 16};
  CHECK(num::global_avg_pool(fq.data).data()[2] == 3.0);

  std::mt19937_64 rng(6);
  auto roi = random_tensor(rng, {4, 3, 3}, -1, 1, false);
  auto gap = roi_gap(num::reshape(roi, {1, 36}), 4);
  for (std::size_t c = 0; c < 4; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < 9; ++i) m += roi.data()[c * 9 + i];
    CHECK(std::abs(gap.at({0, c}) - m / 9.0) <= 1e-12);
  }

  ClassifierParams zero{Tensor::zeros({8, 4}), Tensor::zeros({4}), Tensor::zeros({4, 1}), Tensor::zeros({1})};
  CHECK(classify_similarity(roi, fq, zero) == 0.5);
  const double prob = classify_similarity(roi, fq, p);
  CHECK(prob > 0.0);
  CHECK(prob < 1.0);
  CHECK_THROWS_AS(classify_similarity(random_tensor(rng, {3, 3, 3}, -1, 1, false), fq, p), DimensionError);
}

TEST_CASE("box coder") {
  BoxCoder unit;
  const Box b{10, 20, 50, 80};
  CHECK(unit.decode(b, {0, 0, 0, 0}) == b);
  auto big = unit.decode(b, {0, 0, std::log(2.0), std::log(2.0)});
  CHECK(std::abs(big.x1 - (-10)) <= 1e-12);
  CHECK(std::abs(big.y1 - (-10)) <= 1e-12);
  CHECK(std::abs(big.x2 - 70) <= 1e-12);
  CHECK(std::abs(big.y2 - 110) <= 1e-12);

  BoxCoder weighted{{10, 10, 5, 5}};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(0, 150), size(4, 60);
  for (int i = 0; i < 100; ++i) {
    const double x = pos(rng), y = pos(rng), u = pos(rng), v = pos(rng);
    const Box r{x, y, x + size(rng), y + size(rng)}, t{u, v, u + size(rng), v + size(rng)};
    const Box back = weighted.decode(r, weighted.encode(r, t));
    CHECK(std::abs(back.x1 - t.x1) <= 1e-9);
    CHECK(std::abs(back.y1 - t.y1) <= 1e-9);
    CHECK(std::abs(back.x2 - t.x2) <= 1e-9);
    CHECK(std::abs(back.y2 - t.y2) <= 1e-9);
  }
}

TEST_CASE("classifier and regressor gradients") {
  num::Initializer init(8);
  auto cls = ClassifierParams::init(init, 3);
  auto reg = RegressorParams::init(init, 3, 2);
  std::mt19937_64 rng(8);
  auto rois = random_tensor(rng, {4, 12});
  auto fq = random_tensor(rng, {3, 2, 2});
  std::vector<Tensor> inputs{rois, fq, cls.w1, cls.b2, reg.w1, reg.w2};
  auto res = grad_check(
      [&](const std::vector<Tensor>& in) {
        auto c = cls;
        auto r = reg;
        c.w1 = in[2];
        c.b2 = in[3];
        r.w1 = in[4];
        r.w2 = in[5];
        return num::add(probe(similarity_logits(in[0], {in[1], 16}, c), 3), probe(regress_deltas(in[0], r), 4));
      },
      inputs);
  INFO(res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("anchor labels") {
  const std::vector<Box> anchors{{0, 0, 10, 10}, {0, 0, 20, 20}, {30, 30, 40, 40}, {5, 0, 15, 10}};
  const std::vector<Box> gt{{0, 0, 10, 10}, {31, 31, 60, 60}};
  auto l = anchor_labels(anchors, gt, 0.5, 0.3);
  CHECK(l[0] == 1);   // exact match
  CHECK(l[1] == 0);   // IoU 0.25
  CHECK(l[2] == 1);   // below 0.5 but best for the second box
  CHECK(l[3] == -1);  // IoU 1/3 sits between the thresholds
}

TEST_CASE("detection loss") {
  const std::vector<Box> anchors{{0, 0, 10, 10}, {0, 0, 20, 20}, {30, 30, 40, 40}, {5, 0, 15, 10}};
  const std::vector<Box> gt{{0, 0, 10, 10}, {31, 31, 60, 60}};
  const std::vector<Box> rois{{0, 0, 10, 10}, {1, 1, 11, 12}, {30, 30, 40, 40}, {31, 31, 60, 60}};
  BoxCoder coder{{10, 10, 5, 5}};

  LossInputs in;
  in.anchors = anchors;
  in.rois = rois;
  in.gt = gt;
  in.coder = coder;
  in.objectness = Tensor::vector({0.3, -1.2, 0.8, 2.0}, true);
  in.match_logits = Tensor::vector({1.5, 0.2, -0.7, 2.2}, true);
  in.deltas = Tensor::from({4, 4}, {0.1, -0.2, 0.3, 0.05, 1.0, 2.0, -3.0, 0.5, 0, 0, 0, 0, -0.4, 0.6, 0.2, 1.7}, true);
  auto out = detection_loss(in);

  // Anchors: 0 and 2 positive, 1 negative, 3 ignored.
  const double obj = (bce(0.3, 1) + bce(0.8, 1)) / 2.0 + bce(-1.2, 0);
  // RoIs 0, 1, 3 match a ground truth at IoU >= 0.5 (roi 1: 100/120); roi 2 does not (81/... < 0.5).
  const double iou1 = 90.0 / (100.0 + 110.0 - 90.0);
  REQUIRE(iou1 >= 0.5);
  const double iou2 = 81.0 / (100.0 + 841.0 - 81.0);
  REQUIRE(iou2 < 0.5);
  const double match = (bce(1.5, 1) + bce(0.2, 1) + bce(-0.7, 0) + bce(2.2, 1)) / 4.0;
  double reg = 0.0;
  for (std::size_t r : {0u, 1u, 3u}) {
    const auto t = coder.encode(rois[r], r == 3 ? gt[1] : gt[0]);
    for (int k = 0; k < 4; ++k) reg += sl1(in.deltas.at({r, std::size_t(k)}) - t[k]);
  }
  reg /= 12.0;
  CHECK(std::abs(out.objectness - obj) <= 1e-9);
  CHECK(std::abs(out.match - match) <= 1e-9);
  CHECK(std::abs(out.regression - reg) <= 1e-9);
  CHECK(std::abs(out.total.item() - (obj + match + reg)) <= 1e-9);

  auto res = grad_check(
      [&](const std::vector<Tensor>& t) {
        auto c = in;
        c.objectness = t[0];
        c.match_logits = t[1];
        c.deltas = t[2];
        return detection_loss(c).total;
      },
      {in.objectness, in.match_logits, in.deltas});
  CHECK(res.max_rel_err <= 1e-4);

  CHECK(std::abs(num::smooth_l1(Tensor::vector({0.5}), std::vector<double>{0.0}, std::vector<double>{1.0}).item() -
                 0.125) <= 1e-15);

  auto empty = in;
  empty.gt.clear();
  CHECK_THROWS_AS(detection_loss(empty), ContractError);
}

TEST_CASE("perfect predictions give near-zero loss") {
  const std::vector<Box> anchors{{0, 0, 10, 10}, {0, 0, 20, 20}, {30, 30, 40, 40}};
  const std::vector<Box> gt{{0, 0, 10, 10}};
  const std::vector<Box> rois{{0, 0, 10, 10}, {30, 30, 40, 40}};
  LossInputs in;
  in.anchors = anchors;
  in.rois = rois;
  in.gt = gt;
  in.coder = BoxCoder{{10, 10, 5, 5}};
  in.objectness = Tensor::vector({40, -40, -40});
  in.match_logits = Tensor::vector({40, -40});
  in.deltas = Tensor::zeros({2, 4});
  CHECK(detection_loss(in).total.item() <= 1e-12);
}

TEST_CASE("nms") {
  std::vector<Detection> two{{{0, 0, 10, 10}, 0.9}, {{0, 0, 10, 10}, 0.8}};
  auto kept = nms(two, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 100), s(0, 1);
  std::vector<Detection> many;
  for (int i = 0; i < 40; ++i) {
    const double x = u(rng), y = u(rng);
    many.push_back({{x, y, x + 20, y + 20}, s(rng)});
  }
  auto k = nms(many, 0.5);
  CHECK(k.size() <= many.size());
  for (std::size_t i = 1; i < k.size(); ++i) CHECK(k[i - 1].score >= k[i].score);
  for (std::size_t i = 0; i < k.size(); ++i)
    for (std::size_t j = i + 1; j < k.size(); ++j) CHECK(iou(k[i].box, k[j].box) <= 0.5);
}

TEST_CASE("untrained detector runs end to end") {
  auto ds = data::generate_dataset(tiny_data());
  Detector model(tiny_detector(), 10);
  for (const auto* s : ds.split(data::Split::kUnseen)) {
    auto dets = model.detect(s->target, s->query);
    CHECK(dets.size() <= model.config().max_detections);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      CHECK(dets[i].score >= 0.0);
      CHECK(dets[i].score <= 1.0);
      CHECK(dets[i].box.valid());
      CHECK(inside_image(dets[i].box, s->target.width(), s->target.height()));
      if (i) CHECK(dets[i - 1].score >= dets[i].score);
    }
    auto again = model.detect(s->target, s->query);
    REQUIRE(again.size() == dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
      CHECK(again[i].box == dets[i].box);
      CHECK(again[i].score == dets[i].score);
    }
  }

  // Queries are resized to the configured square before the backbone.
  const auto* s = ds.split(data::Split::kSeen).front();
  auto big = data::resize_bilinear(s->query, 48, 48);
  auto a = model.detect(s->target, big);
  auto b = model.detect(s->target, data::resize_bilinear(big, 32, 32));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].score == b[i].score);

  std::ostringstream os;
  std::vector<Detection> d{{{1, 2, 3, 4}, 0.5}};
  write_detections_jsonl(os, 7, 3, d);
  auto j = nlohmann::json::parse(os.str());
  CHECK(j["image_id"] == 7);
  CHECK(j["query_class"] == 3);
  CHECK(j["score"] == 0.5);
  CHECK(j["box"].size() == 4);
}

TEST_CASE("detector parameter registry") {
  auto cfg = tiny_detector();
  Detector model(cfg, 11);
  std::size_t manual = 0;
  for (const auto& e : model.params().entries()) manual += e.tensor.numel();
  CHECK(model.params().count_params() == manual);
  CHECK_NOTHROW(model.params().get("cat.layer0.q.mha.w_o"));
  cfg.cat.mode = cat::StreamMode::kOneStream;
  Detector one(cfg, 11);
  CHECK_THROWS(one.params().get("cat.layer0.q.mha.w_o"));
}

TEST_CASE("learning-rate schedule") {
  TrainConfig tc;
  for (std::size_t e = 1; e <= 5; ++e) CHECK(learning_rate(tc, e) == doctest::Approx(0.01));
  for (std::size_t e = 6; e <= 9; ++e) CHECK(learning_rate(tc, e) == doctest::Approx(0.001));
  CHECK(learning_rate(tc, 10) == doctest::Approx(0.0001));
}

TEST_CASE("resumed training replays the same losses") {
  auto ds = data::generate_dataset(tiny_data());
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 5;

  Detector full(tiny_detector(), 12);
  Trainer a(full, ds, tc);
  std::vector<double> losses;
  while (!a.finished()) losses.push_back(a.run_epoch().loss);
  CHECK(losses.back() != losses.front());

  auto dir = std::filesystem::temp_directory_path() / "catdet_test_resume";
  std::filesystem::create_directories(dir);
  {
    Detector first(tiny_detector(), 12);
    Trainer b(first, ds, tc);
    CHECK(b.run_epoch().loss == losses[0]);
    b.save_state(dir / "state.ckpt");
  }
  Detector resumed(tiny_detector(), 99);  // different init, overwritten by the state
  Trainer c(resumed, ds, tc);
  c.load_state(dir / "state.ckpt");
  CHECK(c.epochs_done() == 1);
  CHECK(c.run_epoch().loss == losses[1]);
  CHECK(c.run_epoch().loss == losses[2]);
  CHECK(c.finished());
  for (std::size_t i = 0; i < full.params().entries().size(); ++i) {
    const auto& x = full.params().entries()[i].tensor;
    const auto& y = resumed.params().entries()[i].tensor;
    INFO(full.params().entries()[i].name);
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }

  save_model(full, dir / "model.ckpt");
  Detector loaded(tiny_detector(), 77);
  load_model(loaded, dir / "model.ckpt");
  const auto* s = ds.split(data::Split::kSeen).front();
  auto d1 = full.detect(s->target, s->query), d2 = loaded.detect(s->target, s->query);
  REQUIRE(d1.size() == d2.size());
  for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d1[i].score == d2[i].score);
  CHECK_THROWS_AS(c.load_state(dir / "model.ckpt"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training aborts on unseen-class leakage") {
  auto ds = data::generate_dataset(tiny_data());
  const int unseen = ds.class_ids(true).front();
  for (auto& s : ds.samples) {
    if (s.split == data::Split::kTrain) {
      s.query_class = unseen;
      break;
    }
  }
  Detector model(tiny_detector(), 13);
  CHECK_THROWS_AS(Trainer(model, ds, TrainConfig{}), ContractError);
}

TEST_CASE("response maps cover the CAT input and every layer") {
  auto cfg = tiny_detector();
  cfg.cat.layers = 3;
  Detector model(cfg, 5);
  const auto ds = data::generate_dataset(tiny_data());
  const auto& s = ds.samples.front();
  const auto maps = model.response_maps(s.target, s.query);
  REQUIRE(maps.size() == 4);
  for (const auto& m : maps) {
    CHECK(m.dim(0) == 4);
    CHECK(m.dim(1) == 4);
    for (double v : m.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}
