#include "catdet/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "catdet/common/errors.hpp"
#include "catdet/numerics/ops.hpp"

namespace catdet::det {

void DetectorConfig::validate() const {
  cat.validate();
  if (anchor_sizes.empty()) throw ConfigError("at least one anchor size is required");
  if (roi_size == 0) throw ConfigError("roi_size must be positive");
  if (num_proposals == 0) throw ConfigError("num_proposals must be positive");
  if (image_size < BackboneParams::kMinSide || query_size < BackboneParams::kMinSide) {
    throw ConfigError("image and query sizes must be at least 32");
  }
  if (!(neg_iou <= pos_iou)) throw ConfigError("neg_iou must not exceed pos_iou");
}

DetectorConfig desk_config() {
  DetectorConfig c;
  c.cat.d_model = 64;
  c.cat.heads = 4;
  c.cat.layers = 4;
  return c;
}

Detector::Detector(const DetectorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), pe_cache_(std::make_unique<enc::PositionEncodingCache>(cfg.cat.pe_temperature)) {
  cfg_.validate();
  num::Initializer init(seed);
  backbone_ = BackboneParams::init(init);
  compress_ = cat::CompressParams::init(init, backbone_.out_channels(), cfg_.cat.d_model);
  cat_ = cat::CatParams::init(init, cfg_.cat);
  rpn_ = ProposalHeadParams::init(init, cfg_.cat.d_model, cfg_.anchor_sizes.size());
  cls_ = ClassifierParams::init(init, cfg_.cat.d_model);
  reg_ = RegressorParams::init(init, cfg_.cat.d_model, cfg_.roi_size);

  backbone_.register_into(registry_, "backbone.");
  compress_.register_into(registry_, "compress.");
  cat_.register_into(registry_, "cat.");
  rpn_.register_into(registry_, "rpn.");
  cls_.register_into(registry_, "cls.");
  reg_.register_into(registry_, "reg.");
}

PairFeatures Detector::encode(const Tensor& target, const Tensor& query, bool keep_maps) const {
  auto phi_t = cat::compress_channels(backbone_forward(target, backbone_), compress_);
  auto phi_q = cat::compress_channels(backbone_forward(query, backbone_), compress_);
  auto out = cat::cat_forward(phi_t, phi_q, cat_, *pe_cache_, keep_maps);
  return {std::move(out.f_t), std::move(out.f_q), std::move(out.target_maps)};
}

std::vector<Box> Detector::anchors(const SpatialFeature& f_t, double image_width, double image_height) const {
  return make_anchors(f_t.height(), f_t.width(), f_t.stride, cfg_.anchor_sizes, image_width, image_height);
}

data::Image Detector::prepare_query(const data::Image& query) const {
  const int q = static_cast<int>(cfg_.query_size);
  if (query.height() == q && query.width() == q) return query;
  return data::resize_bilinear(query, q, q);
}

LossBreakdown Detector::loss(const data::Image& target, const data::Image& query, std::span<const Box> gt,
                             std::span<const Box> hard_negatives) const {
  auto feats = encode(image_tensor(target), image_tensor(prepare_query(query)));
  const double W = target.width(), H = target.height();

  LossInputs in;
  in.anchors = anchors(feats.f_t, W, H);
  in.objectness = objectness_logits(feats.f_t, rpn_);
  in.gt.assign(gt.begin(), gt.end());
  const auto props = generate_proposals(in.objectness.data(), in.anchors,
                                        std::min(cfg_.num_proposals, in.anchors.size()));
  for (const auto& p : props) in.rois.push_back(p.box);
  in.rois.insert(in.rois.end(), gt.begin(), gt.end());
  if (cfg_.hard_negatives) in.rois.insert(in.rois.end(), hard_negatives.begin(), hard_negatives.end());

  auto pooled = roi_pool(feats.f_t, in.rois, cfg_.roi_size);
  in.match_logits = similarity_logits(pooled, feats.f_q, cls_);
  in.deltas = regress_deltas(pooled, reg_);
  in.coder = coder();
  in.pos_iou = cfg_.pos_iou;
  in.neg_iou = cfg_.neg_iou;
  return detection_loss(in);
}

std::vector<Tensor> Detector::response_maps(const data::Image& target, const data::Image& query) const {
  num::NoGradGuard no_grad;
  const auto feats = encode(image_tensor(target), image_tensor(prepare_query(query)), true);
  std::vector<Tensor> maps;
  for (const auto& m : feats.target_maps) maps.push_back(cat::response_map(m));
  return maps;
}

std::vector<Detection> Detector::detect(const data::Image& target, const data::Image& query) const {
  num::NoGradGuard no_grad;
  auto feats = encode(image_tensor(target), image_tensor(prepare_query(query)));
  const double W = target.width(), H = target.height();
  const auto anc = anchors(feats.f_t, W, H);
  auto logits = objectness_logits(feats.f_t, rpn_);
  const auto props = generate_proposals(logits.data(), anc, std::min(cfg_.num_proposals, anc.size()));
  std::vector<Box> boxes;
  for (const auto& p : props) boxes.push_back(p.box);

  auto pooled = roi_pool(feats.f_t, boxes, cfg_.roi_size);
  auto scores = num::sigmoid(similarity_logits(pooled, feats.f_q, cls_));
  auto deltas = regress_deltas(pooled, reg_);
  const auto bc = coder();

  std::vector<Detection> dets;
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const double s = scores.data()[r];
    if (!(s > cfg_.score_threshold)) continue;
    const Deltas d{deltas.at({r, 0}), deltas.at({r, 1}), deltas.at({r, 2}), deltas.at({r, 3})};
    const Box b = clip_box(bc.decode(boxes[r], d), W, H);
    if (b.valid()) dets.push_back({b, s});
  }
  dets = nms(std::move(dets), cfg_.nms_iou);
  if (dets.size() > cfg_.max_detections) dets.resize(cfg_.max_detections);
  return dets;
}

void write_detections_jsonl(std::ostream& out, int image_id, int query_class, std::span<const Detection> dets) {
  for (const auto& d : dets) {
    nlohmann::json j{{"image_id", image_id},
                     {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                     {"score", d.score},
                     {"query_class", query_class}};
    out << j.dump() << '\n';
  }
}

}  // namespace catdet::det
