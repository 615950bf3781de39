#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "catdet/cat/cat.hpp"
#include "catdet/common/box.hpp"
#include "catdet/data/image.hpp"
#include "catdet/detector/backbone.hpp"
#include "catdet/detector/boxes.hpp"
#include "catdet/detector/heads.hpp"
#include "catdet/detector/loss.hpp"

namespace catdet::det {

struct DetectorConfig {
  cat::CatConfig cat;
  std::size_t image_size = 208;
  std::size_t query_size = 64;
  std::vector<double> anchor_sizes{32.0, 48.0, 64.0};
  std::size_t roi_size = 7;
  std::size_t num_proposals = 32;
  std::size_t max_detections = 100;
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  double pos_iou = 0.5;
  double neg_iou = 0.3;
  std::array<double, 4> box_weights{10.0, 10.0, 5.0, 5.0};
  // Adds distractor boxes to the training RoIs as negatives.
  bool hard_negatives = false;

  void validate() const;
};

// d_model 64, 4 heads, 4 layers; everything else at the defaults above.
DetectorConfig desk_config();

struct PairFeatures {
  SpatialFeature f_t;
  SpatialFeature f_q;
  std::vector<SpatialFeature> target_maps;  // CAT input plus one per layer, when requested
};

class Detector {
 public:
  Detector(const DetectorConfig& cfg, std::uint64_t seed);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;
  Detector(Detector&&) = default;
  Detector& operator=(Detector&&) = default;

  const DetectorConfig& config() const { return cfg_; }
  const num::ParamRegistry& params() const { return registry_; }

  const BackboneParams& backbone() const { return backbone_; }
  const cat::CompressParams& compress() const { return compress_; }
  const cat::CatParams& cat_params() const { return cat_; }
  const ProposalHeadParams& proposal_head() const { return rpn_; }
  const ClassifierParams& classifier() const { return cls_; }
  const RegressorParams& regressor() const { return reg_; }

  // Backbone on both inputs, channel compression, then the CAT stack.
  PairFeatures encode(const Tensor& target, const Tensor& query, bool keep_maps = false) const;
  std::vector<Box> anchors(const SpatialFeature& f_t, double image_width, double image_height) const;
  BoxCoder coder() const { return BoxCoder{cfg_.box_weights}; }

  LossBreakdown loss(const data::Image& target, const data::Image& query, std::span<const Box> gt,
                     std::span<const Box> hard_negatives = {}) const;

  // Sorted by descending score, at most max_detections, boxes inside the image.
  std::vector<Detection> detect(const data::Image& target, const data::Image& query) const;

  // response_map of the CAT input and of every layer output (N + 1 maps).
  std::vector<Tensor> response_maps(const data::Image& target, const data::Image& query) const;

 private:
  data::Image prepare_query(const data::Image& query) const;

  DetectorConfig cfg_;
  BackboneParams backbone_;
  cat::CompressParams compress_;
  cat::CatParams cat_;
  ProposalHeadParams rpn_;
  ClassifierParams cls_;
  RegressorParams reg_;
  num::ParamRegistry registry_;
  std::unique_ptr<enc::PositionEncodingCache> pe_cache_;
};

// One JSON object per line: {"image_id", "box": [x1,y1,x2,y2], "score", "query_class"}.
void write_detections_jsonl(std::ostream& out, int image_id, int query_class, std::span<const Detection> dets);

}  // namespace catdet::det
