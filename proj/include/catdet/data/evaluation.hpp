#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "catdet/common/box.hpp"
#include "catdet/data/dataset.hpp"

namespace catdet::data {

// Detections and ground truth of one image for one class.
struct ImageResult {
  std::vector<Detection> dets;
  std::vector<Box> gt;
};

// Area under the all-point interpolated precision/recall curve. Detections of
// all images are ranked by score (ties keep image order, then detection
// order) and greedily matched to the best still-unmatched ground truth with
// IoU >= iou_threshold.
double evaluate_ap(std::span<const ImageResult> images, double iou_threshold);

// Mean of evaluate_ap over IoU thresholds 0.50, 0.55, ..., 0.95.
double evaluate_coco_ap(std::span<const ImageResult> images);

using DetectFn = std::function<std::vector<Detection>(const OneShotSample& target, const Image& query)>;

struct ProtocolOptions {
  std::size_t n_queries = 5;
  std::size_t workers = 1;
};

struct ClassMetrics {
  int class_id = 0;
  double ap = 0.0;
  double ap50 = 0.0;
  std::size_t targets = 0;
  std::size_t rounds = 0;  // query rounds averaged; below n_queries when the pool is small
};

struct ProtocolReport {
  Split split = Split::kUnseen;
  std::size_t n_queries = 0;
  std::vector<ClassMetrics> per_class;  // ascending class id
  double mean_ap = 0.0;
  double mean_ap50 = 0.0;
  std::vector<std::string> notes;
};

// For every target in the split, the query pool of its class (the query
// patches of all samples of that class in the split, ordered by sample id) is
// shuffled with a generator seeded by the target id and the first n_queries
// entries are used, one per round. AP is computed per class and round, then
// averaged over rounds; the means are over classes. Output does not depend on
// sample order or worker count.
ProtocolReport evaluation_protocol(const Dataset& ds, Split split, const DetectFn& detect,
                                   const ProtocolOptions& opt = {});

// Deterministic Fisher-Yates permutation of 0..n-1 from a 64-bit seed.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace catdet::data
