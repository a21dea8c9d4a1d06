#pragma once

#include <cstddef>
#include <vector>

#include "rego/detr.hpp"
#include "rego/set_loss.hpp"

namespace rego {

struct EvalReport {
    double ap = 0, ap50 = 0, ap75 = 0;
    double ap_s = 0, ap_m = 0, ap_l = 0;
};

struct ScoredDetection {
    Box box;
    std::size_t label = 0;
    double score = 0.0;
};

// Per query: the best foreground class under the softmax (background slot
// excluded from the argmax) with its probability as the score.
std::vector<ScoredDetection> scored_detections(const DetectionSet& det);

// COCO-style mean average precision: 101-point interpolation, IoU
// thresholds 0.50:0.05:0.95, greedy score-ordered matching per class.
// Size buckets use area tertiles of the ground-truth distribution.
EvalReport evaluate_ap(const std::vector<std::vector<ScoredDetection>>& preds,
                       const std::vector<GroundTruth>& gts);

// Counts of correct detections (greedy by IoU, label-consistent, IoU > 0.5)
// per IoU bin. Edges must ascend and start at >= 0.5; the last bin is
// closed on the right.
std::vector<std::size_t> correct_iou_histogram(
    const std::vector<std::vector<ScoredDetection>>& preds,
    const std::vector<GroundTruth>& gts, const std::vector<double>& bin_edges);

// Per-stage wrapper over correct_iou_histogram.
std::vector<std::vector<std::size_t>> iou_histogram(
    const std::vector<std::vector<std::vector<ScoredDetection>>>& stage_preds,
    const std::vector<GroundTruth>& gts, const std::vector<double>& bin_edges);

}  // namespace rego
