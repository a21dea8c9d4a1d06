#pragma once

#include <cstddef>
#include <vector>

#include "rego/boxes.hpp"
#include "rego/detr.hpp"
#include "rego/hungarian.hpp"

namespace rego {

struct GroundTruth {
    BoxSet boxes;
    std::vector<std::size_t> labels;  // in [0, classes)
};

struct CostWeights {
    double cls = 1.0;
    double l1 = 5.0;
    double giou = 2.0;
};

enum class ClsLoss { CrossEntropy, Focal };

struct LossConfig {
    CostWeights weights;
    ClsLoss cls_loss = ClsLoss::CrossEntropy;
    double background_weight = 0.1;  // cross-entropy weight of the no-object slot
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
};

// Matching cost, row-major [N_d x K]:
//   cls * (-p_i(label_j)) + l1 * |b_i - g_j|_1 + giou * (-giou(b_i, g_j))
// Empty ground truth yields an empty matrix.
std::vector<double> cost_matrix(const DetectionSet& pred, const GroundTruth& gt,
                                const CostWeights& w);

// Graph-linked generalized IoU per row pair of [K x 4] center-form boxes.
Tensor giou_pairwise(const Tensor& pred, const Tensor& target);

struct StageLossBreakdown {
    double cls = 0, l1 = 0, giou = 0, total = 0;
    std::size_t matched = 0;
};

struct SetLossResult {
    Tensor loss;  // scalar, mean over stages
    std::vector<StageLossBreakdown> per_stage;
};

// Independent Hungarian match per stage, then cross-entropy (or focal) over
// all queries with unmatched queries assigned to background, plus L1 and
// GIoU on the matched boxes normalized by the ground-truth count.
SetLossResult compute_set_loss(const std::vector<DetectionSet>& stages, const GroundTruth& gt,
                               const LossConfig& cfg);

}  // namespace rego
