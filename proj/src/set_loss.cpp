#include "rego/set_loss.hpp"

#include <cmath>
#include <stdexcept>

#include "rego/ops.hpp"

namespace rego {

std::vector<double> cost_matrix(const DetectionSet& pred, const GroundTruth& gt,
                                const CostWeights& w) {
    const std::size_t n = pred.class_logits.shape()[0];
    const std::size_t num_logits = pred.class_logits.shape()[1];
    const std::size_t k = gt.boxes.size();
    if (gt.labels.size() != k) throw std::invalid_argument("cost_matrix: labels/boxes mismatch");
    for (std::size_t lbl : gt.labels) {
        if (lbl + 1 >= num_logits)
            throw std::invalid_argument("cost_matrix: label " + std::to_string(lbl) +
                                        " outside foreground classes");
    }
    std::vector<double> cost(n * k);
    if (k == 0) return cost;

    const BoxSet pred_boxes = boxes_from_tensor(pred.boxes);
    std::vector<double> probs(num_logits);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = pred.class_logits.data() + i * num_logits;
        double mx = z[0];
        for (std::size_t c = 1; c < num_logits; ++c) mx = std::max(mx, z[c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < num_logits; ++c) {
            probs[c] = std::exp(z[c] - mx);
            denom += probs[c];
        }
        for (std::size_t c = 0; c < num_logits; ++c) probs[c] /= denom;

        for (std::size_t j = 0; j < k; ++j) {
            const Box& g = gt.boxes[j];
            const Box& b = pred_boxes[i];
            const double l1 = std::fabs(b.cx - g.cx) + std::fabs(b.cy - g.cy) +
                              std::fabs(b.w - g.w) + std::fabs(b.h - g.h);
            cost[i * k + j] =
                w.cls * (-probs[gt.labels[j]]) + w.l1 * l1 + w.giou * (-giou(b, g));
        }
    }
    return cost;
}

Tensor giou_pairwise(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape() || pred.rank() != 2 || pred.shape()[1] != 4) {
        throw std::invalid_argument("giou_pairwise: need matching [K x 4], got " +
                                    shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    auto corners = [](const Tensor& t) {
        Tensor cx = ops::slice(t, 1, 0, 1);
        Tensor cy = ops::slice(t, 1, 1, 1);
        Tensor hw = ops::scale(ops::slice(t, 1, 2, 1), 0.5);
        Tensor hh = ops::scale(ops::slice(t, 1, 3, 1), 0.5);
        struct C {
            Tensor x0, y0, x1, y1;
        };
        return C{ops::sub(cx, hw), ops::sub(cy, hh), ops::add(cx, hw), ops::add(cy, hh)};
    };
    auto p = corners(pred);
    auto g = corners(target);

    Tensor iw = ops::clamp_min(ops::sub(ops::minimum(p.x1, g.x1), ops::maximum(p.x0, g.x0)), 0.0);
    Tensor ih = ops::clamp_min(ops::sub(ops::minimum(p.y1, g.y1), ops::maximum(p.y0, g.y0)), 0.0);
    Tensor inter = ops::mul(iw, ih);

    Tensor area_p = ops::mul(ops::sub(p.x1, p.x0), ops::sub(p.y1, p.y0));
    Tensor area_g = ops::mul(ops::sub(g.x1, g.x0), ops::sub(g.y1, g.y0));
    Tensor uni = ops::sub(ops::add(area_p, area_g), inter);

    Tensor ew = ops::sub(ops::maximum(p.x1, g.x1), ops::minimum(p.x0, g.x0));
    Tensor eh = ops::sub(ops::maximum(p.y1, g.y1), ops::minimum(p.y0, g.y0));
    Tensor enclose = ops::mul(ew, eh);

    return ops::sub(ops::div(inter, uni), ops::div(ops::sub(enclose, uni), enclose));
}

SetLossResult compute_set_loss(const std::vector<DetectionSet>& stages, const GroundTruth& gt,
                               const LossConfig& cfg) {
    if (stages.empty()) throw std::invalid_argument("compute_set_loss: no stages");
    const std::size_t k = gt.boxes.size();

    SetLossResult result;
    Tensor total;
    for (const DetectionSet& stage : stages) {
        const std::size_t n = stage.class_logits.shape()[0];
        const std::size_t num_logits = stage.class_logits.shape()[1];
        const std::size_t background = num_logits - 1;

        std::vector<std::size_t> targets(n, background);
        std::vector<std::size_t> match_rows;
        std::vector<std::size_t> match_cols;
        if (k > 0) {
            Assignment match = hungarian(cost_matrix(stage, gt, cfg.weights), n, k);
            for (const auto& [row, col] : match.pairs) {
                targets[row] = gt.labels[col];
                match_rows.push_back(row);
                match_cols.push_back(col);
            }
        }

        Tensor cls;
        if (cfg.cls_loss == ClsLoss::CrossEntropy) {
            std::vector<double> class_weights(num_logits, 1.0);
            class_weights[background] = cfg.background_weight;
            cls = ops::cross_entropy(stage.class_logits, targets, class_weights);
        } else {
            cls = ops::focal_loss(stage.class_logits, targets, cfg.focal_gamma, cfg.focal_alpha,
                                  background);
        }

        StageLossBreakdown breakdown;
        breakdown.matched = match_rows.size();
        Tensor stage_loss = ops::scale(cls, cfg.weights.cls);
        breakdown.cls = cls.item();
        if (k > 0) {
            Tensor pred_rows = ops::gather_rows(stage.boxes, match_rows);
            BoxSet gt_aligned;
            for (std::size_t col : match_cols) gt_aligned.push_back(gt.boxes[col]);
            Tensor gt_rows = tensor_from_boxes(gt_aligned);

            Tensor l1 = ops::scale(ops::sum(ops::abs(ops::sub(pred_rows, gt_rows))),
                                   1.0 / double(k));
            Tensor gl = ops::scale(
                ops::sum(ops::add_scalar(ops::neg(giou_pairwise(pred_rows, gt_rows)), 1.0)),
                1.0 / double(k));
            breakdown.l1 = l1.item();
            breakdown.giou = gl.item();
            stage_loss = ops::add(stage_loss, ops::scale(l1, cfg.weights.l1));
            stage_loss = ops::add(stage_loss, ops::scale(gl, cfg.weights.giou));
        }
        breakdown.total = stage_loss.item();
        result.per_stage.push_back(breakdown);
        total = total.defined() ? ops::add(total, stage_loss) : stage_loss;
    }
    result.loss = ops::scale(total, 1.0 / double(stages.size()));
    return result;
}

}  // namespace rego
