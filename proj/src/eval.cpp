#include "rego/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rego {

std::vector<ScoredDetection> scored_detections(const DetectionSet& det) {
    const std::size_t n = det.class_logits.shape()[0];
    const std::size_t num_logits = det.class_logits.shape()[1];
    const std::size_t classes = num_logits - 1;
    std::vector<ScoredDetection> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = det.class_logits.data() + i * num_logits;
        double mx = z[0];
        for (std::size_t c = 1; c < num_logits; ++c) mx = std::max(mx, z[c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < num_logits; ++c) denom += std::exp(z[c] - mx);
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (z[c] > z[best]) best = c;
        ScoredDetection d;
        const double* b = det.boxes.data() + i * 4;
        d.box = Box{b[0], b[1], b[2], b[3]};
        d.label = best;
        d.score = std::exp(z[best] - mx) / denom;
        out.push_back(d);
    }
    return out;
}

namespace {

struct FlatPred {
    double score;
    std::size_t image;
    Box box;
    std::size_t order;  // global insertion index, deterministic tie-break
};

// Average precision for one class at one IoU threshold, with out-of-bucket
// ground truth treated as ignore regions.
double class_ap(const std::vector<FlatPred>& preds,
                const std::vector<std::vector<Box>>& gt_boxes,
                const std::vector<std::vector<bool>>& gt_counted, std::size_t num_gt,
                double thr) {
    if (num_gt == 0) return -1.0;  // class/bucket absent, excluded from means
    std::vector<FlatPred> sorted = preds;
    std::sort(sorted.begin(), sorted.end(), [](const FlatPred& a, const FlatPred& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.order < b.order;
    });

    std::vector<std::vector<bool>> used(gt_boxes.size());
    for (std::size_t i = 0; i < gt_boxes.size(); ++i) used[i].assign(gt_boxes[i].size(), false);

    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const FlatPred& p : sorted) {
        const auto& boxes = gt_boxes[p.image];
        double best_iou = 0.0;
        std::size_t best_j = boxes.size();
        double best_ignored_iou = 0.0;
        for (std::size_t j = 0; j < boxes.size(); ++j) {
            if (used[p.image][j]) continue;
            const double v = iou(p.box, boxes[j]);
            if (v < thr) continue;
            if (gt_counted[p.image][j]) {
                if (v > best_iou) {
                    best_iou = v;
                    best_j = j;
                }
            } else {
                best_ignored_iou = std::max(best_ignored_iou, v);
            }
        }
        if (best_j < boxes.size()) {
            used[p.image][best_j] = true;
            ++tp;
        } else if (best_ignored_iou >= thr) {
            continue;  // matched an ignored ground truth: neither TP nor FP
        } else {
            ++fp;
        }
        precision.push_back(double(tp) / double(tp + fp));
        recall.push_back(double(tp) / double(num_gt));
    }

    // 101-point interpolation.
    double ap = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double want = double(r) / 100.0;
        double best = 0.0;
        for (std::size_t i = 0; i < recall.size(); ++i) {
            if (recall[i] >= want) best = std::max(best, precision[i]);
        }
        ap += best;
    }
    return ap / 101.0;
}

double mean_valid(const std::vector<double>& values) {
    double total = 0.0;
    std::size_t count = 0;
    for (double v : values) {
        if (v >= 0) {
            total += v;
            ++count;
        }
    }
    return count ? total / double(count) : 0.0;
}

}  // namespace

EvalReport evaluate_ap(const std::vector<std::vector<ScoredDetection>>& preds,
                       const std::vector<GroundTruth>& gts) {
    if (preds.size() != gts.size()) {
        throw std::invalid_argument("evaluate_ap: " + std::to_string(preds.size()) +
                                    " prediction lists vs " + std::to_string(gts.size()) +
                                    " ground truths");
    }
    std::size_t classes = 0;
    for (const auto& gt : gts)
        for (std::size_t l : gt.labels) classes = std::max(classes, l + 1);
    for (const auto& img : preds)
        for (const auto& d : img) classes = std::max(classes, d.label + 1);

    // Area tertiles over the ground-truth distribution define S/M/L.
    std::vector<double> areas;
    for (const auto& gt : gts)
        for (const Box& b : gt.boxes) areas.push_back(b.area());
    std::sort(areas.begin(), areas.end());
    double t1 = 0, t2 = 0;
    if (!areas.empty()) {
        t1 = areas[areas.size() / 3];
        t2 = areas[(2 * areas.size()) / 3];
    }
    enum Bucket { ALL = 0, SMALL, MEDIUM, LARGE };
    auto bucket_of = [&](double area) {
        if (area < t1) return SMALL;
        if (area < t2) return MEDIUM;
        return LARGE;
    };

    std::vector<double> thresholds;
    for (int i = 0; i < 10; ++i) thresholds.push_back(0.5 + 0.05 * i);

    // ap_by[bucket][threshold] aggregated over classes.
    std::vector<std::vector<std::vector<double>>> ap_by(
        4, std::vector<std::vector<double>>(thresholds.size()));

    for (std::size_t cls = 0; cls < classes; ++cls) {
        std::vector<FlatPred> flat;
        std::size_t order = 0;
        for (std::size_t img = 0; img < preds.size(); ++img) {
            for (const ScoredDetection& d : preds[img]) {
                if (d.label == cls) flat.push_back(FlatPred{d.score, img, d.box, order});
                ++order;
            }
        }
        std::vector<std::vector<Box>> gt_boxes(gts.size());
        std::vector<std::vector<Bucket>> gt_buckets(gts.size());
        std::size_t class_gt = 0;
        for (std::size_t img = 0; img < gts.size(); ++img) {
            for (std::size_t j = 0; j < gts[img].boxes.size(); ++j) {
                if (gts[img].labels[j] != cls) continue;
                gt_boxes[img].push_back(gts[img].boxes[j]);
                gt_buckets[img].push_back(bucket_of(gts[img].boxes[j].area()));
                ++class_gt;
            }
        }
        for (int bucket = ALL; bucket <= LARGE; ++bucket) {
            std::vector<std::vector<bool>> counted(gts.size());
            std::size_t num_gt = 0;
            for (std::size_t img = 0; img < gts.size(); ++img) {
                counted[img].resize(gt_boxes[img].size());
                for (std::size_t j = 0; j < gt_boxes[img].size(); ++j) {
                    const bool in = bucket == ALL || gt_buckets[img][j] == bucket;
                    counted[img][j] = in;
                    if (in) ++num_gt;
                }
            }
            (void)class_gt;
            for (std::size_t t = 0; t < thresholds.size(); ++t) {
                ap_by[bucket][t].push_back(
                    class_ap(flat, gt_boxes, counted, num_gt, thresholds[t]));
            }
        }
    }

    auto mean_over = [&](int bucket, int threshold_index) {
        if (threshold_index >= 0) return mean_valid(ap_by[bucket][threshold_index]);
        std::vector<double> all;
        for (const auto& per_thr : ap_by[bucket])
            for (double v : per_thr) all.push_back(v);
        return mean_valid(all);
    };

    EvalReport r;
    r.ap = mean_over(ALL, -1);
    r.ap50 = mean_over(ALL, 0);
    r.ap75 = mean_over(ALL, 5);
    r.ap_s = mean_over(SMALL, -1);
    r.ap_m = mean_over(MEDIUM, -1);
    r.ap_l = mean_over(LARGE, -1);
    return r;
}

std::vector<std::size_t> correct_iou_histogram(
    const std::vector<std::vector<ScoredDetection>>& preds,
    const std::vector<GroundTruth>& gts, const std::vector<double>& bin_edges) {
    if (preds.size() != gts.size())
        throw std::invalid_argument("correct_iou_histogram: preds/gts length mismatch");
    if (bin_edges.size() < 2) throw std::invalid_argument("correct_iou_histogram: need >= 2 edges");
    for (std::size_t i = 1; i < bin_edges.size(); ++i) {
        if (!(bin_edges[i] > bin_edges[i - 1]))
            throw std::invalid_argument("correct_iou_histogram: edges must ascend");
    }
    if (bin_edges.front() < 0.5)
        throw std::invalid_argument("correct_iou_histogram: edges must start at >= 0.5");

    std::vector<std::size_t> counts(bin_edges.size() - 1, 0);
    for (std::size_t img = 0; img < preds.size(); ++img) {
        struct Pair {
            double iou;
            std::size_t pred, gt;
        };
        std::vector<Pair> pairs;
        for (std::size_t p = 0; p < preds[img].size(); ++p) {
            for (std::size_t g = 0; g < gts[img].boxes.size(); ++g) {
                if (preds[img][p].label != gts[img].labels[g]) continue;
                const double v = iou(preds[img][p].box, gts[img].boxes[g]);
                if (v > 0.5) pairs.push_back(Pair{v, p, g});
            }
        }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
            if (a.iou != b.iou) return a.iou > b.iou;
            if (a.pred != b.pred) return a.pred < b.pred;
            return a.gt < b.gt;
        });
        std::vector<bool> pred_used(preds[img].size(), false), gt_used(gts[img].boxes.size(), false);
        for (const Pair& pr : pairs) {
            if (pred_used[pr.pred] || gt_used[pr.gt]) continue;
            pred_used[pr.pred] = true;
            gt_used[pr.gt] = true;
            if (pr.iou < bin_edges.front() || pr.iou > bin_edges.back()) continue;
            std::size_t bin = counts.size() - 1;
            for (std::size_t b = 0; b + 1 < bin_edges.size(); ++b) {
                if (pr.iou < bin_edges[b + 1]) {
                    bin = b;
                    break;
                }
            }
            ++counts[bin];
        }
    }
    return counts;
}

std::vector<std::vector<std::size_t>> iou_histogram(
    const std::vector<std::vector<std::vector<ScoredDetection>>>& stage_preds,
    const std::vector<GroundTruth>& gts, const std::vector<double>& bin_edges) {
    std::vector<std::vector<std::size_t>> out;
    out.reserve(stage_preds.size());
    for (const auto& preds : stage_preds)
        out.push_back(correct_iou_histogram(preds, gts, bin_edges));
    return out;
}

}  // namespace rego
