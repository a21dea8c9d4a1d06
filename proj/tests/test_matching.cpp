#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "rego/boxes.hpp"
#include "rego/hungarian.hpp"
#include "rego/ops.hpp"
#include "rego/set_loss.hpp"
#include "test_common.hpp"

using namespace rego;
using testutil::random_tensor;

namespace {

Box random_box(Rng& rng) {
    Box b;
    b.cx = rng.uniform(0.2, 0.8);
    b.cy = rng.uniform(0.2, 0.8);
    b.w = rng.uniform(0.05, 0.4);
    b.h = rng.uniform(0.05, 0.4);
    return b;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("iou identities") {
    Box a{0.5, 0.5, 0.2, 0.3};
    CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    Box b{0.1, 0.1, 0.1, 0.1};
    Box c{0.9, 0.9, 0.1, 0.1};
    CHECK(iou(b, c) == 0.0);

    // unit squares offset by half their width: intersection 1/2, union 3/2
    Box u1{0.5, 0.5, 1.0, 1.0};
    Box u2{1.0, 0.5, 1.0, 1.0};
    CHECK(iou(u1, u2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Box degenerate{0.5, 0.5, 0.0, 0.1};
    CHECK_THROWS_AS(iou(a, degenerate), std::invalid_argument);
    CHECK_THROWS_AS(giou(degenerate, a), std::invalid_argument);
}

TEST_CASE("giou identities and bounds") {
    Box a{0.4, 0.6, 0.3, 0.2};
    CHECK(giou(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
        Box x = random_box(rng), y = random_box(rng);
        const double g = giou(x, y);
        CHECK(g <= iou(x, y) + 1e-12);
        CHECK(g >= -1.0);
        CHECK(g == doctest::Approx(giou(y, x)).epsilon(1e-12));  // symmetry
    }

    // disjoint unit squares separated by one width:
    // union 2, enclosing box 3x1, giou = 0 - (3-2)/3 = -1/3
    Box u1{0.5, 0.5, 1.0, 1.0};
    Box u2{2.5, 0.5, 1.0, 1.0};
    CHECK(giou(u1, u2) == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("giou_pairwise agrees with the scalar giou") {
    Rng rng(32);
    for (int trial = 0; trial < 100; ++trial) {
        BoxSet a, b;
        for (int i = 0; i < 3; ++i) {
            a.push_back(random_box(rng));
            b.push_back(random_box(rng));
        }
        Tensor g = giou_pairwise(tensor_from_boxes(a), tensor_from_boxes(b));
        for (int i = 0; i < 3; ++i)
            CHECK(g.data()[i] == doctest::Approx(giou(a[i], b[i])).epsilon(1e-12));
    }
}

TEST_CASE("cost matrix term-by-term identity") {
    CostWeights w;  // cls 1, l1 5, giou 2
    GroundTruth gt;
    gt.boxes = {Box{0.5, 0.5, 0.2, 0.2}};
    gt.labels = {1};

    DetectionSet pred;
    pred.class_logits = Tensor({1, 4});
    pred.class_logits.data()[1] = 50.0;  // probability 1 on the true class
    pred.boxes = tensor_from_boxes(gt.boxes);
    pred.box_logits = Tensor({1, 4});

    auto cost = cost_matrix(pred, gt, w);
    REQUIRE(cost.size() == 1);
    // L1 term 0, cls term -1, giou term -2
    CHECK(cost[0] == doctest::Approx(-3.0).epsilon(1e-9));
}

TEST_CASE("uniform class probabilities make the cls term constant across ground truths") {
    Rng rng(33);
    CostWeights w;
    GroundTruth gt;
    gt.boxes = {random_box(rng), random_box(rng), random_box(rng)};
    gt.labels = {0, 1, 2};

    DetectionSet pred;
    pred.class_logits = Tensor({2, 4});  // all-zero logits: uniform probabilities
    BoxSet pb = {random_box(rng), random_box(rng)};
    pred.boxes = tensor_from_boxes(pb);

    auto cost = cost_matrix(pred, gt, w);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double cls_term = cost[i * 3 + j] -
                                    w.l1 * (std::fabs(pb[i].cx - gt.boxes[j].cx) +
                                            std::fabs(pb[i].cy - gt.boxes[j].cy) +
                                            std::fabs(pb[i].w - gt.boxes[j].w) +
                                            std::fabs(pb[i].h - gt.boxes[j].h)) +
                                    w.giou * giou(pb[i], gt.boxes[j]);
            CHECK(cls_term == doctest::Approx(-0.25).epsilon(1e-9));
        }
    }
}

TEST_CASE("cost matrix 3x2 matches a scalar recomputation") {
    Rng rng(34);
    CostWeights w{0.7, 4.0, 1.5};
    GroundTruth gt;
    gt.boxes = {random_box(rng), random_box(rng)};
    gt.labels = {2, 0};

    DetectionSet pred;
    pred.class_logits = random_tensor({3, 4}, rng, -2.0, 2.0);
    BoxSet pb = {random_box(rng), random_box(rng), random_box(rng)};
    pred.boxes = tensor_from_boxes(pb);

    auto cost = cost_matrix(pred, gt, w);
    for (std::size_t i = 0; i < 3; ++i) {
        const double* z = pred.class_logits.data() + i * 4;
        double denom = 0;
        for (int c = 0; c < 4; ++c) denom += std::exp(z[c]);
        for (std::size_t j = 0; j < 2; ++j) {
            const double p = std::exp(z[gt.labels[j]]) / denom;
            const double l1 = std::fabs(pb[i].cx - gt.boxes[j].cx) +
                              std::fabs(pb[i].cy - gt.boxes[j].cy) +
                              std::fabs(pb[i].w - gt.boxes[j].w) +
                              std::fabs(pb[i].h - gt.boxes[j].h);
            const double expect = w.cls * (-p) + w.l1 * l1 + w.giou * (-giou(pb[i], gt.boxes[j]));
            CHECK(cost[i * 2 + j] == doctest::Approx(expect).epsilon(1e-10));
        }
    }
}

TEST_CASE("hungarian forced optimum and degenerate cases") {
    // 0 on the diagonal, 1 elsewhere
    std::vector<double> cost(9, 1.0);
    for (int i = 0; i < 3; ++i) cost[i * 3 + i] = 0.0;
    Assignment a = hungarian(cost, 3, 3);
    CHECK(a.total_cost == 0.0);
    for (const auto& [row, col] : a.pairs) CHECK(row == col);

    Assignment single = hungarian({4.2}, 1, 1);
    REQUIRE(single.pairs.size() == 1);
    CHECK(single.pairs[0] == std::pair<std::size_t, std::size_t>(0, 0));
    CHECK(single.total_cost == 4.2);

    CHECK_THROWS_AS(hungarian(std::vector<double>(6, 0.0), 2, 3), std::invalid_argument);
    std::vector<double> nan_cost = {0.0, std::nan("")};
    CHECK_THROWS_AS(hungarian(nan_cost, 2, 1), std::invalid_argument);
    CHECK(hungarian({}, 4, 0).pairs.empty());
}

TEST_CASE("hungarian equals brute force on 1000 random 7x5 matrices") {
    Rng rng(35);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> cost(35);
        for (double& c : cost) c = rng.uniform(-5.0, 5.0);
        Assignment a = hungarian(cost, 7, 5);

        // validity: an injection covering all columns
        REQUIRE(a.pairs.size() == 5);
        std::set<std::size_t> rows, cols;
        for (const auto& [r, c] : a.pairs) {
            rows.insert(r);
            cols.insert(c);
        }
        CHECK(rows.size() == 5);
        CHECK(cols.size() == 5);

        const double best = testutil::brute_force_assignment(cost, 7, 5);
        CHECK(a.total_cost == doctest::Approx(best).epsilon(1e-9));
    }
}

TEST_CASE("hungarian beats random injections and is shift-invariant") {
    Rng rng(36);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 6, k = 4;
        std::vector<double> cost(n * k);
        for (double& c : cost) c = rng.uniform(0.0, 10.0);
        Assignment a = hungarian(cost, n, k);

        for (int probe = 0; probe < 100; ++probe) {
            std::vector<std::size_t> rows(n);
            for (std::size_t i = 0; i < n; ++i) rows[i] = i;
            for (std::size_t i = n; i > 1; --i) std::swap(rows[i - 1], rows[rng.uniform_int(i)]);
            double total = 0;
            for (std::size_t c = 0; c < k; ++c) total += cost[rows[c] * k + c];
            CHECK(a.total_cost <= total + 1e-9);
        }

        const double shift = rng.uniform(-3.0, 3.0);
        std::vector<double> shifted = cost;
        for (double& c : shifted) c += shift;
        Assignment b = hungarian(shifted, n, k);
        CHECK(b.total_cost ==
              doctest::Approx(a.total_cost + double(k) * shift).epsilon(1e-9));
        CHECK(a.pairs == b.pairs);
    }
}

TEST_CASE("set loss: perfect predictions at logit margin 10") {
    Rng rng(37);
    GroundTruth gt;
    gt.boxes = {Box{0.3, 0.4, 0.2, 0.25}, Box{0.7, 0.6, 0.15, 0.3}};
    gt.labels = {0, 2};

    DetectionSet pred;
    const std::size_t n = 4;
    pred.class_logits = Tensor({n, 4});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t target = i < 2 ? gt.labels[i] : 3;
        pred.class_logits.data()[i * 4 + target] = 10.0;
    }
    pred.box_logits = Tensor({n, 4});
    for (std::size_t i = 0; i < n; ++i) {
        const Box b = i < 2 ? gt.boxes[i] : Box{0.5, 0.5, 0.2, 0.2};
        pred.box_logits.data()[i * 4 + 0] = logit(b.cx);
        pred.box_logits.data()[i * 4 + 1] = logit(b.cy);
        pred.box_logits.data()[i * 4 + 2] = logit(b.w);
        pred.box_logits.data()[i * 4 + 3] = logit(b.h);
    }
    pred.boxes = ops::sigmoid(pred.box_logits);

    LossConfig cfg;
    SetLossResult r = compute_set_loss({pred}, gt, cfg);
    REQUIRE(r.per_stage.size() == 1);
    CHECK(r.per_stage[0].matched == 2);
    CHECK(r.per_stage[0].cls < 1e-3);
    CHECK(r.per_stage[0].l1 < 1e-9);
    CHECK(std::fabs(r.per_stage[0].giou) < 1e-9);
}

TEST_CASE("set loss: empty ground truth reduces to background cross-entropy") {
    Rng rng(38);
    DetectionSet pred;
    pred.class_logits = random_tensor({5, 4}, rng, -1.0, 1.0);
    pred.box_logits = random_tensor({5, 4}, rng);
    pred.boxes = ops::sigmoid(pred.box_logits);

    GroundTruth empty;
    LossConfig cfg;
    SetLossResult r = compute_set_loss({pred}, empty, cfg);

    std::vector<std::size_t> targets(5, 3);
    std::vector<double> weights = {1.0, 1.0, 1.0, cfg.background_weight};
    Tensor expect = ops::cross_entropy(pred.class_logits, targets, weights);
    CHECK(r.loss.item() == doctest::Approx(expect.item() * cfg.weights.cls).epsilon(1e-12));
    CHECK(r.per_stage[0].matched == 0);
    CHECK(r.per_stage[0].l1 == 0.0);
}

TEST_CASE("set loss: single stage scalar oracle, 2 queries vs 1 ground truth") {
    GroundTruth gt;
    gt.boxes = {Box{0.4, 0.5, 0.2, 0.2}};
    gt.labels = {1};

    DetectionSet pred;
    pred.class_logits = Tensor({2, 4}, {0.2, 1.1, -0.3, 0.4, 0.5, -0.2, 0.1, 1.5});
    BoxSet pb = {Box{0.45, 0.5, 0.25, 0.2}, Box{0.8, 0.8, 0.1, 0.1}};
    pred.boxes = tensor_from_boxes(pb);
    pred.box_logits = Tensor({2, 4});

    LossConfig cfg;
    SetLossResult r = compute_set_loss({pred}, gt, cfg);

    // Independent scalar recomputation. Query 0 is clearly the cheaper match.
    auto prob = [&](std::size_t i, std::size_t c) {
        const double* z = pred.class_logits.data() + i * 4;
        double denom = 0;
        for (int j = 0; j < 4; ++j) denom += std::exp(z[j]);
        return std::exp(z[c]) / denom;
    };
    const double cost0 = -prob(0, 1) + 5.0 * (0.05 + 0.05) - 2.0 * giou(pb[0], gt.boxes[0]);
    const double cost1 = -prob(1, 1) +
                         5.0 * (0.4 + 0.3 + 0.1 + 0.1) - 2.0 * giou(pb[1], gt.boxes[0]);
    REQUIRE(cost0 < cost1);

    const double w_bg = cfg.background_weight;
    const double ce = (1.0 * -std::log(prob(0, 1)) + w_bg * -std::log(prob(1, 3))) / (1.0 + w_bg);
    const double l1 = 0.05 + 0.05;
    const double gl = 1.0 - giou(pb[0], gt.boxes[0]);
    const double expect = 1.0 * ce + 5.0 * l1 + 2.0 * gl;
    CHECK(r.loss.item() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("set loss is invariant to query permutation") {
    Rng rng(39);
    GroundTruth gt;
    gt.boxes = {random_box(rng), random_box(rng)};
    gt.labels = {0, 2};

    DetectionSet pred;
    const std::size_t n = 6;
    pred.class_logits = random_tensor({n, 4}, rng, -1.5, 1.5);
    pred.box_logits = random_tensor({n, 4}, rng, -1.0, 1.0);
    pred.boxes = ops::sigmoid(pred.box_logits);

    LossConfig cfg;
    const double base = compute_set_loss({pred}, gt, cfg).loss.item();

    std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    DetectionSet shuffled;
    shuffled.class_logits = Tensor({n, 4});
    shuffled.box_logits = Tensor({n, 4});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            shuffled.class_logits.data()[i * 4 + j] = pred.class_logits.data()[perm[i] * 4 + j];
            shuffled.box_logits.data()[i * 4 + j] = pred.box_logits.data()[perm[i] * 4 + j];
        }
    shuffled.boxes = ops::sigmoid(shuffled.box_logits);
    const double permuted = compute_set_loss({shuffled}, gt, cfg).loss.item();
    CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("set loss: focal option and multi-stage mean") {
    Rng rng(40);
    GroundTruth gt;
    gt.boxes = {random_box(rng)};
    gt.labels = {1};

    auto make_pred = [&rng]() {
        DetectionSet d;
        d.class_logits = random_tensor({3, 4}, rng, -1.0, 1.0);
        d.box_logits = random_tensor({3, 4}, rng);
        d.boxes = ops::sigmoid(d.box_logits);
        return d;
    };
    DetectionSet a = make_pred(), b = make_pred();

    LossConfig cfg;
    cfg.cls_loss = ClsLoss::Focal;
    const double la = compute_set_loss({a}, gt, cfg).loss.item();
    const double lb = compute_set_loss({b}, gt, cfg).loss.item();
    const double lab = compute_set_loss({a, b}, gt, cfg).loss.item();
    CHECK(lab == doctest::Approx(0.5 * (la + lb)).epsilon(1e-12));
    CHECK(la >= 0.0);
}
