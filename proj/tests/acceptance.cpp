// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line. Criteria 7-9 share six cached training runs (3 seeds x {baseline,
// 3-stage refinement}).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gradcheck_suite.hpp"
#include "rego/flops.hpp"
#include "rego/train.hpp"
#include "test_common.hpp"

using namespace rego;
using testutil::random_tensor;

namespace {

void report(int id, const char* name, bool pass) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", id, name);
    std::fflush(stdout);
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// ---- shared training runs for criteria 7, 8, 9 -----------------------------

constexpr std::size_t kEpochs = 32;
constexpr std::uint64_t kSeeds[3] = {1, 2, 3};
const std::vector<double> kHistEdges = {0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

TrainConfig convergence_config(std::size_t stages, std::uint64_t seed) {
    TrainConfig cfg;  // desk-scale defaults: C=64, M=4, 2+2 layers, 25 queries
    cfg.glimpse = GlimpseConfig::make(stages);
    cfg.epochs = kEpochs;
    cfg.batch_size = 4;
    cfg.lr = 5e-4;
    cfg.train_scenes = 500;
    cfg.val_scenes = 100;
    cfg.seed = seed;
    return cfg;
}

struct SeedOutcome {
    double baseline_final_ap50 = 0;
    double rego_final_ap50 = 0;
    double norego_ap50 = 0;                  // refined-trained model, stage-0 inference
    std::vector<double> rego_ap50_by_epoch;  // final stage per epoch
    std::vector<double> frac_high_iou;       // per stage: correct detections with IoU > 0.9
    double baseline_wall = 0, rego_wall = 0;
};

struct SharedRuns {
    std::vector<SeedOutcome> seeds;
};

const SharedRuns& shared_runs() {
    static const SharedRuns runs = [] {
        SharedRuns out;
        for (std::uint64_t seed : kSeeds) {
            SeedOutcome o;

            RunRecord base_record = train(convergence_config(0, seed));
            o.baseline_final_ap50 = base_record.epochs.back().stage_reports.back().ap50;
            o.baseline_wall = base_record.wall_seconds;

            RegoModel rego_model;
            RunRecord rego_record = train(convergence_config(3, seed), &rego_model);
            o.rego_final_ap50 = rego_record.epochs.back().stage_reports.back().ap50;
            o.rego_wall = rego_record.wall_seconds;
            for (const EpochRecord& er : rego_record.epochs)
                o.rego_ap50_by_epoch.push_back(er.stage_reports.back().ap50);

            // the same validation split the training loop evaluated on
            auto val = generate_dataset(100, val_data_seed(seed), 64, 64);
            std::vector<GroundTruth> gts;
            for (const auto& s : val) gts.push_back(s.gt);

            auto norego = evaluate_model(rego_model, val, false);
            o.norego_ap50 = norego[0].ap50;

            auto preds = stage_predictions(rego_model, val, true);
            auto hists = iou_histogram(preds, gts, kHistEdges);
            for (const auto& counts : hists) {
                std::size_t total = 0;
                for (std::size_t c : counts) total += c;
                o.frac_high_iou.push_back(total == 0 ? 0.0
                                                     : double(counts.back()) / double(total));
            }

            std::printf("  seed %llu: baseline %.3f | refined %.3f (w/o refine %.3f) | "
                        "IoU>0.9 frac:",
                        (unsigned long long)seed, o.baseline_final_ap50, o.rego_final_ap50,
                        o.norego_ap50);
            for (double f : o.frac_high_iou) std::printf(" %.3f", f);
            std::printf(" | wall %.0fs/%.0fs\n", o.baseline_wall, o.rego_wall);
            std::fflush(stdout);

            out.seeds.push_back(std::move(o));
        }
        return out;
    }();
    return runs;
}

}  // namespace

TEST_CASE("criterion 1: gradient correctness on every differentiable op") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(12345);
    double worst = 0.0;
    std::string worst_op;
    bool pass = true;
    for (auto& c : testutil::gradcheck_cases()) {
        for (int rep = 0; rep < 20; ++rep) {
            auto r = c.run(rng);
            if (r.max_rel_err > worst) {
                worst = r.max_rel_err;
                worst_op = c.name;
            }
            if (r.max_rel_err >= 1e-4) pass = false;
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= 120.0) pass = false;
    std::printf("  worst rel err %.3g (%s), suite %.1fs\n", worst, worst_op.c_str(), secs);
    report(1, "finite-difference gradients, 20 shapes per op, < 2 min", pass);
    CHECK(pass);
}

TEST_CASE("criterion 2: Hungarian optimality vs brute force, exactly") {
    Rng rng(777);
    bool pass = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 1 + rng.uniform_int(7);
        const std::size_t n = k + rng.uniform_int(8 - k);
        std::vector<double> cost(n * k);
        for (double& c : cost) c = rng.uniform(-10.0, 10.0);
        Assignment a = hungarian(cost, n, k);
        const double best = testutil::brute_force_assignment(cost, n, k);
        if (a.total_cost != best) pass = false;
    }
    report(2, "1000 random cost matrices up to 7x7, exact brute-force agreement", pass);
    CHECK(pass);
}

TEST_CASE("criterion 3: RoIAlign against the scalar bilinear oracle") {
    Rng rng(888);
    bool pass = true;
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        BackboneFeatures f;
        f.image_h = f.image_w = 64;
        std::size_t side = 16;
        for (int lvl = 0; lvl < 4; ++lvl) {
            f.projected.push_back(random_tensor({1, 2, side, side}, rng));
            side /= 2;
        }
        Box roi;
        roi.cx = rng.uniform(0.1, 0.9);
        roi.cy = rng.uniform(0.1, 0.9);
        roi.w = rng.uniform(0.01, 0.7);
        roi.h = rng.uniform(0.01, 0.7);
        const std::size_t window = 1 + rng.uniform_int(7);
        Tensor out = roi_align(f, {roi}, window);

        const double side_px = std::sqrt(roi.w * roi.h * 64.0 * 64.0);
        const double lvl_f = 2.0 + std::floor(std::log2(side_px / 16.0));
        const std::size_t lvl = std::size_t(std::min(std::max(lvl_f, 0.0), 3.0));
        const Tensor& map = f.projected[lvl];
        const std::size_t Hl = map.shape()[2], Wl = map.shape()[3];
        for (std::size_t by = 0; by < window; ++by) {
            for (std::size_t bx = 0; bx < window; ++bx) {
                double py = (roi.y0() + (double(by) + 0.5) * roi.h / double(window)) *
                                double(Hl) -
                            0.5;
                double px = (roi.x0() + (double(bx) + 0.5) * roi.w / double(window)) *
                                double(Wl) -
                            0.5;
                py = std::min(std::max(py, 0.0), double(Hl - 1));
                px = std::min(std::max(px, 0.0), double(Wl - 1));
                const std::size_t y0 = std::size_t(py), x0 = std::size_t(px);
                const std::size_t y1 = std::min(y0 + 1, Hl - 1), x1 = std::min(x0 + 1, Wl - 1);
                const double fy = py - double(y0), fx = px - double(x0);
                for (std::size_t c = 0; c < 2; ++c) {
                    auto at = [&](std::size_t y, std::size_t x) {
                        return map.data()[(c * Hl + y) * Wl + x];
                    };
                    const double expect = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                          fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
                    const double got = out.data()[((0 * window + by) * window + bx) * 2 + c];
                    worst = std::max(worst, std::fabs(got - expect));
                    if (std::fabs(got - expect) > 1e-10) pass = false;
                }
            }
        }
    }
    std::printf("  worst abs deviation %.3g\n", worst);
    report(3, "1000 random (map, RoI) pairs within 1e-10 of the scalar oracle", pass);
    CHECK(pass);
}

TEST_CASE("criterion 4: schedule fidelity") {
    bool pass = true;
    pass = pass && alpha_schedule(1, 1.0) == std::vector<double>({1});
    pass = pass && alpha_schedule(2, 1.0) == std::vector<double>({2, 1});
    pass = pass && alpha_schedule(3, 1.0) == std::vector<double>({3, 2, 1});
    pass = pass && alpha_schedule(4, 1.0) == std::vector<double>({4, 3, 2, 1});
    pass = pass && alpha_schedule(3, 1.5) == std::vector<double>({4.5, 3.0, 1.5});
    pass = pass && alpha_schedule(3, 2.0) == std::vector<double>({6, 4, 2});
    report(4, "stage-count and 1.5x/2x multiplied schedules, exact", pass);
    CHECK(pass);
}

TEST_CASE("criterion 5: residual identity with zeroed box heads") {
    Rng rng(999);
    ModelConfig mc;
    mc.width = 32;
    mc.heads = 2;
    mc.enc_layers = 1;
    mc.dec_layers = 2;
    mc.queries = 10;
    mc.ffn_width = 64;
    GlimpseConfig gc = GlimpseConfig::make(3);
    gc.roi_window = 5;
    RegoModel model = RegoModel::init(mc, gc, rng);
    for (GlimpseStageParams& stage : model.stages) stage.heads.zero_box_head();

    bool pass = true;
    autograd::NoGradGuard guard;
    for (int img = 0; img < 3; ++img) {
        Tensor image = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
        RegoOutput out = run_rego(model, image);
        const Tensor& base = out.stages[0].detection.boxes;
        for (std::size_t s = 1; s < out.stages.size(); ++s) {
            for (std::size_t i = 0; i < base.size(); ++i) {
                if (out.stages[s].detection.boxes.data()[i] != base.data()[i]) pass = false;
            }
        }
    }
    report(5, "zeroed box head reproduces stage-0 boxes bitwise at every stage", pass);
    CHECK(pass);
}

TEST_CASE("criterion 6: stop-gradient across the stage boundary") {
    Rng rng(1001);
    ModelConfig mc;
    mc.width = 32;
    mc.heads = 2;
    mc.enc_layers = 1;
    mc.dec_layers = 1;
    mc.queries = 8;
    mc.ffn_width = 64;
    GlimpseConfig gc = GlimpseConfig::make(2);
    gc.roi_window = 5;
    gc.decoder_layers = 1;
    RegoModel model = RegoModel::init(mc, gc, rng);
    Tensor image = random_tensor({3, 64, 64}, rng, 0.0, 1.0);

    GroundTruth gt;
    gt.boxes = {Box{0.4, 0.4, 0.3, 0.3}, Box{0.7, 0.6, 0.2, 0.2}};
    gt.labels = {0, 2};

    RegoOutput out = run_rego(model, image);
    LossConfig lc;
    SetLossResult r = compute_set_loss({out.stages[2].detection}, gt, lc);
    autograd::backward(r.loss);

    bool stage1_zero = true;
    ParamList stage1;
    model.stages[0].collect("s1", stage1);
    for (const auto& [name, p] : stage1)
        for (double g : p.grad_values())
            if (g != 0.0) stage1_zero = false;

    double backbone_mag = 0.0;
    ParamList detr_params;
    model.detr.collect(detr_params);
    for (const auto& [name, p] : detr_params) {
        if (name.rfind("backbone", 0) == 0)
            for (double g : p.grad_values()) backbone_mag += std::fabs(g);
    }
    const bool pass = stage1_zero && backbone_mag > 0.0;
    std::printf("  previous-stage grads all zero: %s; backbone grad mass %.3g\n",
                stage1_zero ? "yes" : "no", backbone_mag);
    report(6, "stage-i loss: zero grads for stage i-1, live grads for the backbone", pass);
    CHECK(pass);
}

TEST_CASE("criterion 7: desk-scale convergence analog") {
    const SharedRuns& runs = shared_runs();
    std::vector<double> gains, parity_fraction;
    for (const SeedOutcome& o : runs.seeds) {
        gains.push_back(o.rego_final_ap50 - o.baseline_final_ap50);
        std::size_t epoch = o.rego_ap50_by_epoch.size() + 1;  // sentinel: never reached
        for (std::size_t e = 0; e < o.rego_ap50_by_epoch.size(); ++e) {
            if (o.rego_ap50_by_epoch[e] >= o.baseline_final_ap50) {
                epoch = e + 1;
                break;
            }
        }
        parity_fraction.push_back(double(epoch) / double(kEpochs));
    }
    const double median_gain = median3(gains);
    const double median_parity = median3(parity_fraction);
    const bool pass_gain = median_gain >= 0.02;
    const bool pass_parity = median_parity <= 0.70;
    std::printf("  median AP50 gain %.3f (need >= 0.02); median parity epoch fraction %.2f "
                "(need <= 0.70)\n",
                median_gain, median_parity);
    report(7, "3-stage refinement beats the baseline and reaches parity early",
           pass_gain && pass_parity);
    CHECK(pass_gain);
    CHECK(pass_parity);
}

TEST_CASE("criterion 8: stage refinement shifts correct detections to high IoU") {
    const SharedRuns& runs = shared_runs();
    const std::size_t n_stages = runs.seeds[0].frac_high_iou.size();
    bool pass = true;
    std::printf("  per-stage median fraction of correct detections with IoU > 0.9:");
    std::vector<double> med(n_stages);
    for (std::size_t s = 0; s < n_stages; ++s) {
        std::vector<double> vals;
        for (const SeedOutcome& o : runs.seeds) vals.push_back(o.frac_high_iou[s]);
        med[s] = median3(vals);
        std::printf(" %.3f", med[s]);
    }
    std::printf("\n");
    for (std::size_t s = 1; s < n_stages; ++s)
        if (med[s] + 1e-12 < med[s - 1]) pass = false;
    report(8, "median IoU>0.9 fraction non-decreasing from stage 0 to stage 3", pass);
    CHECK(pass);
}

TEST_CASE("criterion 9: refinement-trained model helps even without refinement") {
    const SharedRuns& runs = shared_runs();
    std::vector<double> diffs;
    for (const SeedOutcome& o : runs.seeds)
        diffs.push_back(o.norego_ap50 - o.baseline_final_ap50);
    const double med = median3(diffs);
    const bool pass = med >= -0.01;
    std::printf("  median (stage-0-of-refined-model - baseline) AP50: %.3f (need >= -0.01)\n",
                med);
    report(9, "stage-0 inference of the refined model matches the plain baseline", pass);
    CHECK(pass);
}

TEST_CASE("criterion 10: paper-scale FLOP accounting") {
    FlopCounts f = count_flops(FlopConfig::paper_scale());
    const double overhead = double(f.rego_total());
    bool pass = overhead >= 8.5e9 && overhead <= 34e9;

    // exact compositionality and batch linearity
    pass = pass && f.rego_total() == f.rego_roi_align + f.rego_fuser + f.rego_decoder +
                                         f.rego_merge + f.rego_heads + f.rego_multiscale;
    pass = pass && f.total() == f.base_total() + f.rego_total();
    FlopConfig doubled = FlopConfig::paper_scale();
    doubled.batch = 2;
    pass = pass && count_flops(doubled).total() == 2 * f.total();

    std::printf("  refinement overhead %.2f GFLOPs (band [8.5, 34])\n", overhead / 1e9);
    report(10, "refinement overhead in [8.5, 34] GFLOPs, exact compositionality", pass);
    CHECK(pass);
}

TEST_CASE("criterion 11: evaluator correctness") {
    bool pass = true;

    auto scenes = generate_dataset(8, 4242, 64, 64);
    std::vector<std::vector<ScoredDetection>> preds;
    std::vector<GroundTruth> gts;
    for (const auto& s : scenes) {
        gts.push_back(s.gt);
        std::vector<ScoredDetection> img;
        for (std::size_t i = 0; i < s.gt.boxes.size(); ++i)
            img.push_back(ScoredDetection{s.gt.boxes[i], s.gt.labels[i], 1.0});
        preds.push_back(img);
    }
    EvalReport perfect = evaluate_ap(preds, gts);
    if (std::fabs(perfect.ap - 1.0) > 1e-12 || std::fabs(perfect.ap50 - 1.0) > 1e-12 ||
        std::fabs(perfect.ap75 - 1.0) > 1e-12)
        pass = false;

    // hand-built 2-image case vs the manual PR integration
    GroundTruth g0, g1;
    g0.boxes = {Box{0.2, 0.2, 0.1, 0.1}, Box{0.7, 0.7, 0.1, 0.1}};
    g0.labels = {0, 0};
    g1.boxes = {Box{0.5, 0.5, 0.2, 0.2}};
    g1.labels = {0};
    std::vector<std::vector<ScoredDetection>> hp(2);
    hp[0].push_back(ScoredDetection{g0.boxes[0], 0, 0.9});
    hp[0].push_back(ScoredDetection{Box{0.45, 0.9, 0.05, 0.05}, 0, 0.8});
    hp[0].push_back(ScoredDetection{g0.boxes[1], 0, 0.6});
    hp[1].push_back(ScoredDetection{g1.boxes[0], 0, 0.7});
    EvalReport hand = evaluate_ap(hp, {g0, g1});
    double expect = 0.0;
    for (int i = 0; i <= 100; ++i)
        expect += (double(i) / 100.0 <= 1.0 / 3.0 + 1e-12) ? 1.0 : 0.75;
    expect /= 101.0;
    if (std::fabs(hand.ap50 - expect) > 1e-9) pass = false;

    std::printf("  perfect AP %.4f; hand case AP50 %.6f vs oracle %.6f\n", perfect.ap, hand.ap50,
                expect);
    report(11, "perfect detector scores 1.0; hand case matches the PR oracle to 1e-9", pass);
    CHECK(pass);
}

TEST_CASE("criterion 12: same-seed training determinism") {
    namespace fs = std::filesystem;
    TrainConfig cfg;
    cfg.model.width = 32;
    cfg.model.heads = 2;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.queries = 8;
    cfg.model.ffn_width = 64;
    cfg.glimpse = GlimpseConfig::make(2);
    cfg.glimpse.roi_window = 5;
    cfg.glimpse.decoder_layers = 1;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.train_scenes = 24;
    cfg.val_scenes = 12;
    cfg.seed = 11;

    cfg.run_dir = "acceptance_det_a";
    train(cfg);
    cfg.run_dir = "acceptance_det_b";
    train(cfg);
    auto slurp = [](const char* path) {
        std::ifstream is(path);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    const std::string a = slurp("acceptance_det_a/metrics.csv");
    const std::string b = slurp("acceptance_det_b/metrics.csv");
    const bool pass = !a.empty() && a == b;
    fs::remove_all("acceptance_det_a");
    fs::remove_all("acceptance_det_b");
    report(12, "two same-seed runs produce bitwise-identical metrics.csv", pass);
    CHECK(pass);
}
