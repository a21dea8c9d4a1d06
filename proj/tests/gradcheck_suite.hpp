#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rego/attention.hpp"
#include "rego/glimpse.hpp"
#include "rego/ops.hpp"
#include "rego/set_loss.hpp"
#include "test_common.hpp"

// One finite-difference case per differentiable operation, each drawing a
// fresh random shape per invocation.
namespace testutil {

struct GradCase {
    std::string name;
    std::function<GradCheckReport(rego::Rng&)> run;
};

inline std::size_t dim(rego::Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + rng.uniform_int(hi - lo + 1);
}

// Uniform values kept `margin` away from `kink` so central differences do
// not straddle a non-differentiable point.
inline rego::Tensor random_away_from(std::vector<std::size_t> shape, rego::Rng& rng, double kink,
                                     double margin = 5e-3, double lo = -1.0, double hi = 1.0) {
    rego::Tensor t(std::move(shape));
    for (double& v : t.values()) {
        do {
            v = rng.uniform(lo, hi);
        } while (std::fabs(v - kink) < margin);
    }
    return t;
}

inline std::vector<GradCase> gradcheck_cases() {
    using rego::Tensor;
    namespace ops = rego::ops;
    std::vector<GradCase> cases;

    auto add_case = [&cases](std::string name,
                             std::function<GradCheckReport(rego::Rng&)> fn) {
        cases.push_back(GradCase{std::move(name), std::move(fn)});
    };

    add_case("matmul_2d", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
        Tensor w = random_tensor({m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::matmul(in[0], in[1]), w); },
            {random_tensor({m, k}, rng), random_tensor({k, n}, rng)});
    });

    add_case("matmul_batched", [](rego::Rng& rng) {
        const std::size_t b = dim(rng, 1, 3), m = dim(rng, 1, 3), k = dim(rng, 1, 4),
                          n = dim(rng, 1, 3);
        Tensor w = random_tensor({b, m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::matmul(in[0], in[1]), w); },
            {random_tensor({b, m, k}, rng), random_tensor({b, k, n}, rng)});
    });

    add_case("matmul_broadcast", [](rego::Rng& rng) {
        const std::size_t b = dim(rng, 1, 3), m = dim(rng, 1, 3), k = dim(rng, 1, 4),
                          n = dim(rng, 1, 3);
        Tensor w = random_tensor({b, m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::matmul(in[0], in[1]), w); },
            {random_tensor({b, m, k}, rng), random_tensor({k, n}, rng)});
    });

    add_case("matmul_nt", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
        Tensor w = random_tensor({m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) {
                return weighted_sum(ops::matmul_nt(in[0], in[1]), w);
            },
            {random_tensor({m, k}, rng), random_tensor({n, k}, rng)});
    });

    auto binary_case = [&add_case](const char* name, auto opfn) {
        add_case(name, [opfn](rego::Rng& rng) {
            const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 5);
            Tensor w = random_tensor({m, n}, rng);
            return grad_check(
                [w, opfn](const std::vector<Tensor>& in) {
                    return weighted_sum(opfn(in[0], in[1]), w);
                },
                {random_tensor({m, n}, rng), random_tensor({m, n}, rng)});
        });
    };
    binary_case("add", [](const Tensor& a, const Tensor& b) { return ops::add(a, b); });
    binary_case("sub", [](const Tensor& a, const Tensor& b) { return ops::sub(a, b); });
    binary_case("mul", [](const Tensor& a, const Tensor& b) { return ops::mul(a, b); });

    add_case("add_broadcast", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 2, 4), n = dim(rng, 1, 5);
        Tensor w = random_tensor({m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::add(in[0], in[1]), w); },
            {random_tensor({m, n}, rng), random_tensor({n}, rng)});
    });

    add_case("div", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 5);
        Tensor w = random_tensor({m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::div(in[0], in[1]), w); },
            {random_tensor({m, n}, rng), random_tensor({m, n}, rng, 0.4, 1.6)});
    });

    add_case("minimum", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 2, 8);
        Tensor w = random_tensor({n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) {
                return weighted_sum(ops::minimum(in[0], in[1]), w);
            },
            {random_tensor({n}, rng), random_tensor({n}, rng)});
    });

    add_case("maximum", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 2, 8);
        Tensor w = random_tensor({n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) {
                return weighted_sum(ops::maximum(in[0], in[1]), w);
            },
            {random_tensor({n}, rng), random_tensor({n}, rng)});
    });

    add_case("clamp_min", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 2, 8);
        Tensor w = random_tensor({n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) {
                return weighted_sum(ops::clamp_min(in[0], 0.1), w);
            },
            {random_away_from({n}, rng, 0.1)});
    });

    add_case("abs", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 2, 8);
        Tensor w = random_tensor({n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::abs(in[0]), w); },
            {random_away_from({n}, rng, 0.0)});
    });

    add_case("relu", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 2, 8);
        Tensor w = random_tensor({n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::relu(in[0]), w); },
            {random_away_from({n}, rng, 0.0)});
    });

    add_case("sigmoid", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 2, 8);
        Tensor w = random_tensor({n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::sigmoid(in[0]), w); },
            {random_tensor({n}, rng, -3.0, 3.0)});
    });

    add_case("scale", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 2, 8);
        Tensor w = random_tensor({n}, rng);
        const double s = rng.uniform(-2.0, 2.0);
        return grad_check(
            [w, s](const std::vector<Tensor>& in) { return weighted_sum(ops::scale(in[0], s), w); },
            {random_tensor({n}, rng)});
    });

    add_case("add_scalar", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 2, 8);
        Tensor w = random_tensor({n}, rng);
        const double s = rng.uniform(-2.0, 2.0);
        return grad_check(
            [w, s](const std::vector<Tensor>& in) {
                return weighted_sum(ops::add_scalar(in[0], s), w);
            },
            {random_tensor({n}, rng)});
    });

    add_case("softmax_last", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 1, 4), n = dim(rng, 2, 5);
        Tensor w = random_tensor({m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::softmax(in[0], 1), w); },
            {random_tensor({m, n}, rng, -2.0, 2.0)});
    });

    add_case("softmax_axis0", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 2, 4), n = dim(rng, 1, 5);
        Tensor w = random_tensor({m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::softmax(in[0], 0), w); },
            {random_tensor({m, n}, rng, -2.0, 2.0)});
    });

    add_case("layer_norm", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 1, 4), n = dim(rng, 2, 6);
        Tensor w = random_tensor({m, n}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) {
                return weighted_sum(ops::layer_norm(in[0], in[1], in[2]), w);
            },
            {random_tensor({m, n}, rng), random_tensor({n}, rng, 0.5, 1.5),
             random_tensor({n}, rng)});
    });

    add_case("conv2d", [](rego::Rng& rng) {
        const std::size_t B = dim(rng, 1, 2), C = dim(rng, 1, 3), OC = dim(rng, 1, 3);
        const std::size_t H = dim(rng, 3, 6), W = dim(rng, 3, 6);
        const std::size_t k = dim(rng, 1, 3);
        const std::size_t stride = dim(rng, 1, 2), pad = dim(rng, 0, 1);
        const std::size_t OH = (H + 2 * pad - k) / stride + 1;
        const std::size_t OW = (W + 2 * pad - k) / stride + 1;
        Tensor w = random_tensor({B, OC, OH, OW}, rng);
        return grad_check(
            [w, stride, pad](const std::vector<Tensor>& in) {
                return weighted_sum(ops::conv2d(in[0], in[1], in[2], stride, pad), w);
            },
            {random_tensor({B, C, H, W}, rng), random_tensor({OC, C, k, k}, rng),
             random_tensor({OC}, rng)});
    });

    add_case("concat", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 1, 3), a = dim(rng, 1, 3), b = dim(rng, 1, 3),
                          c = dim(rng, 1, 3);
        Tensor w = random_tensor({m, a + b + c}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) {
                return weighted_sum(ops::concat({in[0], in[1], in[2]}, 1), w);
            },
            {random_tensor({m, a}, rng), random_tensor({m, b}, rng), random_tensor({m, c}, rng)});
    });

    add_case("slice", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 2, 5), n = dim(rng, 2, 5);
        const std::size_t start = rng.uniform_int(n - 1);
        const std::size_t len = 1 + rng.uniform_int(n - start - 1 + 1);
        Tensor w = random_tensor({m, len}, rng);
        return grad_check(
            [w, start, len](const std::vector<Tensor>& in) {
                return weighted_sum(ops::slice(in[0], 1, start, len), w);
            },
            {random_tensor({m, n}, rng)});
    });

    add_case("reshape", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 4);
        Tensor w = random_tensor({m * n}, rng);
        return grad_check(
            [w, m, n](const std::vector<Tensor>& in) {
                return weighted_sum(ops::reshape(in[0], {m * n}), w);
            },
            {random_tensor({m, n}, rng)});
    });

    add_case("transpose", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 4);
        Tensor w = random_tensor({n, m}, rng);
        return grad_check(
            [w](const std::vector<Tensor>& in) { return weighted_sum(ops::transpose(in[0]), w); },
            {random_tensor({m, n}, rng)});
    });

    add_case("sum", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 1, 9);
        return grad_check([](const std::vector<Tensor>& in) { return ops::sum(in[0]); },
                          {random_tensor({n}, rng)});
    });

    add_case("mean", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 1, 9);
        return grad_check([](const std::vector<Tensor>& in) { return ops::mean(in[0]); },
                          {random_tensor({n}, rng)});
    });

    add_case("gather_rows", [](rego::Rng& rng) {
        const std::size_t m = dim(rng, 2, 5), n = dim(rng, 1, 4);
        std::vector<std::size_t> rows;
        const std::size_t picks = dim(rng, 1, 5);
        for (std::size_t i = 0; i < picks; ++i) rows.push_back(rng.uniform_int(m));
        Tensor w = random_tensor({rows.size(), n}, rng);
        return grad_check(
            [w, rows](const std::vector<Tensor>& in) {
                return weighted_sum(ops::gather_rows(in[0], rows), w);
            },
            {random_tensor({m, n}, rng)});
    });

    add_case("cross_entropy", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 1, 5), k = dim(rng, 2, 5);
        std::vector<std::size_t> targets;
        for (std::size_t i = 0; i < n; ++i) targets.push_back(rng.uniform_int(k));
        std::vector<double> weights(k, 1.0);
        weights[k - 1] = 0.1;
        return grad_check(
            [targets, weights](const std::vector<Tensor>& in) {
                return ops::cross_entropy(in[0], targets, weights);
            },
            {random_tensor({n, k}, rng, -2.0, 2.0)});
    });

    add_case("focal_loss", [](rego::Rng& rng) {
        const std::size_t n = dim(rng, 1, 5), k = dim(rng, 2, 5);
        std::vector<std::size_t> targets;
        for (std::size_t i = 0; i < n; ++i) targets.push_back(rng.uniform_int(k));
        return grad_check(
            [targets, k](const std::vector<Tensor>& in) {
                return ops::focal_loss(in[0], targets, 2.0, 0.25, k - 1);
            },
            {random_tensor({n, k}, rng, -2.0, 2.0)});
    });

    add_case("giou_pairwise", [](rego::Rng& rng) {
        const std::size_t k = dim(rng, 1, 4);
        auto boxes = [&rng, k]() {
            Tensor t({k, 4});
            for (std::size_t i = 0; i < k; ++i) {
                t.data()[i * 4 + 0] = rng.uniform(0.3, 0.7);
                t.data()[i * 4 + 1] = rng.uniform(0.3, 0.7);
                t.data()[i * 4 + 2] = rng.uniform(0.1, 0.4);
                t.data()[i * 4 + 3] = rng.uniform(0.1, 0.4);
            }
            return t;
        };
        Tensor target = boxes();
        Tensor w = random_tensor({k, 1}, rng);
        return grad_check(
            [w, target](const std::vector<Tensor>& in) {
                return weighted_sum(rego::giou_pairwise(in[0], target), w);
            },
            {boxes()});
    });

    add_case("multi_head_attention", [](rego::Rng& rng) {
        const std::size_t M = 1 + rng.uniform_int(2);
        const std::size_t C = M * (1 + rng.uniform_int(2));
        const std::size_t lq = dim(rng, 1, 3), lkv = dim(rng, 1, 3);
        Tensor w = random_tensor({lq, C}, rng);
        return grad_check(
            [w, M](const std::vector<Tensor>& in) {
                rego::AttentionParams p;
                p.w_q = in[2];
                p.w_k = in[3];
                p.w_v = in[4];
                p.w_out = in[5];
                p.heads = M;
                return weighted_sum(rego::multi_head_attention(p, in[0], in[1]), w);
            },
            {random_tensor({lq, C}, rng), random_tensor({lkv, C}, rng),
             random_tensor({C, C}, rng), random_tensor({C, C}, rng), random_tensor({C, C}, rng),
             random_tensor({C, C}, rng)});
    });

    add_case("roi_align", [](rego::Rng& rng) {
        const std::size_t C = dim(rng, 1, 3);
        rego::BackboneFeatures f;
        f.image_h = 32;
        f.image_w = 32;
        std::size_t side = 8;
        for (int lvl = 0; lvl < 4; ++lvl) {
            f.projected.push_back(random_tensor({1, C, side, side}, rng));
            f.levels.push_back(f.projected.back());
            side /= 2;
        }
        rego::BoxSet rois;
        const std::size_t n = dim(rng, 1, 3);
        for (std::size_t i = 0; i < n; ++i) {
            rego::Box b;
            b.cx = rng.uniform(0.3, 0.7);
            b.cy = rng.uniform(0.3, 0.7);
            b.w = rng.uniform(0.1, 0.5);
            b.h = rng.uniform(0.1, 0.5);
            rois.push_back(b);
        }
        const std::size_t window = 2;
        Tensor w = random_tensor({n, window, window, C}, rng);
        return grad_check(
            [w, rois, window, C](const std::vector<Tensor>& in) {
                rego::BackboneFeatures probe;
                probe.image_h = 32;
                probe.image_w = 32;
                probe.projected = in;
                return weighted_sum(rego::roi_align(probe, rois, window), w);
            },
            f.projected);
    });

    return cases;
}

}  // namespace testutil
