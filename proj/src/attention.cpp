#include "rego/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "rego/ops.hpp"

namespace rego {

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    const double limit = std::sqrt(6.0 / double(rows + cols));
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

AttentionParams AttentionParams::init(std::size_t width, std::size_t heads, Rng& rng) {
    if (heads == 0 || width % heads != 0) {
        throw std::invalid_argument("attention width " + std::to_string(width) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    }
    AttentionParams p;
    p.w_q = xavier(width, width, rng);
    p.w_k = xavier(width, width, rng);
    p.w_v = xavier(width, width, rng);
    p.w_out = xavier(width, width, rng);
    p.heads = heads;
    return p;
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".w_q", w_q);
    out.emplace_back(prefix + ".w_k", w_k);
    out.emplace_back(prefix + ".w_v", w_v);
    out.emplace_back(prefix + ".w_out", w_out);
}

Tensor multi_head_attention(const AttentionParams& params, const Tensor& x_q, const Tensor& x_kv,
                            AttentionTrace* trace) {
    const std::size_t C = params.width();
    if (x_q.rank() != 2 || x_kv.rank() != 2 || x_q.shape()[1] != C || x_kv.shape()[1] != C) {
        throw std::invalid_argument("attention width mismatch: x_q " + shape_str(x_q.shape()) +
                                    ", x_kv " + shape_str(x_kv.shape()) + ", params width " +
                                    std::to_string(C));
    }
    const std::size_t M = params.heads;
    const std::size_t Cp = params.head_width();
    const double inv_sqrt = 1.0 / std::sqrt(double(Cp));

    Tensor q = ops::matmul(x_q, params.w_q);
    Tensor k = ops::matmul(x_kv, params.w_k);
    Tensor v = ops::matmul(x_kv, params.w_v);

    if (trace) trace->head_weights.clear();
    std::vector<Tensor> head_outs;
    head_outs.reserve(M);
    for (std::size_t h = 0; h < M; ++h) {
        Tensor qh = ops::slice(q, 1, h * Cp, Cp);
        Tensor kh = ops::slice(k, 1, h * Cp, Cp);
        Tensor vh = ops::slice(v, 1, h * Cp, Cp);
        Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt);
        Tensor weights = ops::softmax(scores, 1);
        if (trace) trace->head_weights.push_back(weights.detach());
        head_outs.push_back(ops::matmul(weights, vh));
    }
    Tensor merged = M == 1 ? head_outs[0] : ops::concat(head_outs, 1);
    return ops::matmul(merged, params.w_out);
}

}  // namespace rego
