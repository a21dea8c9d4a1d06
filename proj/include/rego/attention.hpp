#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rego/rng.hpp"
#include "rego/tensor.hpp"

namespace rego {

// Named parameter registry used for checkpoints and the optimizer.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Projection parameters for multi-head attention. Head h reads columns
// [h*Cp, (h+1)*Cp) of w_q/w_k/w_v; w_out mixes the concatenated heads.
struct AttentionParams {
    Tensor w_q, w_k, w_v;  // [C x C]
    Tensor w_out;          // [C x C]
    std::size_t heads = 1;

    std::size_t width() const { return w_q.shape()[0]; }
    std::size_t head_width() const { return width() / heads; }

    static AttentionParams init(std::size_t width, std::size_t heads, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

// Per-head attention weights of one forward pass, detached from the graph.
struct AttentionTrace {
    std::vector<Tensor> head_weights;  // each [L_q x L_kv]
};

// Key and value are carried in the same tensor. The per-head weights are
// softmax(Q K^T / sqrt(Cp)); pass a trace to retrieve them.
Tensor multi_head_attention(const AttentionParams& params, const Tensor& x_q, const Tensor& x_kv,
                            AttentionTrace* trace = nullptr);

}  // namespace rego
