#pragma once

#include "rego/attention.hpp"
#include "rego/tensor.hpp"

namespace rego {

struct FeedForwardParams {
    Tensor w1, b1;  // C -> d_ff
    Tensor w2, b2;  // d_ff -> C
    static FeedForwardParams init(std::size_t width, std::size_t hidden, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormParams {
    Tensor gain, bias;
    static LayerNormParams init(std::size_t width);
    void collect(const std::string& prefix, ParamList& out) const;
};

// One post-norm transformer layer. Encoder layers leave `cross` unused;
// decoder layers run self-attention, then cross-attention, then the FFN.
struct LayerParams {
    AttentionParams self_attn;
    AttentionParams cross_attn;
    bool has_cross = false;
    FeedForwardParams ffn;
    LayerNormParams norm1, norm2, norm3;

    static LayerParams init_encoder(std::size_t width, std::size_t heads, std::size_t ffn_width,
                                    Rng& rng);
    static LayerParams init_decoder(std::size_t width, std::size_t heads, std::size_t ffn_width,
                                    Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor feed_forward(const FeedForwardParams& p, const Tensor& x);

// Self-attention block with positions added to queries and keys/values,
// residual + norm, then FFN with residual + norm. Shape-preserving.
Tensor encoder_layer(const LayerParams& p, const Tensor& x, const Tensor& pos);

// Query self-attention, cross-attention onto memory, FFN; post-norm
// residuals throughout. query_embed/mem_pos may be default tensors (no
// positional term). The cross-attention weights land in `cross_trace`.
Tensor decoder_layer(const LayerParams& p, const Tensor& queries, const Tensor& memory,
                     const Tensor& query_embed, const Tensor& mem_pos,
                     AttentionTrace* cross_trace = nullptr);

// Fixed 2-D sinusoidal embedding for an h x w grid, row-major positions.
// Half the channels encode the y coordinate, half the x coordinate.
Tensor positional_embedding(std::size_t h, std::size_t w, std::size_t channels);

}  // namespace rego
