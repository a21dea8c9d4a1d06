#include "rego/layers.hpp"

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

Tensor zeros_param(std::size_t n) {
    Tensor t({n});
    t.set_requires_grad(true);
    return t;
}

}  // namespace

FeedForwardParams FeedForwardParams::init(std::size_t width, std::size_t hidden, Rng& rng) {
    FeedForwardParams p;
    p.w1 = xavier(width, hidden, rng);
    p.b1 = zeros_param(hidden);
    p.w2 = xavier(hidden, width, rng);
    p.b2 = zeros_param(width);
    return p;
}

void FeedForwardParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w2", w2);
    out.emplace_back(prefix + ".b2", b2);
}

LayerNormParams LayerNormParams::init(std::size_t width) {
    LayerNormParams p;
    p.gain = Tensor::full({width}, 1.0);
    p.gain.set_requires_grad(true);
    p.bias = zeros_param(width);
    return p;
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

LayerParams LayerParams::init_encoder(std::size_t width, std::size_t heads, std::size_t ffn_width,
                                      Rng& rng) {
    LayerParams p;
    p.self_attn = AttentionParams::init(width, heads, rng);
    p.ffn = FeedForwardParams::init(width, ffn_width, rng);
    p.norm1 = LayerNormParams::init(width);
    p.norm2 = LayerNormParams::init(width);
    return p;
}

LayerParams LayerParams::init_decoder(std::size_t width, std::size_t heads, std::size_t ffn_width,
                                      Rng& rng) {
    LayerParams p = init_encoder(width, heads, ffn_width, rng);
    p.cross_attn = AttentionParams::init(width, heads, rng);
    p.has_cross = true;
    p.norm3 = LayerNormParams::init(width);
    return p;
}

void LayerParams::collect(const std::string& prefix, ParamList& out) const {
    self_attn.collect(prefix + ".self", out);
    if (has_cross) cross_attn.collect(prefix + ".cross", out);
    ffn.collect(prefix + ".ffn", out);
    norm1.collect(prefix + ".norm1", out);
    norm2.collect(prefix + ".norm2", out);
    if (has_cross) norm3.collect(prefix + ".norm3", out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = ops::matmul(x, w);
    return b.defined() ? ops::add(y, b) : y;
}

Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) {
    return linear(ops::relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor encoder_layer(const LayerParams& p, const Tensor& x, const Tensor& pos) {
    if (x.shape() != pos.shape()) {
        throw std::invalid_argument("encoder_layer: x " + shape_str(x.shape()) +
                                    " vs pos " + shape_str(pos.shape()));
    }
    Tensor qkv = ops::add(x, pos);
    Tensor attn = multi_head_attention(p.self_attn, qkv, qkv);
    Tensor h = ops::layer_norm(ops::add(x, attn), p.norm1.gain, p.norm1.bias);
    Tensor f = feed_forward(p.ffn, h);
    return ops::layer_norm(ops::add(h, f), p.norm2.gain, p.norm2.bias);
}

Tensor decoder_layer(const LayerParams& p, const Tensor& queries, const Tensor& memory,
                     const Tensor& query_embed, const Tensor& mem_pos,
                     AttentionTrace* cross_trace) {
    if (!p.has_cross) throw std::invalid_argument("decoder_layer: params lack cross-attention");
    Tensor sa_in = query_embed.defined() ? ops::add(queries, query_embed) : queries;
    Tensor sa = multi_head_attention(p.self_attn, sa_in, sa_in);
    Tensor h = ops::layer_norm(ops::add(queries, sa), p.norm1.gain, p.norm1.bias);

    Tensor ca_q = query_embed.defined() ? ops::add(h, query_embed) : h;
    Tensor ca_kv = mem_pos.defined() ? ops::add(memory, mem_pos) : memory;
    Tensor ca = multi_head_attention(p.cross_attn, ca_q, ca_kv, cross_trace);
    Tensor h2 = ops::layer_norm(ops::add(h, ca), p.norm2.gain, p.norm2.bias);

    Tensor f = feed_forward(p.ffn, h2);
    return ops::layer_norm(ops::add(h2, f), p.norm3.gain, p.norm3.bias);
}

Tensor positional_embedding(std::size_t h, std::size_t w, std::size_t channels) {
    if (channels % 4 != 0) {
        throw std::invalid_argument("positional_embedding: channels " +
                                    std::to_string(channels) + " not divisible by 4");
    }
    const std::size_t half = channels / 2;
    const double two_pi = 2.0 * 3.14159265358979323846;
    Tensor out({h * w, channels});
    for (std::size_t y = 0; y < h; ++y) {
        const double py = (double(y) + 0.5) / double(h) * two_pi;
        for (std::size_t x = 0; x < w; ++x) {
            const double px = (double(x) + 0.5) / double(w) * two_pi;
            double* row = out.data() + (y * w + x) * channels;
            for (std::size_t i = 0; i < half; ++i) {
                const double t = std::pow(10000.0, double(2 * (i / 2)) / double(half));
                row[i] = (i % 2 == 0) ? std::sin(py / t) : std::cos(py / t);
                row[half + i] = (i % 2 == 0) ? std::sin(px / t) : std::cos(px / t);
            }
        }
    }
    return out;
}

}  // namespace rego
