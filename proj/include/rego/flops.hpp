#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace rego {

// Analytic multiply-add accounting. Conventions, pinned here and verified
// compositionally by the tests:
//   linear(rows, in, out)      = 2 * rows * in * out
//   attention(Lq, Lkv, C, M)   = q/k/v/out projections + 2*Lq*Lkv*C (scores)
//                              + 2*Lq*Lkv*C (weighted sum) + softmax
//   softmax(n)                 = 4 * n
//   roi_align(N, win, C)       = N * win^2 * 7 * C   (4 mul + 3 add per sample)
// Normalizations and pointwise activations are not counted.
using flops_t = unsigned long long;

flops_t linear_flops(flops_t rows, flops_t in, flops_t out);
flops_t softmax_flops(flops_t elements);
flops_t attention_flops(flops_t l_q, flops_t l_kv, flops_t width, flops_t heads);
flops_t ffn_flops(flops_t rows, flops_t width, flops_t hidden);
flops_t roi_align_flops(flops_t n_rois, flops_t window, flops_t channels);
flops_t prediction_head_flops(flops_t rows, flops_t width, flops_t classes);

struct FlopConfig {
    std::size_t width = 256;
    std::size_t heads = 8;
    std::size_t queries = 300;
    std::size_t classes = 80;
    std::size_t enc_layers = 6;
    std::size_t dec_layers = 6;
    std::size_t ffn_width = 2048;

    std::size_t n_stages = 3;
    std::size_t glimpse_decoder_layers = 2;
    std::size_t roi_window = 7;

    std::size_t feature_h = 25;  // stride-32 encoder map
    std::size_t feature_w = 42;
    std::size_t batch = 1;

    // 1x1 projections for single-scale base detectors; multi-scale bases
    // already expose the feature pyramid.
    bool count_multiscale_projections = false;
    std::vector<std::size_t> level_channels = {256, 512, 1024, 2048};
    std::vector<std::pair<std::size_t, std::size_t>> level_extents;  // strides 4..32

    static FlopConfig paper_scale();
};

struct FlopCounts {
    flops_t encoder = 0, decoder = 0, heads = 0;
    flops_t rego_roi_align = 0, rego_fuser = 0, rego_decoder = 0, rego_merge = 0, rego_heads = 0;
    flops_t rego_multiscale = 0;

    flops_t base_total() const { return encoder + decoder + heads; }
    flops_t rego_total() const {
        return rego_roi_align + rego_fuser + rego_decoder + rego_merge + rego_heads +
               rego_multiscale;
    }
    flops_t total() const { return base_total() + rego_total(); }
};

FlopCounts count_flops(const FlopConfig& cfg);

}  // namespace rego
