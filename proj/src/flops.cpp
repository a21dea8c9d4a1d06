#include "rego/flops.hpp"

#include <stdexcept>

namespace rego {

flops_t linear_flops(flops_t rows, flops_t in, flops_t out) { return 2 * rows * in * out; }

flops_t softmax_flops(flops_t elements) { return 4 * elements; }

flops_t attention_flops(flops_t l_q, flops_t l_kv, flops_t width, flops_t heads) {
    const flops_t projections = linear_flops(l_q, width, width)      // queries
                                + linear_flops(l_kv, width, width)   // keys
                                + linear_flops(l_kv, width, width)   // values
                                + linear_flops(l_q, width, width);   // output
    const flops_t scores = 2 * l_q * l_kv * width;
    const flops_t weighted_sum = 2 * l_q * l_kv * width;
    return projections + scores + weighted_sum + softmax_flops(heads * l_q * l_kv);
}

flops_t ffn_flops(flops_t rows, flops_t width, flops_t hidden) {
    return linear_flops(rows, width, hidden) + linear_flops(rows, hidden, width);
}

flops_t roi_align_flops(flops_t n_rois, flops_t window, flops_t channels) {
    return n_rois * window * window * 7 * channels;
}

flops_t prediction_head_flops(flops_t rows, flops_t width, flops_t classes) {
    return linear_flops(rows, width, classes + 1) + linear_flops(rows, width, width) +
           linear_flops(rows, width, width) + linear_flops(rows, width, 4);
}

FlopConfig FlopConfig::paper_scale() { return FlopConfig{}; }

FlopCounts count_flops(const FlopConfig& cfg) {
    if (cfg.width == 0 || cfg.heads == 0 || cfg.queries == 0 || cfg.feature_h == 0 ||
        cfg.feature_w == 0 || cfg.batch == 0) {
        throw std::invalid_argument("count_flops: incomplete hyperparameters");
    }
    if (cfg.count_multiscale_projections &&
        cfg.level_extents.size() != cfg.level_channels.size()) {
        throw std::invalid_argument("count_flops: level extents/channels mismatch");
    }
    const flops_t C = cfg.width, M = cfg.heads, N = cfg.queries;
    const flops_t L = flops_t(cfg.feature_h) * cfg.feature_w;

    FlopCounts f;
    f.encoder = cfg.enc_layers * (attention_flops(L, L, C, M) + ffn_flops(L, C, cfg.ffn_width));
    f.decoder = cfg.dec_layers * (attention_flops(N, N, C, M) + attention_flops(N, L, C, M) +
                                  ffn_flops(N, C, cfg.ffn_width));
    f.heads = cfg.dec_layers * prediction_head_flops(N, C, cfg.classes);

    const flops_t per_stage_decoder =
        cfg.glimpse_decoder_layers *
        (attention_flops(N, N, C, M) + attention_flops(N, N, C, M) + ffn_flops(N, C, cfg.ffn_width));
    f.rego_roi_align = cfg.n_stages * roi_align_flops(N, cfg.roi_window, C);
    f.rego_fuser =
        cfg.n_stages * linear_flops(N, flops_t(cfg.roi_window) * cfg.roi_window * C, C);
    f.rego_decoder = cfg.n_stages * per_stage_decoder;
    f.rego_merge = cfg.n_stages * linear_flops(N, 2 * C, C);
    f.rego_heads = cfg.n_stages * prediction_head_flops(N, C, cfg.classes);

    if (cfg.count_multiscale_projections) {
        for (std::size_t i = 0; i < cfg.level_channels.size(); ++i) {
            const flops_t hw = flops_t(cfg.level_extents[i].first) * cfg.level_extents[i].second;
            f.rego_multiscale += linear_flops(hw, cfg.level_channels[i], C);
        }
    }

    const flops_t b = cfg.batch;
    f.encoder *= b;
    f.decoder *= b;
    f.heads *= b;
    f.rego_roi_align *= b;
    f.rego_fuser *= b;
    f.rego_decoder *= b;
    f.rego_merge *= b;
    f.rego_heads *= b;
    f.rego_multiscale *= b;
    return f;
}

}  // namespace rego
