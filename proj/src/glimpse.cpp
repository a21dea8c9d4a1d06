#include "rego/glimpse.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rego/ops.hpp"

namespace rego {

std::vector<double> alpha_schedule(std::size_t n_stages, double scale_multiplier) {
    if (n_stages < 1) throw std::invalid_argument("alpha_schedule: need at least one stage");
    std::vector<double> alpha(n_stages);
    for (std::size_t i = 0; i < n_stages; ++i)
        alpha[i] = double(n_stages - i) * scale_multiplier;
    return alpha;
}

GlimpseConfig GlimpseConfig::make(std::size_t n_stages, double scale_multiplier,
                                  bool uniform_alpha) {
    GlimpseConfig cfg;
    cfg.n_stages = n_stages;
    cfg.scale_multiplier = scale_multiplier;
    cfg.uniform_alpha = uniform_alpha;
    if (n_stages > 0) {
        cfg.alpha = uniform_alpha ? std::vector<double>(n_stages, scale_multiplier)
                                  : alpha_schedule(n_stages, scale_multiplier);
    }
    cfg.validate();
    return cfg;
}

void GlimpseConfig::validate() const {
    if (alpha.size() != n_stages)
        throw std::invalid_argument("glimpse config: alpha schedule length " +
                                    std::to_string(alpha.size()) + " != " +
                                    std::to_string(n_stages) + " stages");
    if (roi_window < 1) throw std::invalid_argument("glimpse config: roi_window must be >= 1");
    if (decoder_layers < 1)
        throw std::invalid_argument("glimpse config: decoder_layers must be >= 1");
    if (scale_multiplier <= 0)
        throw std::invalid_argument("glimpse config: scale_multiplier must be positive");
    for (double a : alpha) {
        if (a <= 0) throw std::invalid_argument("glimpse config: alpha entries must be positive");
    }
    if (n_stages > 0 && !uniform_alpha) {
        for (std::size_t i = 1; i < alpha.size(); ++i) {
            if (!(alpha[i] < alpha[i - 1]))
                throw std::invalid_argument("glimpse config: alpha must be strictly decreasing");
        }
        if (std::fabs(alpha.back() - scale_multiplier) > 1e-12)
            throw std::invalid_argument("glimpse config: final alpha must equal the multiplier");
    }
}

BoxSet enlarge_rois(const BoxSet& boxes, double alpha, bool area_scaling) {
    if (alpha < 1.0)
        throw std::invalid_argument("enlarge_rois: alpha " + std::to_string(alpha) + " < 1");
    const double factor = area_scaling ? std::sqrt(alpha) : alpha;
    BoxSet out;
    out.reserve(boxes.size());
    for (const Box& b : boxes) {
        const double w = b.w * factor, h = b.h * factor;
        const double x0 = std::max(0.0, b.cx - 0.5 * w);
        const double x1 = std::min(1.0, b.cx + 0.5 * w);
        const double y0 = std::max(0.0, b.cy - 0.5 * h);
        const double y1 = std::min(1.0, b.cy + 0.5 * h);
        Box r;
        r.w = std::max(x1 - x0, 1e-4);
        r.h = std::max(y1 - y0, 1e-4);
        r.cx = 0.5 * (x0 + x1);
        r.cy = 0.5 * (y0 + y1);
        out.push_back(r);
    }
    return out;
}

namespace {

std::size_t assign_level(const Box& roi, std::size_t image_h, std::size_t image_w,
                         std::size_t n_levels) {
    // Canonical scale heuristic: the stride-16 level anchors RoIs whose
    // pixel side is a quarter of the image side.
    const double side_px = std::sqrt(std::max(roi.w * roi.h, 1e-12) *
                                     double(image_h) * double(image_w));
    const double anchor = std::sqrt(double(image_h) * double(image_w)) / 4.0;
    const double lvl = 2.0 + std::floor(std::log2(side_px / anchor));
    const double clamped = std::min(std::max(lvl, 0.0), double(n_levels - 1));
    return std::size_t(clamped);
}

struct BilinearTap {
    std::size_t y0, x0, y1, x1;
    double w00, w01, w10, w11;
};

BilinearTap tap_at(double py, double px, std::size_t H, std::size_t W) {
    py = std::min(std::max(py, 0.0), double(H - 1));
    px = std::min(std::max(px, 0.0), double(W - 1));
    BilinearTap t;
    t.y0 = std::size_t(py);
    t.x0 = std::size_t(px);
    t.y1 = std::min(t.y0 + 1, H - 1);
    t.x1 = std::min(t.x0 + 1, W - 1);
    const double fy = py - double(t.y0);
    const double fx = px - double(t.x0);
    t.w00 = (1 - fy) * (1 - fx);
    t.w01 = (1 - fy) * fx;
    t.w10 = fy * (1 - fx);
    t.w11 = fy * fx;
    return t;
}

}  // namespace

Tensor roi_align(const BackboneFeatures& features, const BoxSet& rois, std::size_t window,
                 bool single_level) {
    if (features.projected.empty()) throw std::invalid_argument("roi_align: no feature levels");
    if (window < 1) throw std::invalid_argument("roi_align: window must be >= 1");
    const std::size_t n_levels = features.projected.size();
    const std::size_t C = features.projected[0].shape()[1];
    const std::size_t N = rois.size();

    std::vector<std::size_t> levels(N);
    for (std::size_t i = 0; i < N; ++i) {
        levels[i] = single_level ? n_levels - 1
                                 : assign_level(rois[i], features.image_h, features.image_w,
                                                n_levels);
    }

    Tensor out({N, window, window, C});
    auto sample = [&](std::size_t i, auto&& visit) {
        const Box& r = rois[i];
        const Tensor& map = features.projected[levels[i]];
        const std::size_t Hl = map.shape()[2], Wl = map.shape()[3];
        for (std::size_t by = 0; by < window; ++by) {
            const double v = r.y0() + (double(by) + 0.5) * r.h / double(window);
            for (std::size_t bx = 0; bx < window; ++bx) {
                const double u = r.x0() + (double(bx) + 0.5) * r.w / double(window);
                const BilinearTap t =
                    tap_at(v * double(Hl) - 0.5, u * double(Wl) - 0.5, Hl, Wl);
                visit(by, bx, levels[i], Hl, Wl, t);
            }
        }
    };

    for (std::size_t i = 0; i < N; ++i) {
        sample(i, [&](std::size_t by, std::size_t bx, std::size_t lvl, std::size_t Hl,
                      std::size_t Wl, const BilinearTap& t) {
            const double* src = features.projected[lvl].data();
            double* dst = out.data() + ((i * window + by) * window + bx) * C;
            for (std::size_t c = 0; c < C; ++c) {
                const double* ch = src + c * Hl * Wl;
                dst[c] = t.w00 * ch[t.y0 * Wl + t.x0] + t.w01 * ch[t.y0 * Wl + t.x1] +
                         t.w10 * ch[t.y1 * Wl + t.x0] + t.w11 * ch[t.y1 * Wl + t.x1];
            }
        });
    }

    bool graph = autograd::grad_enabled();
    if (graph) {
        bool wants = false;
        for (const Tensor& p : features.projected)
            if (p.impl()->wants_grad()) wants = true;
        graph = wants;
    }
    if (graph) {
        std::vector<autograd::TensorImpl*> impls;
        for (const Tensor& p : features.projected) impls.push_back(p.impl().get());
        autograd::link_node(
            out, "roi_align", features.projected,
            [impls, rois, levels, window, C](autograd::TensorImpl& o) {
                for (std::size_t i = 0; i < rois.size(); ++i) {
                    autograd::TensorImpl* map = impls[levels[i]];
                    if (!map->wants_grad()) continue;
                    map->ensure_grad();
                    const std::size_t Hl = map->shape[2], Wl = map->shape[3];
                    const Box& r = rois[i];
                    for (std::size_t by = 0; by < window; ++by) {
                        const double v = r.y0() + (double(by) + 0.5) * r.h / double(window);
                        for (std::size_t bx = 0; bx < window; ++bx) {
                            const double u = r.x0() + (double(bx) + 0.5) * r.w / double(window);
                            const BilinearTap t =
                                tap_at(v * double(Hl) - 0.5, u * double(Wl) - 0.5, Hl, Wl);
                            const double* dg =
                                o.grad.data() + ((i * window + by) * window + bx) * C;
                            for (std::size_t c = 0; c < C; ++c) {
                                double* ch = map->grad.data() + c * Hl * Wl;
                                ch[t.y0 * Wl + t.x0] += t.w00 * dg[c];
                                ch[t.y0 * Wl + t.x1] += t.w01 * dg[c];
                                ch[t.y1 * Wl + t.x0] += t.w10 * dg[c];
                                ch[t.y1 * Wl + t.x1] += t.w11 * dg[c];
                            }
                        }
                    }
                }
            });
    }
    return out;
}

Tensor fuse_glimpse(const Tensor& raw, const Tensor& fuser_w, const Tensor& fuser_b) {
    if (raw.rank() != 4)
        throw std::invalid_argument("fuse_glimpse: need [N x win x win x C], got " +
                                    shape_str(raw.shape()));
    const std::size_t N = raw.shape()[0];
    const std::size_t flat = raw.size() / N;
    if (fuser_w.rank() != 2 || fuser_w.shape()[0] != flat) {
        throw std::invalid_argument("fuse_glimpse: fuser expects input width " +
                                    std::to_string(fuser_w.shape()[0]) + ", raw provides " +
                                    std::to_string(flat));
    }
    return linear(ops::reshape(raw, {N, flat}), fuser_w, fuser_b);
}

Tensor glimpse_decode(const Tensor& glimpse_tokens, const Tensor& h_prev,
                      const std::vector<LayerParams>& layers,
                      std::vector<AttentionTrace>* cross_traces) {
    if (glimpse_tokens.shape() != h_prev.shape()) {
        throw std::invalid_argument("glimpse_decode: token shape " +
                                    shape_str(glimpse_tokens.shape()) + " vs state " +
                                    shape_str(h_prev.shape()));
    }
    if (cross_traces) cross_traces->assign(layers.size(), AttentionTrace{});
    Tensor x = glimpse_tokens;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = decoder_layer(layers[i], x, h_prev, Tensor{}, Tensor{},
                          cross_traces ? &(*cross_traces)[i] : nullptr);
    }
    return x;
}

GlimpseStageParams GlimpseStageParams::init(const ModelConfig& cfg, const GlimpseConfig& gcfg,
                                            Rng& rng) {
    auto xavier = [&rng](std::size_t r, std::size_t c) {
        Tensor t({r, c});
        const double limit = std::sqrt(6.0 / double(r + c));
        for (double& v : t.values()) v = rng.uniform(-limit, limit);
        t.set_requires_grad(true);
        return t;
    };
    GlimpseStageParams p;
    for (std::size_t i = 0; i < gcfg.decoder_layers; ++i)
        p.decoder.push_back(LayerParams::init_decoder(cfg.width, cfg.heads, cfg.ffn_width, rng));
    const std::size_t flat = gcfg.roi_window * gcfg.roi_window * cfg.width;
    p.fuser_w = xavier(flat, cfg.width);
    p.fuser_b = Tensor({cfg.width});
    p.fuser_b.set_requires_grad(true);
    p.merge_w = xavier(2 * cfg.width, cfg.width);
    p.merge_b = Tensor({cfg.width});
    p.merge_b.set_requires_grad(true);
    p.merge_norm = LayerNormParams::init(cfg.width);
    p.heads = PredictionHeads::init(cfg.width, cfg.classes, rng);
    return p;
}

void GlimpseStageParams::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < decoder.size(); ++i)
        decoder[i].collect(prefix + ".dec" + std::to_string(i), out);
    out.emplace_back(prefix + ".fuser_w", fuser_w);
    out.emplace_back(prefix + ".fuser_b", fuser_b);
    out.emplace_back(prefix + ".merge_w", merge_w);
    out.emplace_back(prefix + ".merge_b", merge_b);
    merge_norm.collect(prefix + ".merge_norm", out);
    heads.collect(prefix + ".heads", out);
}

RegoModel RegoModel::init(const ModelConfig& cfg, const GlimpseConfig& gcfg, Rng& rng) {
    gcfg.validate();
    RegoModel m;
    m.detr = DetrModel::init(cfg, rng);
    m.glimpse = gcfg;
    for (std::size_t i = 0; i < gcfg.n_stages; ++i)
        m.stages.push_back(GlimpseStageParams::init(cfg, gcfg, rng));
    return m;
}

void RegoModel::collect(ParamList& out) const {
    detr.collect(out);
    for (std::size_t i = 0; i < stages.size(); ++i)
        stages[i].collect("glimpse_stage" + std::to_string(i + 1), out);
}

StageState run_stage(const StageState& prev, const BackboneFeatures& features,
                     const GlimpseConfig& cfg, const GlimpseStageParams& params,
                     std::size_t stage_index) {
    if (stage_index < 1 || stage_index > cfg.alpha.size())
        throw std::invalid_argument("run_stage: stage index out of schedule");
    if (prev.h_dec.has_node())
        throw std::logic_error("run_stage: previous state must be detached");

    const double alpha = cfg.alpha[stage_index - 1];
    const BoxSet prev_boxes = boxes_from_tensor(prev.detection.boxes);
    const BoxSet rois = enlarge_rois(prev_boxes, alpha, cfg.area_scaling);

    Tensor raw = roi_align(features, rois, cfg.roi_window, cfg.single_level);
    Tensor tokens = fuse_glimpse(raw, params.fuser_w, params.fuser_b);

    StageState out;
    Tensor h_g = glimpse_decode(tokens, prev.h_dec, params.decoder, &out.cross_traces);
    Tensor merged = linear(ops::concat({h_g, prev.h_dec}, 1), params.merge_w, params.merge_b);
    Tensor h_dec = ops::layer_norm(merged, params.merge_norm.gain, params.merge_norm.bias);

    out.detection = apply_heads_residual(params.heads, h_dec, prev.detection.box_logits.detach());
    out.h_dec = h_dec.detach();
    out.stage_index = stage_index;
    return out;
}

RegoOutput run_rego(const RegoModel& model, const Tensor& image) {
    RegoOutput out;
    out.features = backbone_forward(model.detr.backbone, image);
    DetrOutput d0 = detr_forward(model.detr, out.features);
    out.stage0_aux = d0.aux;

    StageState s0;
    s0.h_dec = d0.h_dec.detach();
    s0.detection = d0.detection;
    s0.stage_index = 0;
    out.stages.push_back(std::move(s0));

    for (std::size_t i = 1; i <= model.glimpse.n_stages; ++i) {
        out.stages.push_back(
            run_stage(out.stages.back(), out.features, model.glimpse, model.stages[i - 1], i));
    }
    return out;
}

std::vector<std::vector<Relation>> extract_relations(const StageState& stage, std::size_t top_k) {
    if (stage.cross_traces.empty())
        throw std::invalid_argument("extract_relations: stage has no cached cross-attention");
    const Tensor& first = stage.cross_traces[0].head_weights.at(0);
    const std::size_t n = first.shape()[0], m = first.shape()[1];
    if (top_k > m)
        throw std::invalid_argument("extract_relations: top_k " + std::to_string(top_k) +
                                    " exceeds " + std::to_string(m) + " sources");

    std::vector<double> avg(n * m, 0.0);
    std::size_t count = 0;
    for (const AttentionTrace& trace : stage.cross_traces) {
        for (const Tensor& w : trace.head_weights) {
            if (w.shape() != first.shape())
                throw std::logic_error("extract_relations: inconsistent trace shapes");
            for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += w.data()[i];
            ++count;
        }
    }
    for (double& v : avg) v /= double(count);

    std::vector<std::vector<Relation>> out(n);
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) idx[j] = j;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return avg[i * m + a] > avg[i * m + b];
        });
        out[i].reserve(top_k);
        for (std::size_t j = 0; j < top_k; ++j)
            out[i].push_back(Relation{idx[j], avg[i * m + idx[j]]});
    }
    return out;
}

}  // namespace rego
