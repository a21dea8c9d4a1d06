#include "rego/detr.hpp"

#include <cmath>
#include <stdexcept>

#include "rego/ops.hpp"

namespace rego {

namespace {

constexpr std::size_t kStemWidth = 16;
const std::size_t kStageWidths[4] = {32, 64, 128, 256};

}  // namespace

ConvParams ConvParams::init(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                            std::size_t stride, std::size_t padding, Rng& rng) {
    ConvParams p;
    p.w = Tensor({out_ch, in_ch, k, k});
    // He fan-in scaling keeps activation variance through the ReLU stack
    const double limit = std::sqrt(6.0 / double(in_ch * k * k));
    for (double& v : p.w.values()) v = rng.uniform(-limit, limit);
    p.w.set_requires_grad(true);
    p.b = Tensor({out_ch});
    p.b.set_requires_grad(true);
    p.stride = stride;
    p.padding = padding;
    return p;
}

void ConvParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

BackboneParams BackboneParams::init(std::size_t model_width, Rng& rng) {
    BackboneParams p;
    p.stem = ConvParams::init(kStemWidth, 3, 3, 2, 1, rng);
    std::size_t in_ch = kStemWidth;
    for (std::size_t s = 0; s < 4; ++s) {
        p.stages.push_back(ConvParams::init(kStageWidths[s], in_ch, 3, 2, 1, rng));
        p.projections.push_back(ConvParams::init(model_width, kStageWidths[s], 1, 1, 0, rng));
        in_ch = kStageWidths[s];
    }
    return p;
}

void BackboneParams::collect(const std::string& prefix, ParamList& out) const {
    stem.collect(prefix + ".stem", out);
    for (std::size_t s = 0; s < stages.size(); ++s) {
        stages[s].collect(prefix + ".stage" + std::to_string(s), out);
        projections[s].collect(prefix + ".proj" + std::to_string(s), out);
    }
}

BackboneFeatures backbone_forward(const BackboneParams& params, const Tensor& image) {
    if (image.rank() != 3 || image.shape()[0] != 3) {
        throw std::invalid_argument("backbone_forward: need [3 x H x W], got " +
                                    shape_str(image.shape()));
    }
    const std::size_t H = image.shape()[1], W = image.shape()[2];
    if (H % 32 != 0 || W % 32 != 0) {
        throw std::invalid_argument("backbone_forward: extents must be divisible by 32, got " +
                                    std::to_string(H) + "x" + std::to_string(W));
    }
    BackboneFeatures f;
    f.image_h = H;
    f.image_w = W;
    // center the [0, 1] pixel range
    Tensor x = ops::add_scalar(ops::reshape(image, {1, 3, H, W}), -0.5);
    x = ops::relu(ops::conv2d(x, params.stem.w, params.stem.b, params.stem.stride,
                              params.stem.padding));
    for (std::size_t s = 0; s < params.stages.size(); ++s) {
        const auto& st = params.stages[s];
        x = ops::relu(ops::conv2d(x, st.w, st.b, st.stride, st.padding));
        f.levels.push_back(x);
        const auto& pr = params.projections[s];
        f.projected.push_back(ops::conv2d(x, pr.w, pr.b, pr.stride, pr.padding));
    }
    return f;
}

PredictionHeads PredictionHeads::init(std::size_t width, std::size_t classes, Rng& rng) {
    auto xavier = [&rng](std::size_t r, std::size_t c) {
        Tensor t({r, c});
        const double limit = std::sqrt(6.0 / double(r + c));
        for (double& v : t.values()) v = rng.uniform(-limit, limit);
        t.set_requires_grad(true);
        return t;
    };
    auto zeros = [](std::size_t n) {
        Tensor t({n});
        t.set_requires_grad(true);
        return t;
    };
    PredictionHeads h;
    h.cls_w = xavier(width, classes + 1);
    h.cls_b = zeros(classes + 1);
    h.box_w1 = xavier(width, width);
    h.box_b1 = zeros(width);
    h.box_w2 = xavier(width, width);
    h.box_b2 = zeros(width);
    h.box_w3 = xavier(width, 4);
    h.box_b3 = zeros(4);
    return h;
}

void PredictionHeads::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".cls_w", cls_w);
    out.emplace_back(prefix + ".cls_b", cls_b);
    out.emplace_back(prefix + ".box_w1", box_w1);
    out.emplace_back(prefix + ".box_b1", box_b1);
    out.emplace_back(prefix + ".box_w2", box_w2);
    out.emplace_back(prefix + ".box_b2", box_b2);
    out.emplace_back(prefix + ".box_w3", box_w3);
    out.emplace_back(prefix + ".box_b3", box_b3);
}

void PredictionHeads::zero_box_head() {
    for (Tensor* t : {&box_w1, &box_b1, &box_w2, &box_b2, &box_w3, &box_b3}) {
        for (double& v : t->values()) v = 0.0;
    }
}

namespace {

Tensor box_mlp(const PredictionHeads& h, const Tensor& x) {
    Tensor t = ops::relu(linear(x, h.box_w1, h.box_b1));
    t = ops::relu(linear(t, h.box_w2, h.box_b2));
    return linear(t, h.box_w3, h.box_b3);
}

}  // namespace

DetectionSet apply_heads(const PredictionHeads& heads, const Tensor& h) {
    DetectionSet d;
    d.class_logits = linear(h, heads.cls_w, heads.cls_b);
    d.box_logits = box_mlp(heads, h);
    d.boxes = ops::sigmoid(d.box_logits);
    return d;
}

DetectionSet apply_heads_residual(const PredictionHeads& heads, const Tensor& h,
                                  const Tensor& prev_box_logits) {
    DetectionSet d;
    d.class_logits = linear(h, heads.cls_w, heads.cls_b);
    d.box_logits = ops::add(prev_box_logits, box_mlp(heads, h));
    d.boxes = ops::sigmoid(d.box_logits);
    return d;
}

DetrModel DetrModel::init(const ModelConfig& cfg, Rng& rng) {
    if (cfg.width % cfg.heads != 0) {
        throw std::invalid_argument("model width must be divisible by the head count");
    }
    DetrModel m;
    m.cfg = cfg;
    m.backbone = BackboneParams::init(cfg.width, rng);
    for (std::size_t i = 0; i < cfg.enc_layers; ++i)
        m.encoder.push_back(LayerParams::init_encoder(cfg.width, cfg.heads, cfg.ffn_width, rng));
    for (std::size_t i = 0; i < cfg.dec_layers; ++i)
        m.decoder.push_back(LayerParams::init_decoder(cfg.width, cfg.heads, cfg.ffn_width, rng));
    m.query_embed = Tensor({cfg.queries, cfg.width});
    for (double& v : m.query_embed.values()) v = rng.normal();
    m.query_embed.set_requires_grad(true);
    m.heads = PredictionHeads::init(cfg.width, cfg.classes, rng);
    return m;
}

void DetrModel::collect(ParamList& out) const {
    backbone.collect("backbone", out);
    for (std::size_t i = 0; i < encoder.size(); ++i)
        encoder[i].collect("encoder" + std::to_string(i), out);
    for (std::size_t i = 0; i < decoder.size(); ++i)
        decoder[i].collect("decoder" + std::to_string(i), out);
    out.emplace_back("query_embed", query_embed);
    heads.collect("heads", out);
}

DetrOutput detr_forward(const DetrModel& model, const BackboneFeatures& features) {
    const std::size_t C = model.cfg.width;
    const Tensor& top = features.projected.back();  // stride-32 level
    const std::size_t h = top.shape()[2], w = top.shape()[3];

    // [1 x C x h x w] -> tokens [h*w x C]
    Tensor tokens = ops::transpose(ops::reshape(top, {C, h * w}));
    Tensor pos = positional_embedding(h, w, C);

    Tensor x = tokens;
    for (const auto& layer : model.encoder) x = encoder_layer(layer, x, pos);

    Tensor tgt({model.cfg.queries, C});  // queries start at zero
    DetrOutput out;
    for (std::size_t i = 0; i < model.decoder.size(); ++i) {
        tgt = decoder_layer(model.decoder[i], tgt, x, model.query_embed, pos);
        if (i + 1 < model.decoder.size()) out.aux.push_back(apply_heads(model.heads, tgt));
    }
    out.h_dec = tgt;
    out.detection = apply_heads(model.heads, tgt);
    return out;
}

}  // namespace rego
