#pragma once

#include <cstddef>
#include <vector>

#include "rego/layers.hpp"
#include "rego/tensor.hpp"

namespace rego {

struct ModelConfig {
    std::size_t width = 64;       // C
    std::size_t heads = 4;        // M
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    std::size_t queries = 25;     // N_d
    std::size_t classes = 3;      // foreground classes; background is index `classes`
    std::size_t ffn_width = 256;

    std::size_t num_logits() const { return classes + 1; }
};

struct ConvParams {
    Tensor w;  // [OC x C x kh x kw]
    Tensor b;  // [OC]
    std::size_t stride = 1;
    std::size_t padding = 0;

    static ConvParams init(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                           std::size_t stride, std::size_t padding, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

// Tiny multi-level backbone: a stride-2 stem then four stride-2 stages of
// widths {32, 64, 128, 256}, giving levels at strides {4, 8, 16, 32}. Each
// level carries a pointwise projection to the model width.
struct BackboneParams {
    ConvParams stem;
    std::vector<ConvParams> stages;
    std::vector<ConvParams> projections;

    static BackboneParams init(std::size_t model_width, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct BackboneFeatures {
    std::vector<Tensor> levels;     // [1 x C_l x H_l x W_l], strides 4/8/16/32
    std::vector<Tensor> projected;  // same extents, model width
    std::size_t image_h = 0, image_w = 0;
};

struct PredictionHeads {
    Tensor cls_w, cls_b;  // C -> classes+1
    Tensor box_w1, box_b1, box_w2, box_b2, box_w3, box_b3;  // MLP C -> C -> C -> 4

    static PredictionHeads init(std::size_t width, std::size_t classes, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
    void zero_box_head();  // residual-identity switch used by diagnostics
};

// One stage's predictions: class logits plus boxes. Box logits are kept so
// later stages can apply their residual update in logit space; `boxes` is
// their sigmoid, guaranteeing coordinates in (0, 1).
struct DetectionSet {
    Tensor class_logits;  // [N_d x classes+1]
    Tensor box_logits;    // [N_d x 4]
    Tensor boxes;         // sigmoid(box_logits)
};

DetectionSet apply_heads(const PredictionHeads& heads, const Tensor& h);
// Residual form: box logits = prev_box_logits + F_box(h).
DetectionSet apply_heads_residual(const PredictionHeads& heads, const Tensor& h,
                                  const Tensor& prev_box_logits);

struct DetrModel {
    ModelConfig cfg;
    BackboneParams backbone;
    std::vector<LayerParams> encoder;
    std::vector<LayerParams> decoder;
    Tensor query_embed;  // [N_d x C]
    PredictionHeads heads;

    static DetrModel init(const ModelConfig& cfg, Rng& rng);
    void collect(ParamList& out) const;
};

struct DetrOutput {
    Tensor h_dec;                    // final decoder state [N_d x C]
    DetectionSet detection;
    std::vector<DetectionSet> aux;   // intermediate decoder layers, in order
};

// Image is [3 x H x W] with H, W divisible by 32.
BackboneFeatures backbone_forward(const BackboneParams& params, const Tensor& image);

// Encodes the stride-32 level (flattened, with positional embedding) and
// decodes the object queries; intermediate decoder layers feed the
// auxiliary losses.
DetrOutput detr_forward(const DetrModel& model, const BackboneFeatures& features);

}  // namespace rego
