#pragma once

#include <cstddef>
#include <vector>

#include "rego/boxes.hpp"
#include "rego/detr.hpp"

namespace rego {

// Coarse-to-fine RoI enlargement ratios, earliest stage largest:
// [n, n-1, ..., 1], each multiplied by scale_multiplier.
std::vector<double> alpha_schedule(std::size_t n_stages, double scale_multiplier);

struct GlimpseConfig {
    std::size_t n_stages = 3;
    std::vector<double> alpha;       // per stage, earliest first
    std::size_t roi_window = 7;
    std::size_t decoder_layers = 2;
    double scale_multiplier = 1.0;
    bool uniform_alpha = false;      // control setting: every stage at ratio 1
    bool area_scaling = false;       // alpha scales box area instead of side length
    bool single_level = false;       // sample only the coarsest feature level

    static GlimpseConfig make(std::size_t n_stages, double scale_multiplier = 1.0,
                              bool uniform_alpha = false);
    void validate() const;
};

// Centers fixed, width/height scaled by alpha (or sqrt(alpha) in area mode),
// then clipped to the unit square with a 1e-4 floor on the side lengths.
BoxSet enlarge_rois(const BoxSet& boxes, double alpha, bool area_scaling = false);

// Bilinear RoI feature sampling: each RoI picks one backbone level by the
// canonical scale heuristic, then a window x window grid of bin centers is
// sampled (one sample per bin, border-clamped). Output [N x win x win x C];
// gradients flow into the projected feature maps.
Tensor roi_align(const BackboneFeatures& features, const BoxSet& rois, std::size_t window,
                 bool single_level = false);

// Flatten each RoI's window grid and map it to one token per box.
Tensor fuse_glimpse(const Tensor& raw, const Tensor& fuser_w, const Tensor& fuser_b);

// Stacked decoder layers with glimpse tokens as queries and the previous
// stage's decoder state as key/value; no encoder.
Tensor glimpse_decode(const Tensor& glimpse_tokens, const Tensor& h_prev,
                      const std::vector<LayerParams>& layers,
                      std::vector<AttentionTrace>* cross_traces = nullptr);

struct GlimpseStageParams {
    std::vector<LayerParams> decoder;
    Tensor fuser_w, fuser_b;   // win*win*C -> C
    Tensor merge_w, merge_b;   // 2C -> C after concatenation with the previous state
    LayerNormParams merge_norm;
    PredictionHeads heads;

    static GlimpseStageParams init(const ModelConfig& cfg, const GlimpseConfig& gcfg, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct StageState {
    Tensor h_dec;            // decoder state, detached at the stage boundary
    DetectionSet detection;  // live outputs feeding this stage's loss
    std::size_t stage_index = 0;
    std::vector<AttentionTrace> cross_traces;  // per decoder layer (stages >= 1)
};

struct RegoModel {
    DetrModel detr;
    GlimpseConfig glimpse;
    std::vector<GlimpseStageParams> stages;  // independent parameters per stage

    static RegoModel init(const ModelConfig& cfg, const GlimpseConfig& gcfg, Rng& rng);
    void collect(ParamList& out) const;
};

// One refinement stage: enlarge the previous boxes by alpha(stage_index),
// extract and fuse glimpse features, decode against the previous state,
// merge, then predict classes and residual box updates in logit space.
StageState run_stage(const StageState& prev, const BackboneFeatures& features,
                     const GlimpseConfig& cfg, const GlimpseStageParams& params,
                     std::size_t stage_index);

struct RegoOutput {
    BackboneFeatures features;
    std::vector<DetectionSet> stage0_aux;  // DETR intermediate decoder layers
    std::vector<StageState> stages;        // stage 0 .. n_stages
};

RegoOutput run_rego(const RegoModel& model, const Tensor& image);

struct Relation {
    std::size_t source = 0;
    double weight = 0.0;
};

// Per query, the top_k previous-stage detections by cross-attention weight,
// averaged over heads and decoder layers, sorted by descending weight.
std::vector<std::vector<Relation>> extract_relations(const StageState& stage, std::size_t top_k);

}  // namespace rego
