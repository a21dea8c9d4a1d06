#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rego/eval.hpp"
#include "rego/glimpse.hpp"
#include "rego/synthetic.hpp"

namespace rego {

struct TrainConfig {
    ModelConfig model;
    GlimpseConfig glimpse = GlimpseConfig::make(3);
    LossConfig loss;

    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    double lr = 1e-3;
    std::vector<std::size_t> lr_drop_epochs;  // empty: one drop at 80% of epochs
    double lr_drop_factor = 0.1;
    double weight_decay = 1e-4;
    double clip_norm = 0.1;
    std::uint64_t seed = 1;

    std::size_t train_scenes = 500;
    std::size_t val_scenes = 100;
    std::size_t image_h = 64;
    std::size_t image_w = 64;
    std::string data_dir;  // load "train"/"val" splits from here instead of generating
    std::string run_dir;   // when set: manifest.json, checkpoint/, metrics.csv, record.json

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double cls = 0, l1 = 0, giou = 0;            // mean per-stage breakdown
    std::vector<EvalReport> stage_reports;       // stage 0 .. n_stages
};

struct RunRecord {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0;
    std::uint64_t seed = 0;
    std::size_t n_stages = 0;
};

// Adaptive moments with decoupled weight decay over a parameter list.
class AdamW {
public:
    AdamW(ParamList params, double lr, double weight_decay);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step();
    void zero_grad();

    // Global-norm gradient clipping; returns the pre-clip norm.
    double clip_grad_norm(double max_norm);

private:
    ParamList params_;
    double lr_, weight_decay_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Dataset seeds the training loop derives from the run seed; exposed so
// tools can regenerate the exact splits a run saw.
std::uint64_t train_data_seed(std::uint64_t run_seed);
std::uint64_t val_data_seed(std::uint64_t run_seed);

// Full training loop: forward all stages, set loss over every stage output
// (DETR intermediate decoder layers included), clip, update; per-epoch
// validation reports per stage. Deterministic for a fixed config.
RunRecord train(const TrainConfig& cfg, RegoModel* trained = nullptr);

// Per-stage validation reports. use_rego=false evaluates only stage 0.
std::vector<EvalReport> evaluate_model(const RegoModel& model,
                                       const std::vector<SyntheticScene>& scenes, bool use_rego);

// Scored per-stage predictions for every scene (outer index: stage).
std::vector<std::vector<std::vector<ScoredDetection>>> stage_predictions(
    const RegoModel& model, const std::vector<SyntheticScene>& scenes, bool use_rego);

void save_run_record(const std::string& path, const RunRecord& record);
RunRecord load_run_record(const std::string& path);
void write_metrics_csv(const std::string& path, const RunRecord& record);

// Epoch-vs-AP curves for external plotting; one labeled series per run.
// Columns: run, epoch, AP, AP50, AP75, loss.
void emit_curves(const std::vector<std::pair<std::string, RunRecord>>& runs,
                 const std::string& out_csv);

// Name of the first op in the graph that produced a non-finite value, or
// empty when the graph is clean. Drives the NaN abort diagnostic.
std::string find_nonfinite_op(const Tensor& loss);

}  // namespace rego
