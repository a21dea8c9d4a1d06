#include "rego/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "rego/checkpoint.hpp"
#include "rego/ops.hpp"

namespace rego {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + (salt + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::uint64_t train_data_seed(std::uint64_t run_seed) { return mix(run_seed, 17); }
std::uint64_t val_data_seed(std::uint64_t run_seed) { return mix(run_seed, 23); }

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (lr <= 0 || lr_drop_factor <= 0)
        throw std::invalid_argument("train config: rates must be positive");
    if (image_h % 32 != 0 || image_w % 32 != 0)
        throw std::invalid_argument("train config: image extents must be divisible by 32");
    glimpse.validate();
}

AdamW::AdamW(ParamList params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].second.size(), 0.0);
        v_[i].assign(params_[i].second.size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        const std::vector<double>& g = p.grad_buffer();
        double* data = p.data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            data[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * data[j]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

double AdamW::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& [name, p] : params_) {
        for (double g : p.grad_buffer()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& [name, p] : params_) {
            for (double& g : p.grad_buffer()) g *= scale;
        }
    }
    return norm;
}

std::string find_nonfinite_op(const Tensor& loss) {
    using autograd::Node;
    if (!loss.impl()->node) return {};
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* node;
        std::size_t next;
    };
    std::vector<Frame> stack{{loss.impl()->node.get(), 0}};
    seen.insert(loss.impl()->node.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->inputs.size()) {
            Node* child = f.node->inputs[f.next++]->node.get();
            if (child && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    for (Node* node : order) {  // post-order is topological
        auto out = node->output.lock();
        if (!out) continue;
        for (double v : out->data) {
            if (!std::isfinite(v)) return node->op;
        }
    }
    return {};
}

namespace {

std::vector<DetectionSet> all_stage_outputs(const RegoOutput& out) {
    std::vector<DetectionSet> sets = out.stage0_aux;
    for (const StageState& s : out.stages) sets.push_back(s.detection);
    return sets;
}

}  // namespace

std::vector<std::vector<std::vector<ScoredDetection>>> stage_predictions(
    const RegoModel& model, const std::vector<SyntheticScene>& scenes, bool use_rego) {
    autograd::NoGradGuard guard;
    const std::size_t n_stage_outputs = use_rego ? model.glimpse.n_stages + 1 : 1;
    std::vector<std::vector<std::vector<ScoredDetection>>> preds(
        n_stage_outputs, std::vector<std::vector<ScoredDetection>>());
    for (const SyntheticScene& scene : scenes) {
        if (use_rego) {
            RegoOutput out = run_rego(model, scene.image);
            for (std::size_t s = 0; s < out.stages.size(); ++s)
                preds[s].push_back(scored_detections(out.stages[s].detection));
        } else {
            BackboneFeatures f = backbone_forward(model.detr.backbone, scene.image);
            DetrOutput out = detr_forward(model.detr, f);
            preds[0].push_back(scored_detections(out.detection));
        }
    }
    return preds;
}

std::vector<EvalReport> evaluate_model(const RegoModel& model,
                                       const std::vector<SyntheticScene>& scenes, bool use_rego) {
    auto preds = stage_predictions(model, scenes, use_rego);
    std::vector<GroundTruth> gts;
    gts.reserve(scenes.size());
    for (const SyntheticScene& s : scenes) gts.push_back(s.gt);
    std::vector<EvalReport> reports;
    reports.reserve(preds.size());
    for (const auto& stage : preds) reports.push_back(evaluate_ap(stage, gts));
    return reports;
}

RunRecord train(const TrainConfig& cfg, RegoModel* trained) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<SyntheticScene> train_set, val_set;
    if (!cfg.data_dir.empty()) {
        train_set = load_dataset(cfg.data_dir, "train");
        val_set = load_dataset(cfg.data_dir, "val");
    } else {
        train_set =
            generate_dataset(cfg.train_scenes, train_data_seed(cfg.seed), cfg.image_h, cfg.image_w);
        val_set = generate_dataset(cfg.val_scenes, val_data_seed(cfg.seed), cfg.image_h, cfg.image_w);
    }

    Rng model_rng(mix(cfg.seed, 31));
    RegoModel model = RegoModel::init(cfg.model, cfg.glimpse, model_rng);

    ParamList params;
    model.collect(params);
    AdamW opt(params, cfg.lr, cfg.weight_decay);

    std::vector<std::size_t> drops = cfg.lr_drop_epochs;
    if (drops.empty() && cfg.epochs >= 2) drops.push_back((cfg.epochs * 8 + 9) / 10);

    Rng shuffle_rng(mix(cfg.seed, 47));
    std::vector<std::size_t> indices(train_set.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;

    RunRecord record;
    record.seed = cfg.seed;
    record.n_stages = cfg.glimpse.n_stages;

    double lr = cfg.lr;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (std::find(drops.begin(), drops.end(), epoch) != drops.end()) {
            lr *= cfg.lr_drop_factor;
        }
        opt.set_lr(lr);

        // Fisher-Yates, fixed stream
        for (std::size_t i = indices.size(); i > 1; --i) {
            std::size_t j = shuffle_rng.uniform_int(i);
            std::swap(indices[i - 1], indices[j]);
        }

        double loss_sum = 0, cls_sum = 0, l1_sum = 0, giou_sum = 0;
        std::size_t images_seen = 0;
        for (std::size_t start = 0; start < indices.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, indices.size());
            Tensor batch_loss;
            for (std::size_t b = start; b < stop; ++b) {
                const SyntheticScene& scene = train_set[indices[b]];
                RegoOutput out = run_rego(model, scene.image);
                SetLossResult r = compute_set_loss(all_stage_outputs(out), scene.gt, cfg.loss);
                for (const auto& st : r.per_stage) {
                    cls_sum += st.cls / double(r.per_stage.size());
                    l1_sum += st.l1 / double(r.per_stage.size());
                    giou_sum += st.giou / double(r.per_stage.size());
                }
                batch_loss = batch_loss.defined() ? ops::add(batch_loss, r.loss) : r.loss;
            }
            batch_loss = ops::scale(batch_loss, 1.0 / double(stop - start));
            const double loss_value = batch_loss.item();
            if (!std::isfinite(loss_value)) {
                const std::string op = find_nonfinite_op(batch_loss);
                throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                         " produced by op '" + op + "'");
            }
            loss_sum += loss_value * double(stop - start);
            images_seen += stop - start;

            autograd::backward(batch_loss);
            opt.clip_grad_norm(cfg.clip_norm);
            opt.step();
            opt.zero_grad();
        }

        EpochRecord er;
        er.epoch = epoch;
        er.train_loss = loss_sum / double(images_seen);
        er.cls = cls_sum / double(images_seen);
        er.l1 = l1_sum / double(images_seen);
        er.giou = giou_sum / double(images_seen);
        er.stage_reports = evaluate_model(model, val_set, true);
        record.epochs.push_back(std::move(er));
    }

    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    if (!cfg.run_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg.run_dir);
        save_checkpoint((fs::path(cfg.run_dir) / "checkpoint").string(), model);
        write_metrics_csv((fs::path(cfg.run_dir) / "metrics.csv").string(), record);
        save_run_record((fs::path(cfg.run_dir) / "record.json").string(), record);

        nlohmann::json snapshot = {
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"lr", cfg.lr},
            {"lr_drop_epochs", drops},
            {"lr_drop_factor", cfg.lr_drop_factor},
            {"weight_decay", cfg.weight_decay},
            {"clip_norm", cfg.clip_norm},
            {"seed", cfg.seed},
            {"train_scenes", cfg.train_scenes},
            {"val_scenes", cfg.val_scenes},
            {"image_h", cfg.image_h},
            {"image_w", cfg.image_w},
            {"n_stages", cfg.glimpse.n_stages},
            {"alpha", cfg.glimpse.alpha},
            {"cls_loss", cfg.loss.cls_loss == ClsLoss::Focal ? "focal" : "cross_entropy"},
        };
        std::ofstream os(fs::path(cfg.run_dir) / "manifest.json");
        os << snapshot.dump(2) << "\n";
    }
    if (trained) *trained = std::move(model);
    return record;
}

void write_metrics_csv(const std::string& path, const RunRecord& record) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "epoch,stage,AP,AP50,AP75,AP_S,AP_M,AP_L,train_loss\n";
    for (const EpochRecord& er : record.epochs) {
        for (std::size_t s = 0; s < er.stage_reports.size(); ++s) {
            const EvalReport& r = er.stage_reports[s];
            os << er.epoch << ',' << s << ',' << fmt_double(r.ap) << ',' << fmt_double(r.ap50)
               << ',' << fmt_double(r.ap75) << ',' << fmt_double(r.ap_s) << ','
               << fmt_double(r.ap_m) << ',' << fmt_double(r.ap_l) << ','
               << fmt_double(er.train_loss) << "\n";
        }
    }
}

namespace {

nlohmann::json report_json(const EvalReport& r) {
    return {{"AP", r.ap},   {"AP50", r.ap50}, {"AP75", r.ap75},
            {"AP_S", r.ap_s}, {"AP_M", r.ap_m}, {"AP_L", r.ap_l}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.ap = j.at("AP");
    r.ap50 = j.at("AP50");
    r.ap75 = j.at("AP75");
    r.ap_s = j.at("AP_S");
    r.ap_m = j.at("AP_M");
    r.ap_l = j.at("AP_L");
    return r;
}

}  // namespace

void save_run_record(const std::string& path, const RunRecord& record) {
    nlohmann::json j;
    j["wall_seconds"] = record.wall_seconds;
    j["seed"] = record.seed;
    j["n_stages"] = record.n_stages;
    j["epochs"] = nlohmann::json::array();
    for (const EpochRecord& er : record.epochs) {
        nlohmann::json stages = nlohmann::json::array();
        for (const EvalReport& r : er.stage_reports) stages.push_back(report_json(r));
        j["epochs"].push_back({{"epoch", er.epoch},
                               {"train_loss", er.train_loss},
                               {"cls", er.cls},
                               {"l1", er.l1},
                               {"giou", er.giou},
                               {"stages", stages}});
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << "\n";
}

RunRecord load_run_record(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    RunRecord record;
    record.wall_seconds = j.at("wall_seconds");
    record.seed = j.at("seed");
    record.n_stages = j.at("n_stages");
    for (const auto& je : j.at("epochs")) {
        EpochRecord er;
        er.epoch = je.at("epoch");
        er.train_loss = je.at("train_loss");
        er.cls = je.at("cls");
        er.l1 = je.at("l1");
        er.giou = je.at("giou");
        for (const auto& js : je.at("stages")) er.stage_reports.push_back(report_from_json(js));
        record.epochs.push_back(std::move(er));
    }
    return record;
}

void emit_curves(const std::vector<std::pair<std::string, RunRecord>>& runs,
                 const std::string& out_csv) {
    if (runs.empty()) throw std::invalid_argument("emit_curves: no runs");
    std::ofstream os(out_csv);
    if (!os) throw std::runtime_error("cannot write " + out_csv);
    os << "run,epoch,AP,AP50,AP75,loss\n";
    for (const auto& [label, record] : runs) {
        for (const EpochRecord& er : record.epochs) {
            const EvalReport& final_stage =
                er.stage_reports.empty() ? EvalReport{} : er.stage_reports.back();
            os << label << ',' << er.epoch << ',' << fmt_double(final_stage.ap) << ','
               << fmt_double(final_stage.ap50) << ',' << fmt_double(final_stage.ap75) << ','
               << fmt_double(er.train_loss) << "\n";
        }
    }
}

}  // namespace rego
