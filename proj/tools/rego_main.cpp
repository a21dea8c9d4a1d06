// Command-line driver: dataset generation, training, evaluation, ablations,
// FLOP accounting, convergence curves, relation and histogram dumps.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rego/checkpoint.hpp"
#include "rego/flops.hpp"
#include "rego/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TrainCliOpts {
    rego::TrainConfig cfg;
    std::size_t stages = 3;
    double scale = 1.0;
    bool uniform_alpha = false;
    bool area_scaling = false;
    bool single_level = false;
    std::size_t roi_window = 7;
    std::size_t glimpse_layers = 2;
    bool focal = false;
    std::string lr_drops;  // comma-separated epochs
    std::string config_path;
};

void add_train_options(CLI::App* cmd, TrainCliOpts& o) {
    auto opt = [cmd](const std::string& name, auto& target, const std::string& help) {
        return cmd->add_option(name, target, help)
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    };
    opt("--epochs", o.cfg.epochs, "training epochs");
    opt("--batch-size", o.cfg.batch_size, "images per optimizer step");
    opt("--lr", o.cfg.lr, "base learning rate");
    opt("--lr-drop-epochs", o.lr_drops, "comma-separated epochs for lr drops");
    opt("--lr-drop-factor", o.cfg.lr_drop_factor, "multiplier at each drop");
    opt("--weight-decay", o.cfg.weight_decay, "decoupled weight decay");
    opt("--clip-norm", o.cfg.clip_norm, "global gradient-norm clip");
    opt("--seed", o.cfg.seed, "run seed");
    opt("--train-scenes", o.cfg.train_scenes, "generated training scenes");
    opt("--val-scenes", o.cfg.val_scenes, "generated validation scenes");
    opt("--height", o.cfg.image_h, "image height (divisible by 32)");
    opt("--width", o.cfg.image_w, "image width (divisible by 32)");
    opt("--data-dir", o.cfg.data_dir, "load train/val splits from this directory");

    opt("--stages", o.stages, "glimpse refinement stages (0 disables)");
    opt("--scale", o.scale, "glimpse scale multiplier (1.0, 1.5, 2.0)");
    cmd->add_flag("--uniform-alpha", o.uniform_alpha, "hold every stage ratio at 1");
    cmd->add_flag("--area-scaling", o.area_scaling, "alpha scales box area, not side length");
    cmd->add_flag("--single-level", o.single_level, "sample only the coarsest feature level");
    opt("--roi-window", o.roi_window, "RoI sampling window");
    opt("--glimpse-decoder-layers", o.glimpse_layers, "decoder layers per stage");

    opt("--model-width", o.cfg.model.width, "feature width C");
    opt("--heads", o.cfg.model.heads, "attention heads");
    opt("--enc-layers", o.cfg.model.enc_layers, "encoder layers");
    opt("--dec-layers", o.cfg.model.dec_layers, "decoder layers");
    opt("--queries", o.cfg.model.queries, "object queries");
    opt("--classes", o.cfg.model.classes, "foreground classes");
    opt("--ffn-width", o.cfg.model.ffn_width, "feed-forward width");

    cmd->add_flag("--focal", o.focal, "focal classification loss instead of cross-entropy");
    opt("--background-weight", o.cfg.loss.background_weight,
        "cross-entropy weight of the no-object class");
    opt("--cls-weight", o.cfg.loss.weights.cls, "classification loss weight");
    opt("--l1-weight", o.cfg.loss.weights.l1, "L1 box loss weight");
    opt("--giou-weight", o.cfg.loss.weights.giou, "GIoU loss weight");

    // consumed by the pre-parse expansion in main(); registered so CLI11
    // accepts the token
    cmd->add_option("--config", o.config_path,
                    "plain-text key=value file (long option names without dashes); "
                    "flags override");
}

// Expands `--config FILE` into option tokens inserted ahead of the user's
// flags, so explicit flags win under take-last semantics.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::string path;
    std::size_t at = args.size();
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            at = i;
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            at = i;
            break;
        }
    }
    if (path.empty()) return args;
    if (at < 2) throw std::invalid_argument("--config must follow a subcommand");

    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    std::vector<std::string> expanded;
    std::string line;
    while (std::getline(is, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line without '=': " + line);
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::runtime_error("config line with empty key: " + line);
        expanded.push_back("--" + key + "=" + value);
    }

    std::vector<std::string> merged(args.begin(), args.begin() + 2);  // prog + subcommand
    merged.insert(merged.end(), expanded.begin(), expanded.end());
    merged.insert(merged.end(), args.begin() + 2, args.end());
    return merged;
}

rego::TrainConfig resolve(TrainCliOpts& o) {
    o.cfg.glimpse = rego::GlimpseConfig::make(o.stages, o.scale, o.uniform_alpha);
    o.cfg.glimpse.roi_window = o.roi_window;
    o.cfg.glimpse.decoder_layers = o.glimpse_layers;
    o.cfg.glimpse.area_scaling = o.area_scaling;
    o.cfg.glimpse.single_level = o.single_level;
    o.cfg.loss.cls_loss = o.focal ? rego::ClsLoss::Focal : rego::ClsLoss::CrossEntropy;
    if (!o.lr_drops.empty()) {
        o.cfg.lr_drop_epochs.clear();
        std::stringstream ss(o.lr_drops);
        std::string item;
        while (std::getline(ss, item, ',')) o.cfg.lr_drop_epochs.push_back(std::stoul(item));
    }
    o.cfg.validate();
    return o.cfg;
}

json report_json(const rego::EvalReport& r) {
    return {{"AP", r.ap},     {"AP50", r.ap50}, {"AP75", r.ap75},
            {"AP_S", r.ap_s}, {"AP_M", r.ap_m}, {"AP_L", r.ap_l}};
}

void write_report_csv(std::ostream& os, const std::string& label,
                      const rego::EvalReport& r) {
    os << label << ',' << r.ap << ',' << r.ap50 << ',' << r.ap75 << ',' << r.ap_s << ','
       << r.ap_m << ',' << r.ap_l << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recurrent glimpse refinement detector on a synthetic shapes benchmark"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset split");
    std::string gen_out, gen_split = "train";
    std::size_t gen_count = 500, gen_h = 64, gen_w = 64;
    std::uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "dataset directory")->required();
    gen->add_option("--split", gen_split, "split name");
    gen->add_option("--count", gen_count, "number of scenes");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--height", gen_h, "image height");
    gen->add_option("--width", gen_w, "image width");

    // train
    auto* tr = app.add_subcommand("train", "train a model and write a run directory");
    TrainCliOpts tr_opts;
    add_train_options(tr, tr_opts);
    tr->add_option("--run-dir", tr_opts.cfg.run_dir, "output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string ev_ckpt, ev_data, ev_split = "val", ev_out;
    bool ev_no_rego = false;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--split", ev_split, "split name");
    ev->add_flag("--no-rego", ev_no_rego, "evaluate stage-0 outputs only");
    ev->add_option("--out", ev_out, "write the per-stage report JSON here");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train one model per setting on a study axis");
    TrainCliOpts ab_opts;
    std::string ab_axis, ab_out_dir;
    add_train_options(ab, ab_opts);
    ab->add_option("--axis", ab_axis, "stages | scale")->required();
    ab->add_option("--out-dir", ab_out_dir, "directory for runs and the comparison CSV")
        ->required();

    // flops
    auto* fl = app.add_subcommand("flops", "analytic multiply-add accounting");
    rego::FlopConfig fl_cfg;
    bool fl_paper = false, fl_multiscale = false;
    std::string fl_out;
    fl->add_flag("--paper-scale", fl_paper, "preset: C=256, 300 queries, 3 stages, 25x42 map");
    fl->add_option("--model-width", fl_cfg.width, "feature width C");
    fl->add_option("--heads", fl_cfg.heads, "attention heads");
    fl->add_option("--queries", fl_cfg.queries, "object queries");
    fl->add_option("--classes", fl_cfg.classes, "foreground classes");
    fl->add_option("--enc-layers", fl_cfg.enc_layers, "encoder layers");
    fl->add_option("--dec-layers", fl_cfg.dec_layers, "decoder layers");
    fl->add_option("--ffn-width", fl_cfg.ffn_width, "feed-forward width");
    fl->add_option("--stages", fl_cfg.n_stages, "glimpse stages");
    fl->add_option("--glimpse-decoder-layers", fl_cfg.glimpse_decoder_layers,
                   "decoder layers per stage");
    fl->add_option("--roi-window", fl_cfg.roi_window, "RoI window");
    fl->add_option("--feature-h", fl_cfg.feature_h, "stride-32 map height");
    fl->add_option("--feature-w", fl_cfg.feature_w, "stride-32 map width");
    fl->add_option("--batch", fl_cfg.batch, "batch size");
    fl->add_flag("--multiscale-projections", fl_multiscale,
                 "count 1x1 pyramid projections (single-scale base)");
    fl->add_option("--out", fl_out, "write the JSON breakdown here");

    // curves
    auto* cu = app.add_subcommand("curves", "emit epoch-vs-AP curves from run directories");
    std::vector<std::string> cu_runs;
    std::string cu_out = "curves.csv";
    cu->add_option("--runs", cu_runs, "run directories")->required()->delimiter(',');
    cu->add_option("--out", cu_out, "output CSV");

    // relations
    auto* re = app.add_subcommand("relations",
                                  "dump the most related previous-stage detections per query");
    std::string re_ckpt, re_data, re_split = "val", re_out = "relations.json";
    std::size_t re_image = 0, re_topk = 3;
    re->add_option("--checkpoint", re_ckpt, "checkpoint directory")->required();
    re->add_option("--data", re_data, "dataset directory")->required();
    re->add_option("--split", re_split, "split name");
    re->add_option("--image", re_image, "image index within the split");
    re->add_option("--top-k", re_topk, "relations per query");
    re->add_option("--out", re_out, "output JSON");

    // histogram
    auto* hi = app.add_subcommand("histogram", "per-stage correct-detection IoU histogram");
    std::string hi_ckpt, hi_data, hi_split = "val", hi_out = "histogram.json";
    std::vector<double> hi_bins = {0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    hi->add_option("--checkpoint", hi_ckpt, "checkpoint directory")->required();
    hi->add_option("--data", hi_data, "dataset directory")->required();
    hi->add_option("--split", hi_split, "split name");
    hi->add_option("--bins", hi_bins, "ascending IoU bin edges starting at >= 0.5")
        ->delimiter(',');
    hi->add_option("--out", hi_out, "output JSON");

    try {
        std::vector<std::string> args = expand_config(argc, argv);
        std::vector<char*> raw;
        raw.reserve(args.size());
        for (std::string& a : args) raw.push_back(a.data());
        app.parse(int(raw.size()), raw.data());

        if (*gen) {
            auto scenes = rego::generate_dataset(gen_count, gen_seed, gen_h, gen_w);
            rego::save_dataset(gen_out, gen_split, scenes);
            std::printf("wrote %zu scenes to %s (split %s)\n", scenes.size(), gen_out.c_str(),
                        gen_split.c_str());
        } else if (*tr) {
            rego::TrainConfig cfg = resolve(tr_opts);
            rego::RunRecord record = rego::train(cfg);
            const auto& last = record.epochs.back();
            std::printf("done: %zu epochs in %.1fs\n", record.epochs.size(),
                        record.wall_seconds);
            for (std::size_t s = 0; s < last.stage_reports.size(); ++s) {
                const auto& r = last.stage_reports[s];
                std::printf("stage %zu: AP %.4f AP50 %.4f AP75 %.4f\n", s, r.ap, r.ap50, r.ap75);
            }
        } else if (*ev) {
            rego::RegoModel model = rego::load_checkpoint(ev_ckpt);
            auto scenes = rego::load_dataset(ev_data, ev_split);
            auto reports = rego::evaluate_model(model, scenes, !ev_no_rego);
            json out = json::array();
            for (std::size_t s = 0; s < reports.size(); ++s) {
                out.push_back({{"stage", s}, {"report", report_json(reports[s])}});
                const auto& r = reports[s];
                std::printf("stage %zu: AP %.4f AP50 %.4f AP75 %.4f AP_S %.4f AP_M %.4f AP_L %.4f\n",
                            s, r.ap, r.ap50, r.ap75, r.ap_s, r.ap_m, r.ap_l);
            }
            if (!ev_out.empty()) {
                std::ofstream os(ev_out);
                os << out.dump(2) << "\n";
                fs::path csv = fs::path(ev_out).replace_extension(".csv");
                std::ofstream cs(csv);
                cs << "stage,AP,AP50,AP75,AP_S,AP_M,AP_L\n";
                for (std::size_t s = 0; s < reports.size(); ++s)
                    write_report_csv(cs, std::to_string(s), reports[s]);
            }
        } else if (*ab) {
            fs::create_directories(ab_out_dir);
            std::ofstream cs(fs::path(ab_out_dir) / "ablation.csv");
            cs << "setting,AP,AP50,AP75,AP_S,AP_M,AP_L\n";
            auto run_one = [&](const std::string& label) {
                rego::TrainConfig cfg = resolve(ab_opts);
                cfg.run_dir = (fs::path(ab_out_dir) / label).string();
                rego::RunRecord record = rego::train(cfg);
                const auto& r = record.epochs.back().stage_reports.back();
                write_report_csv(cs, label, r);
                std::printf("%s: AP %.4f AP50 %.4f\n", label.c_str(), r.ap, r.ap50);
            };
            if (ab_axis == "stages") {
                for (std::size_t s : {0, 1, 2, 3, 4}) {
                    ab_opts.stages = s;
                    run_one("stages_" + std::to_string(s));
                }
            } else if (ab_axis == "scale") {
                for (double m : {1.0, 1.5, 2.0}) {
                    ab_opts.scale = m;
                    char label[32];
                    std::snprintf(label, sizeof(label), "scale_%.1fx", m);
                    run_one(label);
                }
            } else {
                throw std::invalid_argument("unknown ablation axis '" + ab_axis +
                                            "' (expected stages or scale)");
            }
        } else if (*fl) {
            if (fl_paper) {
                rego::FlopConfig preset = rego::FlopConfig::paper_scale();
                preset.batch = fl_cfg.batch;
                fl_cfg = preset;
            }
            fl_cfg.count_multiscale_projections = fl_multiscale;
            if (fl_multiscale && fl_cfg.level_extents.empty()) {
                for (std::size_t stride_idx = 0; stride_idx < 4; ++stride_idx) {
                    const std::size_t factor = std::size_t(8) >> stride_idx;  // 8, 4, 2, 1
                    fl_cfg.level_extents.push_back(
                        {fl_cfg.feature_h * factor, fl_cfg.feature_w * factor});
                }
            }
            rego::FlopCounts f = rego::count_flops(fl_cfg);
            auto gf = [](rego::flops_t v) { return double(v) / 1e9; };
            std::printf("encoder          %10.3f GFLOPs\n", gf(f.encoder));
            std::printf("decoder          %10.3f GFLOPs\n", gf(f.decoder));
            std::printf("heads            %10.3f GFLOPs\n", gf(f.heads));
            std::printf("glimpse roialign %10.3f GFLOPs\n", gf(f.rego_roi_align));
            std::printf("glimpse fuser    %10.3f GFLOPs\n", gf(f.rego_fuser));
            std::printf("glimpse decoder  %10.3f GFLOPs\n", gf(f.rego_decoder));
            std::printf("glimpse merge    %10.3f GFLOPs\n", gf(f.rego_merge));
            std::printf("glimpse heads    %10.3f GFLOPs\n", gf(f.rego_heads));
            std::printf("pyramid 1x1      %10.3f GFLOPs\n", gf(f.rego_multiscale));
            std::printf("base total       %10.3f GFLOPs\n", gf(f.base_total()));
            std::printf("glimpse overhead %10.3f GFLOPs\n", gf(f.rego_total()));
            std::printf("total            %10.3f GFLOPs\n", gf(f.total()));
            if (!fl_out.empty()) {
                json out = {{"encoder", f.encoder},
                            {"decoder", f.decoder},
                            {"heads", f.heads},
                            {"rego_roi_align", f.rego_roi_align},
                            {"rego_fuser", f.rego_fuser},
                            {"rego_decoder", f.rego_decoder},
                            {"rego_merge", f.rego_merge},
                            {"rego_heads", f.rego_heads},
                            {"rego_multiscale", f.rego_multiscale},
                            {"base_total", f.base_total()},
                            {"rego_total", f.rego_total()},
                            {"total", f.total()}};
                std::ofstream os(fl_out);
                os << out.dump(2) << "\n";
            }
        } else if (*cu) {
            std::vector<std::pair<std::string, rego::RunRecord>> runs;
            for (const std::string& dir : cu_runs) {
                runs.emplace_back(fs::path(dir).filename().string(),
                                  rego::load_run_record((fs::path(dir) / "record.json").string()));
            }
            rego::emit_curves(runs, cu_out);
            std::printf("wrote %s (%zu runs)\n", cu_out.c_str(), runs.size());
        } else if (*re) {
            rego::RegoModel model = rego::load_checkpoint(re_ckpt);
            if (model.glimpse.n_stages == 0)
                throw std::invalid_argument("relations need a model with at least one stage");
            auto scenes = rego::load_dataset(re_data, re_split);
            if (re_image >= scenes.size())
                throw std::invalid_argument("image index out of range");
            rego::autograd::NoGradGuard guard;
            rego::RegoOutput out = rego::run_rego(model, scenes[re_image].image);
            auto relations = rego::extract_relations(out.stages.back(), re_topk);
            // flat array of (query index, source index, weight) triples
            json dump = json::array();
            for (std::size_t q = 0; q < relations.size(); ++q) {
                for (const rego::Relation& r : relations[q])
                    dump.push_back({q, r.source, r.weight});
            }
            std::ofstream os(re_out);
            os << dump.dump(2) << "\n";
            std::printf("wrote %s (%zu queries)\n", re_out.c_str(), relations.size());
        } else if (*hi) {
            rego::RegoModel model = rego::load_checkpoint(hi_ckpt);
            auto scenes = rego::load_dataset(hi_data, hi_split);
            auto preds = rego::stage_predictions(model, scenes, true);
            std::vector<rego::GroundTruth> gts;
            for (const auto& s : scenes) gts.push_back(s.gt);
            auto hist = rego::iou_histogram(preds, gts, hi_bins);
            json dump;
            dump["bin_edges"] = hi_bins;
            dump["stages"] = json::array();
            for (std::size_t s = 0; s < hist.size(); ++s) {
                dump["stages"].push_back({{"stage", s}, {"counts", hist[s]}});
                std::printf("stage %zu:", s);
                for (std::size_t c : hist[s]) std::printf(" %zu", c);
                std::printf("\n");
            }
            std::ofstream os(hi_out);
            os << dump.dump(2) << "\n";
            std::printf("wrote %s\n", hi_out.c_str());
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
