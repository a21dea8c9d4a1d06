#include "rego/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace rego {

void save_checkpoint(const std::string& dir, const RegoModel& model) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "tensors");

    const ModelConfig& m = model.detr.cfg;
    const GlimpseConfig& g = model.glimpse;
    nlohmann::json manifest = {
        {"model",
         {{"width", m.width},
          {"heads", m.heads},
          {"enc_layers", m.enc_layers},
          {"dec_layers", m.dec_layers},
          {"queries", m.queries},
          {"classes", m.classes},
          {"ffn_width", m.ffn_width}}},
        {"glimpse",
         {{"n_stages", g.n_stages},
          {"alpha", g.alpha},
          {"roi_window", g.roi_window},
          {"decoder_layers", g.decoder_layers},
          {"scale_multiplier", g.scale_multiplier},
          {"uniform_alpha", g.uniform_alpha},
          {"area_scaling", g.area_scaling},
          {"single_level", g.single_level}}}};
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";

    ParamList params;
    model.collect(params);
    for (const auto& [name, tensor] : params) {
        save_tensor((fs::path(dir) / "tensors" / (name + ".bin")).string(), tensor);
    }
}

RegoModel load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw std::runtime_error("no manifest.json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(is);

    ModelConfig m;
    const auto& jm = manifest.at("model");
    m.width = jm.at("width");
    m.heads = jm.at("heads");
    m.enc_layers = jm.at("enc_layers");
    m.dec_layers = jm.at("dec_layers");
    m.queries = jm.at("queries");
    m.classes = jm.at("classes");
    m.ffn_width = jm.at("ffn_width");

    GlimpseConfig g;
    const auto& jg = manifest.at("glimpse");
    g.n_stages = jg.at("n_stages");
    g.alpha = jg.at("alpha").get<std::vector<double>>();
    g.roi_window = jg.at("roi_window");
    g.decoder_layers = jg.at("decoder_layers");
    g.scale_multiplier = jg.at("scale_multiplier");
    g.uniform_alpha = jg.at("uniform_alpha");
    g.area_scaling = jg.at("area_scaling");
    g.single_level = jg.at("single_level");

    Rng rng(0);
    RegoModel model = RegoModel::init(m, g, rng);
    ParamList params;
    model.collect(params);
    for (auto& [name, tensor] : params) {
        Tensor loaded = load_tensor((fs::path(dir) / "tensors" / (name + ".bin")).string());
        if (loaded.shape() != tensor.shape()) {
            throw std::runtime_error("checkpoint mismatch for " + name + ": stored " +
                                     shape_str(loaded.shape()) + ", expected " +
                                     shape_str(tensor.shape()));
        }
        tensor.values() = loaded.values();
    }
    return model;
}

}  // namespace rego
