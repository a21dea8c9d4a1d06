#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "rego/detr.hpp"
#include "test_common.hpp"

using namespace rego;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 2;
    cfg.queries = 6;
    cfg.classes = 3;
    cfg.ffn_width = 32;
    return cfg;
}

}  // namespace

TEST_CASE("backbone level extents follow the stride ladder") {
    Rng rng(41);
    BackboneParams p = BackboneParams::init(16, rng);
    Tensor image = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
    BackboneFeatures f = backbone_forward(p, image);

    REQUIRE(f.levels.size() == 4);
    const std::size_t extents[4] = {16, 8, 4, 2};
    const std::size_t widths[4] = {32, 64, 128, 256};
    for (int i = 0; i < 4; ++i) {
        CHECK(f.levels[i].shape() ==
              std::vector<std::size_t>({1, widths[i], extents[i], extents[i]}));
        CHECK(f.projected[i].shape() ==
              std::vector<std::size_t>({1, 16, extents[i], extents[i]}));
    }

    // doubled input extents double every level extent
    Tensor big = random_tensor({3, 128, 128}, rng, 0.0, 1.0);
    BackboneFeatures f2 = backbone_forward(p, big);
    for (int i = 0; i < 4; ++i) {
        CHECK(f2.levels[i].shape()[2] == 2 * extents[i]);
        CHECK(f2.levels[i].shape()[3] == 2 * extents[i]);
    }
}

TEST_CASE("backbone stays finite on a zero image and rejects bad extents") {
    Rng rng(42);
    BackboneParams p = BackboneParams::init(16, rng);
    Tensor zero({3, 64, 64});
    BackboneFeatures f = backbone_forward(p, zero);
    for (const Tensor& lvl : f.projected)
        for (double v : lvl.values()) CHECK(std::isfinite(v));

    Tensor odd({3, 60, 64});
    CHECK_THROWS_AS(backbone_forward(p, odd), std::invalid_argument);
    Tensor wrong_channels({1, 64, 64});
    CHECK_THROWS_AS(backbone_forward(p, wrong_channels), std::invalid_argument);
}

TEST_CASE("detr forward shape contracts and sigmoid box range") {
    Rng rng(43);
    ModelConfig cfg = tiny_config();
    DetrModel model = DetrModel::init(cfg, rng);
    Tensor image = random_tensor({3, 64, 64}, rng, 0.0, 1.0);

    BackboneFeatures f = backbone_forward(model.backbone, image);
    DetrOutput out = detr_forward(model, f);

    CHECK(out.h_dec.shape() == std::vector<std::size_t>({6, 16}));
    CHECK(out.detection.class_logits.shape() == std::vector<std::size_t>({6, 4}));
    CHECK(out.detection.boxes.shape() == std::vector<std::size_t>({6, 4}));
    CHECK(out.aux.size() == cfg.dec_layers - 1);
    for (double v : out.detection.boxes.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("two identical forward passes are bitwise identical") {
    Rng rng(44);
    ModelConfig cfg = tiny_config();
    DetrModel model = DetrModel::init(cfg, rng);
    Tensor image = random_tensor({3, 64, 64}, rng, 0.0, 1.0);

    autograd::NoGradGuard guard;
    BackboneFeatures f1 = backbone_forward(model.backbone, image);
    DetrOutput a = detr_forward(model, f1);
    BackboneFeatures f2 = backbone_forward(model.backbone, image);
    DetrOutput b = detr_forward(model, f2);

    REQUIRE(a.detection.boxes.size() == b.detection.boxes.size());
    for (std::size_t i = 0; i < a.detection.boxes.size(); ++i)
        CHECK(a.detection.boxes.data()[i] == b.detection.boxes.data()[i]);
    for (std::size_t i = 0; i < a.detection.class_logits.size(); ++i)
        CHECK(a.detection.class_logits.data()[i] == b.detection.class_logits.data()[i]);
    for (std::size_t i = 0; i < a.h_dec.size(); ++i)
        CHECK(a.h_dec.data()[i] == b.h_dec.data()[i]);
}

TEST_CASE("parameter registry has unique names and checkpoint-compatible shapes") {
    Rng rng(45);
    DetrModel model = DetrModel::init(tiny_config(), rng);
    ParamList params;
    model.collect(params);
    CHECK(params.size() > 20);
    std::set<std::string> names;
    for (const auto& [name, t] : params) {
        CHECK(names.insert(name).second);
        CHECK(t.requires_grad());
        CHECK(t.size() > 0);
    }
}
