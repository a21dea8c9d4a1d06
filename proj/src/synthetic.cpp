#include "rego/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "rego/boxes.hpp"
#include "rego/rng.hpp"

namespace rego {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 step over the combined value
    std::uint64_t z = seed + (index + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

struct Shape {
    std::size_t label;        // 0 triangle, 1 rectangle, 2 disc
    double cx, cy, w, h;      // pixel space, tight bounding box
    double color[3];
};

// Signed distance (negative inside) from pixel center to the shape edge.
double shape_distance(const Shape& s, double px, double py) {
    switch (s.label) {
        case 0: {  // isoceles triangle: apex up, base at the bottom of the box
            const double ax = s.cx, ay = s.cy - 0.5 * s.h;
            const double bx = s.cx - 0.5 * s.w, by = s.cy + 0.5 * s.h;
            const double cx = s.cx + 0.5 * s.w, cy = s.cy + 0.5 * s.h;
            auto edge = [px, py](double x0, double y0, double x1, double y1) {
                // signed distance to the line, positive on the outward side
                const double nx = y1 - y0, ny = -(x1 - x0);
                const double len = std::sqrt(nx * nx + ny * ny);
                return ((px - x0) * nx + (py - y0) * ny) / len;
            };
            // counter-clockwise vertex order keeps outward normals consistent
            const double d1 = edge(ax, ay, bx, by);
            const double d2 = edge(bx, by, cx, cy);
            const double d3 = edge(cx, cy, ax, ay);
            return std::max({d1, d2, d3});
        }
        case 1: {  // rectangle
            const double dx = std::fabs(px - s.cx) - 0.5 * s.w;
            const double dy = std::fabs(py - s.cy) - 0.5 * s.h;
            return std::max(dx, dy);
        }
        default: {  // disc
            const double r = 0.5 * s.w;
            return std::hypot(px - s.cx, py - s.cy) - r;
        }
    }
}

}  // namespace

std::vector<SyntheticScene> generate_dataset(std::size_t n, std::uint64_t seed, std::size_t h,
                                             std::size_t w) {
    if (h % 32 != 0 || w % 32 != 0) {
        throw std::invalid_argument("generate_dataset: extents must be divisible by 32");
    }
    std::vector<SyntheticScene> scenes;
    scenes.reserve(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        Rng rng(mix_seed(seed, idx));
        SyntheticScene scene;
        scene.id = idx;
        scene.image = Tensor({3, h, w});

        double bg[3];
        for (double& c : bg) c = rng.uniform(0.05, 0.35);
        double* img = scene.image.data();
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < h * w; ++i) {
                img[c * h * w + i] =
                    std::clamp(bg[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
            }
        }

        const std::size_t n_obj = 1 + rng.uniform_int(5);
        std::vector<Shape> shapes;
        for (std::size_t o = 0; o < n_obj; ++o) {
            Shape s;
            s.label = rng.uniform_int(kNumShapeClasses);
            if (s.label == 2) {
                const double r = rng.uniform(6.0, 14.0);
                s.w = s.h = 2.0 * r;
            } else {
                s.w = rng.uniform(12.0, 28.0);
                s.h = rng.uniform(12.0, 28.0);
            }
            // each class leans on one color channel, with overlap and noise
            for (std::size_t c = 0; c < 3; ++c) {
                s.color[c] = (c == s.label) ? rng.uniform(0.65, 1.0) : rng.uniform(0.1, 0.45);
            }

            // Keep overlap mild; the first shape always lands.
            bool placed = false;
            for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
                s.cx = rng.uniform(0.5 * s.w + 1.0, double(w) - 0.5 * s.w - 1.0);
                s.cy = rng.uniform(0.5 * s.h + 1.0, double(h) - 0.5 * s.h - 1.0);
                placed = true;
                Box cand{s.cx / double(w), s.cy / double(h), s.w / double(w), s.h / double(h)};
                for (const Shape& other : shapes) {
                    Box ob{other.cx / double(w), other.cy / double(h), other.w / double(w),
                           other.h / double(h)};
                    if (iou(cand, ob) > 0.25) {
                        placed = false;
                        break;
                    }
                }
            }
            if (placed || shapes.empty()) shapes.push_back(s);
        }

        for (const Shape& s : shapes) {
            const long y_lo = std::max(0L, long(s.cy - 0.5 * s.h) - 2);
            const long y_hi = std::min(long(h) - 1, long(s.cy + 0.5 * s.h) + 2);
            const long x_lo = std::max(0L, long(s.cx - 0.5 * s.w) - 2);
            const long x_hi = std::min(long(w) - 1, long(s.cx + 0.5 * s.w) + 2);
            for (long y = y_lo; y <= y_hi; ++y) {
                for (long x = x_lo; x <= x_hi; ++x) {
                    const double d = shape_distance(s, double(x) + 0.5, double(y) + 0.5);
                    const double cover = std::clamp(0.5 - d, 0.0, 1.0);
                    if (cover <= 0.0) continue;
                    for (std::size_t c = 0; c < 3; ++c) {
                        double& px = img[(c * h + std::size_t(y)) * w + std::size_t(x)];
                        px = (1.0 - cover) * px + cover * s.color[c];
                    }
                }
            }
            scene.gt.boxes.push_back(Box{s.cx / double(w), s.cy / double(h), s.w / double(w),
                                         s.h / double(h)});
            scene.gt.labels.push_back(s.label);
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

void save_dataset(const std::string& dir, const std::string& split,
                  const std::vector<SyntheticScene>& scenes) {
    namespace fs = std::filesystem;
    const fs::path images = fs::path(dir) / (split + "_images");
    fs::create_directories(images);
    nlohmann::json ann = nlohmann::json::object();
    for (const SyntheticScene& s : scenes) {
        save_tensor((images / ("img_" + std::to_string(s.id) + ".bin")).string(), s.image);
        nlohmann::json objs = nlohmann::json::array();
        for (std::size_t i = 0; i < s.gt.boxes.size(); ++i) {
            const Box& b = s.gt.boxes[i];
            objs.push_back({{"bbox", {b.cx, b.cy, b.w, b.h}}, {"label", s.gt.labels[i]}});
        }
        ann[std::to_string(s.id)] = objs;
    }
    std::ofstream os(fs::path(dir) / (split + "_annotations.json"));
    if (!os) throw std::runtime_error("cannot write annotations for split " + split);
    os << ann.dump(2) << "\n";
}

std::vector<SyntheticScene> load_dataset(const std::string& dir, const std::string& split) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / (split + "_annotations.json"));
    if (!is) throw std::runtime_error("cannot open annotations for split " + split + " in " + dir);
    nlohmann::json ann = nlohmann::json::parse(is);

    std::vector<std::uint64_t> ids;
    for (auto it = ann.begin(); it != ann.end(); ++it) ids.push_back(std::stoull(it.key()));
    std::sort(ids.begin(), ids.end());

    std::vector<SyntheticScene> scenes;
    scenes.reserve(ids.size());
    for (std::uint64_t id : ids) {
        SyntheticScene s;
        s.id = id;
        s.image = load_tensor(
            (fs::path(dir) / (split + "_images") / ("img_" + std::to_string(id) + ".bin"))
                .string());
        for (const auto& obj : ann[std::to_string(id)]) {
            const auto& bb = obj["bbox"];
            s.gt.boxes.push_back(Box{bb[0], bb[1], bb[2], bb[3]});
            s.gt.labels.push_back(obj["label"].get<std::size_t>());
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace rego
