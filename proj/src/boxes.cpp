#include "rego/boxes.hpp"

#include <algorithm>
#include <stdexcept>

namespace rego {

namespace {

void check_box(const Box& b, const char* who) {
    if (!(b.w > 0) || !(b.h > 0)) {
        throw std::invalid_argument(std::string(who) + ": degenerate box (w=" +
                                    std::to_string(b.w) + ", h=" + std::to_string(b.h) + ")");
    }
}

double intersection_area(const Box& a, const Box& b) {
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (iw <= 0 || ih <= 0) return 0.0;
    return iw * ih;
}

}  // namespace

double iou(const Box& a, const Box& b) {
    check_box(a, "iou");
    check_box(b, "iou");
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    // corner arithmetic can overshoot by an ulp for identical boxes
    return std::clamp(inter / uni, 0.0, 1.0);
}

double giou(const Box& a, const Box& b) {
    check_box(a, "giou");
    check_box(b, "giou");
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    const double ew = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
    const double eh = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
    const double enclose = ew * eh;
    return std::clamp(inter / uni - (enclose - uni) / enclose, -1.0, 1.0);
}

BoxSet boxes_from_tensor(const Tensor& t) {
    if (t.rank() != 2 || t.shape()[1] != 4) {
        throw std::invalid_argument("boxes_from_tensor: need [N x 4], got " +
                                    shape_str(t.shape()));
    }
    BoxSet out(t.shape()[0]);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double* r = t.data() + i * 4;
        out[i] = Box{r[0], r[1], r[2], r[3]};
    }
    return out;
}

Tensor tensor_from_boxes(const BoxSet& boxes) {
    Tensor t({boxes.size(), 4});
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        double* r = t.data() + i * 4;
        r[0] = boxes[i].cx;
        r[1] = boxes[i].cy;
        r[2] = boxes[i].w;
        r[3] = boxes[i].h;
    }
    return t;
}

}  // namespace rego
