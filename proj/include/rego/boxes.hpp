#pragma once

#include <cstddef>
#include <vector>

#include "rego/tensor.hpp"

namespace rego {

// Axis-aligned box in normalized center form, coordinates in [0, 1].
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    double x0() const { return cx - 0.5 * w; }
    double y0() const { return cy - 0.5 * h; }
    double x1() const { return cx + 0.5 * w; }
    double y1() const { return cy + 0.5 * h; }
    double area() const { return w * h; }
};

using BoxSet = std::vector<Box>;

// Intersection over union in [0, 1]; degenerate boxes (w or h <= 0) throw.
double iou(const Box& a, const Box& b);

// Generalized IoU in [-1, 1]: iou minus the empty fraction of the smallest
// enclosing box. Symmetric, never exceeds iou.
double giou(const Box& a, const Box& b);

// Rows of a [N x 4] tensor as boxes and back.
BoxSet boxes_from_tensor(const Tensor& t);
Tensor tensor_from_boxes(const BoxSet& boxes);

}  // namespace rego
