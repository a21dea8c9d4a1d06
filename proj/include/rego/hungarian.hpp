#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace rego {

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), one per col
    double total_cost = 0.0;
};

// Minimum-cost one-to-one assignment covering every column of a row-major
// rows x cols matrix, rows >= cols, by the O(n^3) Kuhn-Munkres algorithm
// with potentials. Non-finite entries and rows < cols are errors.
Assignment hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols);

}  // namespace rego
