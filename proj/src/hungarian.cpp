#include "rego/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rego {

Assignment hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
    if (cost.size() != rows * cols) throw std::invalid_argument("hungarian: cost size mismatch");
    if (rows < cols) {
        throw std::invalid_argument("hungarian: " + std::to_string(rows) + " rows cannot cover " +
                                    std::to_string(cols) + " columns");
    }
    for (double v : cost) {
        if (!std::isfinite(v)) throw std::invalid_argument("hungarian: non-finite cost entry");
    }
    Assignment result;
    if (cols == 0) return result;

    // Potentials formulation, 1-indexed. The algorithm assigns each of the
    // `cols` scarce items to a distinct row; a(j, i) = cost(row i, col j).
    const double INF = std::numeric_limits<double>::infinity();
    const std::size_t n = cols, m = rows;
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    auto a = [&](std::size_t j, std::size_t i) { return cost[(i - 1) * cols + (j - 1)]; };

    for (std::size_t j = 1; j <= n; ++j) {
        p[0] = j;
        std::size_t i0 = 0;
        std::vector<double> minv(m + 1, INF);
        std::vector<bool> used(m + 1, false);
        do {
            used[i0] = true;
            const std::size_t j0 = p[i0];
            double delta = INF;
            std::size_t i1 = 0;
            for (std::size_t i = 1; i <= m; ++i) {
                if (used[i]) continue;
                const double cur = a(j0, i) - u[j0] - v[i];
                if (cur < minv[i]) {
                    minv[i] = cur;
                    way[i] = i0;
                }
                if (minv[i] < delta) {
                    delta = minv[i];
                    i1 = i;
                }
            }
            for (std::size_t i = 0; i <= m; ++i) {
                if (used[i]) {
                    u[p[i]] += delta;
                    v[i] -= delta;
                } else {
                    minv[i] -= delta;
                }
            }
            i0 = i1;
        } while (p[i0] != 0);
        do {
            const std::size_t i1 = way[i0];
            p[i0] = p[i1];
            i0 = i1;
        } while (i0 != 0);
    }

    result.pairs.reserve(cols);
    for (std::size_t i = 1; i <= m; ++i) {
        if (p[i] != 0) result.pairs.emplace_back(i - 1, p[i] - 1);
    }
    std::sort(result.pairs.begin(), result.pairs.end(),
              [](const auto& x, const auto& y) { return x.second < y.second; });
    for (const auto& [row, col] : result.pairs) result.total_cost += cost[row * cols + col];
    return result;
}

}  // namespace rego
