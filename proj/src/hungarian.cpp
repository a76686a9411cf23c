#include "msdiff/hungarian.hpp"

#include <cmath>
#include <algorithm>
#include <limits>

#include "msdiff/error.hpp"

namespace msd {

// Shortest augmenting path with potentials (Kuhn-Munkres, O(n^2 m)), on the
// orientation with rows <= cols.
Assignment hungarian_match(const std::vector<std::vector<double>>& cost) {
    Assignment out;
    if (cost.empty() || cost[0].empty()) return out;
    const std::size_t rows_in = cost.size(), cols_in = cost[0].size();
    for (const auto& row : cost) {
        if (row.size() != cols_in) throw ShapeError("hungarian_match: ragged cost matrix");
        for (double v : row)
            if (!std::isfinite(v)) throw NumericError("hungarian_match: non-finite cost");
    }
    const bool flip = rows_in > cols_in;
    const std::size_t n = flip ? cols_in : rows_in;
    const std::size_t m = flip ? rows_in : cols_in;
    auto c = [&](std::size_t i, std::size_t j) { return flip ? cost[j][i] : cost[i][j]; };

    const double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; column 0 is the virtual start.
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::size_t> row_to_col(n, 0);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = row_to_col[i];
        out.pairs.push_back(flip ? std::make_pair(j, i) : std::make_pair(i, j));
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    // Sum in row order so equal assignments give bitwise equal totals.
    for (const auto& [r, col] : out.pairs) out.total_cost += cost[r][col];
    return out;
}

}  // namespace msd
