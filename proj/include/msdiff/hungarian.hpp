#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace msd {

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
    double total_cost = 0.0;
};

/// Minimum-cost one-to-one assignment of min(n, m) pairs on a rectangular
/// n x m cost matrix (rows of equal length). Empty input gives an empty assignment.
Assignment hungarian_match(const std::vector<std::vector<double>>& cost);

}  // namespace msd
