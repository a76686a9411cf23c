#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "msdiff/tensor.hpp"

namespace msd {

// Additive attention mask whose entries are either 0 or a -inf sentinel.
// The sentinel is never fed through exp(); blocked positions get weight 0.0.
// rows == 1 broadcasts one pattern over every logit row.
struct AdditiveMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> blocked;

    static AdditiveMask open(std::size_t rows, std::size_t cols);
    bool is_blocked(std::size_t r, std::size_t c) const {
        return blocked[(rows == 1 ? 0 : r) * cols + c] != 0;
    }
};

struct SoftmaxStats {
    // Indices of rows whose every entry was masked; such rows come back as zeros.
    std::vector<std::size_t> degenerate_rows;
    bool degenerate() const { return !degenerate_rows.empty(); }
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor silu(const Tensor& a);

// a[r, :] + row[0, :] for every row r.
Tensor add_row(const Tensor& a, const Tensor& row);
// a[r, :] * weights[r]; weights are constants.
Tensor mul_rows(const Tensor& a, const std::vector<double>& weights);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Softmax along the last axis with an optional 0/-inf sentinel mask.
Tensor masked_softmax(const Tensor& logits, const AdditiveMask* mask = nullptr,
                      SoftmaxStats* stats = nullptr);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Scalar sum over a[i] * weights[i] with constant weights.
Tensor weighted_sum(const Tensor& a, const std::vector<double>& weights);
Tensor mse(const Tensor& prediction, const Tensor& target);
// Arithmetic mean of equally shaped tensors.
Tensor average(const std::vector<Tensor>& parts);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids);

// Spatial helpers on [H*W x C] feature maps (row index = y * W + x).
Tensor im2col3x3(const Tensor& x, std::size_t h, std::size_t w);
Tensor avgpool2(const Tensor& x, std::size_t h, std::size_t w);
Tensor upsample2(const Tensor& x, std::size_t h, std::size_t w);

}  // namespace msd
