#include "msdiff/ops.hpp"

#include <algorithm>
#include <cmath>

#include "msdiff/error.hpp"

namespace msd {

namespace {

TensorNode& parent(TensorNode& self, std::size_t i) { return *self.parents[i]; }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_matrix(const char* op, const Tensor& a) {
    if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
    auto in = a.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_result(op, a.shape(), std::move(out), {a}, [df](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * df(p.data[i], self.data[i]);
    });
}

}  // namespace

AdditiveMask AdditiveMask::open(std::size_t rows, std::size_t cols) {
    return AdditiveMask{rows, cols, std::vector<std::uint8_t>(rows * cols, 0)};
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    auto A = a.data();
    auto B = b.data();
    std::vector<double> C(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = &C[i * n];
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            const double* brow = &B[kk * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return make_result("matmul", {m, n}, std::move(C), {a, b}, [m, k, n](TensorNode& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        const auto& G = self.grad;
        if (pa.requires_grad) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double* brow = &pb.data[kk * n];
                    const double* grow = &G[i * n];
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    pa.grad[i * k + kk] += s;
                }
            }
        }
        if (pb.requires_grad) {
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = &G[i * n];
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double aik = pa.data[i * k + kk];
                    double* bg = &pb.grad[kk * n];
                    for (std::size_t j = 0; j < n; ++j) bg[j] += aik * grow[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_matrix("transpose", a);
    const std::size_t m = a.rows(), n = a.cols();
    auto A = a.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
    return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j * m + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    auto A = a.data();
    auto B = b.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
    return make_result("add", a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            auto& par = parent(self, p);
            if (!par.requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) par.grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    auto A = a.data();
    auto B = b.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
    return make_result("sub", a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i];
            if (pb.requires_grad) pb.grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    auto A = a.data();
    auto B = b.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
    return make_result("mul", a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.data[i];
            if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape("div", a, b);
    auto A = a.data();
    auto B = b.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] / B[i];
    return make_result("div", a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i] / pb.data[i];
            if (pb.requires_grad) pb.grad[i] -= self.grad[i] * pa.data[i] / (pb.data[i] * pb.data[i]);
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary("scale", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor silu(const Tensor& a) {
    return unary(
        "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    const std::size_t m = a.rows(), n = a.cols();
    if (row.size() != n) {
        throw ShapeError("add_row: row of shape " + shape_str(row.shape()) + " does not fit " +
                         shape_str(a.shape()));
    }
    auto A = a.data();
    auto R = row.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] + R[j];
    return make_result("add_row", a.shape(), std::move(out), {a, row}, [m, n](TensorNode& self) {
        auto& pa = parent(self, 0);
        auto& pr = parent(self, 1);
        if (pa.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        if (pr.requires_grad)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) pr.grad[j] += self.grad[i * n + j];
    });
}

Tensor mul_rows(const Tensor& a, const std::vector<double>& weights) {
    const std::size_t m = a.rows(), n = a.cols();
    if (weights.size() != m) {
        throw ShapeError("mul_rows: " + std::to_string(weights.size()) + " weights for " + shape_str(a.shape()));
    }
    auto A = a.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * weights[i];
    return make_result("mul_rows", a.shape(), std::move(out), {a}, [weights, m, n](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[i * n + j] * weights[i];
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t m = x.rows(), n = x.cols();
    if (gamma.size() != n || beta.size() != n) {
        throw ShapeError("layer_norm: affine params do not match feature width of " + shape_str(x.shape()));
    }
    auto X = x.data();
    auto G = gamma.data();
    auto B = beta.data();
    std::vector<double> out(X.size());
    std::vector<double> xhat(X.size());
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += X[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = X[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (X[i * n + j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * G[j] + B[j];
        }
    }
    return make_result(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](TensorNode& self) {
            auto& px = parent(self, 0);
            auto& pg = parent(self, 1);
            auto& pb = parent(self, 2);
            const auto& dy = self.grad;
            for (std::size_t i = 0; i < m; ++i) {
                if (pg.requires_grad || pb.requires_grad) {
                    for (std::size_t j = 0; j < n; ++j) {
                        if (pg.requires_grad) pg.grad[j] += dy[i * n + j] * xhat[i * n + j];
                        if (pb.requires_grad) pb.grad[j] += dy[i * n + j];
                    }
                }
                if (!px.requires_grad) continue;
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double dxh = dy[i * n + j] * pg.data[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat[i * n + j];
                }
                const double nn = static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double dxh = dy[i * n + j] * pg.data[j];
                    px.grad[i * n + j] +=
                        inv_std[i] / nn * (nn * dxh - sum_dxhat - xhat[i * n + j] * sum_dxhat_xhat);
                }
            }
        });
}

Tensor masked_softmax(const Tensor& logits, const AdditiveMask* mask, SoftmaxStats* stats) {
    const std::size_t L = logits.shape().back();
    const std::size_t rows = logits.size() / L;
    if (mask) {
        if (mask->cols != L || (mask->rows != 1 && mask->rows != rows) ||
            mask->blocked.size() != mask->rows * mask->cols) {
            throw ShapeError("masked_softmax: mask " + std::to_string(mask->rows) + "x" +
                             std::to_string(mask->cols) + " does not broadcast to logits " +
                             shape_str(logits.shape()));
        }
    }
    auto X = logits.data();
    std::vector<double> out(X.size(), 0.0);
    if (stats) stats->degenerate_rows.clear();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &X[r * L];
        double* y = &out[r * L];
        bool any = false;
        double mx = 0.0;
        for (std::size_t c = 0; c < L; ++c) {
            if (mask && mask->is_blocked(r, c)) continue;
            if (!any || x[c] > mx) mx = x[c];
            any = true;
        }
        if (!any) {
            if (stats) stats->degenerate_rows.push_back(r);
            continue;
        }
        double total = 0.0;
        for (std::size_t c = 0; c < L; ++c) {
            if (mask && mask->is_blocked(r, c)) continue;
            y[c] = std::exp(x[c] - mx);
            total += y[c];
        }
        for (std::size_t c = 0; c < L; ++c) y[c] /= total;
    }
    return make_result("masked_softmax", logits.shape(), std::move(out), {logits}, [rows, L](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = &self.data[r * L];
            const double* dy = &self.grad[r * L];
            double dot = 0.0;
            for (std::size_t c = 0; c < L; ++c) dot += y[c] * dy[c];
            for (std::size_t c = 0; c < L; ++c) p.grad[r * L + c] += y[c] * (dy[c] - dot);
        }
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result("sum", {1}, {s}, {a}, [](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (auto& g : p.grad) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.size());
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result("mean", {1}, {s / n}, {a}, [n](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (auto& g : p.grad) g += self.grad[0] / n;
    });
}

Tensor weighted_sum(const Tensor& a, const std::vector<double>& weights) {
    if (weights.size() != a.size()) {
        throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " + shape_str(a.shape()));
    }
    auto A = a.data();
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * weights[i];
    return make_result("weighted_sum", {1}, {s}, {a}, [weights](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0] * weights[i];
    });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
    require_same_shape("mse", prediction, target);
    auto P = prediction.data();
    auto T = target.data();
    const double n = static_cast<double>(P.size());
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double d = P[i] - T[i];
        s += d * d;
    }
    return make_result("mse", {1}, {s / n}, {prediction, target}, [n](TensorNode& self) {
        auto& pp = parent(self, 0);
        auto& pt = parent(self, 1);
        const double g = self.grad[0] * 2.0 / n;
        for (std::size_t i = 0; i < pp.data.size(); ++i) {
            const double d = pp.data[i] - pt.data[i];
            if (pp.requires_grad) pp.grad[i] += g * d;
            if (pt.requires_grad) pt.grad[i] -= g * d;
        }
    });
}

Tensor average(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("average: no tensors");
    const Shape& shape = parts[0].shape();
    std::vector<double> out(parts[0].size(), 0.0);
    for (const auto& p : parts) {
        if (p.shape() != shape) throw ShapeError("average: mixed shapes " + shape_str(shape) + " and " + shape_str(p.shape()));
        auto d = p.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
    }
    const double n = static_cast<double>(parts.size());
    for (auto& v : out) v /= n;
    return make_result("average", shape, std::move(out), parts, [n](TensorNode& self) {
        for (auto& par : self.parents) {
            if (!par->requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) par->grad[i] += self.grad[i] / n;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no tensors");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        require_matrix("concat_rows", p);
        if (p.cols() != n) throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const auto& p : parts) {
        auto d = p.data();
        out.insert(out.end(), d.begin(), d.end());
    }
    return make_result("concat_rows", {m, n}, std::move(out), parts, [](TensorNode& self) {
        std::size_t off = 0;
        for (auto& par : self.parents) {
            const std::size_t len = par->data.size();
            if (par->requires_grad)
                for (std::size_t i = 0; i < len; ++i) par->grad[i] += self.grad[off + i];
            off += len;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no tensors");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        require_matrix("concat_cols", p);
        if (p.rows() != m) throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        widths.push_back(p.cols());
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto d = parts[k].data();
        const std::size_t w = widths[k];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * n + c0 + j] = d[i * w + j];
        c0 += w;
    }
    return make_result("concat_cols", {m, n}, std::move(out), parts, [widths, m, n](TensorNode& self) {
        std::size_t c = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& par = *self.parents[k];
            const std::size_t w = widths[k];
            if (par.requires_grad)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) par.grad[i * w + j] += self.grad[i * n + c + j];
            c += w;
        }
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    require_matrix("slice_rows", a);
    if (begin >= end || end > a.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(a.shape()));
    }
    const std::size_t n = a.cols();
    auto d = a.data();
    std::vector<double> out(d.begin() + begin * n, d.begin() + end * n);
    return make_result("slice_rows", {end - begin, n}, std::move(out), {a}, [begin, n](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[begin * n + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    require_matrix("slice_cols", a);
    if (begin >= end || end > a.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(a.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
    auto d = a.data();
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = d[i * n + begin + j];
    return make_result("slice_cols", {m, w}, std::move(out), {a}, [begin, m, n, w](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) p.grad[i * n + begin + j] += self.grad[i * w + j];
    });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
    require_matrix("gather_rows", table);
    if (ids.empty()) throw ShapeError("gather_rows: empty id list");
    const std::size_t n = table.cols();
    auto d = table.data();
    std::vector<double> out(ids.size() * n);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= table.rows()) {
            throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range for " + shape_str(table.shape()));
        }
        std::copy_n(d.begin() + ids[i] * n, n, out.begin() + i * n);
    }
    return make_result("gather_rows", {ids.size(), n}, std::move(out), {table}, [ids, n](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) p.grad[ids[i] * n + j] += self.grad[i * n + j];
    });
}

Tensor im2col3x3(const Tensor& x, std::size_t h, std::size_t w) {
    if (x.rows() != h * w) throw ShapeError("im2col3x3: " + shape_str(x.shape()) + " is not a " + std::to_string(h) + "x" + std::to_string(w) + " map");
    const std::size_t c = x.cols();
    const std::size_t width = 9 * c;
    auto X = x.data();
    std::vector<double> out(h * w * width, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            double* row = &out[(y * w + xx) * width];
            for (int ky = 0; ky < 3; ++ky) {
                const long sy = static_cast<long>(y) + ky - 1;
                if (sy < 0 || sy >= static_cast<long>(h)) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const long sx = static_cast<long>(xx) + kx - 1;
                    if (sx < 0 || sx >= static_cast<long>(w)) continue;
                    const double* src = &X[(static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c];
                    std::copy_n(src, c, row + (ky * 3 + kx) * c);
                }
            }
        }
    }
    return make_result("im2col3x3", {h * w, width}, std::move(out), {x}, [h, w, c, width](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                const double* row = &self.grad[(y * w + xx) * width];
                for (int ky = 0; ky < 3; ++ky) {
                    const long sy = static_cast<long>(y) + ky - 1;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const long sx = static_cast<long>(xx) + kx - 1;
                        if (sx < 0 || sx >= static_cast<long>(w)) continue;
                        double* dst = &p.grad[(static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c];
                        const double* src = row + (ky * 3 + kx) * c;
                        for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
                    }
                }
            }
        }
    });
}

Tensor avgpool2(const Tensor& x, std::size_t h, std::size_t w) {
    if (x.rows() != h * w || h % 2 || w % 2) {
        throw ShapeError("avgpool2: " + shape_str(x.shape()) + " is not an even " + std::to_string(h) + "x" + std::to_string(w) + " map");
    }
    const std::size_t c = x.cols(), oh = h / 2, ow = w / 2;
    auto X = x.data();
    std::vector<double> out(oh * ow * c, 0.0);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
            for (std::size_t k = 0; k < c; ++k) {
                const double s = X[((2 * y) * w + 2 * xx) * c + k] + X[((2 * y) * w + 2 * xx + 1) * c + k] +
                                 X[((2 * y + 1) * w + 2 * xx) * c + k] + X[((2 * y + 1) * w + 2 * xx + 1) * c + k];
                out[(y * ow + xx) * c + k] = 0.25 * s;
            }
    return make_result("avgpool2", {oh * ow, c}, std::move(out), {x}, [w, c, oh, ow](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
                for (std::size_t k = 0; k < c; ++k) {
                    const double g = 0.25 * self.grad[(y * ow + xx) * c + k];
                    p.grad[((2 * y) * w + 2 * xx) * c + k] += g;
                    p.grad[((2 * y) * w + 2 * xx + 1) * c + k] += g;
                    p.grad[((2 * y + 1) * w + 2 * xx) * c + k] += g;
                    p.grad[((2 * y + 1) * w + 2 * xx + 1) * c + k] += g;
                }
    });
}

Tensor upsample2(const Tensor& x, std::size_t h, std::size_t w) {
    if (x.rows() != h * w) throw ShapeError("upsample2: " + shape_str(x.shape()) + " is not a " + std::to_string(h) + "x" + std::to_string(w) + " map");
    const std::size_t c = x.cols(), oh = 2 * h, ow = 2 * w;
    auto X = x.data();
    std::vector<double> out(oh * ow * c);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
            std::copy_n(&X[((y / 2) * w + xx / 2) * c], c, &out[(y * ow + xx) * c]);
    return make_result("upsample2", {oh * ow, c}, std::move(out), {x}, [w, c, oh, ow](TensorNode& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
                for (std::size_t k = 0; k < c; ++k) p.grad[((y / 2) * w + xx / 2) * c + k] += self.grad[(y * ow + xx) * c + k];
    });
}

}  // namespace msd
