#include "msdiff/nn.hpp"

#include <cmath>

#include "msdiff/error.hpp"

namespace msd::nn {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    return b.defined() ? add_row(y, b) : y;
}

Tensor linear(const Tensor& x, const ParamStore& params, const std::string& prefix) {
    const std::string bias = prefix + ".b";
    return linear(x, params.get(prefix + ".w"), params.contains(bias) ? params.get(bias) : Tensor{});
}

Tensor layer_norm(const Tensor& x, const ParamStore& params, const std::string& prefix) {
    return msd::layer_norm(x, params.get(prefix + ".g"), params.get(prefix + ".b"));
}

void add_linear(ParamStore& params, const std::string& prefix, std::size_t in, std::size_t out, ParamGroup group,
                Rng& rng, bool bias) {
    params.add_gaussian(prefix + ".w", {in, out}, in, group, rng);
    if (bias) params.add_constant(prefix + ".b", {1, out}, 0.0, group);
}

void add_layer_norm(ParamStore& params, const std::string& prefix, std::size_t width, ParamGroup group) {
    params.add_constant(prefix + ".g", {1, width}, 1.0, group);
    params.add_constant(prefix + ".b", {1, width}, 0.0, group);
}

AttentionResult multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                     const AdditiveMask* mask, SoftmaxStats* stats) {
    const std::size_t d = q.cols();
    if (k.cols() != d) throw ShapeError("attention: query width " + std::to_string(d) + " != key width " + std::to_string(k.cols()));
    if (k.rows() != v.rows()) throw ShapeError("attention: " + std::to_string(k.rows()) + " keys but " + std::to_string(v.rows()) + " values");
    if (heads == 0 || d % heads || v.cols() % heads) throw ShapeError("attention: widths not divisible by head count");
    const std::size_t dh = d / heads, dvh = v.cols() / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    if (heads == 1) {
        Tensor a = masked_softmax(scale(matmul(q, transpose(k)), inv_sqrt), mask, stats);
        return {matmul(a, v), a};
    }
    std::vector<Tensor> outs, maps;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dvh, (h + 1) * dvh);
        SoftmaxStats local;
        Tensor a = masked_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), mask, stats ? &local : nullptr);
        if (stats && h == 0) *stats = local;
        outs.push_back(matmul(a, vh));
        maps.push_back(a);
    }
    return {concat_cols(outs), average(maps)};
}

Tensor sinusoidal_positions(std::size_t positions, std::size_t dim) {
    std::vector<double> v(positions * dim);
    for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double arg = static_cast<double>(p) * freq;
            v[p * dim + i] = (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
        }
    }
    return Tensor::from({positions, dim}, std::move(v));
}

Tensor sinusoidal_embedding(double value, std::size_t dim) {
    std::vector<double> v(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        v[i] = std::sin(value * freq);
        v[half + i] = std::cos(value * freq);
    }
    return Tensor::from({1, dim}, std::move(v));
}

}  // namespace msd::nn
