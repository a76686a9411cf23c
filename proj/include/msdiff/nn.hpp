#pragma once

#include <cstddef>
#include <string>

#include "msdiff/ops.hpp"
#include "msdiff/optim.hpp"

namespace msd::nn {

// x W + b, with b optional (undefined tensor).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

// Convenience lookups of "<prefix>.w" / "<prefix>.b" style parameters.
Tensor linear(const Tensor& x, const ParamStore& params, const std::string& prefix);
Tensor layer_norm(const Tensor& x, const ParamStore& params, const std::string& prefix);

void add_linear(ParamStore& params, const std::string& prefix, std::size_t in, std::size_t out, ParamGroup group,
                Rng& rng, bool bias = true);
void add_layer_norm(ParamStore& params, const std::string& prefix, std::size_t width, ParamGroup group);

struct AttentionResult {
    Tensor out;      // [n x dv]
    Tensor weights;  // [n x m], averaged over heads
};

/// Scaled dot-product attention split over `heads`. The mask, when given, is
/// applied identically in every head.
AttentionResult multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                     const AdditiveMask* mask = nullptr, SoftmaxStats* stats = nullptr);

/// Sinusoidal position codes, [positions x dim].
Tensor sinusoidal_positions(std::size_t positions, std::size_t dim);
/// Sinusoidal embedding of one scalar (e.g. a timestep), [1 x dim].
Tensor sinusoidal_embedding(double value, std::size_t dim);

}  // namespace msd::nn
