#pragma once

#include <cstddef>
#include <vector>

#include "msdiff/model_config.hpp"
#include "msdiff/optim.hpp"
#include "msdiff/vocab.hpp"

namespace msd {

/// Normalized box (x0, y0, x1, y1) with 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1.
struct BoxNorm {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;

    static BoxNorm make(double x0, double y0, double x1, double y1);  // validates
    static BoxNorm full_frame() { return {}; }
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool operator==(const BoxNorm&) const = default;
};

enum class GroundingSource { grounded, learned_base };

struct GroundingTokens {
    Tensor tokens;  // [n_t x d_q]
    GroundingSource source = GroundingSource::learned_base;
};

// -- text ------------------------------------------------------------------

void register_text_encoder(ParamStore& params, const TextEncoderConfig& cfg, std::size_t vocab_size, Rng& rng);

/// Toy text encoder: token embedding + sinusoidal positions, one pre-norm
/// self-attention block and one feed-forward block. Output [max_prompt_len x d_t];
/// prompts are right-padded with PAD.
Tensor encode_text(const ParamStore& params, const TextEncoderConfig& cfg, const Vocab& vocab,
                   const std::vector<TokenId>& prompt_ids);

// -- image patches ---------------------------------------------------------

void register_patch_encoder(ParamStore& params, const PatchEncoderConfig& cfg, Rng& rng);

/// Non-overlapping patches flattened in (y, x, channel) order, projected to
/// d_i, before position codes. [P x d_i].
Tensor project_image_patches(const ParamStore& params, const PatchEncoderConfig& cfg, const Tensor& image);

/// project_image_patches plus sinusoidal patch position codes.
Tensor encode_image_patches(const ParamStore& params, const PatchEncoderConfig& cfg, const Tensor& image);

// -- boxes and grounding ---------------------------------------------------

/// For each coordinate v in (x0, y0, x1, y1) and k in [0, num_freqs):
/// sin(2^k pi v), cos(2^k pi v). Returns [8 * num_freqs].
std::vector<double> fourier_box_embedding(const BoxNorm& box, std::size_t num_freqs);

void register_grounding(ParamStore& params, const ResamplerConfig& cfg, std::size_t d_t, Rng& rng);

/// base_queries offset by MLP(entity embedding ++ Fourier(box)) when
/// use_grounding; base_queries untouched otherwise.
GroundingTokens build_grounding_tokens(const ParamStore& params, const ResamplerConfig& cfg, const Vocab& vocab,
                                       TokenId entity_id, const BoxNorm& box, const Tensor& base_queries,
                                       bool use_grounding);

}  // namespace msd
