#pragma once

#include <cstddef>
#include <vector>

#include "msdiff/embedding.hpp"
#include "msdiff/ops.hpp"
#include "msdiff/resampler.hpp"

namespace msd {

/// True when the centre of latent cell (x, y) lies in the half-open box.
bool cell_in_box(const BoxNorm& box, std::size_t x, std::size_t y, std::size_t latent_h, std::size_t latent_w);

/// M_j: 0 on cells inside the box, -inf sentinel elsewhere, replicated over the
/// subject's n_t key columns. `grid` is [latent_h * latent_w x n_t].
struct SubjectKeyMask {
    AdditiveMask grid;
    BoxNorm box;
    std::size_t latent_h = 0, latent_w = 0;
};

SubjectKeyMask build_subject_mask(const BoxNorm& box, std::size_t latent_h, std::size_t latent_w, std::size_t n_t);

/// Key mask over [dummy tokens | subject 0 | ... | subject n-1] plus the
/// background mask (1 outside every box, 0 inside any box).
struct AssembledMask {
    AdditiveMask key_mask;
    std::vector<double> bg_mask;
    std::size_t dummy_count = 0;
    std::size_t latent_h = 0, latent_w = 0;
};

AssembledMask assemble_masks(const std::vector<BoxNorm>& boxes, std::size_t latent_h, std::size_t latent_w,
                             std::size_t n_t, std::size_t dummy_count);

struct DualAttentionWeights {
    Tensor wq;    // [d x d_a]
    Tensor wk_t;  // [d_t x d_a]
    Tensor wv_t;  // [d_t x d]
    Tensor wk_i;  // [d_c x d_a]
    Tensor wv_i;  // [d_c x d]
    std::size_t heads = 1;
};

struct DualAttentionOutput {
    Tensor z_out;
    Tensor z_txt;
    Tensor z_img;        // after background zeroing; undefined when the image branch is off
    Tensor attn_text;    // [HW x L]
    Tensor attn_image;   // [HW x (dummy + N)]; undefined when the image branch is off
    SoftmaxStats image_stats;
};

/// z_out = z + softmax(Q K_t^T / sqrt d) V_t + gamma * (1 - M_bg) * softmax(Q K_i^T / sqrt d + M) V_i,
/// with keys of the image branch = [dummy tokens | c_i]. Without `masks` the
/// image branch is plain (unmasked) attention. The image branch is skipped when
/// `image` is null or gamma == 0.
DualAttentionOutput dual_cross_attention(const Tensor& z, const Tensor& c_t, const ImageCondition* image,
                                         const Tensor& dummy_tokens, const AssembledMask* masks, double gamma,
                                         const DualAttentionWeights& w);

struct AttentionMap {
    Tensor weights;  // [latent_h * latent_w x tokens]
    std::size_t latent_h = 0, latent_w = 0;
};

struct AttentionLoss {
    Tensor value;  // scalar mean over maps and subjects
    // (map index, subject index) pairs whose total attention mass was zero.
    std::vector<std::pair<std::size_t, std::size_t>> zero_mass;
};

/// Mean over maps and subjects of (1 - in-box mass / total mass)^2 for each
/// subject's token set. Callers apply the loss weight.
AttentionLoss attention_map_loss(const std::vector<AttentionMap>& maps, const std::vector<BoxNorm>& boxes,
                                 const std::vector<std::vector<std::size_t>>& subject_tokens);

/// Mean of the selected columns reshaped to [latent_h x latent_w], min-max
/// normalized to [0, 1]; constant maps become all zeros.
Tensor attribution_heatmap(const Tensor& attention, const std::vector<std::size_t>& token_indices,
                           std::size_t latent_h, std::size_t latent_w);

}  // namespace msd
