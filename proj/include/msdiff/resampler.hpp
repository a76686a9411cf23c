#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "msdiff/embedding.hpp"
#include "msdiff/model_config.hpp"

namespace msd {

inline constexpr std::size_t max_subjects = 4;

struct SubjectInput {
    Tensor image;  // [H, W, 3] reference crop
    TokenId entity = 0;
    BoxNorm box;
};

/// Concatenated per-subject condition tokens c_i with N = n * n_t rows.
struct ImageCondition {
    Tensor tokens;                                         // [N x d_c]
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // [start, end) per subject
    std::size_t n = 0;
};

/// Registers the image projector selected by cfg.resampler.projector plus the
/// grounding MLP when it is used.
void register_projector(ParamStore& params, const ModelConfig& cfg, Rng& rng);

/// One RSAttn block: queries from f_q, keys/values from [f_i, f_q], then an FFN.
/// Pre-norm with residual connections. `f_i` may be absent (P = 0).
Tensor rs_attention_layer(const ParamStore& params, const std::string& prefix, std::size_t heads, const Tensor& f_q,
                          const std::optional<Tensor>& f_i);

/// Patch-encode one subject image and distill it into [n_t x d_c] tokens
/// starting from the grounding tokens.
Tensor resample_subject(const ParamStore& params, const ModelConfig& cfg, const Tensor& subject_image,
                        const GroundingTokens& grounding);

/// Mean-pooled patch features through a single linear map to [n_t x d_c].
Tensor linear_project_subject(const ParamStore& params, const ModelConfig& cfg, const Tensor& subject_image);

/// Projects 1..4 subjects independently and concatenates in input order.
/// While training, grounding is kept per subject with probability
/// 1 - grounding_drop_prob (one rng draw per subject). `force_grounding`
/// overrides the draw.
ImageCondition project_subjects(const ParamStore& params, const ModelConfig& cfg, const Vocab& vocab,
                                const std::vector<SubjectInput>& subjects, Rng* rng, bool training,
                                std::optional<bool> force_grounding = std::nullopt);

/// Tokens of subject j inside `cond`.
Tensor subject_tokens(const ImageCondition& cond, std::size_t j);
/// Copy of `cond` with subject j's block replaced by `tokens`.
ImageCondition replace_subject_tokens(const ImageCondition& cond, std::size_t j, const Tensor& tokens);

}  // namespace msd
