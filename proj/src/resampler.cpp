#include "msdiff/resampler.hpp"

#include "msdiff/error.hpp"
#include "msdiff/image.hpp"
#include "msdiff/nn.hpp"

namespace msd {

namespace {

void register_rs_layer(ParamStore& params, const std::string& prefix, std::size_t d, Rng& rng) {
    nn::add_layer_norm(params, prefix + ".ln_q", d, ParamGroup::adapter);
    nn::add_layer_norm(params, prefix + ".ln_i", d, ParamGroup::adapter);
    nn::add_linear(params, prefix + ".wq", d, d, ParamGroup::adapter, rng, false);
    nn::add_linear(params, prefix + ".wk", d, d, ParamGroup::adapter, rng, false);
    nn::add_linear(params, prefix + ".wv", d, d, ParamGroup::adapter, rng, false);
    nn::add_linear(params, prefix + ".wo", d, d, ParamGroup::adapter, rng, false);
    nn::add_layer_norm(params, prefix + ".ln_f", d, ParamGroup::adapter);
    nn::add_linear(params, prefix + ".ffn1", d, 2 * d, ParamGroup::adapter, rng);
    nn::add_linear(params, prefix + ".ffn2", 2 * d, d, ParamGroup::adapter, rng);
}

Tensor fit_crop(const ModelConfig& cfg, const Tensor& image) {
    require_image(image, "subject image");
    const std::size_t s = cfg.patch.crop_size;
    if (image_height(image) == s && image_width(image) == s) return image;
    return resize_nearest(image, s, s);
}

}  // namespace

void register_projector(ParamStore& params, const ModelConfig& cfg, Rng& rng) {
    const auto& rc = cfg.resampler;
    if (rc.d_q % rc.heads) throw ContractError("resampler d_q must be divisible by heads");
    if (rc.depth == 0 || rc.n_t == 0) throw ContractError("resampler depth and n_t must be >= 1");
    if (rc.projector == ProjectorKind::linear) {
        nn::add_linear(params, "projector.proj", cfg.patch.d_i, rc.n_t * rc.d_c, ParamGroup::adapter, rng);
        nn::add_layer_norm(params, "projector.ln", rc.d_c, ParamGroup::adapter);
        return;
    }
    params.add_gaussian("resampler.queries", {rc.n_t, rc.d_q}, rc.d_q, ParamGroup::adapter, rng);
    nn::add_linear(params, "resampler.adapter", cfg.patch.d_i, rc.d_q, ParamGroup::adapter, rng);
    for (std::size_t l = 0; l < rc.depth; ++l) register_rs_layer(params, "resampler.layer" + std::to_string(l), rc.d_q, rng);
    nn::add_linear(params, "resampler.proj_out", rc.d_q, rc.d_c, ParamGroup::adapter, rng);
    if (rc.projector == ProjectorKind::grounding_resampler) register_grounding(params, rc, cfg.text.d_t, rng);
}

Tensor rs_attention_layer(const ParamStore& params, const std::string& prefix, std::size_t heads, const Tensor& f_q,
                          const std::optional<Tensor>& f_i) {
    if (f_i && f_i->cols() != f_q.cols()) {
        throw ShapeError("rs_attention_layer: image features " + shape_str(f_i->shape()) + " vs queries " +
                         shape_str(f_q.shape()));
    }
    Tensor q_in = nn::layer_norm(f_q, params, prefix + ".ln_q");
    Tensor kv_in = f_i ? concat_rows({nn::layer_norm(*f_i, params, prefix + ".ln_i"), q_in}) : q_in;
    auto attn = nn::multi_head_attention(nn::linear(q_in, params, prefix + ".wq"), nn::linear(kv_in, params, prefix + ".wk"),
                                         nn::linear(kv_in, params, prefix + ".wv"), heads);
    Tensor x = add(f_q, nn::linear(attn.out, params, prefix + ".wo"));
    Tensor h = nn::layer_norm(x, params, prefix + ".ln_f");
    return add(x, nn::linear(silu(nn::linear(h, params, prefix + ".ffn1")), params, prefix + ".ffn2"));
}

Tensor resample_subject(const ParamStore& params, const ModelConfig& cfg, const Tensor& subject_image,
                        const GroundingTokens& grounding) {
    const auto& rc = cfg.resampler;
    if (grounding.tokens.rows() != rc.n_t || grounding.tokens.cols() != rc.d_q) {
        throw ShapeError("grounding tokens " + shape_str(grounding.tokens.shape()) + " do not match n_t x d_q");
    }
    Tensor f_i = encode_image_patches(params, cfg.patch, fit_crop(cfg, subject_image));
    f_i = nn::linear(f_i, params, "resampler.adapter");
    Tensor x = grounding.tokens;
    for (std::size_t l = 0; l < rc.depth; ++l) {
        x = rs_attention_layer(params, "resampler.layer" + std::to_string(l), rc.heads, x, f_i);
    }
    return nn::linear(x, params, "resampler.proj_out");
}

Tensor linear_project_subject(const ParamStore& params, const ModelConfig& cfg, const Tensor& subject_image) {
    const auto& rc = cfg.resampler;
    Tensor f_i = encode_image_patches(params, cfg.patch, fit_crop(cfg, subject_image));
    const std::size_t p = f_i.rows();
    Tensor pooled = matmul(Tensor::full({1, p}, 1.0 / static_cast<double>(p)), f_i);
    Tensor flat = nn::linear(pooled, params, "projector.proj");
    return nn::layer_norm(flat.reshape({rc.n_t, rc.d_c}), params, "projector.ln");
}

ImageCondition project_subjects(const ParamStore& params, const ModelConfig& cfg, const Vocab& vocab,
                                const std::vector<SubjectInput>& subjects, Rng* rng, bool training,
                                std::optional<bool> force_grounding) {
    if (subjects.empty()) throw ContractError("project_subjects: at least one subject is required");
    if (subjects.size() > max_subjects) {
        throw ContractError("project_subjects: " + std::to_string(subjects.size()) + " subjects exceed the limit of 4");
    }
    const auto& rc = cfg.resampler;
    ImageCondition cond;
    std::vector<Tensor> blocks;
    for (const auto& s : subjects) {
        Tensor block;
        if (rc.projector == ProjectorKind::linear) {
            block = linear_project_subject(params, cfg, s.image);
        } else {
            bool use_grounding = rc.projector == ProjectorKind::grounding_resampler;
            if (use_grounding && training) {
                if (!rng) throw ContractError("project_subjects: training requires an rng");
                use_grounding = rng->uniform() >= rc.grounding_drop_prob;
            }
            if (force_grounding) use_grounding = *force_grounding && rc.projector == ProjectorKind::grounding_resampler;
            auto g = build_grounding_tokens(params, rc, vocab, s.entity, s.box, params.get("resampler.queries"),
                                            use_grounding);
            block = resample_subject(params, cfg, s.image, g);
        }
        const std::size_t start = cond.n * rc.n_t;
        cond.spans.emplace_back(start, start + rc.n_t);
        cond.n += 1;
        blocks.push_back(block);
    }
    cond.tokens = blocks.size() == 1 ? blocks[0] : concat_rows(blocks);
    return cond;
}

Tensor subject_tokens(const ImageCondition& cond, std::size_t j) {
    if (j >= cond.n) throw ContractError("subject index " + std::to_string(j) + " out of range");
    return slice_rows(cond.tokens, cond.spans[j].first, cond.spans[j].second);
}

ImageCondition replace_subject_tokens(const ImageCondition& cond, std::size_t j, const Tensor& tokens) {
    if (j >= cond.n) throw ContractError("subject index " + std::to_string(j) + " out of range");
    const auto [start, end] = cond.spans[j];
    if (tokens.rows() != end - start || tokens.cols() != cond.tokens.cols()) {
        throw ShapeError("replacement tokens " + shape_str(tokens.shape()) + " do not fit subject span");
    }
    std::vector<Tensor> parts;
    if (start > 0) parts.push_back(slice_rows(cond.tokens, 0, start));
    parts.push_back(tokens);
    if (end < cond.tokens.rows()) parts.push_back(slice_rows(cond.tokens, end, cond.tokens.rows()));
    ImageCondition out = cond;
    out.tokens = parts.size() == 1 ? parts[0] : concat_rows(parts);
    return out;
}

}  // namespace msd
