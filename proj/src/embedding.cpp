#include "msdiff/embedding.hpp"

#include <cmath>
#include <numbers>

#include "msdiff/error.hpp"
#include "msdiff/image.hpp"
#include "msdiff/nn.hpp"

namespace msd {

BoxNorm BoxNorm::make(double x0, double y0, double x1, double y1) {
    const bool ok = std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1) && 0.0 <= x0 &&
                    x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0;
    if (!ok) {
        throw ContractError("invalid box [" + std::to_string(x0) + ", " + std::to_string(y0) + ", " +
                            std::to_string(x1) + ", " + std::to_string(y1) + "]: need 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
    }
    return BoxNorm{x0, y0, x1, y1};
}

void register_text_encoder(ParamStore& params, const TextEncoderConfig& cfg, std::size_t vocab_size, Rng& rng) {
    const std::size_t d = cfg.d_t;
    params.add_gaussian("text.tok_emb", {vocab_size, d}, d, ParamGroup::base, rng);
    nn::add_layer_norm(params, "text.ln1", d, ParamGroup::base);
    nn::add_linear(params, "text.wq", d, d, ParamGroup::base, rng, false);
    nn::add_linear(params, "text.wk", d, d, ParamGroup::base, rng, false);
    nn::add_linear(params, "text.wv", d, d, ParamGroup::base, rng, false);
    nn::add_linear(params, "text.wo", d, d, ParamGroup::base, rng, false);
    nn::add_layer_norm(params, "text.ln2", d, ParamGroup::base);
    nn::add_linear(params, "text.ffn1", d, 2 * d, ParamGroup::base, rng);
    nn::add_linear(params, "text.ffn2", 2 * d, d, ParamGroup::base, rng);
    nn::add_layer_norm(params, "text.ln_out", d, ParamGroup::base);
}

Tensor encode_text(const ParamStore& params, const TextEncoderConfig& cfg, const Vocab& vocab,
                   const std::vector<TokenId>& prompt_ids) {
    if (prompt_ids.size() > cfg.max_prompt_len) {
        throw ContractError("prompt has " + std::to_string(prompt_ids.size()) + " tokens, limit is " +
                            std::to_string(cfg.max_prompt_len));
    }
    std::vector<std::size_t> ids(cfg.max_prompt_len, vocab.pad());
    for (std::size_t i = 0; i < prompt_ids.size(); ++i) {
        if (prompt_ids[i] >= vocab.size()) {
            throw VocabError("token id " + std::to_string(prompt_ids[i]) + " out of range for vocabulary of " +
                             std::to_string(vocab.size()));
        }
        ids[i] = prompt_ids[i];
    }
    Tensor x = add(gather_rows(params.get("text.tok_emb"), ids), nn::sinusoidal_positions(ids.size(), cfg.d_t));
    Tensor h = nn::layer_norm(x, params, "text.ln1");
    auto attn = nn::multi_head_attention(nn::linear(h, params, "text.wq"), nn::linear(h, params, "text.wk"),
                                         nn::linear(h, params, "text.wv"), 1);
    x = add(x, nn::linear(attn.out, params, "text.wo"));
    h = nn::layer_norm(x, params, "text.ln2");
    x = add(x, nn::linear(silu(nn::linear(h, params, "text.ffn1")), params, "text.ffn2"));
    return nn::layer_norm(x, params, "text.ln_out");
}

void register_patch_encoder(ParamStore& params, const PatchEncoderConfig& cfg, Rng& rng) {
    nn::add_linear(params, "patch.proj", cfg.patch * cfg.patch * 3, cfg.d_i, ParamGroup::base, rng);
}

Tensor project_image_patches(const ParamStore& params, const PatchEncoderConfig& cfg, const Tensor& image) {
    require_image(image, "encode_image_patches");
    const std::size_t h = image_height(image), w = image_width(image), p = cfg.patch;
    if (p == 0 || h % p || w % p) {
        throw ShapeError("encode_image_patches: image " + shape_str(image.shape()) + " not divisible by patch size " +
                         std::to_string(p));
    }
    const std::size_t ph = h / p, pw = w / p, width = p * p * 3;
    auto d = image.data();
    std::vector<double> flat(ph * pw * width);
    for (std::size_t py = 0; py < ph; ++py)
        for (std::size_t px = 0; px < pw; ++px) {
            double* row = &flat[(py * pw + px) * width];
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        row[(y * p + x) * 3 + c] = d[((py * p + y) * w + (px * p + x)) * 3 + c];
        }
    return nn::linear(Tensor::from({ph * pw, width}, std::move(flat)), params, "patch.proj");
}

Tensor encode_image_patches(const ParamStore& params, const PatchEncoderConfig& cfg, const Tensor& image) {
    Tensor raw = project_image_patches(params, cfg, image);
    return add(raw, nn::sinusoidal_positions(raw.rows(), cfg.d_i));
}

std::vector<double> fourier_box_embedding(const BoxNorm& box, std::size_t num_freqs) {
    if (num_freqs == 0) throw ContractError("fourier_box_embedding: num_freqs must be >= 1");
    const double coords[4] = {box.x0, box.y0, box.x1, box.y1};
    std::vector<double> out;
    out.reserve(8 * num_freqs);
    for (double v : coords) {
        for (std::size_t k = 0; k < num_freqs; ++k) {
            const double arg = std::ldexp(1.0, static_cast<int>(k)) * std::numbers::pi * v;
            out.push_back(std::sin(arg));
            out.push_back(std::cos(arg));
        }
    }
    return out;
}

void register_grounding(ParamStore& params, const ResamplerConfig& cfg, std::size_t d_t, Rng& rng) {
    nn::add_linear(params, "ground.mlp1", d_t + 8 * cfg.num_freqs, cfg.d_q, ParamGroup::adapter, rng);
    nn::add_linear(params, "ground.mlp2", cfg.d_q, cfg.d_q, ParamGroup::adapter, rng);
}

GroundingTokens build_grounding_tokens(const ParamStore& params, const ResamplerConfig& cfg, const Vocab& vocab,
                                       TokenId entity_id, const BoxNorm& box, const Tensor& base_queries,
                                       bool use_grounding) {
    if (entity_id >= vocab.size()) {
        throw VocabError("entity id " + std::to_string(entity_id) + " out of range for vocabulary of " +
                         std::to_string(vocab.size()));
    }
    if (base_queries.rows() != cfg.n_t || base_queries.cols() != cfg.d_q) {
        throw ShapeError("base queries " + shape_str(base_queries.shape()) + " do not match n_t x d_q");
    }
    if (!use_grounding) return {base_queries, GroundingSource::learned_base};
    Tensor entity = gather_rows(params.get("text.tok_emb"), {entity_id});
    auto fourier = fourier_box_embedding(box, cfg.num_freqs);
    const std::size_t width = fourier.size();
    Tensor fused = concat_cols({entity, Tensor::from({1, width}, std::move(fourier))});
    Tensor g = nn::linear(silu(nn::linear(fused, params, "ground.mlp1")), params, "ground.mlp2");
    return {add_row(base_queries, g), GroundingSource::grounded};
}

}  // namespace msd
