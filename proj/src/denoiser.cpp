#include "msdiff/denoiser.hpp"

#include <algorithm>

#include "msdiff/error.hpp"
#include "msdiff/nn.hpp"

namespace msd {

namespace {

bool has_attention(const DenoiserConfig& dc, std::size_t resolution) {
    return std::find(dc.attn_resolutions.begin(), dc.attn_resolutions.end(), resolution) != dc.attn_resolutions.end();
}

std::string attn_prefix(std::size_t resolution) { return "unet.attn" + std::to_string(resolution); }

void register_attention(ParamStore& params, const ModelConfig& cfg, std::size_t resolution, std::size_t width, Rng& rng) {
    const std::string p = attn_prefix(resolution);
    const auto& rc = cfg.resampler;
    params.add_gaussian(p + ".wq", {width, width}, width, ParamGroup::base, rng);
    params.add_gaussian(p + ".wk_t", {cfg.text.d_t, width}, cfg.text.d_t, ParamGroup::base, rng);
    params.add_gaussian(p + ".wv_t", {cfg.text.d_t, width}, cfg.text.d_t, ParamGroup::base, rng);
    params.add_gaussian(p + ".wk_i", {rc.d_c, width}, rc.d_c, ParamGroup::adapter, rng);
    params.add_gaussian(p + ".wv_i", {rc.d_c, width}, rc.d_c, ParamGroup::adapter, rng);
    if (cfg.denoiser.dummy_count > 0) {
        params.add_gaussian(p + ".dummy", {cfg.denoiser.dummy_count, rc.d_c}, 1, ParamGroup::adapter, rng);
    }
}

Tensor conv3x3(const Tensor& x, std::size_t h, std::size_t w, const ParamStore& params, const std::string& prefix) {
    return nn::linear(im2col3x3(x, h, w), params, prefix);
}

}  // namespace

void validate(const ModelConfig& c) {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ContractError(std::string("config: ") + name + " must be positive");
    };
    positive(c.text.d_t, "text.d_t");
    positive(c.text.max_prompt_len, "text.max_prompt_len");
    positive(c.patch.crop_size, "patch.crop_size");
    positive(c.patch.patch, "patch.patch");
    positive(c.patch.d_i, "patch.d_i");
    if (c.patch.crop_size % c.patch.patch) throw ContractError("config: crop_size must be divisible by patch size");
    positive(c.resampler.depth, "resampler.depth");
    positive(c.resampler.n_t, "resampler.n_t");
    positive(c.resampler.d_q, "resampler.d_q");
    positive(c.resampler.d_c, "resampler.d_c");
    positive(c.resampler.heads, "resampler.heads");
    positive(c.resampler.num_freqs, "resampler.num_freqs");
    if (c.resampler.d_q % c.resampler.heads) throw ContractError("config: resampler.d_q must be divisible by heads");
    if (c.resampler.grounding_drop_prob < 0.0 || c.resampler.grounding_drop_prob > 1.0) {
        throw ContractError("config: grounding_drop_prob must lie in [0, 1]");
    }
    const auto& d = c.denoiser;
    positive(d.latent_h, "denoiser.latent_h");
    positive(d.latent_w, "denoiser.latent_w");
    positive(d.channels, "denoiser.channels");
    positive(d.base_width, "denoiser.base_width");
    positive(d.heads, "denoiser.heads");
    positive(d.time_dim, "denoiser.time_dim");
    if (d.latent_h % 2 || d.latent_w % 2) throw ContractError("config: latent dims must be even");
    if (d.base_width % d.heads) throw ContractError("config: base_width must be divisible by denoiser heads");
    for (auto r : d.attn_resolutions) {
        if (r != d.latent_h && r != d.latent_h / 2) {
            throw ContractError("config: attention resolution " + std::to_string(r) + " is not one of " +
                                std::to_string(d.latent_h) + " or " + std::to_string(d.latent_h / 2));
        }
    }
    positive(c.schedule.T, "schedule.T");
    if (!(c.schedule.beta_start > 0.0 && c.schedule.beta_start <= c.schedule.beta_end && c.schedule.beta_end < 1.0)) {
        throw ContractError("config: need 0 < beta_start <= beta_end < 1");
    }
}

void ToyUNet::register_params(ParamStore& params, const ModelConfig& cfg, Rng& rng) {
    const auto& d = cfg.denoiser;
    const std::size_t c = d.base_width;
    nn::add_linear(params, "unet.time1", d.time_dim, c, ParamGroup::base, rng);
    nn::add_linear(params, "unet.time2", c, c, ParamGroup::base, rng);
    nn::add_linear(params, "unet.time3", c, 2 * c, ParamGroup::base, rng);
    nn::add_linear(params, "unet.conv_in", 9 * d.channels, c, ParamGroup::base, rng);
    nn::add_linear(params, "unet.conv1", 9 * c, c, ParamGroup::base, rng);
    nn::add_linear(params, "unet.conv_mid", 9 * c, 2 * c, ParamGroup::base, rng);
    nn::add_linear(params, "unet.conv_up", 9 * 3 * c, c, ParamGroup::base, rng);
    nn::add_linear(params, "unet.conv_out", 9 * c, d.channels, ParamGroup::base, rng);
    if (has_attention(d, d.latent_h)) register_attention(params, cfg, d.latent_h, c, rng);
    if (has_attention(d, d.latent_h / 2)) register_attention(params, cfg, d.latent_h / 2, 2 * c, rng);
}

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
    validate(config);
    Model m;
    m.config = config;
    // Separate streams per component so base weights do not depend on the projector choice.
    Rng text_rng = Rng::derive(seed, 1);
    Rng patch_rng = Rng::derive(seed, 2);
    Rng proj_rng = Rng::derive(seed, 3);
    Rng unet_rng = Rng::derive(seed, 4);
    register_text_encoder(m.params, config.text, m.vocab.size(), text_rng);
    register_patch_encoder(m.params, config.patch, patch_rng);
    register_projector(m.params, config, proj_rng);
    ToyUNet::register_params(m.params, config, unet_rng);
    return m;
}

DenoiserOutput ToyUNet::predict(const Tensor& z_t, std::size_t t, const Conditioning& cond) const {
    const auto& cfg = model_.config;
    const auto& d = cfg.denoiser;
    const auto& params = model_.params;
    const std::size_t h = d.latent_h, w = d.latent_w;
    if (z_t.rows() != h * w || z_t.cols() != d.channels) {
        throw ShapeError("denoiser: latent " + shape_str(z_t.shape()) + " does not match " + std::to_string(h * w) +
                         "x" + std::to_string(d.channels));
    }
    if (cond.image && cond.boxes.size() != cond.image->n) {
        throw ContractError("denoiser: " + std::to_string(cond.boxes.size()) + " boxes for " +
                            std::to_string(cond.image->n) + " subjects");
    }
    DenoiserOutput out;

    auto attend = [&](const Tensor& x, std::size_t res_h, std::size_t res_w) {
        const std::string p = attn_prefix(res_h);
        DualAttentionWeights wts{params.get(p + ".wq"), params.get(p + ".wk_t"), params.get(p + ".wv_t"),
                                 params.get(p + ".wk_i"), params.get(p + ".wv_i"), d.heads};
        const Tensor dummy = params.contains(p + ".dummy") ? params.get(p + ".dummy") : Tensor{};
        std::optional<AssembledMask> masks;
        const ImageCondition* image = cond.image ? &*cond.image : nullptr;
        if (image && d.use_mca) masks = assemble_masks(cond.boxes, res_h, res_w, cfg.resampler.n_t, d.dummy_count);
        auto r = dual_cross_attention(x, cond.text, image, dummy, masks ? &*masks : nullptr, cond.gamma, wts);
        out.attention.push_back({res_h, {r.attn_text, res_h, res_w}, {r.attn_image, res_h, res_w}});
        return r.z_out;
    };

    Tensor temb = silu(nn::linear(nn::sinusoidal_embedding(static_cast<double>(t), d.time_dim), params, "unet.time1"));
    Tensor x = conv3x3(z_t, h, w, params, "unet.conv_in");
    x = silu(add_row(x, nn::linear(temb, params, "unet.time2")));
    x = silu(conv3x3(x, h, w, params, "unet.conv1"));
    if (has_attention(d, h)) x = attend(x, h, w);
    Tensor skip = x;

    const std::size_t h2 = h / 2, w2 = w / 2;
    Tensor y = avgpool2(x, h, w);
    y = silu(add_row(conv3x3(y, h2, w2, params, "unet.conv_mid"), nn::linear(temb, params, "unet.time3")));
    if (has_attention(d, h2)) y = attend(y, h2, w2);

    Tensor u = concat_cols({upsample2(y, h2, w2), skip});
    u = silu(conv3x3(u, h, w, params, "unet.conv_up"));
    out.eps = conv3x3(u, h, w, params, "unet.conv_out");
    return out;
}

}  // namespace msd
