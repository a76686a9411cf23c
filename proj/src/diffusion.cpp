#include "msdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "msdiff/error.hpp"
#include "msdiff/image.hpp"

namespace msd {

std::size_t TrainingSample::subject_count() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.is_pad ? 0 : 1;
    return n;
}

NoiseSchedule NoiseSchedule::linear(const ScheduleConfig& cfg) {
    if (cfg.T == 0) throw ContractError("noise schedule needs T >= 1");
    NoiseSchedule s;
    s.betas.resize(cfg.T);
    s.alpha_bars.resize(cfg.T);
    double prod = 1.0;
    for (std::size_t t = 0; t < cfg.T; ++t) {
        const double frac = cfg.T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(cfg.T - 1);
        s.betas[t] = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac;
        prod *= 1.0 - s.betas[t];
        s.alpha_bars[t] = prod;
    }
    return s;
}

Tensor q_sample_abar(double alpha_bar, const Tensor& z0, const Tensor& eps) {
    if (z0.shape() != eps.shape()) {
        throw ShapeError("q_sample: z0 " + shape_str(z0.shape()) + " vs eps " + shape_str(eps.shape()));
    }
    return add(scale(z0, std::sqrt(alpha_bar)), scale(eps, std::sqrt(1.0 - alpha_bar)));
}

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& z0, std::size_t t, const Tensor& eps) {
    if (t >= schedule.steps()) {
        throw ContractError("q_sample: timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(schedule.steps()) + ")");
    }
    return q_sample_abar(schedule.alpha_bars[t], z0, eps);
}

Tensor image_to_latent(const Tensor& image, std::size_t latent_h, std::size_t latent_w) {
    require_image(image, "image_to_latent");
    const std::size_t h = image_height(image), w = image_width(image);
    if (h % latent_h || w % latent_w) {
        throw ShapeError("image_to_latent: image " + shape_str(image.shape()) + " is not a multiple of the latent grid");
    }
    const std::size_t fy = h / latent_h, fx = w / latent_w;
    const double inv = 1.0 / static_cast<double>(fy * fx);
    std::vector<double> z(latent_h * latent_w * 3, 0.0);
    for (std::size_t y = 0; y < latent_h; ++y)
        for (std::size_t x = 0; x < latent_w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (std::size_t dy = 0; dy < fy; ++dy)
                    for (std::size_t dx = 0; dx < fx; ++dx) s += pixel(image, y * fy + dy, x * fx + dx, c);
                z[(y * latent_w + x) * 3 + c] = 2.0 * s * inv - 1.0;
            }
    return Tensor::from({latent_h * latent_w, 3}, std::move(z));
}

Tensor latent_to_image(const Tensor& latent, std::size_t latent_h, std::size_t latent_w, std::size_t out_h,
                       std::size_t out_w) {
    if (latent.rows() != latent_h * latent_w || latent.cols() != 3) {
        throw ShapeError("latent_to_image: latent " + shape_str(latent.shape()) + " does not match grid");
    }
    auto z = latent.data();
    std::vector<double> img(out_h * out_w * 3);
    for (std::size_t y = 0; y < out_h; ++y) {
        const std::size_t ly = y * latent_h / out_h;
        for (std::size_t x = 0; x < out_w; ++x) {
            const std::size_t lx = x * latent_w / out_w;
            for (std::size_t c = 0; c < 3; ++c) {
                img[(y * out_w + x) * 3 + c] = std::clamp((z[(ly * latent_w + lx) * 3 + c] + 1.0) * 0.5, 0.0, 1.0);
            }
        }
    }
    return Tensor::from({out_h, out_w, 3}, std::move(img));
}

std::vector<std::size_t> entity_positions(const std::vector<TokenId>& prompt_ids, TokenId entity) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < prompt_ids.size(); ++i)
        if (prompt_ids[i] == entity) pos.push_back(i);
    return pos;
}

static Tensor normal_tensor(const Shape& shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor::from(shape, std::move(v));
}

LossParts training_loss(const Model& model, const EpsModel& eps_model, const NoiseSchedule& schedule,
                        const std::vector<TrainingSample>& batch, Rng& rng, const TrainOptions& options) {
    if (batch.empty()) throw ContractError("training_loss: empty batch");
    const auto& cfg = model.config;
    const auto& dc = cfg.denoiser;
    std::vector<Tensor> ip_terms, am_terms;
    for (const auto& sample : batch) {
        const std::size_t t = rng.below(schedule.steps());
        Tensor eps = normal_tensor({dc.latent_h * dc.latent_w, dc.channels}, rng);
        const bool drop_text = rng.uniform() < options.p_drop_text;
        const bool drop_image = rng.uniform() < options.p_drop_image;

        Tensor z0 = image_to_latent(sample.target_image, dc.latent_h, dc.latent_w);
        Tensor z_t = q_sample(schedule, z0, t, eps);

        Conditioning cond;
        const std::vector<TokenId> null_prompt{model.vocab.null()};
        cond.text = encode_text(model.params, cfg.text, model.vocab, drop_text ? null_prompt : sample.caption_ids);
        cond.gamma = options.gamma;
        std::vector<SubjectInput> subjects;
        for (const auto& slot : sample.subjects) {
            if (!slot.is_pad) subjects.push_back({slot.crop, slot.entity, slot.box});
        }
        if (options.use_subjects && !drop_image && !subjects.empty()) {
            cond.image = project_subjects(model.params, cfg, model.vocab, subjects, &rng, true);
            for (const auto& s : subjects) cond.boxes.push_back(s.box);
        }

        DenoiserOutput out = eps_model.predict(z_t, t, cond);
        ip_terms.push_back(mse(out.eps, eps));

        if (options.attention_loss_weight <= 0.0 || subjects.empty()) continue;
        std::vector<Tensor> branch_terms;
        const bool want_image = options.attention_branch != AttentionLossBranch::text;
        const bool want_text = options.attention_branch != AttentionLossBranch::image;
        if (want_image && cond.image) {
            std::vector<AttentionMap> maps;
            for (const auto& layer : out.attention)
                if (layer.image.weights.defined()) maps.push_back(layer.image);
            std::vector<std::vector<std::size_t>> tokens;
            for (const auto& [start, end] : cond.image->spans) {
                std::vector<std::size_t> idx;
                for (std::size_t k = start; k < end; ++k) idx.push_back(dc.dummy_count + k);
                tokens.push_back(std::move(idx));
            }
            if (!maps.empty()) branch_terms.push_back(attention_map_loss(maps, cond.boxes, tokens).value);
        }
        if (want_text && !drop_text) {
            std::vector<AttentionMap> maps;
            for (const auto& layer : out.attention) maps.push_back(layer.text);
            std::vector<BoxNorm> boxes;
            std::vector<std::vector<std::size_t>> tokens;
            for (const auto& s : subjects) {
                auto pos = entity_positions(sample.caption_ids, s.entity);
                if (pos.empty()) continue;
                boxes.push_back(s.box);
                tokens.push_back(std::move(pos));
            }
            if (!maps.empty() && !boxes.empty()) branch_terms.push_back(attention_map_loss(maps, boxes, tokens).value);
        }
        if (!branch_terms.empty()) am_terms.push_back(average(branch_terms));
    }
    LossParts parts;
    Tensor l_ip = average(ip_terms);
    parts.l_ip = l_ip.item();
    parts.total = l_ip;
    if (!am_terms.empty()) {
        Tensor l_am = average(am_terms);
        parts.l_am = l_am.item();
        parts.total = add(l_ip, scale(l_am, options.attention_loss_weight));
    }
    return parts;
}

Tensor guided_epsilon(const Tensor& eps_uncond, const Tensor& eps_cond, double guidance_scale) {
    if (guidance_scale == 1.0) return eps_cond;
    if (guidance_scale == 0.0) return eps_uncond;
    return add(eps_uncond, scale(sub(eps_cond, eps_uncond), guidance_scale));
}

Tensor interpolate_subject_tokens(const Tensor& tokens_a, const Tensor& tokens_b, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("interpolate_subject_tokens: lambda must lie in [0, 1]");
    if (tokens_a.shape() != tokens_b.shape()) {
        throw ShapeError("interpolate_subject_tokens: " + shape_str(tokens_a.shape()) + " vs " + shape_str(tokens_b.shape()));
    }
    if (lambda == 0.0) return tokens_a;
    if (lambda == 1.0) return tokens_b;
    return add(scale(tokens_a, 1.0 - lambda), scale(tokens_b, lambda));
}

BoxFromHeatmap heatmap_to_box(const Tensor& heatmap, double threshold) {
    if (heatmap.rank() != 2) throw ShapeError("heatmap_to_box: expected [H, W], got " + shape_str(heatmap.shape()));
    const std::size_t h = heatmap.shape()[0], w = heatmap.shape()[1];
    auto v = heatmap.data();
    std::size_t x0 = w, y0 = h, x1 = 0, y1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            if (v[y * w + x] < threshold) continue;
            any = true;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    if (!any) return {BoxNorm::full_frame(), true};
    return {BoxNorm::make(static_cast<double>(x0) / static_cast<double>(w), static_cast<double>(y0) / static_cast<double>(h),
                          static_cast<double>(x1 + 1) / static_cast<double>(w),
                          static_cast<double>(y1 + 1) / static_cast<double>(h)),
            false};
}

namespace {

struct StepLayout {
    std::vector<BoxNorm> boxes;
    std::vector<bool> fallback;
};

StepLayout layout_from_map(const AttentionMap* map, const std::vector<std::vector<std::size_t>>& entity_tokens,
                           double threshold) {
    StepLayout out;
    for (const auto& tokens : entity_tokens) {
        if (!map || !map->weights.defined() || tokens.empty()) {
            out.boxes.push_back(BoxNorm::full_frame());
            out.fallback.push_back(true);
            continue;
        }
        auto r = heatmap_to_box(attribution_heatmap(map->weights, tokens, map->latent_h, map->latent_w), threshold);
        out.boxes.push_back(r.box);
        out.fallback.push_back(r.fallback);
    }
    return out;
}

StepLayout layout_before_switch(std::size_t n, const std::optional<std::vector<BoxNorm>>& prior) {
    StepLayout out;
    out.boxes = prior ? *prior : std::vector<BoxNorm>(n, BoxNorm::full_frame());
    out.fallback.assign(n, false);
    return out;
}

void check_pseudo_layout(double threshold, std::size_t switch_step, std::size_t num_steps) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("pseudo layout threshold must lie in (0, 1)");
    if (switch_step > num_steps) throw ContractError("pseudo layout switch step exceeds the number of steps");
}

}  // namespace

std::vector<PseudoLayoutStep> pseudo_layout_masks(const std::vector<AttentionMap>& text_maps_per_step,
                                                  const std::vector<std::vector<std::size_t>>& entity_token_indices,
                                                  double threshold, std::size_t switch_step,
                                                  const std::optional<std::vector<BoxNorm>>& prior, std::size_t n_t,
                                                  std::size_t dummy_count) {
    check_pseudo_layout(threshold, switch_step, text_maps_per_step.size());
    if (prior && prior->size() != entity_token_indices.size()) {
        throw ContractError("pseudo layout: prior box count does not match subject count");
    }
    std::vector<PseudoLayoutStep> schedule;
    for (std::size_t i = 0; i < text_maps_per_step.size(); ++i) {
        const auto& map = text_maps_per_step[i];
        StepLayout layout = i < switch_step ? layout_before_switch(entity_token_indices.size(), prior)
                                            : layout_from_map(&map, entity_token_indices, threshold);
        PseudoLayoutStep step;
        step.masks = assemble_masks(layout.boxes, map.latent_h, map.latent_w, n_t, dummy_count);
        step.boxes = std::move(layout.boxes);
        step.fallback = std::move(layout.fallback);
        schedule.push_back(std::move(step));
    }
    return schedule;
}

SampleResult cfg_sample(const Model& model, const EpsModel& eps_model, const NoiseSchedule& schedule,
                        const SampleRequest& request, Rng& rng) {
    NoGradGuard no_grad;
    const auto& cfg = model.config;
    const auto& dc = cfg.denoiser;
    const auto& sc = request.sampler;
    if (request.subjects.size() > max_subjects) throw ContractError("cfg_sample: at most 4 subjects");
    if (sc.guidance_scale < 0.0) throw ContractError("cfg_sample: guidance scale must be >= 0");
    if (!(sc.gamma >= 0.0 && sc.gamma <= 1.5)) throw ContractError("cfg_sample: gamma must lie in [0, 1.5]");
    if (sc.num_steps < 1 || sc.num_steps > schedule.steps()) {
        throw ContractError("cfg_sample: num_steps must lie in [1, " + std::to_string(schedule.steps()) + "]");
    }
    if (sc.pseudo_layout) check_pseudo_layout(sc.pseudo_layout->threshold, sc.pseudo_layout->switch_step, sc.num_steps);

    const std::size_t n = sc.num_steps;
    std::vector<std::size_t> timesteps(n);
    for (std::size_t i = 0; i < n; ++i) {
        timesteps[i] = n == 1 ? schedule.steps() - 1
                              : static_cast<std::size_t>(std::llround(static_cast<double>(schedule.steps() - 1) *
                                                                      static_cast<double>(n - 1 - i) /
                                                                      static_cast<double>(n - 1)));
    }

    Conditioning cond_c, cond_u;
    cond_c.text = encode_text(model.params, cfg.text, model.vocab, request.prompt_ids);
    cond_u.text = encode_text(model.params, cfg.text, model.vocab, {model.vocab.null()});
    cond_c.gamma = cond_u.gamma = sc.gamma;
    std::vector<BoxNorm> boxes;
    std::vector<std::vector<std::size_t>> entity_tokens;
    if (!request.subjects.empty()) {
        ImageCondition image = project_subjects(model.params, cfg, model.vocab, request.subjects, nullptr, false);
        if (request.blend) {
            const auto& b = *request.blend;
            ImageCondition other = project_subjects(model.params, cfg, model.vocab, {b.other}, nullptr, false);
            image = replace_subject_tokens(
                image, b.subject, interpolate_subject_tokens(subject_tokens(image, b.subject), other.tokens, b.lambda));
        }
        cond_c.image = std::move(image);
        for (const auto& s : request.subjects) {
            boxes.push_back(s.box);
            entity_tokens.push_back(entity_positions(request.prompt_ids, s.entity));
        }
        cond_c.boxes = boxes;
    }

    SampleResult result;
    Tensor x = normal_tensor({dc.latent_h * dc.latent_w, dc.channels}, rng);
    std::optional<AttentionMap> last_text_map;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t t = timesteps[i];
        if (sc.pseudo_layout && cond_c.image) {
            const auto& pl = *sc.pseudo_layout;
            std::optional<std::vector<BoxNorm>> prior;
            if (request.pseudo_layout_prior) prior = boxes;
            StepLayout layout = (i < pl.switch_step || !last_text_map)
                                    ? layout_before_switch(boxes.size(), prior)
                                    : layout_from_map(&*last_text_map, entity_tokens, pl.threshold);
            cond_c.boxes = layout.boxes;
        }
        result.layout_per_step.push_back(cond_c.boxes);

        DenoiserOutput out_c = eps_model.predict(x, t, cond_c);
        Tensor eps = out_c.eps;
        if (sc.guidance_scale != 1.0) {
            DenoiserOutput out_u = eps_model.predict(x, t, cond_u);
            eps = guided_epsilon(out_u.eps, out_c.eps, sc.guidance_scale);
        }
        if (!out_c.attention.empty()) last_text_map = out_c.attention.front().text;
        result.final_attention = std::move(out_c.attention);

        const double abar = schedule.alpha_bars[t];
        const double abar_prev = i + 1 < n ? schedule.alpha_bars[timesteps[i + 1]] : 1.0;
        auto xv = x.data();
        auto ev = eps.data();
        std::vector<double> x0(xv.size());
        for (std::size_t k = 0; k < xv.size(); ++k) {
            x0[k] = std::clamp((xv[k] - std::sqrt(1.0 - abar) * ev[k]) / std::sqrt(abar), -1.0, 1.0);
        }
        if (i + 1 == n) {
            x = Tensor::from(x.shape(), std::move(x0));
            break;
        }
        const double beta = 1.0 - abar / abar_prev;
        const double c0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
        const double ct = std::sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar);
        const double sigma = std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
        std::vector<double> next(xv.size());
        for (std::size_t k = 0; k < xv.size(); ++k) next[k] = c0 * x0[k] + ct * xv[k] + sigma * rng.normal();
        x = Tensor::from(x.shape(), std::move(next));
    }
    result.latent = x;
    result.image = latent_to_image(x, dc.latent_h, dc.latent_w, request.image_h, request.image_w);
    return result;
}

}  // namespace msd
