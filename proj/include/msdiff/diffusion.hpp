#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "msdiff/denoiser.hpp"
#include "msdiff/sample.hpp"

namespace msd {

/// Linear-beta DDPM schedule; alpha_bars[t] = prod_{s<=t} (1 - beta_s).
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alpha_bars;

    static NoiseSchedule linear(const ScheduleConfig& cfg);
    std::size_t steps() const { return betas.size(); }
};

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& z0, std::size_t t, const Tensor& eps);
// The same with an explicit abar, for schedules built elsewhere.
Tensor q_sample_abar(double alpha_bar, const Tensor& z0, const Tensor& eps);

// Pixel image [H, W, 3] in [0, 1] <-> latent [h*w x 3] in [-1, 1]. The latent is
// the image average-pooled down to the denoiser grid.
Tensor image_to_latent(const Tensor& image, std::size_t latent_h, std::size_t latent_w);
Tensor latent_to_image(const Tensor& latent, std::size_t latent_h, std::size_t latent_w, std::size_t out_h,
                       std::size_t out_w);

enum class AttentionLossBranch { image, text, both };

struct TrainOptions {
    double p_drop_text = 0.05;
    double p_drop_image = 0.05;
    double gamma = 1.0;
    double attention_loss_weight = 0.0;
    AttentionLossBranch attention_branch = AttentionLossBranch::image;
    bool use_subjects = true;  // false trains the text-only base model
};

struct LossParts {
    Tensor total;        // scalar to differentiate
    double l_ip = 0.0;   // mean epsilon MSE
    double l_am = 0.0;   // mean attention-map loss (unweighted), 0 when unused
};

/// Epsilon-prediction objective averaged over the batch, with independent
/// text/image condition dropout and optional weighted attention-map loss.
LossParts training_loss(const Model& model, const EpsModel& eps_model, const NoiseSchedule& schedule,
                        const std::vector<TrainingSample>& batch, Rng& rng, const TrainOptions& options);

/// eps_uncond + s (eps_cond - eps_uncond); exactly eps_cond at s = 1 and
/// exactly eps_uncond at s = 0.
Tensor guided_epsilon(const Tensor& eps_uncond, const Tensor& eps_cond, double guidance_scale);

/// (1 - lambda) a + lambda b; returns a / b bitwise at lambda = 0 / 1.
Tensor interpolate_subject_tokens(const Tensor& tokens_a, const Tensor& tokens_b, double lambda);

struct BoxFromHeatmap {
    BoxNorm box;
    bool fallback = false;  // nothing passed the threshold; full frame used
};

/// Tightest box around cells with heat >= threshold.
BoxFromHeatmap heatmap_to_box(const Tensor& heatmap, double threshold);

struct PseudoLayoutStep {
    std::vector<BoxNorm> boxes;
    std::vector<bool> fallback;
    AssembledMask masks;
};

/// Mask schedule for pseudo layout guidance: before switch_step the prior
/// boxes (or full frame), afterwards boxes read off thresholded attribution
/// heatmaps of each subject's entity tokens in that step's text attention map.
std::vector<PseudoLayoutStep> pseudo_layout_masks(const std::vector<AttentionMap>& text_maps_per_step,
                                                  const std::vector<std::vector<std::size_t>>& entity_token_indices,
                                                  double threshold, std::size_t switch_step,
                                                  const std::optional<std::vector<BoxNorm>>& prior, std::size_t n_t,
                                                  std::size_t dummy_count);

struct SubjectBlend {
    std::size_t subject = 0;  // which subject's tokens are blended
    SubjectInput other;
    double lambda = 0.0;
};

struct SampleRequest {
    std::vector<TokenId> prompt_ids;
    std::vector<SubjectInput> subjects;  // 0..4; boxes come from each subject
    SamplerConfig sampler;
    bool pseudo_layout_prior = false;     // use the given boxes before the switch step
    std::optional<SubjectBlend> blend;
    std::size_t image_h = 32, image_w = 32;
};

struct SampleResult {
    Tensor image;  // [H, W, 3] in [0, 1]
    Tensor latent;
    std::vector<LayerAttention> final_attention;  // conditional pass of the last step
    std::vector<std::vector<BoxNorm>> layout_per_step;
};

/// Ancestral DDPM over num_steps evenly strided timesteps with classifier-free
/// guidance. The unconditional pass uses the NULL prompt and no image branch.
SampleResult cfg_sample(const Model& model, const EpsModel& eps_model, const NoiseSchedule& schedule,
                        const SampleRequest& request, Rng& rng);

/// Token positions of `entity` inside the prompt.
std::vector<std::size_t> entity_positions(const std::vector<TokenId>& prompt_ids, TokenId entity);

}  // namespace msd
