#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace msd {

struct TextEncoderConfig {
    std::size_t d_t = 32;
    std::size_t max_prompt_len = 24;
};

struct PatchEncoderConfig {
    std::size_t crop_size = 16;  // subject crops are resized to crop_size x crop_size
    std::size_t patch = 4;
    std::size_t d_i = 32;
};

enum class ProjectorKind {
    grounding_resampler,  // resampler with grounding-token queries
    resampler,            // resampler with learned base queries only
    linear,               // mean-pooled patches through one linear map
};

struct ResamplerConfig {
    std::size_t depth = 2;
    std::size_t n_t = 4;
    std::size_t d_q = 32;
    std::size_t d_c = 32;
    std::size_t heads = 2;
    std::size_t num_freqs = 8;
    double grounding_drop_prob = 0.1;
    ProjectorKind projector = ProjectorKind::grounding_resampler;
};

struct DenoiserConfig {
    std::size_t latent_h = 16;
    std::size_t latent_w = 16;
    std::size_t channels = 3;
    std::size_t base_width = 16;
    std::vector<std::size_t> attn_resolutions{16, 8};
    std::size_t heads = 1;
    std::size_t dummy_count = 4;  // one block of n_t dummy tokens
    bool use_mca = true;          // masked multi-subject image attention
    std::size_t time_dim = 32;
};

struct ScheduleConfig {
    std::size_t T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct ModelConfig {
    TextEncoderConfig text;
    PatchEncoderConfig patch;
    ResamplerConfig resampler;
    DenoiserConfig denoiser;
    ScheduleConfig schedule;
};

struct PseudoLayoutConfig {
    double threshold = 0.5;
    std::size_t switch_step = 10;
};

struct SamplerConfig {
    double guidance_scale = 7.5;
    double gamma = 0.6;
    std::size_t num_steps = 50;
    std::size_t num_samples = 1;
    std::optional<PseudoLayoutConfig> pseudo_layout;
};

}  // namespace msd
