#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "msdiff/diffusion.hpp"

namespace msd {

struct DataConfig {
    std::size_t num_samples = 500;
    std::size_t canvas = 32;
    double jitter = 1.0;
    double caption_color_prob = 0.5;
};

struct TrainConfig {
    std::size_t base_steps = 2000;  // text-only pre-training of the base model
    std::size_t steps = 2000;       // adapter training
    std::size_t batch = 4;
    double lr = 1e-3;
    double p_drop = 0.05;  // text and image condition dropout, each
    double grounding_drop = 0.1;
    double attention_loss_weight = 0.0;  // 0 or 0.01
    AttentionLossBranch attention_loss_branch = AttentionLossBranch::image;
    double gamma_train = 1.0;
    bool freeze_base = true;
    bool joint = false;  // one phase, everything trainable, no base pre-training
    std::size_t checkpoint_every = 0;
};

struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    SamplerConfig sample;
};

/// Strict JSON reader: every field is optional, unknown keys and wrong types
/// raise ParseError naming the key path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

/// Checks value ranges; ContractError naming the field.
void validate(const RunConfig& cfg);

/// The model config with training-time settings folded in.
ModelConfig effective_model_config(const RunConfig& cfg);

}  // namespace msd
