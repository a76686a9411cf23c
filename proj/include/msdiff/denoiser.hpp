#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "msdiff/cross_attention.hpp"
#include "msdiff/model_config.hpp"
#include "msdiff/resampler.hpp"

namespace msd {

/// Everything the denoiser consumes besides the noisy latent and timestep.
struct Conditioning {
    Tensor text;                          // c_t, [L x d_t]
    std::optional<ImageCondition> image;  // absent: image branch disabled
    std::vector<BoxNorm> boxes;           // one per subject in `image`, drives the masks
    double gamma = 1.0;
};

struct LayerAttention {
    std::size_t resolution = 0;
    AttentionMap text;
    AttentionMap image;  // weights undefined when the image branch was off
};

struct DenoiserOutput {
    Tensor eps;  // [HW x channels]
    std::vector<LayerAttention> attention;
};

/// Noise predictor interface; the toy UNet implements it and tests substitute stubs.
class EpsModel {
public:
    virtual ~EpsModel() = default;
    virtual DenoiserOutput predict(const Tensor& z_t, std::size_t t, const Conditioning& cond) const = 0;
};

/// Config, vocabulary and parameters of one toy latent-diffusion model.
struct Model {
    ModelConfig config;
    Vocab vocab;
    ParamStore params;

    /// Fresh parameters drawn from Rng(seed) in a fixed registration order.
    static Model create(const ModelConfig& config, std::uint64_t seed);
};

void validate(const ModelConfig& config);

/// Two-level UNet: conv stem at full latent resolution, one 2x downsample, and
/// the dual cross-attention block at each resolution in attn_resolutions.
class ToyUNet : public EpsModel {
public:
    explicit ToyUNet(const Model& model) : model_(model) {}
    DenoiserOutput predict(const Tensor& z_t, std::size_t t, const Conditioning& cond) const override;

    static void register_params(ParamStore& params, const ModelConfig& cfg, Rng& rng);

private:
    const Model& model_;
};

}  // namespace msd
