#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msdiff/checkpoint.hpp"
#include "msdiff/data_forge.hpp"
#include "msdiff/eval_bench.hpp"

namespace msd {

// -- data ----------------------------------------------------------------------

/// Crop embedder used for cross-frame matching: a fixed, seed-independent
/// random patch encoder followed by mean pooling.
EmbedFn matching_embedder(const PatchEncoderConfig& cfg = {});

ForgeConfig forge_config(const RunConfig& cfg);

/// Generates `count` samples from `seed` and writes them to `dir`.
void gen_data(const std::string& dir, std::size_t count, std::uint64_t seed, const RunConfig& cfg);

// -- training ------------------------------------------------------------------

struct LossRow {
    std::size_t step = 0;
    double l_ip = 0.0;
    double l_am = 0.0;
};

struct TrainState {
    Model model;
    std::vector<LossRow> log;
    std::uint64_t step = 0;  // optimizer steps taken over all phases
    std::string rng_state;
};

using CheckpointHook = std::function<void(const TrainState&)>;

/// Text-only pre-training of the base parameters (phase 1); a no-op with
/// train.joint or base_steps = 0. Uses Rng::derive(seed, 10).
void train_base(TrainState& state, const RunConfig& cfg, const std::vector<TrainingSample>& data,
                const CheckpointHook& hook = {});

/// Subject-conditioned training (phase 2). With freeze_base only adapter
/// parameters move; joint mode trains everything. Uses Rng::derive(seed, 11).
void train_adapters(TrainState& state, const RunConfig& cfg, const std::vector<TrainingSample>& data,
                    const CheckpointHook& hook = {});

/// Fresh model from cfg.seed, then both phases.
TrainState train(const RunConfig& cfg, const std::vector<TrainingSample>& data, const CheckpointHook& hook = {});

std::string loss_log_csv(const std::vector<LossRow>& log);

// -- sampling ------------------------------------------------------------------

struct SubjectFile {
    std::string image_path;
    std::string entity;
    BoxNorm box;
};

struct SampleJob {
    std::string prompt;
    std::vector<SubjectFile> subjects;
    SamplerConfig sampler;
    bool pseudo_layout_prior = false;
    std::uint64_t seed = 0;
    bool dump_attention = false;
};

/// Trajectory k uses Rng::derive(seed, k) and writes <prefix>_k.ppm; with
/// dump_attention also <prefix>_k_s<j>_text.pgm and, when the image branch
/// ran, <prefix>_k_s<j>_image.pgm. Returns the written paths.
std::vector<std::string> sample_to_files(const Model& model, const SampleJob& job, const std::string& prefix);

/// Builds the sample request for one job (reads subject images).
SampleRequest make_request(const Model& model, const SampleJob& job);

}  // namespace msd
