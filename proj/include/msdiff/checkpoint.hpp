#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "msdiff/config.hpp"
#include "msdiff/denoiser.hpp"

namespace msd {

inline constexpr int checkpoint_format_version = 1;

// File layout: u64 little-endian header length, JSON header, then every
// tensor's values as little-endian f64 in header order.

struct TensorRecord {
    std::string name;
    Shape shape;
    std::size_t byte_offset = 0;  // into the blob
    ParamGroup group = ParamGroup::base;
};

struct ParamFile {
    std::vector<TensorRecord> tensors;
    std::string meta_json;  // caller-defined header fields
    ParamStore params;
};

void save_params(const std::string& path, const ParamStore& params, const std::string& meta_json = "{}");
ParamFile load_params(const std::string& path);

struct Checkpoint {
    RunConfig config;
    Model model;
    std::uint64_t step = 0;
    std::string rng_state;
};

void save_checkpoint(const std::string& path, const Model& model, const RunConfig& config, std::uint64_t step,
                     const std::string& rng_state);
/// Rebuilds the model from the stored config and overwrites every parameter;
/// names and shapes must match exactly.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace msd
