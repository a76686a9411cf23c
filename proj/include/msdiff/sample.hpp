#pragma once

#include <array>
#include <string>
#include <vector>

#include "msdiff/embedding.hpp"
#include "msdiff/resampler.hpp"

namespace msd {

struct SubjectSlot {
    Tensor crop;  // reference crop, [S, S, 3]
    TokenId entity = 0;
    BoxNorm box;  // in the target frame
    bool is_pad = true;
};

/// One training example: target frame, caption and four subject slots with
/// real subjects first and pads after.
struct TrainingSample {
    Tensor target_image;  // [H, W, 3]
    std::string caption;
    std::vector<TokenId> caption_ids;
    std::array<SubjectSlot, max_subjects> subjects;

    std::size_t subject_count() const;
};

}  // namespace msd
