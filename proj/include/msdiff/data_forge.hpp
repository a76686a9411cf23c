#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msdiff/image.hpp"
#include "msdiff/rng.hpp"
#include "msdiff/sample.hpp"

namespace msd {

// Synthetic "video" scenes of flat-colored shapes on a plain background.

/// Shape geometry in normalized canvas units. `scale` is the full extent of
/// the unrotated shape (half-extent scale / 2); rotation in radians.
struct SubjectSpec {
    std::string shape;
    std::string color;
    double cx = 0.5, cy = 0.5;
    double scale = 0.3;
    double rotation = 0.0;
};

struct SceneSpec {
    std::vector<SubjectSpec> subjects;  // painted in order
    std::string background = "gray";
    std::size_t canvas = 32;
};

Rgb color_rgb(const std::string& color);
Rgb background_rgb(const std::string& background);

/// Point (px, py) in normalized coordinates lies inside the subject's shape.
bool inside_shape(const SubjectSpec& s, double px, double py);
/// Coverage of pixel centres, row-major canvas x canvas.
std::vector<bool> subject_coverage(const SubjectSpec& s, std::size_t canvas);
/// Tightest pixel-aligned box around the covered pixels; ContractError when none.
BoxNorm tight_box(const SubjectSpec& s, std::size_t canvas);
Tensor render_scene(const SceneSpec& scene);

struct SubjectAnnotation {
    std::size_t subject = 0;  // index into the frame's SceneSpec
    std::string shape;
    std::string color;
    BoxNorm box;
};

struct Frame {
    SceneSpec spec;
    Tensor image;
    std::vector<SubjectAnnotation> annotations;  // shuffled order
};

struct ScenePair {
    Frame reference;
    Frame target;
};

struct ForgeConfig {
    std::size_t canvas = 32;
    double jitter = 1.0;  // multiplier on the frame-to-frame perturbation
    std::size_t crop_size = 16;
    double caption_color_prob = 0.5;
    double match_threshold = 0.3;
};

SceneSpec draw_scene(Rng& rng, std::size_t canvas);
/// Perturbs every subject: centre by up to 0.15 * jitter, scale by a factor in
/// [0.8, 1.25]^jitter, rotation by up to 30 degrees * jitter. Redraws a subject
/// that would leave the canvas; fails after bounded retries.
SceneSpec jitter_scene(const SceneSpec& scene, double jitter, Rng& rng);
Frame render_frame(const SceneSpec& spec, Rng& rng);
ScenePair synth_scene_pair(Rng& rng, const ForgeConfig& cfg);

/// Box crop resized to crop_size x crop_size.
Tensor crop_box(const Tensor& image, const BoxNorm& box, std::size_t crop_size);

using EmbedFn = std::function<std::vector<double>(const Tensor& crop)>;

struct MatchResult {
    std::vector<std::optional<std::size_t>> target_to_ref;  // per target annotation
    std::vector<double> cost;                               // matched cost, or 1.0 when unmatched
    std::vector<std::size_t> fallback;                      // target annotations resolved from the target frame
    std::vector<std::size_t> unmatched_ref;
};

/// Hungarian matching on cost = 1 - cosine similarity of crop embeddings;
/// pairs costing more than `threshold` are rejected.
MatchResult match_subjects(const Frame& reference, const Frame& target, const EmbedFn& embed, std::size_t crop_size,
                           double threshold);

struct MatchedSubject {
    Tensor crop;
    std::string shape;
    std::string color;
    BoxNorm box;  // target frame
    bool from_target = false;
};

struct MatchedSample {
    Tensor target_image;
    std::string caption;
    std::vector<MatchedSubject> subjects;
};

struct FilterRules {
    double min_area = 0.02;
    double max_area = 0.8;
    double min_aspect = 0.2;
    double max_aspect = 5.0;

    bool keeps(const BoxNorm& box) const;  // closed intervals
};

/// Drops subjects failing the rules, then pads to four slots. Returns nullopt
/// when nothing survives.
std::optional<TrainingSample> filter_and_pad(const MatchedSample& sample, const Vocab& vocab,
                                             const FilterRules& rules = {});

/// "a red circle and a square on a gray background"; each subject's color is
/// mentioned with probability color_prob.
std::string make_caption(const SceneSpec& scene, Rng& rng, double color_prob);

/// One usable training sample from rng, redrawing scenes the filter rejects.
TrainingSample forge_sample(Rng& rng, const ForgeConfig& cfg, const Vocab& vocab, const EmbedFn& embed);

/// Sample i is drawn from Rng::derive(seed, i); generation runs on the worker pool.
std::vector<TrainingSample> forge_dataset(std::size_t count, std::uint64_t seed, const ForgeConfig& cfg,
                                          const Vocab& vocab, const EmbedFn& embed);

/// Pixel IoU of one subject's coverage in two frames.
double coverage_iou(const SubjectSpec& a, const SubjectSpec& b, std::size_t canvas);

inline constexpr int dataset_format_version = 1;

/// manifest.json plus PPM files per sample: target_NNNNN.ppm, crop_NNNNN_J.ppm.
void write_dataset(const std::vector<TrainingSample>& samples, const std::string& dir);
std::vector<TrainingSample> read_dataset(const std::string& dir, const Vocab& vocab);

}  // namespace msd
