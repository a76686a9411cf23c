#include "msdiff/data_forge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "msdiff/error.hpp"
#include "msdiff/hungarian.hpp"
#include "msdiff/parallel.hpp"

namespace msd {

using nlohmann::json;

Rgb color_rgb(const std::string& color) {
    if (color == "red") return {0.9, 0.1, 0.1};
    if (color == "green") return {0.1, 0.8, 0.2};
    if (color == "blue") return {0.15, 0.25, 0.95};
    if (color == "yellow") return {0.95, 0.9, 0.1};
    if (color == "purple") return {0.6, 0.15, 0.8};
    throw VocabError("unknown color '" + color + "'");
}

Rgb background_rgb(const std::string& background) {
    if (background == "gray") return {0.5, 0.5, 0.5};
    if (background == "black") return {0.0, 0.0, 0.0};
    if (background == "white") return {1.0, 1.0, 1.0};
    throw VocabError("unknown background '" + background + "'");
}

namespace {

constexpr double star_inner_ratio = 0.4;

bool inside_star(double x, double y, double r) {
    // Ray casting against the 10-vertex outline, first point straight up.
    bool in = false;
    double px = 0.0, py = 0.0;
    for (int k = 0; k <= 10; ++k) {
        const double a = k * std::numbers::pi / 5.0 - std::numbers::pi / 2.0;
        const double rad = (k % 2 == 0) ? r : r * star_inner_ratio;
        const double vx = rad * std::cos(a), vy = rad * std::sin(a);
        if (k > 0 && ((vy > y) != (py > y)) && x < (px - vx) * (y - vy) / (py - vy) + vx) in = !in;
        px = vx;
        py = vy;
    }
    return in;
}

// Upper bound on the distance from the centre to any covered point.
double reach(double scale) { return scale / 2.0 * std::numbers::sqrt2; }

bool on_canvas(const SubjectSpec& s) {
    const double m = reach(s.scale);
    return s.scale > 0.0 && s.scale <= 0.6 && s.cx - m >= 0.0 && s.cx + m <= 1.0 && s.cy - m >= 0.0 && s.cy + m <= 1.0;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

double box_iou(const BoxNorm& a, const BoxNorm& b) {
    const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

BoxNorm reach_box(const SubjectSpec& s) {
    const double m = reach(s.scale);
    return {s.cx - m, s.cy - m, s.cx + m, s.cy + m};
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

}  // namespace

bool inside_shape(const SubjectSpec& s, double px, double py) {
    const double dx = px - s.cx, dy = py - s.cy;
    const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
    const double lx = c * dx + sn * dy;
    const double ly = -sn * dx + c * dy;
    const double r = s.scale / 2.0;
    if (s.shape == "circle") return lx * lx + ly * ly <= r * r;
    if (s.shape == "square") return std::abs(lx) <= r && std::abs(ly) <= r;
    if (s.shape == "triangle") return ly <= r && std::abs(lx) <= (ly + r) / 2.0;
    if (s.shape == "star") return inside_star(lx, ly, r);
    throw VocabError("unknown shape '" + s.shape + "'");
}

std::vector<bool> subject_coverage(const SubjectSpec& s, std::size_t canvas) {
    std::vector<bool> cov(canvas * canvas);
    const double inv = 1.0 / static_cast<double>(canvas);
    for (std::size_t y = 0; y < canvas; ++y)
        for (std::size_t x = 0; x < canvas; ++x)
            cov[y * canvas + x] = inside_shape(s, (static_cast<double>(x) + 0.5) * inv, (static_cast<double>(y) + 0.5) * inv);
    return cov;
}

BoxNorm tight_box(const SubjectSpec& s, std::size_t canvas) {
    auto cov = subject_coverage(s, canvas);
    std::size_t x0 = canvas, y0 = canvas, x1 = 0, y1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < canvas; ++y)
        for (std::size_t x = 0; x < canvas; ++x) {
            if (!cov[y * canvas + x]) continue;
            any = true;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    if (!any) throw ContractError("tight_box: " + s.shape + " covers no pixel centre");
    const double c = static_cast<double>(canvas);
    return BoxNorm::make(static_cast<double>(x0) / c, static_cast<double>(y0) / c, static_cast<double>(x1 + 1) / c,
                         static_cast<double>(y1 + 1) / c);
}

Tensor render_scene(const SceneSpec& scene) {
    Tensor img = make_image(scene.canvas, scene.canvas, background_rgb(scene.background));
    auto d = img.mutable_data();
    for (const auto& s : scene.subjects) {
        const Rgb rgb = color_rgb(s.color);
        auto cov = subject_coverage(s, scene.canvas);
        for (std::size_t i = 0; i < cov.size(); ++i)
            if (cov[i])
                for (std::size_t c = 0; c < 3; ++c) d[i * 3 + c] = rgb[c];
    }
    quantize_8bit(img);
    return img;
}

SceneSpec draw_scene(Rng& rng, std::size_t canvas) {
    SceneSpec scene;
    scene.canvas = canvas;
    const std::size_t n = 1 + rng.below(max_subjects);
    auto shapes = shape_words();
    auto colors = color_words();
    shuffle(shapes, rng);
    shuffle(colors, rng);
    scene.background = background_words()[rng.below(background_words().size())];
    for (std::size_t i = 0; i < n; ++i) {
        SubjectSpec s;
        s.shape = shapes[i];
        s.color = colors[i];
        s.scale = rng.uniform(0.25, 0.5);
        s.rotation = rng.uniform(-std::numbers::pi / 12.0, std::numbers::pi / 12.0);
        const double m = reach(s.scale);
        for (int attempt = 0; attempt < 50; ++attempt) {
            s.cx = rng.uniform(m, 1.0 - m);
            s.cy = rng.uniform(m, 1.0 - m);
            bool clear = true;
            for (const auto& prev : scene.subjects) clear = clear && box_iou(reach_box(prev), reach_box(s)) < 0.15;
            if (clear) break;
        }
        scene.subjects.push_back(s);
    }
    return scene;
}

SceneSpec jitter_scene(const SceneSpec& scene, double jitter, Rng& rng) {
    if (jitter < 0.0) throw ContractError("jitter must be >= 0");
    SceneSpec out = scene;
    for (std::size_t i = 0; i < scene.subjects.size(); ++i) {
        const SubjectSpec& base = scene.subjects[i];
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            SubjectSpec s = base;
            s.cx += rng.uniform(-0.15, 0.15) * jitter;
            s.cy += rng.uniform(-0.15, 0.15) * jitter;
            s.scale *= std::exp(rng.uniform(std::log(0.8), std::log(1.25)) * jitter);
            s.rotation += rng.uniform(-std::numbers::pi / 6.0, std::numbers::pi / 6.0) * jitter;
            if (on_canvas(s)) {
                out.subjects[i] = s;
                placed = true;
            }
        }
        if (!placed) throw InternalError("jitter_scene: subject " + std::to_string(i) + " kept leaving the canvas");
    }
    return out;
}

Frame render_frame(const SceneSpec& spec, Rng& rng) {
    Frame f;
    f.spec = spec;
    f.image = render_scene(spec);
    for (std::size_t i = 0; i < spec.subjects.size(); ++i) {
        const auto& s = spec.subjects[i];
        f.annotations.push_back({i, s.shape, s.color, tight_box(s, spec.canvas)});
    }
    shuffle(f.annotations, rng);
    return f;
}

ScenePair synth_scene_pair(Rng& rng, const ForgeConfig& cfg) {
    SceneSpec a = draw_scene(rng, cfg.canvas);
    SceneSpec b = jitter_scene(a, cfg.jitter, rng);
    ScenePair pair;
    pair.reference = render_frame(a, rng);
    pair.target = render_frame(b, rng);
    return pair;
}

Tensor crop_box(const Tensor& image, const BoxNorm& box, std::size_t crop_size) {
    require_image(image, "crop_box");
    const double h = static_cast<double>(image_height(image)), w = static_cast<double>(image_width(image));
    auto lo = [](double v, double n) { return static_cast<std::size_t>(std::clamp(std::floor(v * n + 1e-9), 0.0, n - 1)); };
    auto hi = [](double v, double n) { return static_cast<std::size_t>(std::clamp(std::ceil(v * n - 1e-9), 1.0, n)); };
    std::size_t x0 = lo(box.x0, w), y0 = lo(box.y0, h), x1 = hi(box.x1, w), y1 = hi(box.y1, h);
    x1 = std::max(x1, x0 + 1);
    y1 = std::max(y1, y0 + 1);
    return resize_nearest(crop(image, x0, y0, x1, y1), crop_size, crop_size);
}

MatchResult match_subjects(const Frame& reference, const Frame& target, const EmbedFn& embed, std::size_t crop_size,
                           double threshold) {
    std::vector<std::vector<double>> ref_emb, tgt_emb;
    for (const auto& a : reference.annotations) ref_emb.push_back(embed(crop_box(reference.image, a.box, crop_size)));
    for (const auto& a : target.annotations) tgt_emb.push_back(embed(crop_box(target.image, a.box, crop_size)));
    std::vector<std::vector<double>> cost(tgt_emb.size(), std::vector<double>(ref_emb.size()));
    for (std::size_t i = 0; i < tgt_emb.size(); ++i)
        for (std::size_t j = 0; j < ref_emb.size(); ++j) cost[i][j] = 1.0 - cosine(tgt_emb[i], ref_emb[j]);

    MatchResult r;
    r.target_to_ref.assign(tgt_emb.size(), std::nullopt);
    r.cost.assign(tgt_emb.size(), 1.0);
    std::vector<bool> ref_used(ref_emb.size(), false);
    for (const auto& [i, j] : hungarian_match(cost).pairs) {
        if (cost[i][j] > threshold) continue;
        r.target_to_ref[i] = j;
        r.cost[i] = cost[i][j];
        ref_used[j] = true;
    }
    for (std::size_t i = 0; i < tgt_emb.size(); ++i)
        if (!r.target_to_ref[i]) r.fallback.push_back(i);
    for (std::size_t j = 0; j < ref_emb.size(); ++j)
        if (!ref_used[j]) r.unmatched_ref.push_back(j);
    return r;
}

bool FilterRules::keeps(const BoxNorm& box) const {
    const double area = box.area();
    const double aspect = box.width() / box.height();
    return area >= min_area && area <= max_area && aspect >= min_aspect && aspect <= max_aspect;
}

std::optional<TrainingSample> filter_and_pad(const MatchedSample& sample, const Vocab& vocab, const FilterRules& rules) {
    TrainingSample out;
    std::size_t k = 0;
    for (const auto& s : sample.subjects) {
        if (!rules.keeps(s.box)) continue;
        if (k == max_subjects) throw ContractError("filter_and_pad: more than 4 subjects survive");
        out.subjects[k++] = SubjectSlot{s.crop, vocab.id(s.shape), s.box, false};
    }
    if (k == 0) return std::nullopt;
    const Shape crop_shape = out.subjects[0].crop.shape();
    for (; k < max_subjects; ++k) out.subjects[k] = SubjectSlot{Tensor::zeros(crop_shape), vocab.pad(), BoxNorm::full_frame(), true};
    out.target_image = sample.target_image;
    out.caption = sample.caption;
    out.caption_ids = vocab.encode(sample.caption);
    return out;
}

std::string make_caption(const SceneSpec& scene, Rng& rng, double color_prob) {
    std::vector<std::string> parts;
    for (const auto& s : scene.subjects) {
        const bool with_color = rng.uniform() < color_prob;
        parts.push_back("a " + (with_color ? s.color + " " : std::string()) + s.shape);
    }
    std::string text;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) text += parts.size() == 2 ? " and " : (i + 1 == parts.size() ? ", and " : ", ");
        text += parts[i];
    }
    return text + " on a " + scene.background + " background";
}

TrainingSample forge_sample(Rng& rng, const ForgeConfig& cfg, const Vocab& vocab, const EmbedFn& embed) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        ScenePair pair = synth_scene_pair(rng, cfg);
        MatchResult m = match_subjects(pair.reference, pair.target, embed, cfg.crop_size, cfg.match_threshold);
        MatchedSample ms;
        ms.target_image = pair.target.image;
        ms.caption = make_caption(pair.target.spec, rng, cfg.caption_color_prob);
        for (std::size_t i = 0; i < pair.target.annotations.size(); ++i) {
            const auto& ta = pair.target.annotations[i];
            MatchedSubject s{{}, ta.shape, ta.color, ta.box, !m.target_to_ref[i]};
            s.crop = m.target_to_ref[i]
                         ? crop_box(pair.reference.image, pair.reference.annotations[*m.target_to_ref[i]].box, cfg.crop_size)
                         : crop_box(pair.target.image, ta.box, cfg.crop_size);
            ms.subjects.push_back(std::move(s));
        }
        if (auto sample = filter_and_pad(ms, vocab)) return *sample;
    }
    throw InternalError("forge_sample: no usable scene after 100 draws");
}

std::vector<TrainingSample> forge_dataset(std::size_t count, std::uint64_t seed, const ForgeConfig& cfg,
                                          const Vocab& vocab, const EmbedFn& embed) {
    std::vector<TrainingSample> out(count);
    parallel_for(count, [&](std::size_t i) {
        Rng rng = Rng::derive(seed, i);
        out[i] = forge_sample(rng, cfg, vocab, embed);
    });
    return out;
}

double coverage_iou(const SubjectSpec& a, const SubjectSpec& b, std::size_t canvas) {
    auto ca = subject_coverage(a, canvas), cb = subject_coverage(b, canvas);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < ca.size(); ++i) {
        inter += ca[i] && cb[i];
        uni += ca[i] || cb[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// -- dataset files -----------------------------------------------------------

namespace {

std::string sample_file(const char* stem, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05zu.ppm", stem, i);
    return buf;
}

std::string crop_file(std::size_t i, std::size_t j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "crop_%05zu_%zu.ppm", i, j);
    return buf;
}

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
    throw ParseError("manifest.json: " + field + ": " + what);
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) field_error(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) field_error(path + "." + key, "missing");
    return *it;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + std::min(byte, text.size()), '\n'));
}

BoxNorm parse_box(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 4) field_error(path, "expected [x0, y0, x1, y1]");
    for (const auto& v : j)
        if (!v.is_number()) field_error(path, "expected numbers");
    try {
        return BoxNorm::make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
    } catch (const ContractError& e) {
        field_error(path, e.what());
    }
}

}  // namespace

void write_dataset(const std::vector<TrainingSample>& samples, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
    json records = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::string target = sample_file("target", i);
        write_ppm((fs::path(dir) / target).string(), s.target_image);
        json subjects = json::array();
        for (std::size_t j = 0; j < max_subjects; ++j) {
            const auto& slot = s.subjects[j];
            const std::string crop = crop_file(i, j);
            write_ppm((fs::path(dir) / crop).string(), slot.crop);
            subjects.push_back({{"crop", crop},
                                {"entity", slot.entity},
                                {"box", {slot.box.x0, slot.box.y0, slot.box.x1, slot.box.y1}},
                                {"is_pad", slot.is_pad}});
        }
        records.push_back({{"target", target}, {"caption", s.caption}, {"token_ids", s.caption_ids}, {"subjects", subjects}});
    }
    json manifest = {{"format_version", dataset_format_version}, {"count", samples.size()}, {"samples", records}};
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

std::vector<TrainingSample> read_dataset(const std::string& dir, const Vocab& vocab) {
    namespace fs = std::filesystem;
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    json m;
    try {
        m = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
    }
    const json& version = require(m, "format_version", "manifest");
    if (!version.is_number_integer()) field_error("format_version", "expected an integer");
    if (version.get<int>() != dataset_format_version) {
        throw VersionError("dataset format_version " + std::to_string(version.get<int>()) + " is not supported (expected " +
                           std::to_string(dataset_format_version) + ")");
    }
    const json& records = require(m, "samples", "manifest");
    if (!records.is_array()) field_error("samples", "expected an array");
    const json& count = require(m, "count", "manifest");
    if (!count.is_number_unsigned() || count.get<std::size_t>() != records.size()) {
        field_error("count", "does not match the number of samples");
    }

    std::vector<TrainingSample> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::string p = "samples[" + std::to_string(i) + "]";
        const json& r = records[i];
        TrainingSample s;
        const json& target = require(r, "target", p);
        if (!target.is_string()) field_error(p + ".target", "expected a file name");
        s.target_image = read_ppm((fs::path(dir) / target.get<std::string>()).string());
        const json& caption = require(r, "caption", p);
        if (!caption.is_string()) field_error(p + ".caption", "expected a string");
        s.caption = caption.get<std::string>();
        const json& ids = require(r, "token_ids", p);
        if (!ids.is_array()) field_error(p + ".token_ids", "expected an array");
        for (const auto& id : ids) {
            if (!id.is_number_unsigned() || id.get<std::size_t>() >= vocab.size()) {
                field_error(p + ".token_ids", "token id out of vocabulary");
            }
            s.caption_ids.push_back(id.get<TokenId>());
        }
        const json& subjects = require(r, "subjects", p);
        if (!subjects.is_array() || subjects.size() != max_subjects) field_error(p + ".subjects", "expected 4 slots");
        bool seen_pad = false;
        for (std::size_t j = 0; j < max_subjects; ++j) {
            const std::string q = p + ".subjects[" + std::to_string(j) + "]";
            const json& sj = subjects[j];
            SubjectSlot slot;
            const json& crop = require(sj, "crop", q);
            if (!crop.is_string()) field_error(q + ".crop", "expected a file name");
            slot.crop = read_ppm((fs::path(dir) / crop.get<std::string>()).string());
            const json& entity = require(sj, "entity", q);
            if (!entity.is_number_unsigned() || entity.get<std::size_t>() >= vocab.size()) {
                field_error(q + ".entity", "token id out of vocabulary");
            }
            slot.entity = entity.get<TokenId>();
            slot.box = parse_box(require(sj, "box", q), q + ".box");
            const json& pad = require(sj, "is_pad", q);
            if (!pad.is_boolean()) field_error(q + ".is_pad", "expected a boolean");
            slot.is_pad = pad.get<bool>();
            if (seen_pad && !slot.is_pad) field_error(q + ".is_pad", "real subject after a pad slot");
            seen_pad = seen_pad || slot.is_pad;
            s.subjects[j] = std::move(slot);
        }
        if (s.subjects[0].is_pad) field_error(p + ".subjects", "no real subject");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace msd
