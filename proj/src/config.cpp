#include "msdiff/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msdiff/error.hpp"

namespace msd {

using nlohmann::json;

namespace {

class Reader {
public:
    Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
    }

    void field(const char* key, std::size_t& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned()) fail(name(key), "expected a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    void field(const char* key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) fail(name(key), "expected a number");
            out = v->get<double>();
        }
    }
    void field(const char* key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) fail(name(key), "expected true or false");
            out = v->get<bool>();
        }
    }
    void field(const char* key, std::vector<std::size_t>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) fail(name(key), "expected an array of integers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number_unsigned()) fail(name(key), "expected an array of integers");
                out.push_back(e.get<std::size_t>());
            }
        }
    }
    template <class E>
    void choice(const char* key, E& out, const std::vector<std::pair<std::string, E>>& options) {
        if (const json* v = find(key)) {
            if (v->is_string()) {
                for (const auto& [label, value] : options) {
                    if (label == v->get<std::string>()) {
                        out = value;
                        return;
                    }
                }
            }
            std::string allowed;
            for (const auto& [label, _] : options) allowed += (allowed.empty() ? "" : ", ") + label;
            fail(name(key), "expected one of " + allowed);
        }
    }
    void section(const char* key, const std::function<void(Reader&)>& body) {
        if (const json* v = find(key)) {
            Reader sub(*v, name(key));
            body(sub);
            sub.finish();
        }
    }
    void finish() const {
        for (const auto& [key, _] : obj_.items()) {
            if (!seen_.count(key)) fail(name(key.c_str()), "unknown key");
        }
    }
    const json* find(const char* key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

private:
    std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
    [[noreturn]] static void fail(const std::string& key, const std::string& what) {
        throw ParseError("config: " + key + ": " + what);
    }

    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

const std::vector<std::pair<std::string, ProjectorKind>> projector_names{
    {"grounding_resampler", ProjectorKind::grounding_resampler},
    {"resampler", ProjectorKind::resampler},
    {"linear", ProjectorKind::linear}};

const std::vector<std::pair<std::string, AttentionLossBranch>> branch_names{
    {"image", AttentionLossBranch::image}, {"text", AttentionLossBranch::text}, {"both", AttentionLossBranch::both}};

template <class E>
std::string label_of(E value, const std::vector<std::pair<std::string, E>>& options) {
    for (const auto& [label, v] : options)
        if (v == value) return label;
    throw InternalError("config: unnamed enum value");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    RunConfig c;
    Reader r(root, "");
    std::uint64_t seed = c.seed;
    if (const json* v = r.find("seed")) {
        if (!v->is_number_unsigned()) throw ParseError("config: seed: expected a non-negative integer");
        seed = v->get<std::uint64_t>();
    }
    c.seed = seed;
    r.section("data", [&](Reader& d) {
        d.field("num_samples", c.data.num_samples);
        d.field("canvas", c.data.canvas);
        d.field("jitter", c.data.jitter);
        d.field("caption_color_prob", c.data.caption_color_prob);
    });
    r.section("model", [&](Reader& m) {
        m.section("text", [&](Reader& t) {
            t.field("d_t", c.model.text.d_t);
            t.field("max_prompt_len", c.model.text.max_prompt_len);
        });
        m.section("patch", [&](Reader& p) {
            p.field("crop_size", c.model.patch.crop_size);
            p.field("patch", c.model.patch.patch);
            p.field("d_i", c.model.patch.d_i);
        });
        m.section("resampler", [&](Reader& rs) {
            rs.field("depth", c.model.resampler.depth);
            rs.field("n_t", c.model.resampler.n_t);
            rs.field("d_q", c.model.resampler.d_q);
            rs.field("d_c", c.model.resampler.d_c);
            rs.field("heads", c.model.resampler.heads);
            rs.field("num_freqs", c.model.resampler.num_freqs);
            rs.choice("projector", c.model.resampler.projector, projector_names);
        });
        m.section("denoiser", [&](Reader& d) {
            d.field("latent_h", c.model.denoiser.latent_h);
            d.field("latent_w", c.model.denoiser.latent_w);
            d.field("channels", c.model.denoiser.channels);
            d.field("base_width", c.model.denoiser.base_width);
            d.field("attn_resolutions", c.model.denoiser.attn_resolutions);
            d.field("heads", c.model.denoiser.heads);
            d.field("dummy_count", c.model.denoiser.dummy_count);
            d.field("use_mca", c.model.denoiser.use_mca);
            d.field("time_dim", c.model.denoiser.time_dim);
        });
        m.section("schedule", [&](Reader& s) {
            s.field("T", c.model.schedule.T);
            s.field("beta_start", c.model.schedule.beta_start);
            s.field("beta_end", c.model.schedule.beta_end);
        });
    });
    r.section("train", [&](Reader& t) {
        t.field("base_steps", c.train.base_steps);
        t.field("steps", c.train.steps);
        t.field("batch", c.train.batch);
        t.field("lr", c.train.lr);
        t.field("p_drop", c.train.p_drop);
        t.field("grounding_drop", c.train.grounding_drop);
        t.field("attention_loss_weight", c.train.attention_loss_weight);
        t.choice("attention_loss_branch", c.train.attention_loss_branch, branch_names);
        t.field("gamma_train", c.train.gamma_train);
        t.field("freeze_base", c.train.freeze_base);
        t.field("joint", c.train.joint);
        t.field("checkpoint_every", c.train.checkpoint_every);
    });
    r.section("sample", [&](Reader& s) {
        s.field("guidance_scale", c.sample.guidance_scale);
        s.field("gamma", c.sample.gamma);
        s.field("num_steps", c.sample.num_steps);
        s.field("num_samples", c.sample.num_samples);
        if (const json* v = s.find("pseudo_layout")) {
            if (!v->is_null()) {
                PseudoLayoutConfig pl;
                Reader p(*v, "sample.pseudo_layout");
                p.field("threshold", pl.threshold);
                p.field("switch_step", pl.switch_step);
                p.finish();
                c.sample.pseudo_layout = pl;
            }
        }
    });
    r.finish();
    validate(c);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
    const auto& m = c.model;
    json pseudo = nullptr;
    if (c.sample.pseudo_layout) {
        pseudo = {{"threshold", c.sample.pseudo_layout->threshold}, {"switch_step", c.sample.pseudo_layout->switch_step}};
    }
    json root = {
        {"seed", c.seed},
        {"data",
         {{"num_samples", c.data.num_samples},
          {"canvas", c.data.canvas},
          {"jitter", c.data.jitter},
          {"caption_color_prob", c.data.caption_color_prob}}},
        {"model",
         {{"text", {{"d_t", m.text.d_t}, {"max_prompt_len", m.text.max_prompt_len}}},
          {"patch", {{"crop_size", m.patch.crop_size}, {"patch", m.patch.patch}, {"d_i", m.patch.d_i}}},
          {"resampler",
           {{"depth", m.resampler.depth},
            {"n_t", m.resampler.n_t},
            {"d_q", m.resampler.d_q},
            {"d_c", m.resampler.d_c},
            {"heads", m.resampler.heads},
            {"num_freqs", m.resampler.num_freqs},
            {"projector", label_of(m.resampler.projector, projector_names)}}},
          {"denoiser",
           {{"latent_h", m.denoiser.latent_h},
            {"latent_w", m.denoiser.latent_w},
            {"channels", m.denoiser.channels},
            {"base_width", m.denoiser.base_width},
            {"attn_resolutions", m.denoiser.attn_resolutions},
            {"heads", m.denoiser.heads},
            {"dummy_count", m.denoiser.dummy_count},
            {"use_mca", m.denoiser.use_mca},
            {"time_dim", m.denoiser.time_dim}}},
          {"schedule", {{"T", m.schedule.T}, {"beta_start", m.schedule.beta_start}, {"beta_end", m.schedule.beta_end}}}}},
        {"train",
         {{"base_steps", c.train.base_steps},
          {"steps", c.train.steps},
          {"batch", c.train.batch},
          {"lr", c.train.lr},
          {"p_drop", c.train.p_drop},
          {"grounding_drop", c.train.grounding_drop},
          {"attention_loss_weight", c.train.attention_loss_weight},
          {"attention_loss_branch", label_of(c.train.attention_loss_branch, branch_names)},
          {"gamma_train", c.train.gamma_train},
          {"freeze_base", c.train.freeze_base},
          {"joint", c.train.joint},
          {"checkpoint_every", c.train.checkpoint_every}}},
        {"sample",
         {{"guidance_scale", c.sample.guidance_scale},
          {"gamma", c.sample.gamma},
          {"num_steps", c.sample.num_steps},
          {"num_samples", c.sample.num_samples},
          {"pseudo_layout", pseudo}}}};
    return root.dump(2) + "\n";
}

void validate(const RunConfig& c) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ContractError("config: " + what);
    };
    require(c.data.canvas > 0, "data.canvas must be positive");
    require(c.data.jitter >= 0.0, "data.jitter must be >= 0");
    require(c.data.caption_color_prob >= 0.0 && c.data.caption_color_prob <= 1.0,
            "data.caption_color_prob must lie in [0, 1]");
    require(c.data.canvas % c.model.denoiser.latent_h == 0 && c.data.canvas % c.model.denoiser.latent_w == 0,
            "data.canvas must be a multiple of the latent grid");
    require(c.train.batch > 0, "train.batch must be positive");
    require(c.train.lr > 0.0, "train.lr must be positive");
    require(c.train.p_drop >= 0.0 && c.train.p_drop <= 1.0, "train.p_drop must lie in [0, 1]");
    require(c.train.grounding_drop >= 0.0 && c.train.grounding_drop <= 1.0, "train.grounding_drop must lie in [0, 1]");
    require(c.train.attention_loss_weight == 0.0 || c.train.attention_loss_weight == 0.01,
            "train.attention_loss_weight must be 0 or 0.01");
    require(c.train.gamma_train >= 0.0, "train.gamma_train must be >= 0");
    require(c.sample.guidance_scale >= 0.0, "sample.guidance_scale must be >= 0");
    require(c.sample.gamma >= 0.0 && c.sample.gamma <= 1.5, "sample.gamma must lie in [0, 1.5]");
    require(c.sample.num_steps >= 1 && c.sample.num_steps <= c.model.schedule.T, "sample.num_steps must lie in [1, T]");
    require(c.sample.num_samples >= 1, "sample.num_samples must be >= 1");
    if (c.sample.pseudo_layout) {
        require(c.sample.pseudo_layout->threshold > 0.0 && c.sample.pseudo_layout->threshold < 1.0,
                "sample.pseudo_layout.threshold must lie in (0, 1)");
        require(c.sample.pseudo_layout->switch_step <= c.sample.num_steps,
                "sample.pseudo_layout.switch_step must not exceed sample.num_steps");
    }
    validate(effective_model_config(c));
}

ModelConfig effective_model_config(const RunConfig& c) {
    ModelConfig m = c.model;
    m.resampler.grounding_drop_prob = c.train.grounding_drop;
    return m;
}

}  // namespace msd
