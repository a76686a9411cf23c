// Command-line front end over the msdiff C API.
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msdiff/msdiff.h"

namespace {

constexpr int exit_usage = 1;
constexpr int exit_runtime = 2;

struct UsageError {
    std::string message;
};

int report(msd_status status) {
    if (status == MSD_OK) return 0;
    std::fprintf(stderr, "error (%s): %s\n", msd_status_name(status), msd_last_error());
    return status == MSD_ERR_ARGUMENT ? exit_usage : exit_runtime;
}

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<double> parse_numbers(const std::string& text, const std::string& flag, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw UsageError{"malformed " + flag + " '" + value + "'"};
        }
    }
    return out;
}

struct SubjectArg {
    std::string path;
    std::string entity;
    double box[4];
};

// img.ppm:entity:x0,y0,x1,y1 (the path may itself contain ':').
SubjectArg parse_subject(const std::string& spec) {
    const auto last = spec.rfind(':');
    const auto mid = last == std::string::npos || last == 0 ? std::string::npos : spec.rfind(':', last - 1);
    if (mid == std::string::npos || mid == 0 || last == mid + 1) {
        throw UsageError{"malformed --subject '" + spec + "': expected img.ppm:entity:x0,y0,x1,y1"};
    }
    SubjectArg s{spec.substr(0, mid), spec.substr(mid + 1, last - mid - 1), {}};
    const auto box = parse_numbers(spec.substr(last + 1), "--subject", spec);
    if (box.size() != 4) throw UsageError{"malformed --subject '" + spec + "': box needs four numbers"};
    for (int i = 0; i < 4; ++i) s.box[i] = box[i];
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toy multi-subject personalized diffusion"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic training dataset");
    std::string gen_out, gen_config;
    std::size_t gen_num = 0;
    std::uint64_t gen_seed = 0;
    double gen_jitter = 1.0;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--num", gen_num, "Number of samples")->required();
    gen->add_option("--seed", gen_seed, "Random seed");
    gen->add_option("--jitter", gen_jitter, "Frame-to-frame perturbation multiplier");
    gen->add_option("--config", gen_config, "Run config JSON");

    auto* train = app.add_subcommand("train", "Train a model");
    std::string train_config, train_data, train_out;
    train->add_option("--config", train_config, "Run config JSON");
    train->add_option("--data", train_data, "Dataset directory")->required();
    train->add_option("--out", train_out, "Checkpoint path; the loss log goes to <out>.loss.csv")->required();

    auto* sample = app.add_subcommand("sample", "Generate images");
    std::string s_ckpt, s_prompt, s_out = "sample", s_pseudo;
    std::vector<std::string> s_subjects;
    std::optional<double> s_gamma, s_guidance;
    std::optional<std::uint64_t> s_seed;
    std::optional<std::size_t> s_steps, s_num;
    bool s_dump = false;
    sample->add_option("--ckpt", s_ckpt, "Checkpoint")->required();
    sample->add_option("--prompt", s_prompt, "Prompt")->required();
    sample->add_option("--subject", s_subjects, "img.ppm:entity:x0,y0,x1,y1 (repeatable, up to 4)");
    sample->add_option("--gamma", s_gamma, "Image branch weight");
    sample->add_option("--guidance", s_guidance, "Classifier-free guidance scale");
    sample->add_option("--seed", s_seed, "Random seed");
    sample->add_option("--steps", s_steps, "Sampling steps");
    sample->add_option("--num-samples", s_num, "Images to generate");
    sample->add_option("--pseudo-layout", s_pseudo, "threshold,switch_step[,prior]");
    sample->add_flag("--dump-attn", s_dump, "Write per-subject attention heatmaps (PGM)");
    sample->add_option("--out", s_out, "Output path prefix");

    auto* eval = app.add_subcommand("eval", "Run a bench file");
    std::string e_ckpt, e_bench, e_out;
    std::size_t e_samples = 5;
    eval->add_option("--ckpt", e_ckpt, "Checkpoint")->required();
    eval->add_option("--bench", e_bench, "Bench JSON")->required();
    eval->add_option("--out", e_out, "Report JSON")->required();
    eval->add_option("--samples-per-case", e_samples, "Images per case");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_usage;
    }

    try {
        if (gen->parsed()) {
            std::optional<std::string> cfg;
            if (!gen_config.empty() && !(cfg = read_file(gen_config))) throw UsageError{"cannot read --config " + gen_config};
            return report(msd_gen_data(gen_out.c_str(), gen_num, gen_seed, gen_jitter, cfg ? cfg->c_str() : nullptr));
        }
        if (train->parsed()) {
            std::optional<std::string> cfg;
            if (!train_config.empty() && !(cfg = read_file(train_config))) {
                throw UsageError{"cannot read --config " + train_config};
            }
            const std::string log = train_out + ".loss.csv";
            return report(msd_train(cfg ? cfg->c_str() : nullptr, train_data.c_str(), train_out.c_str(), log.c_str()));
        }
        if (sample->parsed()) {
            std::vector<SubjectArg> subjects;
            for (const auto& spec : s_subjects) subjects.push_back(parse_subject(spec));
            std::vector<double> pseudo;
            if (!s_pseudo.empty()) {
                pseudo = parse_numbers(s_pseudo, "--pseudo-layout", s_pseudo);
                if (pseudo.size() < 2 || pseudo.size() > 3 || pseudo[1] < 0 || pseudo[1] != static_cast<std::size_t>(pseudo[1])) {
                    throw UsageError{"malformed --pseudo-layout '" + s_pseudo + "': expected threshold,switch_step[,prior]"};
                }
            }
            msd_model* model = nullptr;
            if (int rc = report(msd_model_load(s_ckpt.c_str(), &model))) return rc;
            msd_sample_options opt;
            msd_sample_options_init(model, &opt);
            std::vector<msd_subject> c_subjects;
            for (const auto& s : subjects) c_subjects.push_back({s.path.c_str(), s.entity.c_str(), {s.box[0], s.box[1], s.box[2], s.box[3]}});
            opt.prompt = s_prompt.c_str();
            opt.subjects = c_subjects.data();
            opt.num_subjects = c_subjects.size();
            if (s_gamma) opt.gamma = *s_gamma;
            if (s_guidance) opt.guidance_scale = *s_guidance;
            if (s_seed) opt.seed = *s_seed;
            if (s_steps) opt.num_steps = *s_steps;
            if (s_num) opt.num_samples = *s_num;
            if (!pseudo.empty()) {
                opt.pseudo_layout = 1;
                opt.pseudo_threshold = pseudo[0];
                opt.pseudo_switch_step = static_cast<std::size_t>(pseudo[1]);
                opt.pseudo_use_prior = pseudo.size() == 3 && pseudo[2] != 0.0;
            }
            opt.dump_attention = s_dump;
            const int rc = report(msd_sample(model, &opt, s_out.c_str()));
            msd_model_free(model);
            return rc;
        }
        if (eval->parsed()) {
            msd_model* model = nullptr;
            if (int rc = report(msd_model_load(e_ckpt.c_str(), &model))) return rc;
            std::size_t failed = 0;
            int rc = report(msd_eval(model, e_bench.c_str(), e_out.c_str(), e_samples, &failed));
            msd_model_free(model);
            if (rc == 0 && failed > 0) {
                std::fprintf(stderr, "error: %zu bench case(s) failed; see %s\n", failed, e_out.c_str());
                rc = exit_runtime;
            }
            return rc;
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.message.c_str());
        return exit_usage;
    }
    return exit_usage;
}
