#include "msdiff/msdiff.h"

#include <fstream>
#include <memory>
#include <string>

#include "msdiff/error.hpp"
#include "msdiff/pipeline.hpp"

struct msd_model {
    msd::RunConfig config;
    msd::Model model;
    std::uint64_t step = 0;
    std::string rng_state;
    std::string config_json;
};

namespace {

thread_local std::string last_error;

msd_status status_of(msd::ErrorKind kind) {
    switch (kind) {
        case msd::ErrorKind::shape: return MSD_ERR_SHAPE;
        case msd::ErrorKind::contract: return MSD_ERR_CONTRACT;
        case msd::ErrorKind::vocab: return MSD_ERR_VOCAB;
        case msd::ErrorKind::numeric: return MSD_ERR_NUMERIC;
        case msd::ErrorKind::parse: return MSD_ERR_PARSE;
        case msd::ErrorKind::io: return MSD_ERR_IO;
        case msd::ErrorKind::version: return MSD_ERR_VERSION;
        case msd::ErrorKind::internal: return MSD_ERR_INTERNAL;
    }
    return MSD_ERR_INTERNAL;
}

template <class F>
msd_status guarded(F&& body) {
    try {
        body();
        last_error.clear();
        return MSD_OK;
    } catch (const msd::Error& e) {
        last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        last_error = e.what();
        return MSD_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown error";
        return MSD_ERR_INTERNAL;
    }
}

msd_status bad_argument(const char* what) {
    last_error = what;
    return MSD_ERR_ARGUMENT;
}

msd::RunConfig config_from(const char* json) { return json ? msd::parse_run_config(json) : msd::RunConfig{}; }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw msd::IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw msd::IoError("write failed for '" + path + "'");
}

}  // namespace

extern "C" {

const char* msd_last_error(void) { return last_error.c_str(); }

const char* msd_status_name(msd_status status) {
    switch (status) {
        case MSD_OK: return "ok";
        case MSD_ERR_SHAPE: return "shape error";
        case MSD_ERR_CONTRACT: return "contract error";
        case MSD_ERR_VOCAB: return "vocabulary error";
        case MSD_ERR_NUMERIC: return "numeric error";
        case MSD_ERR_PARSE: return "parse error";
        case MSD_ERR_IO: return "io error";
        case MSD_ERR_VERSION: return "version error";
        case MSD_ERR_INTERNAL: return "internal error";
        case MSD_ERR_ARGUMENT: return "invalid argument";
    }
    return "unknown status";
}

msd_status msd_gen_data(const char* out_dir, size_t count, uint64_t seed, double jitter, const char* config_json) {
    if (!out_dir) return bad_argument("msd_gen_data: out_dir is null");
    return guarded([&] {
        msd::RunConfig cfg = config_from(config_json);
        cfg.data.jitter = jitter;
        msd::validate(cfg);
        msd::gen_data(out_dir, count, seed, cfg);
    });
}

msd_status msd_model_create(const char* config_json, msd_model** out) {
    if (!out) return bad_argument("msd_model_create: out is null");
    *out = nullptr;
    return guarded([&] {
        auto m = std::make_unique<msd_model>();
        m->config = config_from(config_json);
        msd::validate(m->config);
        m->model = msd::Model::create(msd::effective_model_config(m->config), m->config.seed);
        *out = m.release();
    });
}

msd_status msd_model_load(const char* path, msd_model** out) {
    if (!path || !out) return bad_argument("msd_model_load: null argument");
    *out = nullptr;
    return guarded([&] {
        msd::Checkpoint ck = msd::load_checkpoint(path);
        auto m = std::make_unique<msd_model>();
        m->config = ck.config;
        m->model = std::move(ck.model);
        m->step = ck.step;
        m->rng_state = ck.rng_state;
        *out = m.release();
    });
}

msd_status msd_model_save(const msd_model* model, const char* path) {
    if (!model || !path) return bad_argument("msd_model_save: null argument");
    return guarded([&] { msd::save_checkpoint(path, model->model, model->config, model->step, model->rng_state); });
}

void msd_model_free(msd_model* model) { delete model; }

msd_status msd_model_num_params(const msd_model* model, size_t* out) {
    if (!model || !out) return bad_argument("msd_model_num_params: null argument");
    *out = model->model.params.numel();
    last_error.clear();
    return MSD_OK;
}

msd_status msd_model_config_json(msd_model* model, const char** out) {
    if (!model || !out) return bad_argument("msd_model_config_json: null argument");
    return guarded([&] {
        model->config_json = msd::run_config_to_json(model->config);
        *out = model->config_json.c_str();
    });
}

msd_status msd_train(const char* config_json, const char* data_dir, const char* ckpt_path, const char* loss_csv_path) {
    if (!data_dir || !ckpt_path) return bad_argument("msd_train: data_dir and ckpt_path are required");
    return guarded([&] {
        const msd::RunConfig cfg = config_from(config_json);
        const msd::Vocab vocab;
        const auto data = msd::read_dataset(data_dir, vocab);
        const std::string ckpt = ckpt_path;
        auto hook = [&](const msd::TrainState& s) {
            msd::save_checkpoint(ckpt + ".step" + std::to_string(s.step), s.model, cfg, s.step, s.rng_state);
        };
        msd::TrainState state = msd::train(cfg, data, hook);
        msd::save_checkpoint(ckpt, state.model, cfg, state.step, state.rng_state);
        if (loss_csv_path) write_text(loss_csv_path, msd::loss_log_csv(state.log));
    });
}

msd_status msd_sample_options_init(const msd_model* model, msd_sample_options* options) {
    if (!model || !options) return bad_argument("msd_sample_options_init: null argument");
    const auto& s = model->config.sample;
    *options = msd_sample_options{};
    options->prompt = "";
    options->guidance_scale = s.guidance_scale;
    options->gamma = s.gamma;
    options->num_steps = s.num_steps;
    options->num_samples = s.num_samples;
    options->seed = model->config.seed;
    if (s.pseudo_layout) {
        options->pseudo_layout = 1;
        options->pseudo_threshold = s.pseudo_layout->threshold;
        options->pseudo_switch_step = s.pseudo_layout->switch_step;
    }
    last_error.clear();
    return MSD_OK;
}

msd_status msd_sample(const msd_model* model, const msd_sample_options* options, const char* out_prefix) {
    if (!model || !options || !out_prefix || !options->prompt) return bad_argument("msd_sample: null argument");
    if (options->num_subjects > 0 && !options->subjects) return bad_argument("msd_sample: subjects is null");
    return guarded([&] {
        msd::SampleJob job;
        job.prompt = options->prompt;
        for (size_t i = 0; i < options->num_subjects; ++i) {
            const msd_subject& s = options->subjects[i];
            if (!s.image_path || !s.entity) throw msd::ContractError("msd_sample: subject with null field");
            job.subjects.push_back({s.image_path, s.entity, msd::BoxNorm::make(s.box[0], s.box[1], s.box[2], s.box[3])});
        }
        job.sampler.guidance_scale = options->guidance_scale;
        job.sampler.gamma = options->gamma;
        job.sampler.num_steps = options->num_steps;
        job.sampler.num_samples = options->num_samples;
        if (options->num_samples == 0) throw msd::ContractError("msd_sample: num_samples must be >= 1");
        if (options->pseudo_layout) {
            job.sampler.pseudo_layout = msd::PseudoLayoutConfig{options->pseudo_threshold, options->pseudo_switch_step};
        }
        job.pseudo_layout_prior = options->pseudo_use_prior != 0;
        job.seed = options->seed;
        job.dump_attention = options->dump_attention != 0;
        msd::sample_to_files(model->model, job, out_prefix);
    });
}

msd_status msd_eval(const msd_model* model, const char* bench_path, const char* report_path, size_t samples_per_case,
                    size_t* failed_cases) {
    if (!model || !bench_path || !report_path) return bad_argument("msd_eval: null argument");
    return guarded([&] {
        const auto cases = msd::read_bench(bench_path);
        const msd::EvalReport report = msd::bench_run(model->model, cases, model->config.sample, samples_per_case);
        write_text(report_path, report.to_json());
        if (failed_cases) *failed_cases = report.failed_cases;
    });
}

}  // extern "C"
