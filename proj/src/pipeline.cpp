#include "msdiff/pipeline.hpp"

#include <sstream>

#include "msdiff/error.hpp"
#include "msdiff/parallel.hpp"

namespace msd {

EmbedFn matching_embedder(const PatchEncoderConfig& cfg) {
    ParamStore params;
    Rng rng(0x6d61746368ULL);
    register_patch_encoder(params, cfg, rng);
    return [params, cfg](const Tensor& crop) {
        NoGradGuard no_grad;
        Tensor f = encode_image_patches(params, cfg, resize_nearest(crop, cfg.crop_size, cfg.crop_size));
        std::vector<double> pooled(f.cols(), 0.0);
        auto d = f.data();
        for (std::size_t r = 0; r < f.rows(); ++r)
            for (std::size_t c = 0; c < f.cols(); ++c) pooled[c] += d[r * f.cols() + c];
        for (double& v : pooled) v /= static_cast<double>(f.rows());
        return pooled;
    };
}

ForgeConfig forge_config(const RunConfig& cfg) {
    ForgeConfig f;
    f.canvas = cfg.data.canvas;
    f.jitter = cfg.data.jitter;
    f.crop_size = cfg.model.patch.crop_size;
    f.caption_color_prob = cfg.data.caption_color_prob;
    return f;
}

void gen_data(const std::string& dir, std::size_t count, std::uint64_t seed, const RunConfig& cfg) {
    const Vocab vocab;
    write_dataset(forge_dataset(count, seed, forge_config(cfg), vocab, matching_embedder(cfg.model.patch)), dir);
}

namespace {

void run_phase(TrainState& state, const RunConfig& cfg, const std::vector<TrainingSample>& data, Rng& rng,
               const TrainOptions& options, std::size_t steps, const std::function<bool(const std::string&)>& trainable,
               const CheckpointHook& hook) {
    if (steps == 0) return;
    if (data.empty()) throw ContractError("train: dataset is empty");
    Model& model = state.model;
    const ToyUNet unet(model);
    const NoiseSchedule schedule = NoiseSchedule::linear(model.config.schedule);
    Adam adam;
    std::vector<TrainingSample> batch(cfg.train.batch);
    for (std::size_t i = 0; i < steps; ++i) {
        for (auto& b : batch) b = data[rng.below(data.size())];
        LossParts loss = training_loss(model, unet, schedule, batch, rng, options);
        backward(loss.total, model.params);
        adam.step(model.params, cfg.train.lr, trainable);
        ++state.step;
        state.log.push_back({static_cast<std::size_t>(state.step), loss.l_ip, loss.l_am});
        if (hook && cfg.train.checkpoint_every > 0 && state.step % cfg.train.checkpoint_every == 0) {
            state.rng_state = rng.state();
            hook(state);
        }
    }
    state.rng_state = rng.state();
}

}  // namespace

void train_base(TrainState& state, const RunConfig& cfg, const std::vector<TrainingSample>& data,
                const CheckpointHook& hook) {
    if (cfg.train.joint) return;
    Rng rng = Rng::derive(cfg.seed, 10);
    TrainOptions options;
    options.p_drop_text = cfg.train.p_drop;
    options.p_drop_image = cfg.train.p_drop;
    options.use_subjects = false;
    const ParamStore& params = state.model.params;
    run_phase(state, cfg, data, rng, options, cfg.train.base_steps,
              [&params](const std::string& name) { return params.group(name) == ParamGroup::base; }, hook);
}

void train_adapters(TrainState& state, const RunConfig& cfg, const std::vector<TrainingSample>& data,
                    const CheckpointHook& hook) {
    Rng rng = Rng::derive(cfg.seed, 11);
    TrainOptions options;
    options.p_drop_text = cfg.train.p_drop;
    options.p_drop_image = cfg.train.p_drop;
    options.gamma = cfg.train.gamma_train;
    options.attention_loss_weight = cfg.train.attention_loss_weight;
    options.attention_branch = cfg.train.attention_loss_branch;
    const ParamStore& params = state.model.params;
    std::function<bool(const std::string&)> trainable;
    if (cfg.train.freeze_base && !cfg.train.joint) {
        trainable = [&params](const std::string& name) { return params.group(name) == ParamGroup::adapter; };
    }
    run_phase(state, cfg, data, rng, options, cfg.train.steps, trainable, hook);
}

TrainState train(const RunConfig& cfg, const std::vector<TrainingSample>& data, const CheckpointHook& hook) {
    validate(cfg);
    TrainState state{Model::create(effective_model_config(cfg), cfg.seed), {}, 0, Rng::derive(cfg.seed, 10).state()};
    train_base(state, cfg, data, hook);
    train_adapters(state, cfg, data, hook);
    return state;
}

std::string loss_log_csv(const std::vector<LossRow>& log) {
    std::ostringstream out;
    out.precision(17);
    out << "step,l_ip,l_am\n";
    for (const auto& r : log) out << r.step << ',' << r.l_ip << ',' << r.l_am << '\n';
    return out.str();
}

SampleRequest make_request(const Model& model, const SampleJob& job) {
    SampleRequest req;
    req.prompt_ids = model.vocab.encode(job.prompt);
    req.sampler = job.sampler;
    req.pseudo_layout_prior = job.pseudo_layout_prior;
    if (job.subjects.size() > max_subjects) throw ContractError("at most 4 subjects");
    for (const auto& s : job.subjects) req.subjects.push_back({read_ppm(s.image_path), model.vocab.id(s.entity), s.box});
    return req;
}

std::vector<std::string> sample_to_files(const Model& model, const SampleJob& job, const std::string& prefix) {
    const SampleRequest req = make_request(model, job);
    const NoiseSchedule schedule = NoiseSchedule::linear(model.config.schedule);
    const ToyUNet unet(model);
    std::vector<SampleResult> results(job.sampler.num_samples);
    parallel_for(results.size(), [&](std::size_t k) {
        Rng rng = Rng::derive(job.seed, k);
        results[k] = cfg_sample(model, unet, schedule, req, rng);
    });

    std::vector<std::string> written;
    const auto& dc = model.config.denoiser;
    for (std::size_t k = 0; k < results.size(); ++k) {
        const std::string stem = prefix + "_" + std::to_string(k);
        write_ppm(stem + ".ppm", results[k].image);
        written.push_back(stem + ".ppm");
        if (!job.dump_attention || results[k].final_attention.empty()) continue;
        const LayerAttention& layer = results[k].final_attention.front();
        for (std::size_t j = 0; j < req.subjects.size(); ++j) {
            const std::string s = stem + "_s" + std::to_string(j);
            const auto tokens = entity_positions(req.prompt_ids, req.subjects[j].entity);
            if (!tokens.empty()) {
                write_pgm(s + "_text.pgm", attribution_heatmap(layer.text.weights, tokens, layer.text.latent_h,
                                                               layer.text.latent_w));
                written.push_back(s + "_text.pgm");
            }
            if (layer.image.weights.defined()) {
                std::vector<std::size_t> cols;
                const std::size_t n_t = model.config.resampler.n_t;
                for (std::size_t c = 0; c < n_t; ++c) cols.push_back(dc.dummy_count + j * n_t + c);
                write_pgm(s + "_image.pgm", attribution_heatmap(layer.image.weights, cols, layer.image.latent_h,
                                                                layer.image.latent_w));
                written.push_back(s + "_image.pgm");
            }
        }
    }
    return written;
}

}  // namespace msd
