// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance <scratch dir> [--skip-ablation] [--only-ablation]
//              [--ablation-base-steps N] [--ablation-steps N] [--ablation-seeds N] [--ablation-samples N]
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "msdiff/cross_attention.hpp"
#include "msdiff/diffusion.hpp"
#include "msdiff/error.hpp"
#include "msdiff/hungarian.hpp"
#include "msdiff/nn.hpp"
#include "msdiff/pipeline.hpp"
#include "test_util.hpp"

using namespace msd;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// -- 1: mask exactness -----------------------------------------------------------

Outcome mask_exactness() {
    Rng rng(101);
    std::size_t checked_zero = 0, rows_zero = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t h = 1 + rng.below(16), w = 1 + rng.below(16), n = 1 + rng.below(4);
        const std::size_t n_t = 1 + rng.below(3), dummy = 1 + rng.below(3), heads = 1 + rng.below(2);
        const std::size_t d = 4 * heads, d_t = 3, d_c = 5;
        std::vector<BoxNorm> boxes;
        for (std::size_t j = 0; j < n; ++j) boxes.push_back(trial % 5 == 0 && j > 0 ? boxes[0] : testutil::random_box(rng));
        ImageCondition img{random_tensor(rng, {n * n_t, d_c}), {}, n};
        for (std::size_t j = 0; j < n; ++j) img.spans.push_back({j * n_t, (j + 1) * n_t});
        DualAttentionWeights wts{random_tensor(rng, {d, d}, 0.7),   random_tensor(rng, {d_t, d}, 0.7),
                                 random_tensor(rng, {d_t, d}, 0.7), random_tensor(rng, {d_c, d}, 0.7),
                                 random_tensor(rng, {d_c, d}, 0.7), heads};
        const auto masks = assemble_masks(boxes, h, w, n_t, dummy);
        const auto out = dual_cross_attention(random_tensor(rng, {h * w, d}), random_tensor(rng, {2, d_t}), &img,
                                              random_tensor(rng, {dummy, d_c}), &masks, 0.1 + rng.uniform(), wts);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t cell = y * w + x;
                bool in_any = false;
                for (std::size_t j = 0; j < n; ++j) {
                    const bool inside = oracle::cell_inside(testutil::to_box(boxes[j]), x, y, h, w);
                    in_any |= inside;
                    if (inside) continue;
                    for (std::size_t c = dummy + j * n_t; c < dummy + (j + 1) * n_t; ++c) {
                        if (out.attn_image.at(cell, c) != 0.0)
                            return {false, "nonzero weight at trial " + std::to_string(trial)};
                        ++checked_zero;
                    }
                }
                if (!in_any) {
                    for (std::size_t c = 0; c < d; ++c)
                        if (out.z_img.at(cell, c) != 0.0) return {false, "nonzero z_img row at trial " + std::to_string(trial)};
                    ++rows_zero;
                }
            }
    }
    return {true, std::to_string(checked_zero) + " masked weights, " + std::to_string(rows_zero) + " background rows"};
}

// -- 2: oracle equivalence -------------------------------------------------------

void jiggle(ParamStore& params, Rng& rng) {
    std::vector<std::string> names;
    for (const auto& entry : params.all()) names.push_back(entry.first);
    for (const auto& name : names)
        for (double& v : params.get(name).mutable_data()) v += 0.3 * rng.normal();
}

oracle::RsParams rs_params_of(const ParamStore& p, const std::string& prefix) {
    auto vec = [&](const std::string& n) {
        const auto d = p.get(prefix + n).data();
        return std::vector<double>(d.begin(), d.end());
    };
    auto mat = [&](const std::string& n) { return testutil::to_mat(p.get(prefix + n)); };
    return {vec(".ln_q.g"), vec(".ln_q.b"), vec(".ln_i.g"), vec(".ln_i.b"), vec(".ln_f.g"), vec(".ln_f.b"),
            mat(".wq.w"),   mat(".wk.w"),   mat(".wv.w"),   mat(".wo.w"),   mat(".ffn1.w"), mat(".ffn2.w"),
            vec(".ffn1.b"), vec(".ffn2.b")};
}

Outcome oracle_equivalence() {
    Rng rng(202);
    double worst_dca = 0.0, worst_rs = 0.0, worst_sm = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t h = 1 + rng.below(5), w = 1 + rng.below(5), n = 1 + rng.below(3), n_t = 1 + rng.below(2);
        const std::size_t dummy = 1 + rng.below(2), heads = 1 + rng.below(2), d = 2 * heads * (1 + rng.below(2));
        const std::size_t d_t = 1 + rng.below(4), d_c = 1 + rng.below(4), len = 1 + rng.below(4);
        Tensor z = random_tensor(rng, {h * w, d}), c_t = random_tensor(rng, {len, d_t});
        Tensor dummy_tokens = random_tensor(rng, {dummy, d_c});
        ImageCondition img{random_tensor(rng, {n * n_t, d_c}), {}, n};
        for (std::size_t j = 0; j < n; ++j) img.spans.push_back({j * n_t, (j + 1) * n_t});
        DualAttentionWeights wts{random_tensor(rng, {d, d}, 0.5),   random_tensor(rng, {d_t, d}, 0.5),
                                 random_tensor(rng, {d_t, d}, 0.5), random_tensor(rng, {d_c, d}, 0.5),
                                 random_tensor(rng, {d_c, d}, 0.5), heads};
        std::vector<BoxNorm> boxes;
        std::vector<oracle::Box> obox;
        for (std::size_t j = 0; j < n; ++j) {
            boxes.push_back(testutil::random_box(rng));
            obox.push_back(testutil::to_box(boxes.back()));
        }
        const bool masked = trial % 4 != 0;
        const double gamma = rng.uniform() * 1.5;
        const auto masks = assemble_masks(boxes, h, w, n_t, dummy);
        const auto got = dual_cross_attention(z, c_t, &img, dummy_tokens, masked ? &masks : nullptr, gamma, wts);
        const auto ref = oracle::dual_cross_attention(
            testutil::to_mat(z), testutil::to_mat(c_t), testutil::to_mat(dummy_tokens), testutil::to_mat(img.tokens),
            masked ? &obox : nullptr, n_t, h, w, gamma, testutil::to_mat(wts.wq), testutil::to_mat(wts.wk_t),
            testutil::to_mat(wts.wv_t), testutil::to_mat(wts.wk_i), testutil::to_mat(wts.wv_i), heads);
        worst_dca = std::max({worst_dca, testutil::max_abs_diff(got.z_out, ref.z_out),
                              testutil::max_abs_diff(got.attn_image, ref.attn_image)});

        ParamStore params;
        Rng init(static_cast<std::uint64_t>(trial));
        nn::add_layer_norm(params, "L.ln_q", d, ParamGroup::adapter);
        nn::add_layer_norm(params, "L.ln_i", d, ParamGroup::adapter);
        for (const char* name : {"L.wq", "L.wk", "L.wv", "L.wo"}) nn::add_linear(params, name, d, d, ParamGroup::adapter, init, false);
        nn::add_layer_norm(params, "L.ln_f", d, ParamGroup::adapter);
        nn::add_linear(params, "L.ffn1", d, 2 * d, ParamGroup::adapter, init);
        nn::add_linear(params, "L.ffn2", 2 * d, d, ParamGroup::adapter, init);
        jiggle(params, rng);
        Tensor f_q = random_tensor(rng, {1 + rng.below(4), d});
        const bool with_image = trial % 3 != 0;
        Tensor f_i = random_tensor(rng, {1 + rng.below(5), d});
        const oracle::Mat fi = testutil::to_mat(f_i);
        Tensor rs = rs_attention_layer(params, "L", heads, f_q, with_image ? std::optional<Tensor>(f_i) : std::nullopt);
        worst_rs = std::max(worst_rs, testutil::max_abs_diff(rs, oracle::rs_attention_layer(rs_params_of(params, "L"), heads,
                                                                                              testutil::to_mat(f_q),
                                                                                              with_image ? &fi : nullptr)));

        const std::size_t r = 1 + rng.below(6), c = 1 + rng.below(8);
        Tensor logits = random_tensor(rng, {r, c}, 4.0);
        AdditiveMask m = AdditiveMask::open(r, c);
        std::vector<std::vector<bool>> blocked(r, std::vector<bool>(c));
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) m.blocked[i * c + j] = blocked[i][j] = rng.uniform() < 0.35;
        worst_sm = std::max(worst_sm, testutil::max_abs_diff(masked_softmax(logits, &m),
                                                             oracle::softmax(testutil::to_mat(logits), &blocked)));
    }
    const double worst = std::max({worst_dca, worst_rs, worst_sm});
    return {worst <= 1e-12, fmt("max |diff| dual %.3g", worst_dca) + fmt(", rs %.3g", worst_rs) + fmt(", softmax %.3g", worst_sm)};
}

// -- 3: gradient soundness -------------------------------------------------------

Outcome gradient_soundness() {
    const ModelConfig cfg = [] {
        ModelConfig c = testutil::tiny_model_config();
        c.resampler.grounding_drop_prob = 0.0;
        return c;
    }();
    Model model = Model::create(cfg, 31);
    const std::size_t numel = model.params.numel();
    if (numel > 5000) return {false, "config has " + std::to_string(numel) + " parameters"};
    // Move every parameter off its init so zero-initialized adapters carry gradient.
    {
        Rng jig(32);
        jiggle(model.params, jig);
    }
    const ToyUNet net(model);
    const NoiseSchedule s = NoiseSchedule::linear(cfg.schedule);
    Rng data(33);
    const std::vector<TrainingSample> batch{testutil::two_subject_sample(model.vocab, data, 8, 4),
                                            testutil::two_subject_sample(model.vocab, data, 8, 4)};
    TrainOptions opt;
    opt.p_drop_text = opt.p_drop_image = 0.0;
    opt.attention_loss_weight = 0.01;
    opt.attention_branch = AttentionLossBranch::both;
    auto loss = [&] {
        Rng r(34);
        return training_loss(model, net, s, batch, r, opt);
    };

    model.params.zero_grad();
    const LossParts lp = loss();
    if (lp.l_am <= 0.0) return {false, "attention-map term is inactive"};
    backward(lp.total, model.params);

    std::vector<std::pair<std::string, std::size_t>> coords;
    for (const auto& [name, t] : model.params.all())
        for (std::size_t i = 0; i < t.size(); ++i) coords.push_back({name, i});
    Rng pick(35);
    NoGradGuard no_grad;
    const double h = 1e-5, floor = 1e-4;
    double worst = 0.0;
    std::string worst_at;
    for (int k = 0; k < 100; ++k) {
        const auto& [name, i] = coords[pick.below(coords.size())];
        const double analytic = model.params.get(name).grad()[i];
        auto values = model.params.get(name).mutable_data();
        const double keep = values[i];
        // Richardson-extrapolated central difference.
        auto central = [&](double step) {
            values[i] = keep + step;
            const double up = loss().total.item();
            values[i] = keep - step;
            const double down = loss().total.item();
            values[i] = keep;
            return (up - down) / (2 * step);
        };
        const double numeric = (4.0 * central(h / 2) - central(h)) / 3.0;
        const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), floor});
        if (rel > worst) {
            worst = rel;
            worst_at = name + "[" + std::to_string(i) + "]";
        }
    }
    return {worst <= 1e-6, std::to_string(numel) + " params, max rel err " + fmt("%.3g", worst) + " at " + worst_at};
}

// -- 4: Hungarian ----------------------------------------------------------------

Outcome hungarian_correctness() {
    Rng rng(404);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(7);
        const bool ties = trial % 2 == 1;
        oracle::Mat cost(n, std::vector<double>(n));
        for (auto& row : cost)
            for (double& v : row) v = ties ? static_cast<double>(rng.below(4)) : rng.uniform() * 10.0 - 5.0;
        const Assignment a = hungarian_match(cost);
        if (a.pairs.size() != n) return {false, "incomplete assignment at trial " + std::to_string(trial)};
        std::vector<bool> used(n, false);
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            if (a.pairs[r].first != r || used[a.pairs[r].second]) return {false, "not a permutation at trial " + std::to_string(trial)};
            used[a.pairs[r].second] = true;
            total += cost[r][a.pairs[r].second];
        }
        const double best = oracle::brute_force_assignment(cost);
        if (total != best || a.total_cost != best)
            return {false, "trial " + std::to_string(trial) + fmt(": got %.17g", total) + fmt(", brute force %.17g", best)};
    }
    return {true, "500 matrices, n <= 7"};
}

// -- 5: contract identities ------------------------------------------------------

Outcome contract_identities() {
    std::vector<std::string> broken;
    auto need = [&](bool ok, const char* what) {
        if (!ok) broken.push_back(what);
    };
    const ModelConfig cfg = testutil::tiny_model_config();
    const Model model = Model::create(cfg, 51);
    const ToyUNet net(model);
    const NoiseSchedule s = NoiseSchedule::linear(cfg.schedule);
    const Tensor red = make_image(4, 4, {0.9, 0.1, 0.1});

    // gamma = 0: attention level and full sampler.
    Rng rng(52);
    DualAttentionWeights wts{random_tensor(rng, {4, 4}), random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4}),
                             random_tensor(rng, {5, 4}), random_tensor(rng, {5, 4}), 1};
    ImageCondition img{random_tensor(rng, {2, 5}), {{0, 2}}, 1};
    Tensor z = random_tensor(rng, {16, 4}), c_t = random_tensor(rng, {3, 3}), dummy = random_tensor(rng, {2, 5});
    const auto masks = assemble_masks({BoxNorm::make(0, 0, 0.5, 0.5)}, 4, 4, 2, 2);
    need(testutil::bitwise_equal(dual_cross_attention(z, c_t, nullptr, dummy, nullptr, 1.0, wts).z_out,
                                 dual_cross_attention(z, c_t, &img, dummy, &masks, 0.0, wts).z_out),
         "gamma 0 attention");
    SampleRequest req;
    req.prompt_ids = model.vocab.encode("a red circle on a gray background");
    req.sampler.num_steps = 4;
    req.image_h = req.image_w = 8;
    SampleRequest with = req;
    with.subjects.push_back({red, model.vocab.id("circle"), BoxNorm::make(0, 0, 0.5, 0.5)});
    with.sampler.gamma = 0.0;
    Rng a(1), b(1);
    need(testutil::bitwise_equal(cfg_sample(model, net, s, req, a).image, cfg_sample(model, net, s, with, b).image),
         "gamma 0 sampler");

    // Grounding drop: tokens independent of entity and box.
    ModelConfig dropped = cfg;
    dropped.resampler.grounding_drop_prob = 1.0;
    const Model dm = Model::create(dropped, 53);
    Rng r1(1), r2(2);
    need(testutil::bitwise_equal(
             project_subjects(dm.params, dropped, dm.vocab, {{red, dm.vocab.id("circle"), BoxNorm::make(0, 0, 0.5, 0.5)}},
                              &r1, true)
                 .tokens,
             project_subjects(dm.params, dropped, dm.vocab, {{red, dm.vocab.id("star"), BoxNorm::make(0.2, 0.3, 0.9, 1)}},
                              &r2, true)
                 .tokens),
         "grounding drop");

    // CFG at s = 1 returns the conditional prediction exactly.
    Tensor eu = random_tensor(rng, {16, 3}), ec = random_tensor(rng, {16, 3});
    need(testutil::bitwise_equal(guided_epsilon(eu, ec, 1.0), ec), "guidance s = 1");
    need(testutil::bitwise_equal(guided_epsilon(eu, ec, 0.0), eu), "guidance s = 0");

    // L_am examples.
    const BoxNorm box = BoxNorm::make(0.0, 0.0, 0.5, 0.5);
    Tensor inside = Tensor::zeros({64, 1}), uniform = Tensor::full({64, 1}, 1.0 / 64.0);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) inside.mutable_data()[y * 8 + x] = 1.0 / 16.0;
    need(attention_map_loss({{inside, 8, 8}}, {box}, {{0}}).value.item() == 0.0, "L_am in-box");
    need(attention_map_loss({{uniform, 8, 8}}, {box}, {{0}}).value.item() == 0.5625, "L_am quarter box");

    std::string detail = broken.empty() ? "7 identities hold" : "broken:";
    for (const auto& b2 : broken) detail += " " + b2 + ";";
    return {broken.empty(), detail};
}

// -- 6: directional ablation ------------------------------------------------------

struct AblationSettings {
    std::size_t base_steps = 4000;
    std::size_t steps = 6000;
    std::size_t seeds = 3;
    std::size_t samples_per_case = 5;
};

EvalReport train_variant(const RunConfig& cfg, const TrainState& base, const std::vector<TrainingSample>& data,
                         std::size_t samples_per_case) {
    TrainState st{Model::create(effective_model_config(cfg), cfg.seed), {}, base.step, ""};
    st.model.params.copy_values_from(base.model.params, [&](const std::string& n) {
        return base.model.params.contains(n) && base.model.params.group(n) == ParamGroup::base;
    });
    train_adapters(st, cfg, data);
    return bench_run(st.model, mini_bench(), cfg.sample, samples_per_case);
}

Outcome directional_ablation(const AblationSettings& set) {
    bool ok = true;
    std::string detail;
    for (std::size_t k = 0; k < set.seeds; ++k) {
        RunConfig cfg;
        cfg.seed = 1 + k;
        cfg.train.base_steps = set.base_steps;
        cfg.train.steps = set.steps;
        const auto data = forge_dataset(cfg.data.num_samples, cfg.seed + 77, forge_config(cfg), Vocab(),
                                        matching_embedder(cfg.model.patch));
        TrainState base{Model::create(effective_model_config(cfg), cfg.seed), {}, 0, ""};
        train_base(base, cfg, data);

        RunConfig no_mca = cfg, linear = cfg;
        no_mca.model.denoiser.use_mca = false;
        linear.model.resampler.projector = ProjectorKind::linear;
        const EvalReport full = train_variant(cfg, base, data, set.samples_per_case);
        const EvalReport without_mca = train_variant(no_mca, base, data, set.samples_per_case);
        const EvalReport with_linear = train_variant(linear, base, data, set.samples_per_case);
        const double layout_margin = full.mean_layout_adherence - without_mca.mean_layout_adherence;
        const double fidelity_margin = full.mean_subject_fidelity - with_linear.mean_subject_fidelity;
        ok = ok && layout_margin > 0.0 && fidelity_margin > 0.0 && full.failed_cases == 0;
        detail += "seed " + std::to_string(cfg.seed) + fmt(": layout %.4f", full.mean_layout_adherence) +
                  fmt(" vs %.4f", without_mca.mean_layout_adherence) + fmt(", fidelity %.4f", full.mean_subject_fidelity) +
                  fmt(" vs %.4f; ", with_linear.mean_subject_fidelity);
        std::fprintf(stderr, "  ablation %s\n", detail.c_str());
    }
    return {ok, detail};
}

// -- 7: end-to-end determinism -----------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + MSDIFF_CLI_PATH + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "cli.log") out[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return out;
}

Outcome end_to_end_determinism(const fs::path& scratch) {
    RunConfig cfg;
    cfg.seed = 5;
    cfg.data.num_samples = 100;
    cfg.train.base_steps = 250;
    cfg.train.steps = 250;
    cfg.sample.num_steps = 10;
    std::vector<std::map<std::string, std::string>> runs;
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = scratch / ("pipeline_" + std::to_string(run));
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream(dir / "config.json") << run_config_to_json(cfg);
        const fs::path log = dir / "cli.log";
        auto at = [&](const char* name) { return "\"" + (dir / name).string() + "\""; };
        const std::string steps[] = {
            "gen-data --out " + at("data") + " --num 100 --seed 5 --config " + at("config.json"),
            "train --config " + at("config.json") + " --data " + at("data") + " --out " + at("model.ckpt"),
            "sample --ckpt " + at("model.ckpt") + " --prompt \"a red circle and a blue square on a gray background\"" +
                " --subject \"" + (dir / "data" / "crop_00000_0.ppm").string() + ":circle:0,0.25,0.5,0.75\" --seed 9 --num-samples 2 --dump-attn --out " + at("sample"),
            "eval --ckpt " + at("model.ckpt") + " --bench \"" + std::string(MSDIFF_DATA_DIR) +
                "/mini_bench.json\" --samples-per-case 1 --out " + at("report.json"),
        };
        for (const auto& step : steps) {
            const int code = run_cli(step, log);
            if (code != 0) return {false, "run " + std::to_string(run) + " exited " + std::to_string(code) + ": " + step};
        }
        runs.push_back(tree(dir));
    }
    if (runs[0] != runs[1]) {
        for (const auto& [name, bytes] : runs[0])
            if (!runs[1].count(name) || runs[1].at(name) != bytes) return {false, "differs: " + name};
        return {false, "file sets differ"};
    }
    for (const char* must : {"model.ckpt", "model.ckpt.loss.csv", "sample_0.ppm", "report.json", "data/manifest.json"})
        if (!runs[0].count(must)) return {false, std::string("missing output ") + must};
    return {true, std::to_string(runs[0].size()) + " files byte-identical"};
}

// -- 8: bench fixtures ----------------------------------------------------------------

Outcome bench_fixtures() {
    // Preset boxes per combination type, as published.
    const std::map<std::string, std::string> table{
        {"living+living", "[[0.00, 0.25, 0.50, 0.75], [0.50, 0.25, 1.00, 0.75]]"},
        {"living+object", "[[0.00, 0.25, 0.50, 0.75], [0.50, 0.25, 1.00, 0.75]]"},
        {"object+object", "[[0.00, 0.25, 0.50, 0.75], [0.50, 0.25, 1.00, 0.75]]"},
        {"living+upwearing", "[[0.25, 0.25, 0.75, 0.75], [0.25, 0.00, 0.75, 0.25]]"},
        {"living+midwearing", "[[0.25, 0.25, 0.75, 0.75], [0.25, 0.25, 0.75, 0.75]]"},
        {"living+wholewearing", "[[0.25, 0.25, 0.75, 0.75], [0.25, 0.25, 0.75, 0.75]]"},
        {"midwearing+downwearing", "[[0.25, 0.25, 0.75, 0.60], [0.25, 0.60, 0.75, 1.00]]"},
        {"living+scene", "[[0.25, 0.25, 0.75, 0.75], [0.00, 0.00, 1.00, 1.00]]"},
        {"object+scene", "[[0.25, 0.25, 0.75, 0.75], [0.00, 0.00, 1.00, 1.00]]"},
        {"living+living+living", "[[0.00, 0.25, 0.35, 0.75], [0.35, 0.25, 0.65, 0.75], [0.65, 0.25, 1.00, 0.75]]"},
        {"object+object+object", "[[0.00, 0.25, 0.35, 0.75], [0.35, 0.25, 0.65, 0.75], [0.65, 0.25, 1.00, 0.75]]"},
        {"living+object+scene", "[[0.00, 0.25, 0.50, 0.75], [0.50, 0.25, 1.00, 0.75], [0.00, 0.00, 1.00, 1.00]]"},
        {"upwearing+midwearing+downwearing",
         "[[0.25, 0.00, 0.75, 0.25], [0.25, 0.25, 0.75, 0.60], [0.25, 0.60, 0.75, 1.00]]"},
    };
    const std::string text = slurp(fs::path(MSDIFF_DATA_DIR) / "mini_bench.json");
    const auto cases = parse_bench(text);
    if (cases.size() != 20) return {false, "mini bench has " + std::to_string(cases.size()) + " cases"};
    std::size_t pos = 0;
    for (const auto& c : cases) {
        auto it = table.find(c.combo_type);
        if (it == table.end()) return {false, "combo type outside the table: " + c.combo_type};
        const std::string line = "\"combo_type\": \"" + c.combo_type + "\"";
        pos = text.find(line, pos);
        if (pos == std::string::npos) return {false, "case order mismatch at " + c.combo_type};
        const auto boxes_at = text.find("\"boxes\": ", pos);
        if (text.compare(boxes_at + 9, it->second.size(), it->second) != 0)
            return {false, c.combo_type + " boxes differ from the table"};
        pos = boxes_at;
    }
    if (!(default_single_box() == BoxNorm::make(0.25, 0.25, 0.75, 0.75))) return {false, "default single-subject box"};
    const Model model = Model::create(testutil::tiny_model_config(), 81);
    SamplerConfig sc;
    sc.num_steps = 1;
    const EvalReport r = bench_run(model, {{"living", "a red circle on a gray background", {}, {"red_circle"}, 1}}, sc, 1);
    if (r.failed_cases != 0 || !(r.cases[0].bench.boxes == std::vector<BoxNorm>{BoxNorm::make(0.25, 0.25, 0.75, 0.75)}))
        return {false, "single-subject case did not use the default box"};
    return {true, "20 cases byte-match, default box [0.25, 0.25, 0.75, 0.75]"};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path scratch = fs::temp_directory_path() / "msdiff_acceptance";
    bool skip_ablation = false, only_ablation = false;
    AblationSettings ablation;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        auto next = [&] {
            if (i + 1 >= argc) {
                std::fprintf(stderr, "missing value for %s\n", arg.c_str());
                std::exit(2);
            }
            return std::stoul(argv[++i]);
        };
        if (arg == "--skip-ablation") skip_ablation = true;
        else if (arg == "--only-ablation") only_ablation = true;
        else if (arg == "--ablation-base-steps") ablation.base_steps = next();
        else if (arg == "--ablation-steps") ablation.steps = next();
        else if (arg == "--ablation-seeds") ablation.seeds = next();
        else if (arg == "--ablation-samples") ablation.samples_per_case = next();
        else scratch = arg;
    }
    fs::create_directories(scratch);

    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> all{
        {1, "mask exactness", 30, mask_exactness},
        {2, "oracle equivalence", 60, oracle_equivalence},
        {3, "gradient soundness", 300, gradient_soundness},
        {4, "hungarian correctness", 30, hungarian_correctness},
        {5, "contract identities", 60, contract_identities},
        {6, "directional ablation", 3 * 45 * 60, [&] { return directional_ablation(ablation); }},
        {7, "end-to-end determinism", 600, [&] { return end_to_end_determinism(scratch); }},
        {8, "bench fixtures", 60, bench_fixtures},
    };
    int failed = 0;
    for (const auto& c : all) {
        if ((c.id == 6 && skip_ablation) || (c.id != 6 && only_ablation)) {
            std::printf("criterion %d (%s): not run\n", c.id, c.name);
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_s) {
            o.pass = false;
            o.detail += fmt("; over the %.0f s budget", c.budget_s);
        }
        std::printf("criterion %d (%s): %s  %s  [%.1f s]\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed ? 1 : 0;
}
