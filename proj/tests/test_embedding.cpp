#include <doctest.h>

#include <cmath>
#include <numbers>

#include "msdiff/data_forge.hpp"
#include "msdiff/error.hpp"
#include "msdiff/nn.hpp"
#include "msdiff/resampler.hpp"
#include "test_util.hpp"

using namespace msd;
using testutil::random_tensor;

namespace {

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

// Perturbs every parameter so layer norms and biases are not at their identity init.
void jiggle(ParamStore& params, Rng& rng) {
    std::vector<std::string> names;
    for (const auto& entry : params.all()) names.push_back(entry.first);
    for (const auto& name : names)
        for (double& v : params.get(name).mutable_data()) v += 0.3 * rng.normal();
}

Tensor solid_image(std::size_t s, double r, double g, double b) { return make_image(s, s, {r, g, b}); }

}  // namespace

TEST_CASE("text encoder: padding, determinism and sensitivity") {
    Vocab vocab;
    TextEncoderConfig cfg{8, 6};
    Rng rng(1);
    ParamStore params;
    register_text_encoder(params, cfg, vocab.size(), rng);

    Tensor empty = encode_text(params, cfg, vocab, {});
    REQUIRE(empty.rows() == 6);
    // Every row of an all-PAD prompt differs only through position codes, so
    // compare against an explicit all-PAD prompt.
    CHECK(testutil::bitwise_equal(empty, encode_text(params, cfg, vocab, std::vector<TokenId>(6, vocab.pad()))));

    const auto ids = vocab.encode("a red circle");
    CHECK(testutil::bitwise_equal(encode_text(params, cfg, vocab, ids), encode_text(params, cfg, vocab, ids)));
    CHECK_THROWS_AS(encode_text(params, cfg, vocab, {vocab.size()}), VocabError);

    const auto other = vocab.encode("a blue circle");
    for (int draw = 0; draw < 100; ++draw) {
        Rng r(100 + draw);
        ParamStore p;
        register_text_encoder(p, cfg, vocab.size(), r);
        Tensor a = encode_text(p, cfg, vocab, ids), b = encode_text(p, cfg, vocab, other);
        double worst = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
        CHECK(worst > 1e-9);
    }
}

TEST_CASE("vocabulary encode/decode") {
    Vocab vocab;
    const auto ids = vocab.encode("A red circle, and a square.");
    CHECK(vocab.decode(ids) == "a red circle and a square");
    CHECK_THROWS_AS(vocab.encode("a red dragon"), VocabError);
    CHECK(vocab.id(Vocab::pad_token) == vocab.pad());
    CHECK(vocab.id(Vocab::null_token) == vocab.null());
}

TEST_CASE("patch encoder") {
    PatchEncoderConfig cfg{8, 4, 6};
    Rng rng(2);
    ParamStore params;
    register_patch_encoder(params, cfg, rng);
    Tensor zero = make_image(8, 8, {0, 0, 0});
    Tensor f = encode_image_patches(params, cfg, zero);
    CHECK(f.rows() == 4);
    Tensor pos = nn::sinusoidal_positions(4, 6);
    const auto bias = params.get("patch.proj.b").data();
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 6; ++c) CHECK(f.at(r, c) == bias[c] + pos.at(r, c));
    CHECK_THROWS_AS(encode_image_patches(params, cfg, make_image(6, 8, {0, 0, 0})), ShapeError);
}

TEST_CASE("fourier box embedding") {
    auto zero = fourier_box_embedding(BoxNorm::make(0, 0, 1, 1), 3);
    REQUIRE(zero.size() == 24);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(zero[2 * k] == 0.0);      // x0 = 0
        CHECK(zero[2 * k + 1] == 1.0);
    }
    auto half = fourier_box_embedding(BoxNorm::make(0.5, 0.5, 1, 1), 1);
    CHECK(half[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(half[1]) < 1e-15);

    const double coords[4] = {0.25, 0.25, 0.75, 0.75};
    auto e = fourier_box_embedding(BoxNorm::make(0.25, 0.25, 0.75, 0.75), 2);
    REQUIRE(e.size() == 16);
    std::size_t i = 0;
    for (double v : coords)
        for (int k = 0; k < 2; ++k) {
            const double arg = std::pow(2.0, k) * std::numbers::pi * v;
            CHECK(std::abs(e[i++] - std::sin(arg)) <= 1e-15);
            CHECK(std::abs(e[i++] - std::cos(arg)) <= 1e-15);
        }
}

TEST_CASE("grounding tokens") {
    Vocab vocab;
    ResamplerConfig cfg;
    cfg.n_t = 3;
    cfg.d_q = 6;
    cfg.num_freqs = 2;
    Rng rng(3);
    ParamStore params;
    register_text_encoder(params, {5, 8}, vocab.size(), rng);
    register_grounding(params, cfg, 5, rng);
    Tensor base = random_tensor(rng, {3, 6});
    const TokenId circle = vocab.id("circle");
    const BoxNorm b1 = BoxNorm::make(0.1, 0.1, 0.5, 0.5), b2 = BoxNorm::make(0.4, 0.2, 0.9, 0.8);

    auto off = build_grounding_tokens(params, cfg, vocab, circle, b1, base, false);
    CHECK(off.source == GroundingSource::learned_base);
    CHECK(testutil::bitwise_equal(off.tokens, base));

    auto g1 = build_grounding_tokens(params, cfg, vocab, circle, b1, base, true);
    auto g2 = build_grounding_tokens(params, cfg, vocab, circle, b2, base, true);
    CHECK(g1.source == GroundingSource::grounded);
    CHECK_FALSE(testutil::bitwise_equal(g1.tokens, g2.tokens));

    // Direct recomputation of base + MLP(entity ++ fourier).
    const auto emb = params.get("text.tok_emb");
    std::vector<double> fused(emb.data().begin() + circle * 5, emb.data().begin() + circle * 5 + 5);
    for (double v : fourier_box_embedding(b2, 2)) fused.push_back(v);
    oracle::Mat h = oracle::matmul({fused}, testutil::to_mat(params.get("ground.mlp1.w")));
    for (std::size_t j = 0; j < h[0].size(); ++j) h[0][j] = oracle::silu(h[0][j] + params.get("ground.mlp1.b").data()[j]);
    oracle::Mat g = oracle::matmul(h, testutil::to_mat(params.get("ground.mlp2.w")));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 6; ++c)
            CHECK(std::abs(g2.tokens.at(r, c) - (base.at(r, c) + g[0][c] + params.get("ground.mlp2.b").data()[c])) <= 1e-12);

    for (const char* n : {"ground.mlp1.w", "ground.mlp1.b", "ground.mlp2.w", "ground.mlp2.b"})
        for (double& v : params.get(n).mutable_data()) v = 0.0;
    CHECK(testutil::bitwise_equal(build_grounding_tokens(params, cfg, vocab, circle, b2, base, true).tokens, base));
    CHECK_THROWS_AS(build_grounding_tokens(params, cfg, vocab, vocab.size(), b1, base, true), VocabError);
    CHECK_THROWS_AS(BoxNorm::make(0.5, 0.1, 0.4, 0.9), ContractError);
}

TEST_CASE("rs attention layer matches the naive oracle") {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t heads = 1 + rng.below(2), d = 2 * heads * (1 + rng.below(2));
        ParamStore params;
        Rng init(trial);
        nn::add_layer_norm(params, "L.ln_q", d, ParamGroup::adapter);
        nn::add_layer_norm(params, "L.ln_i", d, ParamGroup::adapter);
        for (const char* n : {"L.wq", "L.wk", "L.wv", "L.wo"}) nn::add_linear(params, n, d, d, ParamGroup::adapter, init, false);
        nn::add_layer_norm(params, "L.ln_f", d, ParamGroup::adapter);
        nn::add_linear(params, "L.ffn1", d, 2 * d, ParamGroup::adapter, init);
        nn::add_linear(params, "L.ffn2", 2 * d, d, ParamGroup::adapter, init);
        jiggle(params, rng);
        Tensor f_q = random_tensor(rng, {1 + rng.below(4), d});
        const bool with_image = trial % 3 != 0;
        Tensor f_i = random_tensor(rng, {1 + rng.below(5), d});
        Tensor out = rs_attention_layer(params, "L", heads, f_q, with_image ? std::optional<Tensor>(f_i) : std::nullopt);
        const oracle::Mat fi = testutil::to_mat(f_i);
        CHECK(testutil::max_abs_diff(out, oracle::rs_attention_layer(rs_params_of(params, "L"), heads, testutil::to_mat(f_q),
                                                                     with_image ? &fi : nullptr)) <= 1e-12);
    }
}

TEST_CASE("two-key attention is a convex blend of the values") {
    Tensor q = Tensor::from({1, 2}, {0.3, -0.7});
    Tensor k = Tensor::from({2, 2}, {1.0, 0.5, -0.2, 0.9});
    Tensor v = Tensor::from({2, 3}, {1, 2, 3, -4, 5, 0.5});
    auto r = nn::multi_head_attention(q, k, v, 1);
    const double w = r.weights.at(0, 0);
    CHECK(w + r.weights.at(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(r.out.at(0, c) - (w * v.at(0, c) + (1 - w) * v.at(1, c))) <= 1e-14);
}

TEST_CASE("project_subjects spans, determinism and block equivariance") {
    ModelConfig cfg = testutil::tiny_model_config();
    Model model = Model::create(cfg, 5);
    const Vocab& vocab = model.vocab;
    std::vector<SubjectInput> subjects{
        {solid_image(4, 0.9, 0.1, 0.1), vocab.id("circle"), BoxNorm::make(0, 0, 0.5, 0.5)},
        {solid_image(6, 0.1, 0.8, 0.2), vocab.id("square"), BoxNorm::make(0.5, 0, 1, 0.5)},
        {solid_image(4, 0.15, 0.25, 0.95), vocab.id("star"), BoxNorm::make(0, 0.5, 1, 1)},
    };
    ImageCondition one = project_subjects(model.params, cfg, vocab, {subjects[0]}, nullptr, false);
    CHECK(one.n == 1);
    CHECK(one.tokens.rows() == cfg.resampler.n_t);
    CHECK(one.spans == std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}});

    ImageCondition three = project_subjects(model.params, cfg, vocab, subjects, nullptr, false);
    CHECK(three.tokens.rows() == 6);
    CHECK(three.spans == std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}, {2, 4}, {4, 6}});
    CHECK(testutil::bitwise_equal(three.tokens, project_subjects(model.params, cfg, vocab, subjects, nullptr, false).tokens));

    std::vector<SubjectInput> swapped{subjects[2], subjects[0], subjects[1]};
    ImageCondition perm = project_subjects(model.params, cfg, vocab, swapped, nullptr, false);
    CHECK(testutil::bitwise_equal(subject_tokens(perm, 0), subject_tokens(three, 2)));
    CHECK(testutil::bitwise_equal(subject_tokens(perm, 1), subject_tokens(three, 0)));
    CHECK(testutil::bitwise_equal(subject_tokens(perm, 2), subject_tokens(three, 1)));

    // Grounded vs base queries differ once the grounding MLP is nonzero.
    ImageCondition base = project_subjects(model.params, cfg, vocab, {subjects[0]}, nullptr, false, false);
    CHECK_FALSE(testutil::bitwise_equal(base.tokens, one.tokens));

    CHECK_THROWS_AS(project_subjects(model.params, cfg, vocab, {}, nullptr, false), ContractError);
    std::vector<SubjectInput> five(5, subjects[0]);
    CHECK_THROWS_AS(project_subjects(model.params, cfg, vocab, five, nullptr, false), ContractError);
}

TEST_CASE("grounding drop makes the tokens independent of entity and box") {
    ModelConfig cfg = testutil::tiny_model_config();
    cfg.resampler.grounding_drop_prob = 1.0;
    Model model = Model::create(cfg, 6);
    Tensor img = solid_image(4, 0.9, 0.1, 0.1);
    SubjectInput a{img, model.vocab.id("circle"), BoxNorm::make(0, 0, 0.5, 0.5)};
    SubjectInput b{img, model.vocab.id("star"), BoxNorm::make(0.2, 0.3, 0.9, 1.0)};
    Rng r1(1), r2(2);
    CHECK(testutil::bitwise_equal(project_subjects(model.params, cfg, model.vocab, {a}, &r1, true).tokens,
                                  project_subjects(model.params, cfg, model.vocab, {b}, &r2, true).tokens));
}

TEST_CASE("linear projector shape") {
    ModelConfig cfg = testutil::tiny_model_config();
    cfg.resampler.projector = ProjectorKind::linear;
    Model model = Model::create(cfg, 7);
    CHECK_FALSE(model.params.contains("resampler.queries"));
    ImageCondition c = project_subjects(model.params, cfg, model.vocab,
                                        {{solid_image(4, 1, 0, 0), model.vocab.id("circle"), BoxNorm{}}}, nullptr, false);
    CHECK(c.tokens.rows() == cfg.resampler.n_t);
    CHECK(c.tokens.cols() == cfg.resampler.d_c);
}
