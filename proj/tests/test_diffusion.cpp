#include <doctest.h>

#include <cmath>

#include "msdiff/diffusion.hpp"
#include "msdiff/error.hpp"
#include "test_util.hpp"

using namespace msd;
using testutil::random_tensor;

namespace {

// Recovers the true noise from z_t because it knows z0; adds `offset`.
class OracleEps : public EpsModel {
public:
    OracleEps(const NoiseSchedule& s, Tensor z0, double offset) : s_(s), z0_(std::move(z0)), offset_(offset) {}
    DenoiserOutput predict(const Tensor& z_t, std::size_t t, const Conditioning&) const override {
        const double ab = s_.alpha_bars[t];
        std::vector<double> e(z_t.size());
        for (std::size_t i = 0; i < e.size(); ++i)
            e[i] = (z_t.data()[i] - std::sqrt(ab) * z0_.data()[i]) / std::sqrt(1.0 - ab) + offset_;
        return {Tensor::from(z_t.shape(), e), {}};
    }

private:
    const NoiseSchedule& s_;
    Tensor z0_;
    double offset_;
};

// Real network for conditional passes, garbage for unconditional ones.
class PoisonedUncond : public EpsModel {
public:
    PoisonedUncond(const ToyUNet& net, Tensor null_text) : net_(net), null_text_(std::move(null_text)) {}
    DenoiserOutput predict(const Tensor& z_t, std::size_t t, const Conditioning& cond) const override {
        DenoiserOutput out = net_.predict(z_t, t, cond);
        if (testutil::bitwise_equal(cond.text, null_text_)) out.eps = Tensor::full(out.eps.shape(), 123.0);
        return out;
    }

private:
    const ToyUNet& net_;
    Tensor null_text_;
};

}  // namespace

TEST_CASE("noise schedule and q_sample") {
    NoiseSchedule s = NoiseSchedule::linear({100, 1e-4, 0.02});
    CHECK(s.steps() == 100);
    CHECK(s.alpha_bars[0] == 1.0 - 1e-4);
    for (std::size_t t = 1; t < 100; ++t) CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
    CHECK_THROWS_AS(NoiseSchedule::linear({0, 1e-4, 0.02}), ContractError);

    Tensor z0 = Tensor::from({1, 1}, {2.0}), eps = Tensor::from({1, 1}, {4.0});
    CHECK(q_sample_abar(1.0, z0, eps).item() == 2.0);
    CHECK(q_sample_abar(0.0, z0, eps).item() == 4.0);
    CHECK(std::abs(q_sample_abar(0.25, z0, eps).item() - (0.5 * 2.0 + std::sqrt(0.75) * 4.0)) <= 1e-15);
    CHECK(std::abs(q_sample_abar(0.25, z0, eps).item() - 4.4641016151377544) <= 1e-12);
    CHECK_THROWS_AS(q_sample(s, z0, 100, eps), ContractError);
    CHECK_THROWS_AS(q_sample_abar(0.5, z0, Tensor::zeros({1, 2})), ShapeError);
}

TEST_CASE("latent conversion") {
    Tensor img = make_image(8, 8, {1.0, 0.0, 0.5});
    Tensor z = image_to_latent(img, 4, 4);
    CHECK(z.rows() == 16);
    CHECK(z.at(0, 0) == 1.0);
    CHECK(z.at(0, 1) == -1.0);
    CHECK(z.at(0, 2) == 0.0);
    Tensor back = latent_to_image(z, 4, 4, 8, 8);
    CHECK(testutil::bitwise_equal(back, img));
}

TEST_CASE("training loss with stubbed denoisers") {
    const ModelConfig cfg = testutil::tiny_model_config();
    const Model model = Model::create(cfg, 1);
    const NoiseSchedule s = NoiseSchedule::linear(cfg.schedule);
    Rng data(2);
    TrainingSample sample = testutil::two_subject_sample(model.vocab, data, 8, 4);
    const Tensor z0 = image_to_latent(sample.target_image, 4, 4);
    TrainOptions opt;

    Rng r1(3);
    LossParts exact = training_loss(model, OracleEps(s, z0, 0.0), s, {sample}, r1, opt);
    CHECK(std::abs(exact.l_ip) <= 1e-20);

    Rng r2(3);
    LossParts shifted = training_loss(model, OracleEps(s, z0, 0.3), s, {sample, sample}, r2, opt);
    CHECK(std::abs(shifted.l_ip - 0.09) <= 1e-12);

    Rng r3(3);
    CHECK_THROWS_AS(training_loss(model, OracleEps(s, z0, 0.0), s, {}, r3, opt), ContractError);
}

TEST_CASE("training loss is deterministic and includes the attention term") {
    const ModelConfig cfg = testutil::tiny_model_config();
    const Model model = Model::create(cfg, 1);
    const ToyUNet net(model);
    const NoiseSchedule s = NoiseSchedule::linear(cfg.schedule);
    Rng data(2);
    std::vector<TrainingSample> batch{testutil::two_subject_sample(model.vocab, data, 8, 4),
                                      testutil::two_subject_sample(model.vocab, data, 8, 4)};
    TrainOptions opt;
    opt.p_drop_text = opt.p_drop_image = 0.0;
    opt.attention_loss_weight = 0.01;
    opt.attention_branch = AttentionLossBranch::both;
    Rng a(5), b(5);
    LossParts la = training_loss(model, net, s, batch, a, opt);
    LossParts lb = training_loss(model, net, s, batch, b, opt);
    CHECK(la.l_ip == lb.l_ip);
    CHECK(la.l_am == lb.l_am);
    CHECK(la.total.item() == lb.total.item());
    CHECK(la.l_am > 0.0);
    CHECK(la.total.item() == doctest::Approx(la.l_ip + 0.01 * la.l_am).epsilon(1e-14));
}

TEST_CASE("denoiser: gamma zero and masked image branch") {
    const ModelConfig cfg = testutil::tiny_model_config();
    const Model model = Model::create(cfg, 3);
    const ToyUNet net(model);
    Rng rng(4);
    Rng data(5);
    TrainingSample sample = testutil::two_subject_sample(model.vocab, data, 8, 4);
    std::vector<SubjectInput> subjects;
    for (std::size_t j = 0; j < 2; ++j) subjects.push_back({sample.subjects[j].crop, sample.subjects[j].entity, sample.subjects[j].box});

    Tensor z = random_tensor(rng, {16, 3});
    Conditioning text;
    text.text = encode_text(model.params, cfg.text, model.vocab, sample.caption_ids);
    Conditioning with_img = text;
    with_img.image = project_subjects(model.params, cfg, model.vocab, subjects, nullptr, false);
    with_img.boxes = {subjects[0].box, subjects[1].box};
    with_img.gamma = 0.0;

    DenoiserOutput a = net.predict(z, 7, text);
    DenoiserOutput b = net.predict(z, 7, with_img);
    CHECK(testutil::bitwise_equal(a.eps, b.eps));
    CHECK(a.eps.rows() == 16);
    CHECK(a.eps.cols() == 3);
    REQUIRE(a.attention.size() == 2);
    CHECK_FALSE(a.attention[0].image.weights.defined());

    with_img.gamma = 1.0;
    DenoiserOutput c = net.predict(z, 7, with_img);
    CHECK_FALSE(testutil::bitwise_equal(a.eps, c.eps));
    for (const auto& layer : c.attention) {
        REQUIRE(layer.image.weights.defined());
        const std::size_t h = layer.image.latent_h, w = layer.image.latent_w;
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    if (!cell_in_box(subjects[j].box, x, y, h, w))
                        for (std::size_t k = 0; k < cfg.resampler.n_t; ++k)
                            CHECK(layer.image.weights.at(y * w + x, cfg.denoiser.dummy_count + j * cfg.resampler.n_t + k) == 0.0);
    }
}

TEST_CASE("guidance and interpolation identities") {
    Rng rng(6);
    Tensor u = random_tensor(rng, {4, 3}), c = random_tensor(rng, {4, 3});
    CHECK(testutil::bitwise_equal(guided_epsilon(u, c, 1.0), c));
    CHECK(testutil::bitwise_equal(guided_epsilon(u, c, 0.0), u));
    CHECK(guided_epsilon(Tensor::zeros({1, 1}), Tensor::full({1, 1}, 1.0), 7.5).item() == 7.5);

    CHECK(testutil::bitwise_equal(interpolate_subject_tokens(u, c, 0.0), u));
    CHECK(testutil::bitwise_equal(interpolate_subject_tokens(u, c, 1.0), c));
    CHECK(interpolate_subject_tokens(Tensor::full({1, 1}, 2.0), Tensor::full({1, 1}, 4.0), 0.5).item() == 3.0);
    CHECK_THROWS_AS(interpolate_subject_tokens(u, c, 1.5), ContractError);
}

TEST_CASE("heatmap to box") {
    Tensor positive = Tensor::full({4, 4}, 0.5);
    auto all = heatmap_to_box(positive, 1e-9);
    CHECK(all.box == BoxNorm::full_frame());
    CHECK_FALSE(all.fallback);

    Tensor onehot = Tensor::zeros({4, 5});
    onehot.mutable_data()[2 * 5 + 3] = 1.0;
    auto one = heatmap_to_box(onehot, 1.0);
    CHECK(one.box == BoxNorm::make(3.0 / 5, 2.0 / 4, 4.0 / 5, 3.0 / 4));

    Tensor plateau = Tensor::full({6, 8}, 0.1);
    for (std::size_t y = 1; y < 3; ++y)
        for (std::size_t x = 4; x < 7; ++x) plateau.mutable_data()[y * 8 + x] = 0.9;
    auto p = heatmap_to_box(plateau, 0.5);
    CHECK(p.box == BoxNorm::make(4.0 / 8, 1.0 / 6, 7.0 / 8, 3.0 / 6));

    auto none = heatmap_to_box(Tensor::zeros({3, 3}), 0.5);
    CHECK(none.fallback);
    CHECK(none.box == BoxNorm::full_frame());
}

TEST_CASE("pseudo layout masks") {
    Tensor map = Tensor::zeros({16, 3});
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x) map.mutable_data()[(y * 4 + x) * 3 + 1] = 1.0;
    std::vector<AttentionMap> maps(3, AttentionMap{map, 4, 4});
    const std::vector<BoxNorm> prior{BoxNorm::make(0.5, 0.5, 1, 1)};
    auto steps = pseudo_layout_masks(maps, {{1}}, 0.5, 1, prior, 2, 2);
    REQUIRE(steps.size() == 3);
    CHECK(steps[0].boxes[0] == prior[0]);
    CHECK(steps[1].boxes[0] == BoxNorm::make(0, 0, 0.5, 0.5));
    CHECK(steps[2].masks.key_mask.cols == 4);

    auto no_prior = pseudo_layout_masks(maps, {{1}}, 0.5, 2, std::nullopt, 2, 2);
    CHECK(no_prior[0].boxes[0] == BoxNorm::full_frame());
    CHECK_THROWS_AS(pseudo_layout_masks(maps, {{1}}, 1.0, 1, std::nullopt, 2, 2), ContractError);
    CHECK_THROWS_AS(pseudo_layout_masks(maps, {{1}}, 0.5, 4, std::nullopt, 2, 2), ContractError);
}

TEST_CASE("sampler identities") {
    const ModelConfig cfg = testutil::tiny_model_config();
    const Model model = Model::create(cfg, 8);
    const ToyUNet net(model);
    const NoiseSchedule s = NoiseSchedule::linear(cfg.schedule);
    SampleRequest req;
    req.prompt_ids = model.vocab.encode("a red circle");
    req.sampler.num_steps = 5;
    req.image_h = req.image_w = 8;

    Rng a(1), b(1);
    SampleResult text_only = cfg_sample(model, net, s, req, a);
    CHECK(testutil::bitwise_equal(text_only.image, cfg_sample(model, net, s, req, b).image));
    CHECK(text_only.image.shape() == Shape{8, 8, 3});

    SampleRequest with = req;
    with.subjects.push_back({make_image(4, 4, {0.9, 0.1, 0.1}), model.vocab.id("circle"), BoxNorm::make(0, 0, 0.5, 0.5)});
    with.sampler.gamma = 0.0;
    Rng c(1);
    CHECK(testutil::bitwise_equal(text_only.image, cfg_sample(model, net, s, with, c).image));

    with.sampler.gamma = 0.6;
    with.sampler.guidance_scale = 1.0;
    const PoisonedUncond poisoned(net, encode_text(model.params, cfg.text, model.vocab, {model.vocab.null()}));
    Rng d(2), e(2);
    CHECK(testutil::bitwise_equal(cfg_sample(model, net, s, with, d).latent, cfg_sample(model, poisoned, s, with, e).latent));

    with.sampler.pseudo_layout = PseudoLayoutConfig{0.5, 2};
    Rng f(3);
    SampleResult pl = cfg_sample(model, net, s, with, f);
    REQUIRE(pl.layout_per_step.size() == 5);
    CHECK(pl.layout_per_step[0][0] == BoxNorm::full_frame());

    with.sampler.gamma = 2.0;
    Rng g(4);
    CHECK_THROWS_AS(cfg_sample(model, net, s, with, g), ContractError);
}
