#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "uwseg/loss.hpp"
#include "uwseg/model.hpp"
#include "uwseg/rng.hpp"
#include "uwseg/uncertainty.hpp"

using namespace uwseg;

namespace {

ToyModelSpec tiny_spec(int classes = 3, std::vector<int> hidden = {4}) {
    ToyModelSpec s;
    s.input_channels = 2;
    s.hidden = std::move(hidden);
    s.kernel = 3;
    s.classes = classes;
    return s;
}

ChwTensor random_image(int C, int H, int W, std::uint64_t seed) {
    ChwTensor t(C, H, W);
    Rng rng(seed);
    for (auto& v : t.data()) v = rng.uniform(0.0, 1.0);
    return t;
}

}  // namespace

TEST(InitParams, BoundsAndDeterminism) {
    ToyModelSpec spec;
    spec.classes = 4;
    const ToyModelParams a = init_params(spec, 7);
    const ToyModelParams b = init_params(spec, 7);
    ASSERT_EQ(a.layers.size(), 3u);

    const double bound0 = 1.0 / std::sqrt(27.0);  // 3 input channels, 3x3 kernel
    EXPECT_NEAR(bound0, 0.19245, 1e-5);
    for (double w : a.layers[0].w) {
        EXPECT_GT(w, -bound0);
        EXPECT_LT(w, bound0);
    }
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        EXPECT_EQ(a.layers[l].w, b.layers[l].w);
        for (double bias : a.layers[l].b) EXPECT_EQ(bias, 0.0);
    }
    const ToyModelParams c = init_params(spec, 8);
    EXPECT_NE(a.layers[0].w, c.layers[0].w);
}

TEST(InitParams, RejectsBadSpecs) {
    ToyModelSpec spec;
    spec.classes = 0;
    EXPECT_THROW(init_params(spec, 1), ContractError);
    spec.classes = 2;
    spec.kernel = 4;
    EXPECT_THROW(init_params(spec, 1), ContractError);
}

TEST(Forward, ZeroParamsGiveZeroLogitsAndUniformEntropy) {
    ToyModelParams params = init_params(tiny_spec(), 3);
    for (auto& l : params.layers) std::fill(l.w.begin(), l.w.end(), 0.0);

    const ChwTensor img = random_image(2, 5, 5, 4);
    const ForwardCache cache = forward(params, img);
    for (double v : cache.logits().data()) EXPECT_EQ(v, 0.0);

    const UncertaintyMap h = entropy_map(softmax(cache.logits()));
    for (double v : h.data()) EXPECT_NEAR(v, std::log(3.0), 1e-12);
}

TEST(Forward, SingleLayerMatchesHandConvolution) {
    ToyModelSpec spec;
    spec.input_channels = 1;
    spec.hidden = {};
    spec.kernel = 3;
    spec.classes = 1;
    ToyModelParams params = init_params(spec, 1);
    // kernel picks out the left neighbor plus twice the center
    std::fill(params.layers[0].w.begin(), params.layers[0].w.end(), 0.0);
    params.layers[0].w[3] = 1.0;  // (ky=1, kx=0)
    params.layers[0].w[4] = 2.0;  // center
    params.layers[0].b[0] = 0.25;

    ChwTensor img(1, 2, 2);
    img.at(0, 0, 0) = 1.0;
    img.at(0, 0, 1) = 2.0;
    img.at(0, 1, 0) = 3.0;
    img.at(0, 1, 1) = 4.0;

    const ForwardCache cache = forward(params, img);
    EXPECT_NEAR(cache.logits().at(0, 0, 0), 0.25 + 2.0 * 1.0, 1e-15);        // left pad = 0
    EXPECT_NEAR(cache.logits().at(0, 0, 1), 0.25 + 1.0 + 2.0 * 2.0, 1e-15);  // left = 1
    EXPECT_NEAR(cache.logits().at(0, 1, 0), 0.25 + 2.0 * 3.0, 1e-15);
    EXPECT_NEAR(cache.logits().at(0, 1, 1), 0.25 + 3.0 + 2.0 * 4.0, 1e-15);
}

TEST(Forward, FiniteForFiniteInputsAndShapeChecks) {
    const ToyModelParams params = init_params(tiny_spec(), 9);
    const ForwardCache cache = forward(params, random_image(2, 6, 7, 10));
    EXPECT_TRUE(cache.logits().all_finite());
    EXPECT_EQ(cache.logits().classes(), 3);
    EXPECT_EQ(cache.logits().height(), 6);
    EXPECT_EQ(cache.logits().width(), 7);
    EXPECT_THROW(forward(params, random_image(3, 6, 7, 10)), ContractError);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
    const ToyModelParams params = init_params(tiny_spec(), 11);
    const ChwTensor img = random_image(2, 4, 4, 12);
    const ForwardCache cache = forward(params, img);
    const ModelTensors g = backward(params, cache, ChwTensor(3, 4, 4, 0.0));
    for (const auto& layer : g.w)
        for (double v : layer) EXPECT_EQ(v, 0.0);
    for (const auto& layer : g.b)
        for (double v : layer) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearInUpstreamGradient) {
    const ToyModelParams params = init_params(tiny_spec(), 13);
    const ChwTensor img = random_image(2, 4, 4, 14);
    const ForwardCache cache = forward(params, img);
    ChwTensor up(3, 4, 4);
    Rng rng(15);
    for (auto& v : up.data()) v = rng.uniform(-1.0, 1.0);
    ChwTensor up2 = up;
    for (auto& v : up2.data()) v *= 2.0;

    const ModelTensors g1 = backward(params, cache, up);
    const ModelTensors g2 = backward(params, cache, up2);
    for (std::size_t l = 0; l < g1.w.size(); ++l)
        for (std::size_t i = 0; i < g1.w[l].size(); ++i)
            EXPECT_NEAR(g2.w[l][i], 2.0 * g1.w[l][i], 1e-12);
}

TEST(Backward, FullChainMatchesFiniteDifferences) {
    ToyModelParams params = init_params(tiny_spec(3, {4}), 16);
    const ChwTensor img = random_image(2, 4, 4, 17);
    LabelMask target(4, 4);
    Rng rng(18);
    for (auto& v : target.data()) v = static_cast<std::uint8_t>(rng.below(3));
    target.at(2, 2) = kIgnoreLabel;
    UncertaintyMap iu(4, 4);
    for (auto& v : iu.data()) v = rng.uniform(0.0, 1.0);

    LossConfig cfg;
    cfg.mode = LossMode::InstanceUncertainty;
    auto loss_value = [&] {
        const ForwardCache c = forward(params, img);
        return weighted_ce(c.logits(), target, &iu, cfg).value;
    };

    const ForwardCache cache = forward(params, img);
    const LossResult res = weighted_ce(cache.logits(), target, &iu, cfg);
    const ModelTensors grads = backward(params, cache, res.grad_logits);

    double max_rel = 0.0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (std::size_t i = 0; i < params.layers[l].w.size(); ++i) {
            const double num = oracle::central_diff(loss_value, &params.layers[l].w[i], 1e-3);
            const double rel = std::fabs(grads.w[l][i] - num) /
                               std::max(1e-6, std::max(std::fabs(num), std::fabs(grads.w[l][i])));
            max_rel = std::max(max_rel, rel);
        }
        for (std::size_t i = 0; i < params.layers[l].b.size(); ++i) {
            const double num = oracle::central_diff(loss_value, &params.layers[l].b[i], 1e-3);
            const double rel = std::fabs(grads.b[l][i] - num) /
                               std::max(1e-6, std::max(std::fabs(num), std::fabs(grads.b[l][i])));
            max_rel = std::max(max_rel, rel);
        }
    }
    EXPECT_LT(max_rel, 1e-3);
}

TEST(Backward, StaleCacheRejected) {
    const ToyModelParams a = init_params(tiny_spec(3, {4}), 19);
    const ToyModelParams b = init_params(tiny_spec(3, {5}), 19);
    const ForwardCache cache = forward(a, random_image(2, 4, 4, 20));
    EXPECT_THROW(backward(b, cache, ChwTensor(3, 4, 4, 0.0)), ContractError);
}

TEST(SgdStep, PlainAndMomentumRecurrence) {
    ToyModelSpec spec;
    spec.input_channels = 1;
    spec.hidden = {};
    spec.kernel = 1;
    spec.classes = 1;
    ToyModelParams params = init_params(spec, 21);
    params.layers[0].w[0] = 1.0;

    ModelTensors grads = ModelTensors::zeros_like(params);
    ModelTensors vel = ModelTensors::zeros_like(params);
    grads.w[0][0] = 0.5;

    sgd_step(params, grads, vel, 0.1, 0.0);
    EXPECT_NEAR(params.layers[0].w[0], 1.0 - 0.1 * 0.5, 1e-15);

    // momentum 0.9, two more steps with the same gradient: v1 = 0.5 (fresh vel
    // already holds 0.5 from the first step), hand-unroll from current state
    double p = params.layers[0].w[0], v = vel.w[0][0];
    for (int i = 0; i < 2; ++i) {
        v = 0.9 * v + 0.5;
        p -= 0.1 * v;
        sgd_step(params, grads, vel, 0.1, 0.9);
        EXPECT_NEAR(params.layers[0].w[0], p, 1e-15);
        EXPECT_NEAR(vel.w[0][0], v, 1e-15);
    }

    grads.w[0][0] = 0.0;
    ModelTensors vel2 = ModelTensors::zeros_like(params);
    const double before = params.layers[0].w[0];
    sgd_step(params, grads, vel2, 0.1, 0.0);
    EXPECT_EQ(params.layers[0].w[0], before);
}

TEST(Checkpoint, RoundTripAfterQuantization) {
    ToyModelSpec spec;
    spec.classes = 4;
    spec.hidden = {5, 6};
    ToyModelParams params = init_params(spec, 22);
    for (auto& l : params.layers) {
        quantize_to_f32(l.w);
        quantize_to_f32(l.b);
    }

    const std::string path =
        (std::filesystem::temp_directory_path() / "uwseg_model.ckpt").string();
    save_checkpoint(params, path);
    const ToyModelParams back = load_checkpoint(path);

    EXPECT_EQ(back.seed, params.seed);
    EXPECT_EQ(back.spec.hidden, params.spec.hidden);
    EXPECT_EQ(back.spec.classes, params.spec.classes);
    ASSERT_EQ(back.layers.size(), params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        EXPECT_EQ(back.layers[l].w, params.layers[l].w);
        EXPECT_EQ(back.layers[l].b, params.layers[l].b);
    }
    std::remove(path.c_str());
}

TEST(Checkpoint, RejectsGarbage) {
    const std::string path =
        (std::filesystem::temp_directory_path() / "uwseg_garbage.ckpt").string();
    detail::write_file(path, "not a checkpoint at all");
    EXPECT_THROW(load_checkpoint(path), FormatError);

    ToyModelSpec spec;
    spec.classes = 2;
    save_checkpoint(init_params(spec, 1), path);
    std::string bytes = detail::read_file(path);
    detail::write_file(path, bytes.substr(0, bytes.size() - 10));
    EXPECT_THROW(load_checkpoint(path), CorruptFileError);
    std::remove(path.c_str());
}

TEST(Training, LossDropsOnSingleImage) {
    ToyModelSpec spec;
    spec.input_channels = 3;
    spec.classes = 3;
    spec.hidden = {8};
    ToyModelParams params = init_params(spec, 23);

    ChwTensor img = random_image(3, 8, 8, 24);
    LabelMask target(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) target.at(y, x) = static_cast<std::uint8_t>((y / 3) % 3);

    ModelTensors vel = ModelTensors::zeros_like(params);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
        const ForwardCache cache = forward(params, img);
        const LossResult res = weighted_ce(cache.logits(), target, nullptr, LossConfig{});
        if (step == 0) first = res.value;
        last = res.value;
        const ModelTensors grads = backward(params, cache, res.grad_logits);
        sgd_step(params, grads, vel, 0.05, 0.9);
    }
    EXPECT_LT(last, 0.5 * first);
}
