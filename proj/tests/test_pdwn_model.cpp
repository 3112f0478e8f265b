// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pdwn/model.hpp"
#include "pdwn/ops.hpp"

using namespace pdwn;

namespace {

std::vector<Tensorf> random_frames(int count, Shape s, std::mt19937_64& rng) {
    std::vector<Tensorf> out;
    for (int i = 0; i < count; ++i) out.push_back(oracle::random_tensor<float>(s, rng, 0.0, 1.0));
    return out;
}

bool bitwise_equal(const Tensorf& a, const Tensorf& b) {
    if (!(a.shape() == b.shape())) return false;
    return std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

template <typename T>
double max_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

ArchConfig tiny_config() {
    ArchConfig c;
    c.num_scales = 2;
    c.feature_channels = {2, 3};
    c.head_channels = {4, 4};
    c.cost_radius = {1, 1};
    c.blend_channels = 3;
    c.context_channels = 3;
    c.context_blocks = 1;
    return c;
}

}  // namespace

TEST_CASE("architecture arithmetic with the reference widths") {
    const ArchConfig full = ArchConfig::full();
    CHECK(full.head_output_channels() == 54);
    CHECK(full.head_input_channels(5) == 473);
    CHECK(full.head_input_channels(4) == 647);
    CHECK(full.head_input_channels(3) == 523);
    CHECK(full.head_input_channels(2) == 391);
    // The printed table says 295 here; the compositional count is 263.
    CHECK(full.head_input_channels(1) == 263);
    CHECK(full.head_input_channels(0) == 231);
    CHECK(full.blend_input_channels() == 38);
    CHECK(full.context_input_channels() == 41);

    ArchConfig flow = full;
    flow.warp = WarpMode::flow;
    CHECK(flow.head_output_channels() == 4);

    ArchConfig learnt = full;
    learnt.cost_mode = CostMode::learnt;
    for (int s = 0; s < 6; ++s) CHECK(learnt.head_input_channels(s) == full.head_input_channels(s));

    SUBCASE("instantiated parameter shapes") {
        Pdwn<float> model(full, 1);
        auto shape = [&](const std::string& n) {
            const auto* p = model.parameters().find(n);
            REQUIRE_MESSAGE(p != nullptr, n);
            return p->tensor.shape();
        };
        CHECK(shape("enc.s0.conv0.w") == Shape{16, 3, 7, 7});
        CHECK(shape("enc.s0.conv1.w") == Shape{16, 16, 5, 5});
        CHECK(shape("enc.s5.conv1.w") == Shape{196, 196, 3, 3});
        CHECK(shape("head.s5.conv0.w") == Shape{256, 473, 3, 3});
        CHECK(shape("head.s5.conv2.w") == Shape{54, 256, 3, 3});
        CHECK(shape("head.s4.conv0.w") == Shape{196, 647, 3, 3});
        CHECK(shape("head.s0.conv0.w") == Shape{64, 231, 3, 3});
        CHECK(shape("warp.s4") == Shape{128, 128, 3, 3});
        CHECK(shape("warp.s0") == Shape{16, 16, 3, 3});
        CHECK(model.parameters().find("warp.s5") == nullptr);
        CHECK(shape("blend.frame_filter") == Shape{3, 3, 3, 3});
        CHECK(shape("blend.feature_filter") == Shape{16, 16, 3, 3});
        CHECK(shape("blend.conv0.w") == Shape{16, 38, 3, 3});
        CHECK(shape("blend.conv2.w") == Shape{2, 16, 3, 3});
        CHECK(shape("ctx.in.w") == Shape{64, 41, 3, 3});
        CHECK(shape("ctx.block4.conv1.w") == Shape{64, 64, 3, 3});
        CHECK(shape("ctx.out.w") == Shape{3, 64, 3, 3});
    }
}

TEST_CASE("ArchConfig validation and text form") {
    ArchConfig c = ArchConfig::desk();
    CHECK_NOTHROW(c.validate());
    CHECK(c.num_scales == 3);
    CHECK(c.feature_channels == std::vector<int>{8, 16, 32});

    ArchConfig bad = c;
    bad.feature_channels.pop_back();
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("feature_channels"), std::invalid_argument);
    bad = c;
    bad.input_frames = 3;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("input_frames"), std::invalid_argument);

    ArchConfig other = ArchConfig::full();
    other.cost_mode = CostMode::learnt;
    other.warp = WarpMode::flow;
    other.cost_norm = CostNormalization::feature_dim;
    other.leaky_slope = 0.2;
    other.input_frames = 4;
    const ArchConfig back = ArchConfig::from_text(other.to_text());
    CHECK(back.to_text() == other.to_text());
    CHECK_FALSE(back.first_difference(other).has_value());

    other.context_blocks = 4;
    CHECK(back.first_difference(other) == std::optional<std::string>("context_blocks"));

    CHECK_THROWS_WITH_AS(ArchConfig::from_text("bogus = 1\n"), doctest::Contains("bogus"), std::invalid_argument);
    CHECK_THROWS_AS(ArchConfig::from_text("num_scales = two\n"), std::invalid_argument);
    CHECK_THROWS_AS(ArchConfig::from_text("num_scales = 2\n"), std::invalid_argument);
}

TEST_CASE("encode_pyramid") {
    std::mt19937_64 rng(31);
    Pdwn<float> model(ArchConfig::desk(), 5);
    auto f = random_frames(1, {1, 3, 64, 64}, rng)[0];
    const auto pyr = model.encode_pyramid({f, f.clone()});
    REQUIRE(pyr.levels.size() == 2);
    const std::int64_t sizes[] = {64, 32, 16};
    for (int s = 0; s < 3; ++s) {
        CHECK(pyr.levels[0][s].shape() == Shape{1, model.config().feature_channels[s], sizes[s], sizes[s]});
        CHECK(bitwise_equal(pyr.levels[0][s], pyr.levels[1][s]));
    }
    CHECK_THROWS_AS(model.encode_pyramid({f, Tensorf({1, 3, 32, 64})}), std::invalid_argument);
    CHECK_THROWS_AS(model.encode_pyramid({Tensorf({1, 1, 64, 64})}), std::invalid_argument);
}

TEST_CASE("estimators at initialisation") {
    std::mt19937_64 rng(32);
    Pdwn<float> model(ArchConfig::desk(), 6);
    auto frames = random_frames(2, {2, 3, 32, 32}, rng);
    const auto pyr = model.encode_pyramid(frames);

    const auto coarse = model.coarsest_estimate(2, pyr);
    for (const auto& f : coarse.fields) {
        CHECK(f.offsets.shape() == Shape{2, 18, 8, 8});
        CHECK(f.modulation.shape() == Shape{2, 9, 8, 8});
        for (float v : f.offsets.data()) CHECK(v == 0.0f);
        for (float v : f.modulation.data()) CHECK(v == 0.5f);
    }
    CHECK(coarse.hidden.shape().c == model.config().head_channels[2]);

    SUBCASE("upsampling doubles a constant offset and keeps modulation") {
        ScaleEstimate<float> prev = coarse;
        for (auto& f : prev.fields) {
            f.offsets = Tensorf({2, 18, 8, 8});
            for (std::int64_t j = 0; j < 9; ++j)
                for (std::int64_t p = 0; p < 64; ++p) f.offsets.data()[2 * j * 64 + p] = 1.0f;  // batch 0 only
            f.modulation = Tensorf::full({2, 9, 8, 8}, 0.3f);
        }
        const auto up = model.upsample(prev, 16, 16);
        for (const auto& f : up.fields) {
            for (std::int64_t n = 0; n < 2; ++n)
                for (std::int64_t j = 0; j < 9; ++j)
                    for (std::int64_t y = 0; y < 16; ++y)
                        for (std::int64_t x = 0; x < 16; ++x) {
                            CHECK(f.offsets.at(n, 2 * j, y, x) == doctest::Approx(n == 0 ? 2.0 : 0.0));
                            CHECK(f.offsets.at(n, 2 * j + 1, y, x) == 0.0f);
                            CHECK(f.modulation.at(n, j, y, x) == doctest::Approx(0.3));
                        }
        }
        // with zero-initialised heads the refinement adds no residual
        const auto refined = model.refine_scale(prev, 1, pyr);
        for (int i = 0; i < 2; ++i) {
            CHECK(max_diff(refined.fields[i].offsets, up.fields[i].offsets) == 0.0);
            for (float v : refined.fields[i].modulation.data()) CHECK(v == 0.5f);
        }
        CHECK_THROWS_AS(model.refine_scale(prev, 0, pyr), std::invalid_argument);
    }

    SUBCASE("offset chain scales a constant field by 2^(L-1)") {
        ScaleEstimate<float> est = coarse;
        const float dy = 0.75f, dx = -1.25f;
        for (auto& f : est.fields) {
            f.offsets = Tensorf({2, 18, 8, 8});
            for (std::int64_t n = 0; n < 2; ++n)
                for (std::int64_t j = 0; j < 9; ++j)
                    for (std::int64_t p = 0; p < 64; ++p) {
                        f.offsets.data()[(n * 18 + 2 * j) * 64 + p] = dy;
                        f.offsets.data()[(n * 18 + 2 * j + 1) * 64 + p] = dx;
                    }
        }
        est = model.refine_scale(est, 1, pyr);
        est = model.refine_scale(est, 0, pyr);
        for (const auto& f : est.fields) {
            CHECK(f.offsets.shape() == Shape{2, 18, 32, 32});
            for (std::int64_t j = 0; j < 9; ++j) {
                CHECK(f.offsets.at(1, 2 * j, 17, 5) == doctest::Approx(4 * dy));
                CHECK(f.offsets.at(0, 2 * j + 1, 31, 0) == doctest::Approx(4 * dx));
            }
        }
    }
}

TEST_CASE("blending and context") {
    std::mt19937_64 rng(33);
    const ArchConfig cfg = ArchConfig::desk();
    Pdwn<float> model(cfg, 7);
    auto frames = random_frames(2, {1, 3, 16, 16}, rng);

    SUBCASE("alpha is a convex weight") {
        const auto r = model.forward(frames);
        const auto& a = r.diagnostics.alpha;
        CHECK(a.shape() == Shape{1, 1, 16, 16});
        for (float v : a.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        // blended = a * w0 + (1 - a) * w2
        const auto& w = r.diagnostics.warped_frames;
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < 16; ++y)
                for (std::int64_t x = 0; x < 16; ++x) {
                    const float al = a.at(0, 0, y, x);
                    CHECK(r.diagnostics.blended.at(0, c, y, x) ==
                          doctest::Approx(al * w[0].at(0, c, y, x) + (1 - al) * w[1].at(0, c, y, x)).epsilon(1e-5));
                }
    }

    SUBCASE("identical warped frames blend to either one") {
        const auto pyr = model.encode_pyramid({frames[0], frames[0]});
        ScaleEstimate<float> est;
        for (auto& f : est.fields) {
            f.offsets = oracle::random_tensor<float>({1, 18, 16, 16}, rng, -1.0, 1.0);
            f.modulation = oracle::random_tensor<float>({1, 9, 16, 16}, rng, 0.0, 1.0);
        }
        est.fields[1] = est.fields[0];
        const auto b = model.blend(frames[0], frames[0], est, pyr.levels[0][0], pyr.levels[1][0]);
        CHECK(max_diff(b.blended, b.frames[0]) < 1e-6);
    }

    SUBCASE("alpha forced to one selects the first warped frame") {
        auto w0 = oracle::random_tensor<float>({1, 3, 4, 4}, rng);
        auto w2 = oracle::random_tensor<float>({1, 3, 4, 4}, rng);
        CHECK(max_diff(alpha_blend(w0, w2, Tensorf::full({1, 1, 4, 4}, 1.0f)), w0) == 0.0);
    }

    SUBCASE("zero-initialised context network is the identity on the blend") {
        ArchConfig off = cfg;
        off.context_enhancement = false;
        Pdwn<float> without(off, 7);
        const auto a = model.forward(frames);
        const auto b = without.forward(frames);
        CHECK(bitwise_equal(a.output, a.diagnostics.blended));
        CHECK(bitwise_equal(a.output, b.output));
        const auto c = model.forward(frames, ForwardOptions{false});
        CHECK(bitwise_equal(c.output, c.diagnostics.blended));
    }
}

TEST_CASE("forward contract") {
    std::mt19937_64 rng(34);
    Pdwn<float> model(ArchConfig::desk(), 8);

    SUBCASE("identical inputs reproduce the frame at initialisation") {
        auto f = random_frames(1, {2, 3, 32, 32}, rng)[0];
        const auto r = model.forward({f, f.clone()});
        CHECK(max_diff(r.output, f) < 1e-5);
        CHECK(bitwise_equal(r.diagnostics.warped_frames[0], r.diagnostics.warped_frames[1]));
    }

    SUBCASE("output shape follows the input") {
        for (auto [h, w] : {std::pair{16, 24}, std::pair{32, 32}, std::pair{8, 4}}) {
            auto frames = random_frames(2, {1, 3, h, w}, rng);
            const auto r = model.forward(frames);
            CHECK(r.output.shape() == frames[0].shape());
            CHECK(r.diagnostics.scales.size() == 3);
            CHECK(r.diagnostics.mean_offsets[0].shape() == Shape{1, 2, h, w});
        }
    }

    SUBCASE("rejections") {
        CHECK_THROWS_WITH_AS(model.forward(random_frames(2, {1, 3, 18, 16}, rng)), doctest::Contains("divisible"),
                             std::invalid_argument);
        CHECK_THROWS_WITH_AS(model.forward(random_frames(4, {1, 3, 16, 16}, rng)), doctest::Contains("input frames"),
                             std::invalid_argument);
    }

    SUBCASE("four-input configuration") {
        ArchConfig c4 = ArchConfig::desk();
        c4.input_frames = 4;
        Pdwn<float> m4(c4, 8);
        CHECK(m4.parameters().find("head.s0.conv0.w")->tensor.shape().c ==
              model.parameters().find("head.s0.conv0.w")->tensor.shape().c + 2 * c4.feature_channels[0]);
        auto frames = random_frames(4, {1, 3, 16, 16}, rng);
        const auto r = m4.forward(frames);
        CHECK(r.output.shape() == frames[0].shape());
        // still exactly two warp directions, from the two central frames
        CHECK(r.diagnostics.scales[0].fields.size() == 2);
        auto same = frames;
        same[0] = same[1];
        same[3] = same[2];
        same[2] = same[1];
        CHECK(max_diff(m4.forward(same).output, frames[1]) < 1e-5);
        CHECK_THROWS_AS(m4.forward({frames[0], frames[1]}), std::invalid_argument);
    }
}

TEST_CASE("optical flow variant") {
    std::mt19937_64 rng(35);
    ArchConfig c = ArchConfig::desk();
    c.warp = WarpMode::flow;
    Pdwn<float> model(c, 9);
    CHECK(model.parameters().find("head.s1.conv2.w")->tensor.shape().n == 4);
    CHECK(model.parameters().find("warp.s0") == nullptr);
    auto frames = random_frames(2, {1, 3, 16, 16}, rng);
    const auto r = model.forward(frames);
    for (const auto& est : r.diagnostics.scales)
        for (const auto& f : est.fields) {
            CHECK(f.offsets.shape().c == 2);
            for (float v : f.offsets.data()) CHECK(v == 0.0f);
        }
    CHECK(bitwise_equal(r.diagnostics.warped_frames[0], frames[0]));
    CHECK(bitwise_equal(r.diagnostics.warped_frames[1], frames[1]));
}

TEST_CASE("gradients reach every parameter") {
    std::mt19937_64 rng(36);
    for (WarpMode warp : {WarpMode::dconv, WarpMode::flow}) {
        for (CostMode cost : {CostMode::predefined, CostMode::learnt}) {
            ArchConfig c = ArchConfig::desk();
            c.warp = warp;
            c.cost_mode = cost;
            Pdwn<float> model(c, 10);
            Adam<float> adam(AdamOptions<float>{0.01f});
            for (int step = 0; step < 2; ++step) {
                auto frames = random_frames(3, {2, 3, 16, 16}, rng);
                model.parameters().zero_grad();
                l1_loss(model.forward({frames[0], frames[1]}).output, frames[2]).backward();
                if (step == 1) {
                    // zero-initialised output convolutions make the layers
                    // beneath them dead only until the first update
                    for (const auto& p : model.parameters().items()) {
                        INFO(p.name);
                        REQUIRE(p.tensor.has_grad());
                        double norm = 0;
                        for (float g : p.tensor.grad()) norm += std::abs(g);
                        CHECK(norm > 0);
                    }
                }
                adam.step(model.parameters());
            }
        }
    }
}

TEST_CASE("end-to-end finite differences in double precision") {
    std::mt19937_64 rng(37);
    Pdwn<double> model(tiny_config(), 11);
    // move off the zero-initialised heads so sampling points are fractional
    for (auto& p : model.parameters().items())
        for (double& v : p.tensor.data()) v += std::uniform_real_distribution<double>(-0.05, 0.05)(rng);
    std::vector<Tensord> frames;
    for (int i = 0; i < 2; ++i) frames.push_back(oracle::random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0));
    auto probe = oracle::random_tensor<double>({1, 3, 8, 8}, rng);
    auto objective = [&] { return sum(mul(model.forward(frames).output, probe)); };

    model.parameters().zero_grad();
    objective().backward();
    const double h = 1e-5;
    double worst = 0;
    int checked = 0;
    for (auto& p : model.parameters().items()) {
        REQUIRE(p.tensor.has_grad());
        const auto grad = std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end());
        auto data = p.tensor.data();
        for (int k = 0; k < 3; ++k) {
            const auto i = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
            const double saved = data[i];
            data[i] = saved + h;
            const double up = objective().item();
            data[i] = saved - h;
            const double down = objective().item();
            data[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double rel = std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-3});
            INFO(p.name << "[" << i << "] analytic " << grad[i] << " numeric " << numeric);
            CHECK(rel < 1e-4);
            worst = std::max(worst, rel);
            ++checked;
        }
    }
    MESSAGE("checked " << checked << " entries, worst relative error " << worst);
}
