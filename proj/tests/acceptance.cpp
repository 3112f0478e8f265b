// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. PDWN_ACCEPT_ONLY=3,5
// restricts the run to the listed criteria. Exit status is nonzero if any
// selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "pdwn/gradcheck.hpp"
#include "pdwn/io.hpp"
#include "pdwn/ops.hpp"
#include "pdwn/train.hpp"
#include "pdwn/warp.hpp"

namespace fs = std::filesystem;
using namespace pdwn;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string sci(double v) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::vector<synth::Sample> render_set(int n, synth::Difficulty d, std::uint64_t seed, int size = 32) {
    synth::DatasetOptions o;
    o.width = o.height = size;
    std::vector<synth::Sample> out;
    for (const auto& s : synth::make_dataset(n, d, seed, o)) out.push_back(synth::render(s));
    return out;
}

// Desk training schedule shared by the experiments.
TrainConfig desk_schedule(std::int64_t steps, std::uint64_t seed) {
    TrainConfig c;
    c.steps = steps;
    c.batch_size = 4;
    c.lr = 1e-3;
    c.seed = seed;
    return c;
}

// 1. Finite-difference gradient suite.
Outcome gradient_suite() {
    const std::clock_t start = std::clock();
    const auto results = gradcheck::run_all();
    const double cpu = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
    const auto missing = gradcheck::missing_checks();
    const std::vector<std::string> required{"conv2d",          "leaky_relu", "max_pool2",   "bilinear_resize",
                                            "sigmoid",         "softmax_channels", "deformable_warp", "flow_warp",
                                            "cost_volume",     "learnt_cost", "l1_loss"};
    std::set<std::string> covered;
    double worst = 0;
    bool ok = missing.empty();
    for (const auto& r : results) {
        covered.insert(r.op);
        worst = std::max(worst, r.max_rel_error);
        if (!r.passed || r.checked == 0) {
            ok = false;
            std::cout << "    failed: " << r.op << " d/d" << r.wrt << " rel " << sci(r.max_rel_error) << "\n";
        }
    }
    for (const auto& op : required)
        if (!covered.count(op)) {
            ok = false;
            std::cout << "    not covered: " << op << "\n";
        }
    ok = ok && worst < 1e-4 && cpu < 60;
    return {ok, std::to_string(results.size()) + " checks over " + std::to_string(covered.size()) +
                    " ops, worst relative error " + sci(worst) + ", " + fmt(cpu, 2) + " s CPU"};
}

// 2. Library ops against nested-loop oracles.
Outcome oracle_equivalence() {
    std::mt19937_64 rng(2024);
    const auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
    constexpr int kTrials = 60;
    double worst[4] = {0, 0, 0, 0};
    for (int t = 0; t < kTrials; ++t) {
        const int n = pick(1, 2), c = pick(1, 4), h = pick(3, 9), w = pick(3, 9), co = pick(1, 4);
        {
            const int k = 2 * pick(0, 2) + 1, stride = pick(1, 2), pad = pick(0, k / 2);
            const auto x = oracle::random_tensor<float>({n, c, h + k, w + k}, rng);
            const auto wt = oracle::random_tensor<float>({co, c, k, k}, rng);
            const auto b = oracle::random_tensor<float>({1, 1, 1, co}, rng);
            worst[0] = std::max(worst[0], oracle::max_abs_diff(conv2d(x, wt, b, stride, pad),
                                                               oracle::conv2d(x, wt, b, stride, pad)));
        }
        {
            const auto x = oracle::random_tensor<float>({n, c, 2 * h, 2 * w}, rng);
            worst[1] = std::max(worst[1], oracle::max_abs_diff(max_pool2(x), oracle::max_pool2(x)));
        }
        {
            const int k = t % 3 == 0 ? 1 : 3;
            const auto x = oracle::random_tensor<float>({n, c, h, w}, rng);
            OffsetField<float> f{oracle::random_tensor<float>({n, 2 * k * k, h, w}, rng, -3.0, 3.0),
                                 oracle::random_tensor<float>({n, k * k, h, w}, rng, 0.0, 1.0)};
            const auto wt = oracle::random_tensor<float>({co, c, k, k}, rng);
            worst[2] = std::max(worst[2], oracle::max_abs_diff(deformable_warp(x, f, GlobalFilter<float>{wt}),
                                                               oracle::deformable_warp(x, f.offsets, f.modulation, wt)));
        }
        {
            const int r = pick(0, 4);
            const auto l = oracle::random_tensor<float>({n, c, h, w}, rng);
            const auto rt = oracle::random_tensor<float>({n, c, h, w}, rng);
            worst[3] = std::max(worst[3], oracle::max_abs_diff(cost_volume(l, rt, r), oracle::cost_volume(l, rt, r)));
        }
    }
    const bool ok = std::max({worst[0], worst[1], worst[2], worst[3]}) < 1e-5;
    return {ok, std::to_string(kTrials) + " instances each; max abs error conv2d " + sci(worst[0]) + ", max_pool2 " +
                    sci(worst[1]) + ", deformable_warp " + sci(worst[2]) + ", cost_volume " + sci(worst[3])};
}

// 3. Degenerate warps reduce to convolution and to flow warping.
Outcome degeneracy() {
    std::mt19937_64 rng(7);
    double conv_err = 0, flow_err = 0;
    for (int t = 0; t < 25; ++t) {
        const std::int64_t n = 1 + t % 2, c = 1 + t % 3, h = 4 + t % 5, w = 5 + t % 4;
        const auto x = oracle::random_tensor<double>({n, c, h, w}, rng);
        const auto wt = oracle::random_tensor<double>({3, c, 3, 3}, rng);
        OffsetField<double> zero{Tensord::zeros({n, 18, h, w}), Tensord::full({n, 9, h, w}, 1.0)};
        const auto warped = deformable_warp(x, zero, GlobalFilter<double>{wt});
        const auto conv = conv2d(x, wt, Tensord::zeros({1, 1, 1, 3}), 1, 1);
        for (std::size_t i = 0; i < warped.data().size(); ++i)
            conv_err = std::max(conv_err, std::abs(warped.data()[i] - conv.data()[i]));

        const auto flow = oracle::random_tensor<double>({n, 2, h, w}, rng, -2.5, 2.5);
        Tensord identity({c, c, 1, 1});
        for (std::int64_t i = 0; i < c; ++i) identity.at(i, i, 0, 0) = 1.0;
        OffsetField<double> one{flow, Tensord::full({n, 1, h, w}, 1.0)};
        const auto a = flow_warp(x, flow);
        const auto b = deformable_warp(x, one, GlobalFilter<double>{identity});
        for (std::size_t i = 0; i < a.data().size(); ++i)
            flow_err = std::max(flow_err, std::abs(a.data()[i] - b.data()[i]));
    }
    return {conv_err < 1e-6 && flow_err < 1e-6,
            "zero-offset warp vs conv2d " + sci(conv_err) + ", flow_warp vs 1x1 warp " + sci(flow_err)};
}

// 4. Head widths of the full-size configuration.
Outcome architecture() {
    const ArchConfig c = ArchConfig::full();
    // Scale s here is scale s+1 in the 1-based numbering of the layer table.
    const std::vector<std::pair<int, int>> expected{{5, 473}, {4, 647}, {3, 523}, {2, 391}, {0, 231}, {1, 263}};
    bool ok = c.num_scales == 6;
    std::string widths;
    for (const auto& [s, want] : expected) {
        const int got = c.head_input_channels(s);
        ok = ok && got == want;
        widths += "s" + std::to_string(s + 1) + "=" + std::to_string(got) + " ";
    }
    ok = ok && c.blend_input_channels() == 38 && c.context_input_channels() == 41;
    const Pdwn<float> model(c, 1);
    ok = ok && model.parameters().find("head.s1.conv0.w")->tensor.shape().c == 263;
    return {ok, widths + "blend=" + std::to_string(c.blend_input_channels()) +
                    " context=" + std::to_string(c.context_input_channels()) + " (scale 2 is compositional 263)"};
}

// 5. Memorize one easy triplet.
Outcome overfit() {
    const auto start = std::chrono::steady_clock::now();
    const auto sample = render_set(1, synth::Difficulty::easy, 5);
    const ArchConfig arch = ArchConfig::desk();
    Pdwn<float> model(arch, 3);
    TrainConfig c;
    c.steps = 2000;
    c.batch_size = 1;
    c.lr = 2e-4;
    c.seed = 5;
    c.augment = false;
    c.two_phase = false;  // context enhancement trains from the first step
    Trainer trainer(model, c, sample);
    double best = 0;
    std::int64_t reached = -1;
    const auto check = [&] {
        const double p = evaluate(model, sample).mean_psnr;
        best = std::max(best, p);
        if (p >= 35 && reached < 0) reached = trainer.step();
        return p;
    };
    while (trainer.step() < c.steps && trainer.run(trainer.step() + 250)) {
        const double p = check();
        std::cout << "    step " << trainer.step() << " PSNR " << fmt(p, 2) << " dB\n";
    }
    const double final_psnr = evaluate(model, sample).mean_psnr;

    // Trend: each of ten consecutive window means may exceed its predecessor
    // by at most 5%.
    const auto& curve = trainer.curve();
    const std::size_t window = curve.size() / 10;
    bool trend = true;
    double prev = 0;
    for (std::size_t i = 0; window > 0 && i + window <= curve.size(); i += window) {
        double m = 0;
        for (std::size_t j = i; j < i + window; ++j) m += curve[j].loss;
        m /= window;
        std::cout << "    window " << i << " mean loss " << sci(m) << "\n";
        if (i > 0 && m > 1.05 * prev) trend = false;
        prev = m;
    }
    const double secs = seconds_since(start);
    const double baseline = evaluate_frame_average(sample).mean_psnr;
    return {!trainer.diverged() && final_psnr >= 35 && trend && secs < 600,
            "PSNR " + fmt(final_psnr, 2) + " dB after " + std::to_string(trainer.step()) + " steps (first >= 35 dB at " +
                (reached < 0 ? std::string("never") : std::to_string(reached)) + "), frame average " +
                fmt(baseline, 2) + " dB, loss trend " + (trend ? "ok" : "violated") + ", " + fmt(secs, 0) + " s"};
}

// 6. Held-out margin over the frame average on easy scenes.
Outcome generalization() {
    const auto start = std::chrono::steady_clock::now();
    const auto train = render_set(500, synth::Difficulty::easy, 100);
    const auto test = render_set(100, synth::Difficulty::easy, 200);
    Pdwn<float> model(ArchConfig::desk(), 1);
    Trainer trainer(model, desk_schedule(3000, 6), train);
    trainer.on_step = [&](const LossRecord& r) {
        if ((r.step + 1) % 500 == 0)
            std::cout << "    step " << r.step + 1 << " held-out PSNR " << fmt(evaluate(model, test).mean_psnr, 2)
                      << " dB\n";
    };
    trainer.run();
    const double psnr = evaluate(model, test).mean_psnr;
    const double base = evaluate_frame_average(test).mean_psnr;
    return {!trainer.diverged() && psnr - base >= 6,
            "model " + fmt(psnr, 2) + " dB vs frame average " + fmt(base, 2) + " dB, margin " + fmt(psnr - base, 2) +
                " dB on 100 held-out scenes, " + fmt(seconds_since(start), 0) + " s"};
}

// 7. Component ablations on hard scenes.
Outcome ablation_direction() {
    const auto start = std::chrono::steady_clock::now();
    const auto train = render_set(500, synth::Difficulty::hard, 300);
    const auto test = render_set(100, synth::Difficulty::hard, 400);
    ArchConfig base = ArchConfig::desk();
    base.context_enhancement = false;
    ArchConfig single = base, flow = base, nocv = base;
    single.coarse_to_fine = false;
    flow.warp = WarpMode::flow;
    nocv.cost_mode = CostMode::none;
    std::vector<AblationEntry> entries{{"full", "PDWN (pyramid, DConv, CV)", base},
                                       {"pyramid", "PDWN w/o coarse-to-fine", single},
                                       {"warp", "PDWN-optical flow", flow},
                                       {"cost", "PDWN w/o CV", nocv}};
    const std::vector<std::uint64_t> seeds{1, 2};
    std::vector<double> mean(entries.size(), 0.0);
    for (std::uint64_t seed : seeds) {
        const auto rows = run_ablation(entries, train, test, desk_schedule(2000, seed), seed, [](const AblationRow& r) {
            std::cout << "    " << r.entry.label << ": " << fmt(r.report.mean_psnr, 2) << " dB (" << fmt(r.seconds, 0)
                      << " s)\n";
        });
        for (std::size_t i = 0; i < rows.size(); ++i) mean[i] += rows[i].report.mean_psnr / seeds.size();
        std::cout << format_ablation_table(rows);
    }
    const double c2f = mean[0] - mean[1], dconv = mean[0] - mean[2], cv = mean[0] - mean[3];
    return {c2f > 0 && dconv > 0 && cv > 0,
            "mean over seeds {1,2}: full " + fmt(mean[0], 2) + " dB; coarse-to-fine margin " + fmt(c2f, 2) +
                ", DConv over flow " + fmt(dconv, 2) + ", CV over none " + fmt(cv, 2) + ", " +
                fmt(seconds_since(start), 0) + " s"};
}

// 8. Four inputs against two on accelerating motion.
Outcome four_input() {
    const auto start = std::chrono::steady_clock::now();
    const auto train4 = render_set(500, synth::Difficulty::quadratic, 500);
    const auto test4 = render_set(100, synth::Difficulty::quadratic, 600);
    // The two-input model sees the two central frames of the same scenes.
    const auto central = [](std::vector<synth::Sample> v) {
        for (auto& s : v) s.inputs = {s.inputs[1], s.inputs[2]};
        return v;
    };
    const auto train2 = central(train4), test2 = central(test4);
    ArchConfig two = ArchConfig::desk();
    two.context_enhancement = false;
    ArchConfig four = two;
    four.input_frames = 4;
    double psnr[2];
    for (int i = 0; i < 2; ++i) {
        Pdwn<float> model(i == 0 ? two : four, 1);
        Trainer trainer(model, desk_schedule(3000, 8), i == 0 ? train2 : train4);
        trainer.run();
        psnr[i] = evaluate(model, i == 0 ? test2 : test4).mean_psnr;
        std::cout << "    PDWN-" << (i == 0 ? 2 : 4) << ": " << fmt(psnr[i], 2) << " dB\n";
    }
    const double base = evaluate_frame_average(test2).mean_psnr;
    return {psnr[1] >= psnr[0], "PDWN-4 " + fmt(psnr[1], 2) + " dB vs PDWN-2 " + fmt(psnr[0], 2) +
                                    " dB (frame average " + fmt(base, 2) + " dB), " + fmt(seconds_since(start), 0) +
                                    " s"};
}

// 9. Metrics against direct formulas.
Outcome metric_correctness() {
    std::mt19937_64 rng(9);
    double worst[3] = {0, 0, 0};
    for (int t = 0; t < 50; ++t) {
        const auto a = oracle::random_tensor<float>({1, 3, 32, 32}, rng, 0.0, 1.0);
        auto b = oracle::random_tensor<float>({1, 3, 32, 32}, rng, 0.0, 1.0);
        for (std::size_t i = 0; i < b.data().size(); ++i)
            b.data()[i] = (t / 50.0f) * a.data()[i] + (1 - t / 50.0f) * b.data()[i];
        worst[0] = std::max(worst[0], std::abs(metrics::psnr(a, b) - oracle::psnr(a, b)));
        worst[1] = std::max(worst[1], std::abs(metrics::ssim(a, b) - oracle::ssim(a, b)));
        worst[2] = std::max(worst[2], std::abs(metrics::interpolation_error(a, b) - oracle::interpolation_error(a, b)));
    }
    const auto a = oracle::random_tensor<float>({1, 3, 32, 32}, rng, 0.0, 1.0);
    const double p = metrics::psnr(a, a), s = metrics::ssim(a, a), e = metrics::interpolation_error(a, a);
    const bool identical = p == 99.0 && std::abs(s - 1.0) < 1e-12 && e == 0.0;
    return {std::max({worst[0], worst[1], worst[2]}) < 1e-6 && identical,
            "50 random pairs, max error psnr " + sci(worst[0]) + ", ssim " + sci(worst[1]) + ", ie " + sci(worst[2]) +
                "; identical images give " + fmt(p, 1) + " / " + fmt(s, 6) + " / " + fmt(e, 1)};
}

// 10. Determinism, checkpoint round trip and resumed training.
Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / "pdwn_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto data = render_set(8, synth::Difficulty::hard, 10);
    const ArchConfig arch = ArchConfig::desk();
    const TrainConfig c = desk_schedule(20, 10);

    std::vector<LossRecord> curves[2];
    for (auto& curve : curves) {
        Pdwn<float> m(arch, 4);
        Trainer t(m, c, data);
        t.run();
        curve = t.curve();
    }
    bool same = curves[0].size() == 20 && curves[1].size() == 20;
    for (std::size_t i = 0; same && i < 20; ++i) same = curves[0][i].loss == curves[1][i].loss;

    Pdwn<float> first(arch, 4);
    Trainer head(first, c, data);
    head.run(12);
    save_checkpoint(dir / "a.ckpt", first, &head.optimizer(), head.step());
    std::int64_t step = 0;
    Adam<float> restored;
    Pdwn<float> second = load_model(dir / "a.ckpt", &restored, &step);
    save_checkpoint(dir / "b.ckpt", second, &restored, step);
    std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
    bool roundtrip = ba == bb && step == 12;
    for (std::size_t i = 0; roundtrip && i < first.parameters().size(); ++i) {
        const auto x = first.parameters().items()[i].tensor.data();
        const auto y = second.parameters().items()[i].tensor.data();
        roundtrip = std::equal(x.begin(), x.end(), y.begin(), y.end());
    }

    Trainer tail(second, c, data);
    tail.optimizer().restore(restored.state());
    tail.run();
    bool resumed = tail.curve().size() == 8;
    for (std::size_t i = 0; resumed && i < 8; ++i) resumed = tail.curve()[i].loss == curves[0][12 + i].loss;
    fs::remove_all(dir);
    return {same && roundtrip && resumed, std::string("repeat run ") + (same ? "bitwise identical" : "differs") +
                                              ", checkpoint round trip " + (roundtrip ? "bitwise" : "differs") +
                                              ", resumed steps 12-19 " + (resumed ? "identical" : "differ")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"oracle equivalence", oracle_equivalence},
        {"degeneracy", degeneracy},
        {"architecture arithmetic", architecture},
        {"overfit one triplet", overfit},
        {"generalization vs frame average", generalization},
        {"ablation directionality", ablation_direction},
        {"four-input directionality", four_input},
        {"metric correctness", metric_correctness},
        {"determinism and persistence", determinism},
    };
    std::set<int> only;
    if (const char* env = std::getenv("PDWN_ACCEPT_ONLY")) {
        std::stringstream ss(env);
        for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    }
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
