// SPDX-License-Identifier: Apache-2.0

#include "pdwn/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "pdwn/kv.hpp"
#include "pdwn/ops.hpp"

namespace pdwn {

namespace metrics {

namespace {

void require_same(const Tensorf& a, const Tensorf& b, const char* what) {
    PDWN_CHECK(a.shape() == b.shape(), what << ": shape mismatch " << a.shape().str() << " vs " << b.shape().str());
}

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> g{};
    double total = 0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// Valid-region separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& x, std::int64_t h, std::int64_t w,
                                 const std::array<double, kWindow>& g) {
    const std::int64_t oh = h - kWindow + 1, ow = w - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h * ow));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xo = 0; xo < ow; ++xo) {
            double s = 0;
            for (int k = 0; k < kWindow; ++k) s += g[k] * x[y * w + xo + k];
            rows[y * ow + xo] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t yo = 0; yo < oh; ++yo)
        for (std::int64_t xo = 0; xo < ow; ++xo) {
            double s = 0;
            for (int k = 0; k < kWindow; ++k) s += g[k] * rows[(yo + k) * ow + xo];
            out[yo * ow + xo] = s;
        }
    return out;
}

}  // namespace

double psnr(const Tensorf& pred, const Tensorf& target) {
    require_same(pred, target, "psnr");
    double se = 0;
    const auto p = pred.data(), t = target.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - t[i];
        se += d * d;
    }
    if (se == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10 * std::log10(static_cast<double>(p.size()) / se));
}

double ssim(const Tensorf& pred, const Tensorf& target) {
    require_same(pred, target, "ssim");
    const Shape s = pred.shape();
    PDWN_CHECK(s.h >= kWindow && s.w >= kWindow,
               "ssim: image " << s.h << "x" << s.w << " is smaller than the " << kWindow << "x" << kWindow << " window");
    const auto g = gaussian_window();
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::int64_t plane = s.plane();
    double total = 0;
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        for (std::int64_t i = 0; i < plane; ++i) {
            x[i] = pred.data()[p * plane + i];
            y[i] = target.data()[p * plane + i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, s.h, s.w, g), my = filter_valid(y, s.h, s.w, g);
        const auto mxx = filter_valid(xx, s.h, s.w, g), myy = filter_valid(yy, s.h, s.w, g);
        const auto mxy = filter_valid(xy, s.h, s.w, g);
        double acc = 0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = mxx[i] - mx[i] * mx[i], vy = myy[i] - my[i] * my[i], cov = mxy[i] - mx[i] * my[i];
            acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(s.n * s.c);
}

double interpolation_error(const Tensorf& pred, const Tensorf& target) {
    require_same(pred, target, "interpolation_error");
    double acc = 0;
    const auto p = pred.data(), t = target.data();
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(static_cast<double>(p[i]) - t[i]);
    return 255.0 * acc / static_cast<double>(p.size());
}

}  // namespace metrics

namespace {

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(tag)};
    return std::mt19937_64(seq);
}

std::array<std::size_t, 2> nearest_inputs(std::size_t count) {
    return count == 4 ? std::array<std::size_t, 2>{1, 2} : std::array<std::size_t, 2>{0, 1};
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

}  // namespace

void EvalReport::finalize() {
    mean_psnr = mean(psnr);
    mean_ssim = mean(ssim);
    mean_ie = mean(ie);
}

std::string EvalReport::to_csv(const std::vector<std::string>& names) const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "sample,psnr,ssim,ie\n";
    for (std::size_t i = 0; i < psnr.size(); ++i)
        os << (i < names.size() ? names[i] : std::to_string(i)) << ',' << psnr[i] << ',' << ssim[i] << ',' << ie[i]
           << '\n';
    os << "mean," << mean_psnr << ',' << mean_ssim << ',' << mean_ie << '\n';
    return os.str();
}

std::string EvalReport::summary() const {
    std::ostringstream os;
    os << "samples " << psnr.size() << "  PSNR " << fixed(mean_psnr, 3) << " dB  SSIM " << fixed(mean_ssim, 4)
       << "  IE " << fixed(mean_ie, 3) << "  runtime " << fixed(seconds_per_frame * 1000, 2) << " ms/frame  params "
       << parameter_count;
    return os.str();
}

EvalReport score(const std::vector<Tensorf>& predictions, const std::vector<synth::Sample>& samples) {
    PDWN_CHECK(predictions.size() == samples.size(),
               "score: " << predictions.size() << " predictions for " << samples.size() << " samples");
    EvalReport r;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        r.psnr.push_back(metrics::psnr(predictions[i], samples[i].target));
        r.ssim.push_back(metrics::ssim(predictions[i], samples[i].target));
        r.ie.push_back(metrics::interpolation_error(predictions[i], samples[i].target));
    }
    r.finalize();
    return r;
}

EvalReport evaluate(const Pdwn<float>& model, const std::vector<synth::Sample>& samples, ForwardOptions options,
                    int threads) {
    std::vector<Tensorf> predictions(samples.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        NoGradGuard guard;
        for (std::size_t i = next++; i < samples.size(); i = next++)
            predictions[i] = model.forward(samples[i].inputs, options).output;
    };
    const auto start = std::chrono::steady_clock::now();
    const int count = std::max(1, std::min<int>(threads, static_cast<int>(samples.size())));
    if (count == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < count; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EvalReport r = score(predictions, samples);
    r.seconds_per_frame = samples.empty() ? 0.0 : seconds / static_cast<double>(samples.size());
    r.parameter_count = model.parameters().scalar_count();
    return r;
}

EvalReport evaluate_frame_average(const std::vector<synth::Sample>& samples) {
    std::vector<Tensorf> predictions;
    predictions.reserve(samples.size());
    for (const auto& s : samples) {
        const auto n = nearest_inputs(s.inputs.size());
        const auto& a = s.inputs[n[0]];
        const auto& b = s.inputs[n[1]];
        Tensorf avg(a.shape());
        for (std::size_t i = 0; i < avg.data().size(); ++i) avg.data()[i] = 0.5f * (a.data()[i] + b.data()[i]);
        predictions.push_back(avg);
    }
    return score(predictions, samples);
}

void TrainConfig::validate() const {
    PDWN_CHECK(lr > 0, "lr must be positive, got " << lr);
    PDWN_CHECK(batch_size >= 1, "batch_size must be at least 1, got " << batch_size);
    PDWN_CHECK(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must lie in [0, 1)");
    PDWN_CHECK(steps >= 0 && epochs >= 0, "steps and epochs must be non-negative");
    PDWN_CHECK(finetune_fraction >= 0 && finetune_fraction <= 1, "finetune_fraction must lie in [0, 1]");
    PDWN_CHECK(eval_every >= 0, "eval_every must be non-negative");
}

std::int64_t TrainConfig::total_steps(std::size_t dataset_size) const {
    if (steps > 0) return steps;
    const auto n = static_cast<std::int64_t>(dataset_size);
    return epochs * ((n + batch_size - 1) / batch_size);
}

std::int64_t TrainConfig::finetune_start(std::size_t dataset_size, const ArchConfig& arch) const {
    const std::int64_t total = total_steps(dataset_size);
    if (!arch.context_enhancement || !two_phase) return 0;
    return total - static_cast<std::int64_t>(std::llround(finetune_fraction * static_cast<double>(total)));
}

std::string TrainConfig::to_text() const {
    return kv::write({{"lr", kv::from_double(lr)},
                      {"beta1", kv::from_double(beta1)},
                      {"beta2", kv::from_double(beta2)},
                      {"batch_size", std::to_string(batch_size)},
                      {"steps", std::to_string(steps)},
                      {"epochs", std::to_string(epochs)},
                      {"seed", std::to_string(seed)},
                      {"two_phase", kv::from_bool(two_phase)},
                      {"finetune_fraction", kv::from_double(finetune_fraction)},
                      {"augment", kv::from_bool(augment)},
                      {"eval_every", std::to_string(eval_every)}});
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig c;
    for (const auto& [k, v] : kv::parse(text)) {
        if (k == "lr") c.lr = kv::to_double(v, k);
        else if (k == "beta1") c.beta1 = kv::to_double(v, k);
        else if (k == "beta2") c.beta2 = kv::to_double(v, k);
        else if (k == "batch_size") c.batch_size = kv::to_int(v, k);
        else if (k == "steps") c.steps = kv::to_int(v, k);
        else if (k == "epochs") c.epochs = kv::to_int(v, k);
        else if (k == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(v));
        else if (k == "two_phase") c.two_phase = kv::to_bool(v, k);
        else if (k == "finetune_fraction") c.finetune_fraction = kv::to_double(v, k);
        else if (k == "augment") c.augment = kv::to_bool(v, k);
        else if (k == "eval_every") c.eval_every = kv::to_int(v, k);
        else PDWN_CHECK(false, "unknown training key '" << k << "'");
    }
    c.validate();
    return c;
}

std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
    std::ostringstream os;
    os << std::setprecision(17) << "step,phase,loss\n";
    for (const auto& r : curve) os << r.step << ',' << r.phase << ',' << r.loss << '\n';
    return os.str();
}

std::string eval_curve_csv(const std::vector<EvalRecord>& evals) {
    std::ostringstream os;
    os << std::setprecision(10) << "step,psnr,ssim,ie\n";
    for (const auto& r : evals) os << r.step << ',' << r.mean_psnr << ',' << r.mean_ssim << ',' << r.mean_ie << '\n';
    return os.str();
}

Batch make_batch(const std::vector<synth::Sample>& samples) {
    PDWN_CHECK(!samples.empty(), "make_batch: no samples");
    const std::size_t frames = samples[0].inputs.size();
    const auto stack = [&](const std::function<const Tensorf&(const synth::Sample&)>& get) {
        Shape s = get(samples[0]).shape();
        const std::int64_t per = s.numel();
        s.n = static_cast<std::int64_t>(samples.size());
        Tensorf out(s);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const Tensorf& t = get(samples[i]);
            PDWN_CHECK(t.numel() == per, "make_batch: samples differ in size");
            std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
        }
        return out;
    };
    Batch b;
    for (std::size_t f = 0; f < frames; ++f) {
        for (const auto& s : samples)
            PDWN_CHECK(s.inputs.size() == frames, "make_batch: samples differ in frame count");
        b.frames.push_back(stack([f](const synth::Sample& s) -> const Tensorf& { return s.inputs[f]; }));
    }
    b.target = stack([](const synth::Sample& s) -> const Tensorf& { return s.target; });
    return b;
}

Trainer::Trainer(Pdwn<float>& model, TrainConfig config, const std::vector<synth::Sample>& train,
                 const std::vector<synth::Sample>* held_out)
    : model_(model),
      config_(config),
      train_(train),
      held_out_(held_out),
      optimizer_(AdamOptions<float>{static_cast<float>(config.lr), static_cast<float>(config.beta1),
                                    static_cast<float>(config.beta2)}) {
    config_.validate();
    PDWN_CHECK(!train.empty(), "training set is empty");
    total_ = config_.total_steps(train.size());
    finetune_start_ = config_.finetune_start(train.size(), model.config());
}

std::vector<std::size_t> Trainer::batch_indices(std::int64_t s) const {
    // Positions s*B .. s*B+B-1 of the concatenation of per-epoch permutations.
    const auto n = static_cast<std::int64_t>(train_.size());
    std::vector<std::size_t> out;
    std::int64_t cached_epoch = -1;
    std::vector<std::size_t> perm(train_.size());
    for (std::int64_t k = 0; k < config_.batch_size; ++k) {
        const std::int64_t pos = s * config_.batch_size + k;
        const std::int64_t epoch = pos / n;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            auto rng = stream(config_.seed, static_cast<std::uint64_t>(epoch), 0, 1);
            for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
            cached_epoch = epoch;
        }
        out.push_back(perm[static_cast<std::size_t>(pos % n)]);
    }
    return out;
}

bool Trainer::step_once() {
    const std::int64_t s = step();
    const auto indices = batch_indices(s);
    std::vector<synth::Sample> picked;
    picked.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (config_.augment) {
            auto rng = stream(config_.seed, static_cast<std::uint64_t>(s), k, 2);
            picked.push_back(synth::augment(train_[indices[k]], rng));
        } else {
            picked.push_back(train_[indices[k]]);
        }
    }
    const Batch batch = make_batch(picked);
    const int phase = s < finetune_start_ ? 1 : 2;
    ForwardOptions options;
    options.context = phase == 2;

    auto& params = model_.parameters();
    params.zero_grad();
    const Tensorf loss = l1_loss(model_.forward(batch.frames, options).output, batch.target);
    const double value = loss.item();
    if (!std::isfinite(value)) {
        halt_reason_ = "non-finite loss at step " + std::to_string(s);
        return false;
    }
    loss.backward();
    for (const auto& p : params.items())
        if (p.tensor.has_grad())
            for (float g : p.tensor.grad())
                if (!std::isfinite(g)) {
                    halt_reason_ = "non-finite gradient in " + p.name + " at step " + std::to_string(s);
                    params.zero_grad();
                    return false;
                }
    optimizer_.step(params);
    params.zero_grad();
    curve_.push_back({s, phase, value});
    if (on_step) on_step(curve_.back());
    if (held_out_ && !held_out_->empty() && config_.eval_every > 0 && step() % config_.eval_every == 0) {
        const EvalReport r = evaluate(model_, *held_out_, options);
        evals_.push_back({step(), r.mean_psnr, r.mean_ssim, r.mean_ie});
    }
    return true;
}

bool Trainer::run(std::int64_t until) {
    const std::int64_t end = until < 0 ? total_ : std::min(until, total_);
    while (!diverged_ && step() < end)
        if (!step_once()) diverged_ = true;
    return !diverged_;
}

namespace {

ArchConfig with_scales(ArchConfig c, int scales) {
    static const std::vector<int> features{8, 16, 32, 48, 64, 96};
    static const std::vector<int> heads{24, 32, 48, 64, 96, 128};
    PDWN_CHECK(scales >= 1 && scales <= 6, "scale count must lie in [1, 6]");
    const auto keep = [&](std::vector<int>& v, const std::vector<int>& fill) {
        v.resize(static_cast<std::size_t>(scales), 0);
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] == 0) v[i] = fill[i];
    };
    const int radius = c.cost_radius.empty() ? 3 : c.cost_radius.back();
    keep(c.feature_channels, features);
    keep(c.head_channels, heads);
    c.cost_radius.resize(static_cast<std::size_t>(scales), radius);
    c.num_scales = scales;
    return c;
}

}  // namespace

std::vector<std::string> ablation_suite_names() { return {"warp", "cost", "pyramid", "scales", "context", "table"}; }

std::vector<AblationEntry> ablation_suite(const std::string& name, const ArchConfig& base) {
    std::vector<AblationEntry> out;
    // Sections other than `context` train without the context network.
    ArchConfig plain = base;
    plain.context_enhancement = false;
    const auto add = [&](const std::string& section, const std::string& label, ArchConfig c) {
        c.validate();
        out.push_back({section, label, c});
    };
    const bool all = name == "table";
    if (all || name == "warp") {
        ArchConfig flow = plain;
        flow.warp = WarpMode::flow;
        ArchConfig dconv = plain;
        dconv.warp = WarpMode::dconv;
        add("warp", "PDWN-optical flow", flow);
        add("warp", "PDWN w/ DConv", dconv);
    }
    if (all || name == "cost") {
        for (auto [mode, label] : {std::pair{CostMode::none, "PDWN w/o CV"}, std::pair{CostMode::predefined, "PDWN w/ CV"},
                                   std::pair{CostMode::learnt, "PDWN w/ learnt CV"}}) {
            ArchConfig c = plain;
            c.cost_mode = mode;
            add("cost", label, c);
        }
    }
    if (all || name == "pyramid") {
        ArchConfig single = plain;
        single.coarse_to_fine = false;
        ArchConfig pyramid = plain;
        pyramid.coarse_to_fine = true;
        add("pyramid", "PDWN w/o coarse-to-fine", single);
        add("pyramid", "PDWN w/ coarse-to-fine", pyramid);
    }
    if (all || name == "scales")
        for (int l : {2, 3, 4}) add("scales", "PDWN L=" + std::to_string(l), with_scales(plain, l));
    if (all || name == "context") {
        ArchConfig off = base;
        off.context_enhancement = false;
        ArchConfig on = base;
        on.context_enhancement = true;
        add("context", "PDWN w/o c. e.", off);
        add("context", "PDWN w/ c. e.", on);
    }
    PDWN_CHECK(!out.empty(), "unknown ablation suite '" << name << "'");
    return out;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& entries,
                                      const std::vector<synth::Sample>& train, const std::vector<synth::Sample>& test,
                                      const TrainConfig& config, std::uint64_t model_seed,
                                      const std::function<void(const AblationRow&)>& on_row) {
    std::vector<AblationRow> rows;
    for (const auto& e : entries) {
        const auto start = std::chrono::steady_clock::now();
        Pdwn<float> model(e.config, model_seed);
        Trainer trainer(model, config, train);
        trainer.run();
        AblationRow row{e, evaluate(model, test), 0.0};
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (on_row) on_row(row);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.entry.label.size());
    std::ostringstream os;
    const auto rule = std::string(width + 40, '-') + "\n";
    os << std::left << std::setw(static_cast<int>(width)) << "Model" << std::right << std::setw(9) << "PSNR"
       << std::setw(8) << "SSIM" << std::setw(8) << "IE" << std::setw(15) << "Param." << '\n';
    os << rule;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0 && rows[i].entry.section != rows[i - 1].entry.section) os << rule;
        const auto& r = rows[i];
        os << std::left << std::setw(static_cast<int>(width)) << r.entry.label << std::right << std::setw(9)
           << fixed(r.report.mean_psnr, 2) << std::setw(8) << fixed(r.report.mean_ssim, 3) << std::setw(8)
           << fixed(r.report.mean_ie, 2) << std::setw(15) << r.report.parameter_count << '\n';
    }
    os << rule;
    return os.str();
}

}  // namespace pdwn
