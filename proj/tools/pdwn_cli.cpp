// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit status: 0 success, 1 usage or input error,
// 2 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "pdwn/gradcheck.hpp"
#include "pdwn/io.hpp"
#include "pdwn/kernels.hpp"
#include "pdwn/ops.hpp"
#include "pdwn/train.hpp"

namespace fs = std::filesystem;
using namespace pdwn;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumerical = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError(path.string() + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ArchConfig arch_from(const std::string& spec) {
    if (spec == "desk") return ArchConfig::desk();
    if (spec == "full") return ArchConfig::full();
    return ArchConfig::from_text(slurp(spec));
}

// `synth:<difficulty>:<count>:<seed>[:<size>]` renders scenes in memory;
// anything else is a directory of sample directories.
std::vector<synth::Sample> load_data(const std::string& spec, int frames) {
    std::vector<synth::Sample> out;
    if (spec.rfind("synth:", 0) == 0) {
        std::vector<std::string> parts;
        std::stringstream ss(spec.substr(6));
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        if (parts.size() < 3 || parts.size() > 4)
            throw UsageError("--data synth:<difficulty>:<count>:<seed>[:<size>], got '" + spec + "'");
        synth::DatasetOptions o;
        if (parts.size() == 4) o.width = o.height = std::stoi(parts[3]);
        o.frame_count = frames == 4 ? 5 : 0;
        for (const auto& s : synth::make_dataset(std::stoi(parts[1]), synth::parse_difficulty(parts[0]),
                                                 std::stoull(parts[2]), o))
            out.push_back(synth::render(s));
        return out;
    }
    for (const auto& dir : list_sample_dirs(spec)) out.push_back(read_sample_dir(dir));
    if (out.empty()) throw UsageError(spec + ": no sample directories");
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << text;
}

struct TrainArgs {
    std::string config = "desk", train_config, data, out, curve, resume;
    std::int64_t steps = -1;
    int epochs = -1, batch = -1;
    double lr = -1;
    std::uint64_t seed = 1, model_seed = 1;
    bool single_phase = false, no_augment = false;
};

int cmd_train(const TrainArgs& a) {
    const ArchConfig arch = arch_from(a.config);
    TrainConfig tc = a.train_config.empty() ? TrainConfig{} : TrainConfig::from_text(slurp(a.train_config));
    if (a.steps >= 0) tc.steps = a.steps;
    if (a.epochs >= 0) tc.epochs = a.epochs;
    if (a.batch > 0) tc.batch_size = a.batch;
    if (a.lr > 0) tc.lr = a.lr;
    tc.seed = a.seed;
    if (a.single_phase) tc.two_phase = false;
    if (a.no_augment) tc.augment = false;
    tc.validate();
    const auto data = load_data(a.data, arch.input_frames);

    Pdwn<float> model(arch, a.model_seed);
    Trainer trainer(model, tc, data);
    if (!a.resume.empty()) {
        const Checkpoint cp = read_checkpoint(a.resume);
        apply_checkpoint(cp, model, &trainer.optimizer());
        if (!cp.has_optimizer) throw UsageError(a.resume + ": checkpoint has no optimizer state to resume from");
        std::cout << "resumed at step " << cp.step << "\n";
    }
    std::cout << "training " << trainer.total_steps() << " steps on " << data.size() << " samples, "
              << model.parameters().scalar_count() << " parameters\n";
    trainer.on_step = [&](const LossRecord& r) {
        if ((r.step + 1) % 50 == 0 || r.step + 1 == trainer.total_steps())
            std::cout << "step " << r.step + 1 << " phase " << r.phase << " loss " << r.loss << std::endl;
    };
    const bool ok = trainer.run();
    save_checkpoint(a.out, model, &trainer.optimizer(), trainer.step());
    if (!a.curve.empty()) write_text(a.curve, loss_curve_csv(trainer.curve()));
    if (!ok) {
        std::cerr << "training halted: " << trainer.halt_reason() << "; last finite state saved to " << a.out << "\n";
        return kNumerical;
    }
    std::cout << "saved " << a.out << "\n";
    return kOk;
}

struct InterpolateArgs {
    std::string checkpoint, out, alpha, offsets;
    std::vector<std::string> frames;
};

int cmd_interpolate(const InterpolateArgs& a) {
    const Pdwn<float> model = load_model(a.checkpoint);
    const int expected = model.config().input_frames;
    if (static_cast<int>(a.frames.size()) != expected)
        throw UsageError("config mismatch: checkpoint expects " + std::to_string(expected) + " input frames, got " +
                         std::to_string(a.frames.size()));
    std::vector<Tensorf> frames;
    for (const auto& f : a.frames) {
        const Image img = read_pnm(f);
        if (img.channels != 3) throw UsageError(f + ": expected a colour (P6) image");
        frames.push_back(to_tensor(img));
        if (frames.back().shape() != frames.front().shape()) throw UsageError("input frames differ in size");
    }
    const Shape s = frames[0].shape();
    const std::int64_t m = model.config().spatial_multiple();
    const std::int64_t pad_h = (m - s.h % m) % m, pad_w = (m - s.w % m) % m;
    for (auto& f : frames) f = pad_replicate(f, pad_h, pad_w);
    std::cout << "pad bottom=" << pad_h << " right=" << pad_w << "\n";

    NoGradGuard guard;
    const ForwardResult<float> r = model.forward(frames);
    write_pnm(a.out, to_image(crop(r.output, s.h, s.w)));
    if (!a.alpha.empty()) visualize_alpha(crop(r.diagnostics.alpha, s.h, s.w), a.alpha);
    if (!a.offsets.empty()) {
        for (int i = 0; i < 2; ++i) {
            const std::string path = a.offsets + (i == 0 ? "_first.ppm" : "_second.ppm");
            const auto v = visualize_offsets(crop(r.diagnostics.mean_offsets[i], s.h, s.w), path);
            std::cout << path << " max_magnitude " << v.max_magnitude << "\n";
        }
    }
    std::cout << "wrote " << a.out << "\n";
    return kOk;
}

struct EvalArgs {
    std::string checkpoint, dir, csv;
    int threads = 1;
};

int cmd_eval(const EvalArgs& a) {
    const auto dirs = list_sample_dirs(a.dir);
    if (dirs.empty()) throw UsageError(a.dir + ": no sample directories");
    std::vector<synth::Sample> samples;
    std::vector<std::string> names;
    for (const auto& d : dirs) {
        samples.push_back(read_sample_dir(d));
        names.push_back(d.filename().string());
    }
    EvalReport report;
    if (a.checkpoint.empty()) {
        std::vector<Tensorf> predictions;
        for (const auto& d : dirs) {
            if (!fs::exists(d / "pred.ppm"))
                throw UsageError(d.string() + ": no pred.ppm; pass --checkpoint to predict");
            predictions.push_back(to_tensor(read_pnm(d / "pred.ppm")));
        }
        report = score(predictions, samples);
    } else {
        const Pdwn<float> model = load_model(a.checkpoint);
        const std::int64_t m = model.config().spatial_multiple();
        for (const auto& s : samples)
            if (s.target.shape().h % m != 0 || s.target.shape().w % m != 0)
                throw UsageError("eval needs frame sizes divisible by " + std::to_string(m));
        report = evaluate(model, samples, {}, a.threads);
    }
    if (!a.csv.empty()) write_text(a.csv, report.to_csv(names));
    std::cout << report.to_csv(names) << report.summary() << "\n";
    return kOk;
}

struct AblateArgs {
    std::string suite = "table", difficulty = "hard";
    int train_n = 64, test_n = 32, size = 32;
    std::int64_t steps = 200;
    std::uint64_t seed = 1;
};

int cmd_ablate(const AblateArgs& a) {
    const auto entries = ablation_suite(a.suite);
    synth::DatasetOptions o;
    o.width = o.height = a.size;
    const auto diff = synth::parse_difficulty(a.difficulty);
    std::vector<synth::Sample> train, test;
    for (const auto& s : synth::make_dataset(a.train_n, diff, a.seed, o)) train.push_back(synth::render(s));
    for (const auto& s : synth::make_dataset(a.test_n, diff, a.seed + 1000, o)) test.push_back(synth::render(s));
    TrainConfig tc;
    tc.steps = a.steps;
    tc.seed = a.seed;
    tc.lr = 1e-3;
    const auto rows = run_ablation(entries, train, test, tc, a.seed, [](const AblationRow& r) {
        std::cerr << r.entry.label << ": " << r.report.mean_psnr << " dB (" << r.seconds << " s)\n";
    });
    std::cout << format_ablation_table(rows);
    return kOk;
}

struct SynthArgs {
    int n = 10, size = 32, frames = 0;
    std::string difficulty = "easy", out;
    std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a) {
    synth::DatasetOptions o;
    o.width = o.height = a.size;
    o.frame_count = a.frames;
    const auto specs = synth::make_dataset(a.n, synth::parse_difficulty(a.difficulty), a.seed, o);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        std::ostringstream name;
        name << std::setw(5) << std::setfill('0') << i;
        const fs::path dir = fs::path(a.out) / name.str();
        write_sample_dir(dir, synth::render(specs[i]));
        write_text(dir / "scene.txt", specs[i].to_text());
    }
    std::cout << "wrote " << specs.size() << " samples to " << a.out << "\n";
    return kOk;
}

int cmd_gradcheck(const std::string& op) {
    const auto missing = gradcheck::missing_checks();
    for (const auto& m : missing) std::cout << "MISSING " << m << "\n";
    const auto results = op.empty() ? gradcheck::run_all() : gradcheck::run_op(op);
    bool ok = missing.empty();
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.op << " d/d" << r.wrt << " max_rel_error " << r.max_rel_error
                  << " checked " << r.checked << "\n";
        ok &= r.passed;
    }
    return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pyramid deformable warping network for frame interpolation"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model and write a checkpoint");
    t->add_option("--config", train.config, "Architecture file, or desk / full")->capture_default_str();
    t->add_option("--train-config", train.train_config, "Training key = value file");
    t->add_option("--data", train.data, "Sample directory root or synth:<difficulty>:<count>:<seed>[:<size>]")
        ->required();
    t->add_option("--out", train.out, "Checkpoint path")->required();
    t->add_option("--curve", train.curve, "Loss curve CSV path");
    t->add_option("--resume", train.resume, "Continue from a checkpoint with optimizer state");
    t->add_option("--steps", train.steps, "Optimizer steps");
    t->add_option("--epochs", train.epochs, "Epochs when --steps is absent");
    t->add_option("--batch", train.batch, "Mini-batch size");
    t->add_option("--lr", train.lr, "Learning rate");
    t->add_option("--seed", train.seed, "Shuffling and augmentation seed");
    t->add_option("--model-seed", train.model_seed, "Initialization seed");
    t->add_flag("--single-phase", train.single_phase, "Train end to end from the start");
    t->add_flag("--no-augment", train.no_augment, "Disable flips and time reversal");

    InterpolateArgs interp;
    auto* i = app.add_subcommand("interpolate", "Synthesize the middle frame");
    i->add_option("--checkpoint", interp.checkpoint)->required();
    i->add_option("--frames", interp.frames, "Input frames in temporal order (2 or 4)")->required();
    i->add_option("--out", interp.out)->required();
    i->add_option("--alpha", interp.alpha, "Write the blending weight map (P5)");
    i->add_option("--offsets", interp.offsets, "Prefix for mean-offset visualizations");

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Score sample directories");
    e->add_option("--dir", eval.dir)->required();
    e->add_option("--checkpoint", eval.checkpoint, "Predict with this model; otherwise score pred.ppm files");
    e->add_option("--threads", eval.threads)->check(CLI::PositiveNumber);
    e->add_option("--csv", eval.csv);

    AblateArgs ablate;
    auto* ab = app.add_subcommand("ablate", "Train and compare ablation variants");
    ab->add_option("--suite", ablate.suite)->check(CLI::IsMember(ablation_suite_names()));
    ab->add_option("--difficulty", ablate.difficulty);
    ab->add_option("--train-n", ablate.train_n);
    ab->add_option("--test-n", ablate.test_n);
    ab->add_option("--size", ablate.size);
    ab->add_option("--steps", ablate.steps);
    ab->add_option("--seed", ablate.seed);

    SynthArgs syn;
    auto* sy = app.add_subcommand("synth", "Render synthetic sample directories");
    sy->add_option("--n", syn.n)->check(CLI::PositiveNumber);
    sy->add_option("--difficulty", syn.difficulty);
    sy->add_option("--out", syn.out)->required();
    sy->add_option("--seed", syn.seed);
    sy->add_option("--size", syn.size);
    sy->add_option("--frames", syn.frames, "3 or 5; 0 picks by difficulty");

    std::string op;
    auto* g = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    g->add_option("--op", op, "Single op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }
    std::cerr << "kernels: " << kernels::isa_name(kernels::active().isa) << "\n";
    try {
        if (*t) return cmd_train(train);
        if (*i) return cmd_interpolate(interp);
        if (*e) return cmd_eval(eval);
        if (*ab) return cmd_ablate(ablate);
        if (*sy) return cmd_synth(syn);
        if (*g) return cmd_gradcheck(op);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
