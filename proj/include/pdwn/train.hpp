// SPDX-License-Identifier: Apache-2.0
//
// Image metrics, the training loop and the evaluation and ablation harness.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pdwn/model.hpp"
#include "pdwn/parameters.hpp"
#include "pdwn/synth.hpp"

namespace pdwn {

namespace metrics {

// Returned by psnr() when the images are identical.
inline constexpr double kPsnrCap = 99.0;

// Images hold values in [0, 1]; all three functions take equal shapes and
// reduce over every element.
double psnr(const Tensorf& pred, const Tensorf& target);

// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1. Windows lie fully inside the image; the result
// is averaged over samples and channels. Throws if H or W is below 11.
double ssim(const Tensorf& pred, const Tensorf& target);

// 255 * mean |pred - target|.
double interpolation_error(const Tensorf& pred, const Tensorf& target);

}  // namespace metrics

struct EvalReport {
    std::vector<double> psnr, ssim, ie;  // per sample, dataset order
    double mean_psnr = 0, mean_ssim = 0, mean_ie = 0;
    double seconds_per_frame = 0;
    std::int64_t parameter_count = 0;

    // Fills the means from the per-sample vectors.
    void finalize();
    // Header plus one row per sample and a final `mean` row.
    std::string to_csv(const std::vector<std::string>& names = {}) const;
    std::string summary() const;
};

// Per-sample metrics of precomputed predictions.
EvalReport score(const std::vector<Tensorf>& predictions, const std::vector<synth::Sample>& samples);

// Runs the model on every sample with batch size 1. `threads` > 1 spreads
// samples over a worker pool; values do not depend on the thread count.
EvalReport evaluate(const Pdwn<float>& model, const std::vector<synth::Sample>& samples, ForwardOptions options = {},
                    int threads = 1);

// (I0 + I2) / 2 of the two nearest inputs.
EvalReport evaluate_frame_average(const std::vector<synth::Sample>& samples);

struct TrainConfig {
    double lr = 0.0002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int batch_size = 4;
    // Total optimizer steps. Zero derives it from epochs over the dataset.
    std::int64_t steps = 0;
    int epochs = 1;
    std::uint64_t seed = 1;
    // With context enhancement enabled, the first part of the schedule trains
    // without the context network and the rest trains end to end.
    bool two_phase = true;
    double finetune_fraction = 0.2;
    bool augment = true;
    // Held-out evaluation period in steps; zero disables it.
    std::int64_t eval_every = 0;

    void validate() const;
    std::int64_t total_steps(std::size_t dataset_size) const;
    // First step that runs the context network.
    std::int64_t finetune_start(std::size_t dataset_size, const ArchConfig& arch) const;
    std::string to_text() const;
    static TrainConfig from_text(const std::string& text);
};

struct LossRecord {
    std::int64_t step = 0;  // optimizer steps completed before this batch
    int phase = 1;
    double loss = 0;
};

struct EvalRecord {
    std::int64_t step = 0;
    double mean_psnr = 0, mean_ssim = 0, mean_ie = 0;
};

std::string loss_curve_csv(const std::vector<LossRecord>& curve);
std::string eval_curve_csv(const std::vector<EvalRecord>& evals);

// Deterministic single-threaded trainer. The batch and augmentation of step s
// depend only on (seed, s), so a run restored at step s with its optimizer
// state continues the uninterrupted run exactly. The dataset is never
// modified.
class Trainer {
public:
    Trainer(Pdwn<float>& model, TrainConfig config, const std::vector<synth::Sample>& train,
            const std::vector<synth::Sample>* held_out = nullptr);

    // Runs until `until` steps are complete (the full schedule when negative).
    // Returns false if a non-finite loss or gradient stopped training; the
    // parameters and optimizer then hold the last finite state.
    bool run(std::int64_t until = -1);

    std::int64_t step() const { return optimizer_.step_count(); }
    std::int64_t total_steps() const { return total_; }
    bool diverged() const { return diverged_; }
    const std::string& halt_reason() const { return halt_reason_; }
    const std::vector<LossRecord>& curve() const { return curve_; }
    const std::vector<EvalRecord>& evals() const { return evals_; }
    Adam<float>& optimizer() { return optimizer_; }
    const Adam<float>& optimizer() const { return optimizer_; }
    const TrainConfig& config() const { return config_; }

    // Indices into the training set used by step s.
    std::vector<std::size_t> batch_indices(std::int64_t s) const;

    // Called after every step with the new record.
    std::function<void(const LossRecord&)> on_step;

private:
    bool step_once();

    Pdwn<float>& model_;
    TrainConfig config_;
    const std::vector<synth::Sample>& train_;
    const std::vector<synth::Sample>* held_out_;
    Adam<float> optimizer_;
    std::int64_t total_ = 0;
    std::int64_t finetune_start_ = 0;
    bool diverged_ = false;
    std::string halt_reason_;
    std::vector<LossRecord> curve_;
    std::vector<EvalRecord> evals_;
};

// Stacks samples along N: frames[i] is (B, 3, H, W), target likewise.
struct Batch {
    std::vector<Tensorf> frames;
    Tensorf target;
};
Batch make_batch(const std::vector<synth::Sample>& samples);

struct AblationEntry {
    std::string section;  // axis being varied
    std::string label;
    ArchConfig config;
};

// Named suites: warp, cost, pyramid, scales, context, and `table` holding all
// of them in order. Entries of one section differ from each other in exactly
// the section's axis.
std::vector<AblationEntry> ablation_suite(const std::string& name, const ArchConfig& base = ArchConfig::desk());
std::vector<std::string> ablation_suite_names();

struct AblationRow {
    AblationEntry entry;
    EvalReport report;
    double seconds = 0;
};

// Trains every entry from the same seed under the same schedule and evaluates
// it on `test`.
std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& entries,
                                      const std::vector<synth::Sample>& train, const std::vector<synth::Sample>& test,
                                      const TrainConfig& config, std::uint64_t model_seed,
                                      const std::function<void(const AblationRow&)>& on_row = {});

// Plain-text table: Model, PSNR, SSIM, IE, parameter count; sections are
// separated by rules.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace pdwn
