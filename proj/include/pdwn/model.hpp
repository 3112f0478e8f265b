// SPDX-License-Identifier: Apache-2.0
//
// The pyramid deformable warping network: shared feature pyramid, per-scale
// offset estimators refined coarse to fine, adaptive blending and context
// enhancement.
//
// Scale index 0 is full resolution; index L-1 is the coarsest.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pdwn/parameters.hpp"
#include "pdwn/warp.hpp"

namespace pdwn {

enum class CostMode { none, predefined, learnt };
enum class WarpMode { dconv, flow };

struct ArchConfig {
    int num_scales = 3;
    std::vector<int> feature_channels{8, 16, 32};
    // Hidden width of each estimator head, which is also the width of the
    // penultimate features carried to the next finer scale.
    std::vector<int> head_channels{24, 32, 48};
    std::vector<int> cost_radius{3, 3, 3};
    CostMode cost_mode = CostMode::predefined;
    CostNormalization cost_norm = CostNormalization::kernel_area;
    int learnt_cost_hidden = 16;
    WarpMode warp = WarpMode::dconv;
    bool coarse_to_fine = true;
    int input_frames = 2;
    double leaky_slope = 0.1;
    bool blending = true;
    int blend_channels = 16;
    bool context_enhancement = true;
    int context_channels = 16;
    int context_blocks = 5;

    static ArchConfig desk() { return {}; }
    static ArchConfig full();

    // Throws std::invalid_argument naming the first violated constraint.
    void validate() const;

    std::string to_text() const;
    static ArchConfig from_text(const std::string& text);
    // Name of the first key whose value differs, if any.
    std::optional<std::string> first_difference(const ArchConfig& other) const;

    // Scales at which an estimator runs; 1 without coarse-to-fine refinement.
    int active_scales() const { return coarse_to_fine ? num_scales : 1; }
    int spatial_multiple() const { return 1 << (active_scales() - 1); }

    int field_channels() const { return warp == WarpMode::dconv ? 3 * 9 : 2; }
    int head_output_channels() const { return 2 * field_channels(); }
    int cost_channels(int scale) const;
    int head_input_channels(int scale) const;
    int blend_input_channels() const { return 2 * 3 + 2 * feature_channels[0]; }
    int context_input_channels() const { return 3 + blend_input_channels(); }
};

template <typename T>
struct PyramidFeatures {
    // levels[frame][scale]
    std::vector<std::vector<Tensor<T>>> levels;
};

// Motion toward the middle frame from each of the two nearest inputs. In the
// flow variant `fields[i].offsets` holds a 2-channel flow and modulation is
// undefined.
template <typename T>
struct ScaleEstimate {
    std::array<OffsetField<T>, 2> fields;
    Tensor<T> hidden;
};

template <typename T>
struct Diagnostics {
    std::vector<ScaleEstimate<T>> scales;  // indexed by scale
    std::array<Tensor<T>, 2> warped_frames;
    Tensor<T> alpha;                       // (N, 1, H, W)
    Tensor<T> blended;
    std::array<Tensor<T>, 2> mean_offsets;  // (N, 2, H, W) per direction
};

template <typename T>
struct ForwardResult {
    Tensor<T> output;
    Diagnostics<T> diagnostics;
};

struct ForwardOptions {
    // Phase-one training runs without the context network.
    bool context = true;
};

template <typename T>
class Pdwn {
public:
    Pdwn(ArchConfig config, std::uint64_t seed);

    const ArchConfig& config() const { return config_; }
    ParameterRegistry<T>& parameters() { return params_; }
    const ParameterRegistry<T>& parameters() const { return params_; }

    // frames: 2 or 4 tensors (N, 3, H, W) in temporal order; the target lies
    // midway between the two central frames.
    ForwardResult<T> forward(const std::vector<Tensor<T>>& frames, ForwardOptions options = {}) const;

    PyramidFeatures<T> encode_pyramid(const std::vector<Tensor<T>>& frames) const;
    ScaleEstimate<T> coarsest_estimate(int scale, const PyramidFeatures<T>& pyramid) const;
    ScaleEstimate<T> refine_scale(const ScaleEstimate<T>& prev, int scale, const PyramidFeatures<T>& pyramid) const;
    // Returns (blended frame, alpha) plus warped frames and features.
    struct Blend {
        Tensor<T> blended, alpha;
        std::array<Tensor<T>, 2> frames, features;
    };
    Blend blend(const Tensor<T>& frame0, const Tensor<T>& frame2, const ScaleEstimate<T>& finest,
                const Tensor<T>& feature0, const Tensor<T>& feature2) const;
    Tensor<T> context_enhance(const Blend& b) const;

    // Resizes a coarser estimate to h x w; offsets are doubled, modulation is not.
    ScaleEstimate<T> upsample(const ScaleEstimate<T>& prev, std::int64_t h, std::int64_t w) const;

private:
    Tensor<T> conv(const std::string& name, const Tensor<T>& x, int padding) const;
    Tensor<T> act(const Tensor<T>& x) const;
    Tensor<T> warp(const Tensor<T>& x, const OffsetField<T>& field, const std::string& filter) const;
    Tensor<T> cost(int scale, const Tensor<T>& a, const Tensor<T>& b) const;
    ScaleEstimate<T> head(int scale, const Tensor<T>& input, const std::array<OffsetField<T>, 2>* base) const;
    std::array<std::size_t, 2> nearest() const;

    ArchConfig config_;
    ParameterRegistry<T> params_;
};

}  // namespace pdwn
