// SPDX-License-Identifier: Apache-2.0
//
// Binary PNM images, checkpoints, visualizations and sample directories.
// Every reader throws pdwn::IoError with a message naming the file and the
// specific defect.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdwn/model.hpp"
#include "pdwn/parameters.hpp"
#include "pdwn/synth.hpp"

namespace pdwn {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 8-bit image, row-major with interleaved channels (1 for P5, 3 for P6).
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> pixels;
};

Image read_pnm(const std::filesystem::path& path);
// Channels 1 writes P5, 3 writes P6; maxval is always 255.
void write_pnm(const std::filesystem::path& path, const Image& image);

// Values v in [0, 1] map to floor(255 v + 1/2) after clamping. Input is
// (1, C, H, W) with C of 1 or 3.
Image to_image(const Tensorf& tensor);
// (1, C, H, W) with values p / 255.
Tensorf to_tensor(const Image& image);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ArchConfig config;
    std::int64_t step = 0;
    std::vector<std::pair<std::string, Tensorf>> tensors;  // registry order
    bool has_optimizer = false;
    std::vector<std::vector<float>> first_moments, second_moments;
    std::vector<std::int64_t> parameter_steps;
};

// Layout, all integers and floats little endian:
//   "PDWNCKPT" | u32 version | u32 n + n bytes config text | u64 step |
//   u32 count | count x (u32 n + name | 4 x u64 shape | f32 values) |
//   u8 has_optimizer | [count x f32 first moments, count x f32 second moments,
//   count x u64 per-parameter update counts]
void save_checkpoint(const std::filesystem::path& path, const Pdwn<float>& model, const Adam<float>* optimizer,
                     std::int64_t step);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies a checkpoint into a model built from the same config. Rejects a
// differing config (naming the first differing key), unknown or missing
// parameter names and shape mismatches. Restores the optimizer when both the
// file and `optimizer` carry state.
void apply_checkpoint(const Checkpoint& checkpoint, Pdwn<float>& model, Adam<float>* optimizer = nullptr);

// Builds the model described by the file.
Pdwn<float> load_model(const std::filesystem::path& path, Adam<float>* optimizer = nullptr,
                       std::int64_t* step = nullptr);

// Middlebury colour wheel: hue from the direction, saturation from the
// magnitude divided by `max_magnitude` (the largest magnitude in the field
// when absent). Input is (1, 2, H, W) as (dy, dx); output (1, 3, H, W).
struct OffsetVisualization {
    Tensorf rgb;
    double max_magnitude = 0;
};
OffsetVisualization colorize_offsets(const Tensorf& mean_offset, std::optional<double> max_magnitude = {});
// Writes a P6 and `<path>.txt` recording the normalization.
OffsetVisualization visualize_offsets(const Tensorf& mean_offset, const std::filesystem::path& path,
                                      std::optional<double> max_magnitude = {});
// Grayscale P5; 255 means the earlier frame is fully trusted.
void visualize_alpha(const Tensorf& alpha, const std::filesystem::path& path);

// A sample directory holds im1.ppm .. imK.ppm in temporal order with K of 3
// or 5; the middle frame is the target. A dataset directory holds one sample
// directory per entry, read in name order.
void write_sample_dir(const std::filesystem::path& dir, const synth::Sample& sample);
synth::Sample read_sample_dir(const std::filesystem::path& dir);
std::vector<std::filesystem::path> list_sample_dirs(const std::filesystem::path& root);

}  // namespace pdwn
