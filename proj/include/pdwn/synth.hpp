// SPDX-License-Identifier: Apache-2.0
//
// Procedural moving-sprite scenes with exact motion and occlusion ground
// truth.
//
// Time is measured in input-frame intervals with the target at t = 0.5.
// Three-frame scenes render t = 0, 0.5, 1; five-frame scenes render
// t = -1, 0, 0.5, 1, 2 so the four inputs are evenly spaced. Positions are
// pixel coordinates (x right, y down) with pixel centres at integer + 0.5.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pdwn/tensor.hpp"

namespace pdwn::synth {

enum class SpriteShape { rectangle, disk, textured_patch };

struct Trajectory {
    double x = 0, y = 0;    // centre at t = 0
    double vx = 0, vy = 0;  // px per input interval
    double ax = 0, ay = 0;  // px per interval squared

    double x_at(double t) const { return x + vx * t + 0.5 * ax * t * t; }
    double y_at(double t) const { return y + vy * t + 0.5 * ay * t * t; }
};

struct Sprite {
    SpriteShape shape = SpriteShape::rectangle;
    double half_width = 4, half_height = 4;  // a disk uses half_width as radius
    std::uint64_t texture_seed = 0;
    int depth = 0;  // larger is farther; unique within a scene
    Trajectory motion;
};

struct SceneSpec {
    int width = 32, height = 32;
    int frame_count = 3;
    std::uint64_t seed = 0;
    std::uint64_t background_seed = 0;
    std::vector<Sprite> sprites;

    // Frame times in render order; the target is the middle entry.
    std::vector<double> times() const;
    // Throws std::invalid_argument naming the violation.
    void validate() const;
    std::string to_text() const;
    static SceneSpec from_text(const std::string& text);
};

// Images are (1, 3, H, W) in [0, 1]; flows are (1, 2, H, W) as (dy, dx) from
// the target frame, so flow_warp(input, flow) reproduces the target where the
// surface is visible. Samples loaded from image files leave the flows and the
// occlusion mask undefined.
struct Sample {
    std::vector<Tensorf> inputs;  // 2 or 4, temporal order
    Tensorf target;
    Tensorf flow_to_first;   // target -> nearest earlier input
    Tensorf flow_to_second;  // target -> nearest later input
    Tensorf occlusion;       // (1, 1, H, W): 1 where the target surface is hidden in either nearest input
};

Tensorf render_frame(const SceneSpec& spec, double t);
Sample render(const SceneSpec& spec);

// Horizontal flip and temporal reversal, each with probability 1/2.
Sample augment(const Sample& sample, std::mt19937_64& rng);
Sample flip_horizontal(const Sample& sample);
Sample reverse_time(const Sample& sample);

enum class Difficulty {
    easy,       // linear, at most 4 px per frame step, sprites never overlap
    hard,       // up to 16 px per frame step, overlapping sprites, half the sprites accelerate
    quadratic,  // every sprite accelerates; five frames
};

struct DatasetOptions {
    int width = 32, height = 32;
    int frame_count = 0;  // 0 picks 5 for quadratic, else 3
};

std::vector<SceneSpec> make_dataset(int n, Difficulty difficulty, std::uint64_t seed, DatasetOptions options = {});

const char* difficulty_name(Difficulty d);
Difficulty parse_difficulty(const std::string& name);

// Spacing of consecutive frames of the underlying sequence, in input
// intervals: the target sits one frame step from each nearest input.
inline constexpr double kFrameStep = 0.5;

// Largest displacement of any sprite centre over one frame step.
double max_frame_displacement(const SceneSpec& spec);

// Uniform in [0, 1) from the top 53 bits; identical on every platform.
double unit(std::mt19937_64& rng);

}  // namespace pdwn::synth
