// SPDX-License-Identifier: Apache-2.0

#include "pdwn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pdwn/kv.hpp"

namespace pdwn::synth {

namespace {

constexpr int kSupersample = 4;
// Sub-sample colours are accumulated as integers in units of 2^-16 so the
// pixel average does not depend on summation order.
constexpr double kFixedScale = 65536.0;

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

// Smooth colour field: base colour plus a few oriented sinusoids per channel.
struct Texture {
    struct Wave {
        double fx, fy, phase, amp;
    };
    double base[3];
    std::vector<Wave> waves[3];

    Texture(std::uint64_t seed, double min_wavelength, double amplitude) {
        std::mt19937_64 rng(splitmix(seed));
        for (int c = 0; c < 3; ++c) {
            base[c] = uniform(rng, 0.15, 0.85);
            for (int i = 0; i < 3; ++i) {
                const double wavelength = uniform(rng, min_wavelength, 3 * min_wavelength);
                const double angle = uniform(rng, 0, 2 * std::numbers::pi);
                const double f = 2 * std::numbers::pi / wavelength;
                waves[c].push_back({f * std::cos(angle), f * std::sin(angle), uniform(rng, 0, 2 * std::numbers::pi),
                                    amplitude * uniform(rng, 0.5, 1.0)});
            }
        }
    }

    void eval(double u, double v, double out[3]) const {
        for (int c = 0; c < 3; ++c) {
            double s = base[c];
            for (const auto& w : waves[c]) s += w.amp * std::sin(w.fx * u + w.fy * v + w.phase);
            out[c] = std::clamp(s, 0.0, 1.0);
        }
    }
};

struct Scene {
    const SceneSpec& spec;
    Texture background;
    std::vector<Texture> textures;
    std::vector<std::size_t> front_to_back;

    explicit Scene(const SceneSpec& s) : spec(s), background(s.background_seed, 10.0, 0.2) {
        for (const auto& sp : s.sprites)
            textures.emplace_back(sp.texture_seed, sp.shape == SpriteShape::textured_patch ? 4.0 : 7.0,
                                  sp.shape == SpriteShape::textured_patch ? 0.3 : 0.15);
        for (std::size_t i = 0; i < s.sprites.size(); ++i) front_to_back.push_back(i);
        std::sort(front_to_back.begin(), front_to_back.end(),
                  [&](std::size_t a, std::size_t b) { return s.sprites[a].depth < s.sprites[b].depth; });
    }

    static bool covers(const Sprite& sp, double u, double v) {
        if (sp.shape == SpriteShape::disk) return u * u + v * v <= sp.half_width * sp.half_width;
        return std::abs(u) <= sp.half_width && std::abs(v) <= sp.half_height;
    }

    // Index of the front-most sprite covering (x, y) at time t, or -1 for
    // background.
    int surface(double x, double y, double t) const {
        for (std::size_t i : front_to_back) {
            const Sprite& sp = spec.sprites[i];
            if (covers(sp, x - sp.motion.x_at(t), y - sp.motion.y_at(t))) return static_cast<int>(i);
        }
        return -1;
    }

    void colour(double x, double y, double t, double out[3]) const {
        const int s = surface(x, y, t);
        if (s < 0) {
            background.eval(x, y, out);
            return;
        }
        const Sprite& sp = spec.sprites[static_cast<std::size_t>(s)];
        textures[static_cast<std::size_t>(s)].eval(x - sp.motion.x_at(t), y - sp.motion.y_at(t), out);
    }

    // Where the surface point seen at (x, y, t) sits at time t2; the
    // background is static.
    void track(int surf, double x, double y, double t, double t2, double& x2, double& y2) const {
        if (surf < 0) {
            x2 = x;
            y2 = y;
            return;
        }
        const Trajectory& m = spec.sprites[static_cast<std::size_t>(surf)].motion;
        x2 = x + m.x_at(t2) - m.x_at(t);
        y2 = y + m.y_at(t2) - m.y_at(t);
    }
};

Tensorf flip_image(const Tensorf& img) {
    const Shape s = img.shape();
    Tensorf out(s);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t y = 0; y < s.h; ++y)
                for (std::int64_t x = 0; x < s.w; ++x) out.at(n, c, y, x) = img.at(n, c, y, s.w - 1 - x);
    return out;
}

const char* shape_name(SpriteShape s) {
    switch (s) {
        case SpriteShape::rectangle: return "rectangle";
        case SpriteShape::disk: return "disk";
        case SpriteShape::textured_patch: return "textured_patch";
    }
    return "?";
}

SpriteShape parse_shape(const std::string& v) {
    if (v == "rectangle") return SpriteShape::rectangle;
    if (v == "disk") return SpriteShape::disk;
    if (v == "textured_patch") return SpriteShape::textured_patch;
    PDWN_CHECK(false, "unknown sprite shape '" << v << "'");
    return SpriteShape::rectangle;
}

}  // namespace

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> SceneSpec::times() const {
    if (frame_count == 5) return {-1, 0, 0.5, 1, 2};
    return {0, 0.5, 1};
}

void SceneSpec::validate() const {
    PDWN_CHECK(width >= 1 && height >= 1, "scene: canvas " << width << "x" << height << " is empty");
    PDWN_CHECK(frame_count == 3 || frame_count == 5, "scene: frame_count must be 3 or 5, got " << frame_count);
    for (std::size_t i = 0; i < sprites.size(); ++i) {
        const Sprite& s = sprites[i];
        PDWN_CHECK(s.half_width > 0 && s.half_height > 0, "scene: sprite " << i << " has non-positive size");
        for (std::size_t j = 0; j < i; ++j)
            PDWN_CHECK(sprites[j].depth != s.depth, "scene: sprites " << j << " and " << i << " share depth " << s.depth);
        for (double t : times()) {
            const double x = s.motion.x_at(t);
            const double y = s.motion.y_at(t);
            PDWN_CHECK(x >= 0 && x <= width && y >= 0 && y <= height,
                       "scene: sprite " << i << " centre (" << x << ", " << y << ") leaves the canvas at t = " << t);
        }
    }
}

std::string SceneSpec::to_text() const {
    kv::Document d{{"width", std::to_string(width)},
                   {"height", std::to_string(height)},
                   {"frame_count", std::to_string(frame_count)},
                   {"seed", std::to_string(seed)},
                   {"background_seed", std::to_string(background_seed)},
                   {"sprites", std::to_string(sprites.size())}};
    for (std::size_t i = 0; i < sprites.size(); ++i) {
        const Sprite& s = sprites[i];
        const std::string p = "sprite." + std::to_string(i) + ".";
        d.emplace_back(p + "shape", shape_name(s.shape));
        d.emplace_back(p + "half_size", kv::join(std::vector<double>{s.half_width, s.half_height}));
        d.emplace_back(p + "texture_seed", std::to_string(s.texture_seed));
        d.emplace_back(p + "depth", std::to_string(s.depth));
        d.emplace_back(p + "position", kv::join(std::vector<double>{s.motion.x, s.motion.y}));
        d.emplace_back(p + "velocity", kv::join(std::vector<double>{s.motion.vx, s.motion.vy}));
        d.emplace_back(p + "acceleration", kv::join(std::vector<double>{s.motion.ax, s.motion.ay}));
    }
    return kv::write(d);
}

SceneSpec SceneSpec::from_text(const std::string& text) {
    auto m = kv::parse(text);
    auto take = [&](const std::string& key) {
        auto it = m.find(key);
        PDWN_CHECK(it != m.end(), "scene: missing key '" << key << "'");
        std::string v = it->second;
        m.erase(it);
        return v;
    };
    auto to_u64 = [](const std::string& v, const std::string& key) {
        std::size_t used = 0;
        std::uint64_t out = 0;
        try {
            out = std::stoull(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        PDWN_CHECK(used == v.size() && !v.empty(), key << ": not an unsigned integer: '" << v << "'");
        return out;
    };
    auto pair = [&](const std::string& key, double& a, double& b) {
        const auto v = kv::split_doubles(take(key), key);
        PDWN_CHECK(v.size() == 2, key << ": expected two values");
        a = v[0];
        b = v[1];
    };
    SceneSpec s;
    s.width = kv::to_int(take("width"), "width");
    s.height = kv::to_int(take("height"), "height");
    s.frame_count = kv::to_int(take("frame_count"), "frame_count");
    s.seed = to_u64(take("seed"), "seed");
    s.background_seed = to_u64(take("background_seed"), "background_seed");
    const int count = kv::to_int(take("sprites"), "sprites");
    PDWN_CHECK(count >= 0, "scene: negative sprite count");
    for (int i = 0; i < count; ++i) {
        const std::string p = "sprite." + std::to_string(i) + ".";
        Sprite sp;
        sp.shape = parse_shape(take(p + "shape"));
        pair(p + "half_size", sp.half_width, sp.half_height);
        sp.texture_seed = to_u64(take(p + "texture_seed"), p + "texture_seed");
        sp.depth = kv::to_int(take(p + "depth"), p + "depth");
        pair(p + "position", sp.motion.x, sp.motion.y);
        pair(p + "velocity", sp.motion.vx, sp.motion.vy);
        pair(p + "acceleration", sp.motion.ax, sp.motion.ay);
        s.sprites.push_back(sp);
    }
    PDWN_CHECK(m.empty(), "scene: unknown key '" << m.begin()->first << "'");
    s.validate();
    return s;
}

Tensorf render_frame(const SceneSpec& spec, double t) {
    spec.validate();
    const Scene scene(spec);
    Tensorf img({1, 3, spec.height, spec.width});
    const std::int64_t plane = static_cast<std::int64_t>(spec.width) * spec.height;
    auto data = img.data();
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            std::int64_t acc[3] = {0, 0, 0};
            for (int sy = 0; sy < kSupersample; ++sy)
                for (int sx = 0; sx < kSupersample; ++sx) {
                    double c[3];
                    scene.colour(x + (sx + 0.5) / kSupersample, y + (sy + 0.5) / kSupersample, t, c);
                    for (int k = 0; k < 3; ++k) acc[k] += std::llround(c[k] * kFixedScale);
                }
            for (int k = 0; k < 3; ++k)
                data[static_cast<std::size_t>(k * plane + y * spec.width + x)] =
                    static_cast<float>(static_cast<double>(acc[k]) / (kFixedScale * kSupersample * kSupersample));
        }
    return img;
}

Sample render(const SceneSpec& spec) {
    spec.validate();
    const auto times = spec.times();
    const std::size_t mid = times.size() / 2;
    Sample s;
    for (std::size_t i = 0; i < times.size(); ++i) {
        Tensorf frame = render_frame(spec, times[i]);
        if (i == mid)
            s.target = frame;
        else
            s.inputs.push_back(frame);
    }
    const double t = times[mid];
    const double t_first = times[mid - 1];
    const double t_second = times[mid + 1];
    const Scene scene(spec);
    const int H = spec.height, W = spec.width;
    s.flow_to_first = Tensorf({1, 2, H, W});
    s.flow_to_second = Tensorf({1, 2, H, W});
    s.occlusion = Tensorf({1, 1, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double cx = x + 0.5, cy = y + 0.5;
            const int surf = scene.surface(cx, cy, t);
            bool hidden = false;
            for (int k = 0; k < 2; ++k) {
                const double t2 = k == 0 ? t_first : t_second;
                double x2, y2;
                scene.track(surf, cx, cy, t, t2, x2, y2);
                Tensorf& flow = k == 0 ? s.flow_to_first : s.flow_to_second;
                flow.at(0, 0, y, x) = static_cast<float>(y2 - cy);
                flow.at(0, 1, y, x) = static_cast<float>(x2 - cx);
                const bool inside = x2 >= 0 && x2 < W && y2 >= 0 && y2 < H;
                hidden = hidden || !inside || scene.surface(x2, y2, t2) != surf;
            }
            s.occlusion.at(0, 0, y, x) = hidden ? 1.0f : 0.0f;
        }
    return s;
}

Sample flip_horizontal(const Sample& sample) {
    Sample out;
    for (const auto& f : sample.inputs) out.inputs.push_back(flip_image(f));
    out.target = flip_image(sample.target);
    // Samples read from image files carry no flow or occlusion.
    if (!sample.flow_to_first.defined()) return out;
    out.occlusion = flip_image(sample.occlusion);
    out.flow_to_first = flip_image(sample.flow_to_first);
    out.flow_to_second = flip_image(sample.flow_to_second);
    for (Tensorf* flow : {&out.flow_to_first, &out.flow_to_second}) {
        const Shape s = flow->shape();
        for (std::int64_t p = 0; p < s.plane(); ++p) flow->data()[static_cast<std::size_t>(s.plane() + p)] *= -1.0f;
    }
    return out;
}

Sample reverse_time(const Sample& sample) {
    Sample out = sample;
    std::reverse(out.inputs.begin(), out.inputs.end());
    std::swap(out.flow_to_first, out.flow_to_second);
    return out;
}

Sample augment(const Sample& sample, std::mt19937_64& rng) {
    const bool flip = unit(rng) < 0.5;
    const bool reverse = unit(rng) < 0.5;
    Sample out = flip ? flip_horizontal(sample) : sample;
    return reverse ? reverse_time(out) : out;
}

const char* difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::hard: return "hard";
        case Difficulty::quadratic: return "quadratic";
    }
    return "?";
}

Difficulty parse_difficulty(const std::string& name) {
    if (name == "easy") return Difficulty::easy;
    if (name == "hard") return Difficulty::hard;
    if (name == "quadratic") return Difficulty::quadratic;
    PDWN_CHECK(false, "unknown difficulty '" << name << "' (expected easy, hard or quadratic)");
    return Difficulty::easy;
}

double max_frame_displacement(const SceneSpec& spec) {
    const auto times = spec.times();
    double worst = 0;
    for (const auto& s : spec.sprites)
        for (double t = times.front(); t < times.back(); t += kFrameStep) {
            const double dx = s.motion.x_at(t + kFrameStep) - s.motion.x_at(t);
            const double dy = s.motion.y_at(t + kFrameStep) - s.motion.y_at(t);
            worst = std::max(worst, std::hypot(dx, dy));
        }
    return worst;
}

namespace {

// Axis-aligned bounding boxes of two sprites intersect at some frame time.
bool ever_overlap(const SceneSpec& spec, const Sprite& a, const Sprite& b) {
    for (double t : spec.times()) {
        const double gap_x = std::abs(a.motion.x_at(t) - b.motion.x_at(t)) - a.half_width - b.half_width;
        const double gap_y = std::abs(a.motion.y_at(t) - b.motion.y_at(t)) - (a.shape == SpriteShape::disk ? a.half_width : a.half_height) -
                             (b.shape == SpriteShape::disk ? b.half_width : b.half_height);
        if (gap_x < 1.0 && gap_y < 1.0) return true;
    }
    return false;
}

bool inside(const SceneSpec& spec, const Trajectory& m) {
    for (double t : spec.times()) {
        const double x = m.x_at(t), y = m.y_at(t);
        if (x < 0 || x > spec.width || y < 0 || y > spec.height) return false;
    }
    return true;
}

SceneSpec make_scene(std::uint64_t seed, Difficulty difficulty, const DatasetOptions& o) {
    std::mt19937_64 rng(splitmix(seed));
    SceneSpec spec;
    spec.width = o.width;
    spec.height = o.height;
    spec.frame_count = o.frame_count != 0 ? o.frame_count : (difficulty == Difficulty::quadratic ? 5 : 3);
    spec.seed = seed;
    spec.background_seed = rng();
    const double scale = std::min(o.width, o.height) / 32.0;

    int count = 0;
    double max_speed = 4, max_accel = 0;
    switch (difficulty) {
        case Difficulty::easy:
            count = 1 + static_cast<int>(rng() % 2);
            max_speed = 8;
            break;
        case Difficulty::hard:
            count = 2 + static_cast<int>(rng() % 3);
            max_speed = 32;
            max_accel = 4;
            break;
        case Difficulty::quadratic:
            count = 1 + static_cast<int>(rng() % 2);
            max_speed = 6;
            max_accel = 8;
            break;
    }
    const std::uint64_t shapes = difficulty == Difficulty::easy ? 2 : 3;
    for (int i = 0; i < count; ++i) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            Sprite sp;
            sp.shape = static_cast<SpriteShape>(rng() % shapes);
            sp.half_width = uniform(rng, 3.5, 7.5) * scale;
            sp.half_height = sp.shape == SpriteShape::disk ? sp.half_width : uniform(rng, 3.5, 7.5) * scale;
            sp.texture_seed = rng();
            sp.depth = i;
            sp.motion.x = uniform(rng, 0, o.width);
            sp.motion.y = uniform(rng, 0, o.height);
            // hard: log-uniform over [1/16, 1] of the maximum, so every octave
            // of speed up to the limit is equally common
            const double speed = difficulty == Difficulty::hard
                                     ? max_speed * std::exp2(uniform(rng, -4.0, 0.0))
                                     : uniform(rng, 0.25, 1.0) * max_speed;
            const double angle = uniform(rng, 0, 2 * std::numbers::pi);
            sp.motion.vx = speed * std::cos(angle);
            sp.motion.vy = speed * std::sin(angle);
            const bool accelerates =
                difficulty == Difficulty::quadratic || (difficulty == Difficulty::hard && unit(rng) < 0.5);
            if (accelerates) {
                const double a = uniform(rng, 0.5, 1.0) * max_accel;
                const double phi = uniform(rng, 0, 2 * std::numbers::pi);
                sp.motion.ax = a * std::cos(phi);
                sp.motion.ay = a * std::sin(phi);
            }
            // the start position is resampled until the whole trajectory fits
            if (!inside(spec, sp.motion)) continue;
            spec.sprites.push_back(sp);
            if (max_frame_displacement(spec) > (difficulty == Difficulty::easy ? 4.0 : 16.0) + 1e-9) {
                spec.sprites.pop_back();
                continue;
            }
            bool clash = false;
            if (difficulty == Difficulty::easy)
                for (std::size_t j = 0; j + 1 < spec.sprites.size(); ++j)
                    clash = clash || ever_overlap(spec, spec.sprites[j], sp);
            if (clash) {
                spec.sprites.pop_back();
                continue;
            }
            break;
        }
    }
    spec.validate();
    return spec;
}

}  // namespace

std::vector<SceneSpec> make_dataset(int n, Difficulty difficulty, std::uint64_t seed, DatasetOptions options) {
    PDWN_CHECK(n >= 1, "make_dataset: n must be at least 1, got " << n);
    std::vector<SceneSpec> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(make_scene(splitmix(seed ^ splitmix(static_cast<std::uint64_t>(i))), difficulty, options));
    return out;
}

}  // namespace pdwn::synth
