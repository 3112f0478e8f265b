// SPDX-License-Identifier: Apache-2.0

#include "pdwn/model.hpp"

#include <random>

#include "pdwn/kv.hpp"
#include "pdwn/ops.hpp"

namespace pdwn {

namespace {

const char* name_of(CostMode m) {
    switch (m) {
        case CostMode::none: return "none";
        case CostMode::predefined: return "predefined";
        case CostMode::learnt: return "learnt";
    }
    return "?";
}

std::string scale_name(const char* prefix, int scale) { return std::string(prefix) + ".s" + std::to_string(scale); }

}  // namespace

// ArchConfig

ArchConfig ArchConfig::full() {
    ArchConfig c;
    c.num_scales = 6;
    c.feature_channels = {16, 32, 64, 96, 128, 196};
    c.head_channels = {64, 64, 64, 128, 196, 256};
    c.cost_radius = std::vector<int>(6, 4);
    c.context_channels = 64;
    c.learnt_cost_hidden = 64;
    return c;
}

void ArchConfig::validate() const {
    PDWN_CHECK(num_scales >= 1, "num_scales must be at least 1, got " << num_scales);
    const auto L = static_cast<std::size_t>(num_scales);
    PDWN_CHECK(feature_channels.size() == L,
               "feature_channels has " << feature_channels.size() << " entries, num_scales is " << num_scales);
    PDWN_CHECK(head_channels.size() == L,
               "head_channels has " << head_channels.size() << " entries, num_scales is " << num_scales);
    PDWN_CHECK(cost_radius.size() == L, "cost_radius has " << cost_radius.size() << " entries, num_scales is " << num_scales);
    for (std::size_t i = 0; i < L; ++i) {
        PDWN_CHECK(feature_channels[i] >= 1, "feature_channels[" << i << "] must be positive");
        PDWN_CHECK(head_channels[i] >= 1, "head_channels[" << i << "] must be positive");
        PDWN_CHECK(cost_radius[i] >= 0, "cost_radius[" << i << "] must be non-negative");
    }
    PDWN_CHECK(input_frames == 2 || input_frames == 4, "input_frames must be 2 or 4, got " << input_frames);
    PDWN_CHECK(leaky_slope >= 0 && leaky_slope < 1, "leaky_slope must lie in [0, 1)");
    PDWN_CHECK(blend_channels >= 1 && context_channels >= 1 && learnt_cost_hidden >= 1, "widths must be positive");
    PDWN_CHECK(context_blocks >= 0, "context_blocks must be non-negative");
}

std::string ArchConfig::to_text() const {
    kv::Document d{
        {"num_scales", std::to_string(num_scales)},
        {"feature_channels", kv::join(feature_channels)},
        {"head_channels", kv::join(head_channels)},
        {"cost_radius", kv::join(cost_radius)},
        {"cost_mode", name_of(cost_mode)},
        {"cost_norm", cost_norm == CostNormalization::kernel_area ? "kernel_area" : "feature_dim"},
        {"learnt_cost_hidden", std::to_string(learnt_cost_hidden)},
        {"warp", warp == WarpMode::dconv ? "dconv" : "flow"},
        {"coarse_to_fine", kv::from_bool(coarse_to_fine)},
        {"input_frames", std::to_string(input_frames)},
        {"leaky_slope", kv::from_double(leaky_slope)},
        {"blending", kv::from_bool(blending)},
        {"blend_channels", std::to_string(blend_channels)},
        {"context_enhancement", kv::from_bool(context_enhancement)},
        {"context_channels", std::to_string(context_channels)},
        {"context_blocks", std::to_string(context_blocks)},
    };
    return kv::write(d);
}

ArchConfig ArchConfig::from_text(const std::string& text) {
    ArchConfig c;
    for (const auto& [k, v] : kv::parse(text)) {
        if (k == "num_scales") c.num_scales = kv::to_int(v, k);
        else if (k == "feature_channels") c.feature_channels = kv::split_ints(v, k);
        else if (k == "head_channels") c.head_channels = kv::split_ints(v, k);
        else if (k == "cost_radius") c.cost_radius = kv::split_ints(v, k);
        else if (k == "cost_mode") {
            if (v == "none") c.cost_mode = CostMode::none;
            else if (v == "predefined") c.cost_mode = CostMode::predefined;
            else if (v == "learnt") c.cost_mode = CostMode::learnt;
            else PDWN_CHECK(false, "cost_mode: unknown value '" << v << "'");
        } else if (k == "cost_norm") {
            if (v == "kernel_area") c.cost_norm = CostNormalization::kernel_area;
            else if (v == "feature_dim") c.cost_norm = CostNormalization::feature_dim;
            else PDWN_CHECK(false, "cost_norm: unknown value '" << v << "'");
        } else if (k == "learnt_cost_hidden") c.learnt_cost_hidden = kv::to_int(v, k);
        else if (k == "warp") {
            if (v == "dconv") c.warp = WarpMode::dconv;
            else if (v == "flow") c.warp = WarpMode::flow;
            else PDWN_CHECK(false, "warp: unknown value '" << v << "'");
        } else if (k == "coarse_to_fine") c.coarse_to_fine = kv::to_bool(v, k);
        else if (k == "input_frames") c.input_frames = kv::to_int(v, k);
        else if (k == "leaky_slope") c.leaky_slope = kv::to_double(v, k);
        else if (k == "blending") c.blending = kv::to_bool(v, k);
        else if (k == "blend_channels") c.blend_channels = kv::to_int(v, k);
        else if (k == "context_enhancement") c.context_enhancement = kv::to_bool(v, k);
        else if (k == "context_channels") c.context_channels = kv::to_int(v, k);
        else if (k == "context_blocks") c.context_blocks = kv::to_int(v, k);
        else PDWN_CHECK(false, "unknown config key '" << k << "'");
    }
    c.validate();
    return c;
}

std::optional<std::string> ArchConfig::first_difference(const ArchConfig& other) const {
    const auto a = kv::parse(to_text());
    const auto b = kv::parse(other.to_text());
    for (const auto& [k, v] : a)
        if (b.at(k) != v) return k;
    return std::nullopt;
}

int ArchConfig::cost_channels(int scale) const {
    if (cost_mode == CostMode::none) return 0;
    const int k = 2 * cost_radius[static_cast<std::size_t>(scale)] + 1;
    return k * k;
}

int ArchConfig::head_input_channels(int scale) const {
    const auto s = static_cast<std::size_t>(scale);
    int c = 2 * feature_channels[s] + cost_channels(scale);
    if (input_frames == 4) c += 2 * feature_channels[s];
    if (scale + 1 < active_scales()) c += head_output_channels() + head_channels[s + 1];
    return c;
}

// Pdwn

template <typename T>
Pdwn<T>::Pdwn(ArchConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    // Convs followed by a leaky ReLU get He init; the rest get plain fan-in
    // init or zeros.
    enum class Init { hidden, linear, zero };
    auto conv_param = [&](const std::string& name, int cout, int cin, int k, Init init) {
        Tensor<T> w({cout, cin, k, k});
        const auto fan_in = static_cast<std::int64_t>(cin) * k * k;
        if (init == Init::hidden) init_he_uniform(w, fan_in, config_.leaky_slope, rng);
        if (init == Init::linear) init_fan_in_uniform(w, fan_in, rng);
        params_.add(name + ".w", w);
        params_.add(name + ".b", Tensor<T>({1, 1, 1, cout}));
    };
    // 2x identity on the centre tap: with modulation 0.5 the warp starts as a
    // plain copy of its input.
    auto warp_filter = [&](const std::string& name, int channels) {
        Tensor<T> w({channels, channels, 3, 3});
        for (int c = 0; c < channels; ++c) w.at(c, c, 1, 1) = T(2);
        params_.add(name, w);
    };

    const auto& fc = config_.feature_channels;
    const auto& hc = config_.head_channels;
    const int L = config_.active_scales();
    const bool dconv = config_.warp == WarpMode::dconv;

    for (int s = 0; s < L; ++s) {
        const std::string p = scale_name("enc", s);
        if (s == 0) {
            conv_param(p + ".conv0", fc[0], 3, 7, Init::hidden);
            conv_param(p + ".conv1", fc[0], fc[0], 5, Init::hidden);
        } else {
            conv_param(p + ".conv0", fc[s], fc[s - 1], 3, Init::hidden);
            conv_param(p + ".conv1", fc[s], fc[s], 3, Init::hidden);
        }
    }
    for (int s = L - 1; s >= 0; --s) {
        const bool refined = s + 1 < L;
        if (refined && dconv) warp_filter(scale_name("warp", s), fc[s]);
        if (config_.cost_mode == CostMode::learnt) {
            const std::string p = scale_name("cost", s);
            conv_param(p + ".conv0", config_.learnt_cost_hidden, 2 * fc[s], 3, Init::hidden);
            conv_param(p + ".conv1", config_.cost_channels(s), config_.learnt_cost_hidden, 3, Init::linear);
        }
        const std::string p = scale_name("head", s);
        conv_param(p + ".conv0", hc[s], config_.head_input_channels(s), 3, Init::hidden);
        conv_param(p + ".conv1", hc[s], hc[s], 3, Init::hidden);
        conv_param(p + ".conv2", config_.head_output_channels(), hc[s], 3, Init::zero);
    }
    if (dconv) {
        warp_filter("blend.frame_filter", 3);
        warp_filter("blend.feature_filter", fc[0]);
    }
    if (config_.blending) {
        conv_param("blend.conv0", config_.blend_channels, config_.blend_input_channels(), 3, Init::hidden);
        conv_param("blend.conv1", config_.blend_channels, config_.blend_channels, 3, Init::hidden);
        conv_param("blend.conv2", 2, config_.blend_channels, 3, Init::linear);
    }
    if (config_.context_enhancement) {
        const int cc = config_.context_channels;
        conv_param("ctx.in", cc, config_.context_input_channels(), 3, Init::hidden);
        for (int b = 0; b < config_.context_blocks; ++b) {
            conv_param("ctx.block" + std::to_string(b) + ".conv0", cc, cc, 3, Init::hidden);
            conv_param("ctx.block" + std::to_string(b) + ".conv1", cc, cc, 3, Init::linear);
        }
        conv_param("ctx.out", 3, cc, 3, Init::zero);
    }
}

template <typename T>
Tensor<T> Pdwn<T>::conv(const std::string& name, const Tensor<T>& x, int padding) const {
    const auto* w = params_.find(name + ".w");
    const auto* b = params_.find(name + ".b");
    PDWN_CHECK(w != nullptr && b != nullptr, "missing parameter " << name);
    return conv2d(x, w->tensor, b->tensor, 1, padding);
}

template <typename T>
Tensor<T> Pdwn<T>::act(const Tensor<T>& x) const {
    return leaky_relu(x, static_cast<T>(config_.leaky_slope));
}

template <typename T>
Tensor<T> Pdwn<T>::warp(const Tensor<T>& x, const OffsetField<T>& field, const std::string& filter) const {
    if (config_.warp == WarpMode::flow) return flow_warp(x, field.offsets);
    const auto* w = params_.find(filter);
    PDWN_CHECK(w != nullptr, "missing parameter " << filter);
    return deformable_warp(x, field, GlobalFilter<T>{w->tensor});
}

template <typename T>
Tensor<T> Pdwn<T>::cost(int scale, const Tensor<T>& a, const Tensor<T>& b) const {
    const int radius = config_.cost_radius[static_cast<std::size_t>(scale)];
    switch (config_.cost_mode) {
        case CostMode::none: return {};
        case CostMode::predefined: return cost_volume(a, b, radius, config_.cost_norm);
        case CostMode::learnt: {
            const std::string p = scale_name("cost", scale);
            LearntCostNet<T> net{params_.find(p + ".conv0.w")->tensor, params_.find(p + ".conv0.b")->tensor,
                                 params_.find(p + ".conv1.w")->tensor, params_.find(p + ".conv1.b")->tensor,
                                 static_cast<T>(config_.leaky_slope)};
            return learnt_cost(a, b, net);
        }
    }
    return {};
}

template <typename T>
std::array<std::size_t, 2> Pdwn<T>::nearest() const {
    return config_.input_frames == 4 ? std::array<std::size_t, 2>{1, 2} : std::array<std::size_t, 2>{0, 1};
}

template <typename T>
PyramidFeatures<T> Pdwn<T>::encode_pyramid(const std::vector<Tensor<T>>& frames) const {
    PDWN_CHECK(!frames.empty(), "encode_pyramid: no frames");
    const Shape s0 = frames[0].shape();
    PyramidFeatures<T> out;
    for (const auto& f : frames) {
        PDWN_CHECK(f.shape() == s0, "encode_pyramid: frame shape " << f.shape().str() << " != " << s0.str());
        PDWN_CHECK(f.shape().c == 3, "encode_pyramid: frames need 3 channels, got " << f.shape().c);
        std::vector<Tensor<T>> levels;
        Tensor<T> x = f;
        for (int s = 0; s < config_.active_scales(); ++s) {
            const std::string p = scale_name("enc", s);
            if (s == 0) {
                x = act(conv(p + ".conv0", x, 3));
                x = act(conv(p + ".conv1", x, 2));
            } else {
                x = act(conv(p + ".conv0", max_pool2(x), 1));
                x = act(conv(p + ".conv1", x, 1));
            }
            levels.push_back(x);
        }
        out.levels.push_back(std::move(levels));
    }
    return out;
}

template <typename T>
ScaleEstimate<T> Pdwn<T>::head(int scale, const Tensor<T>& input, const std::array<OffsetField<T>, 2>* base) const {
    const std::string p = scale_name("head", scale);
    Tensor<T> h = act(conv(p + ".conv0", input, 1));
    h = act(conv(p + ".conv1", h, 1));
    Tensor<T> out = conv(p + ".conv2", h, 1);

    ScaleEstimate<T> est;
    est.hidden = h;
    if (config_.warp == WarpMode::flow) {
        for (int i = 0; i < 2; ++i) {
            Tensor<T> flow = slice_channels(out, 2 * i, 2);
            est.fields[i].offsets = base ? add((*base)[i].offsets, flow) : flow;
        }
        return est;
    }
    // [offsets dir0 | offsets dir2 | modulation dir0 | modulation dir2]
    for (int i = 0; i < 2; ++i) {
        Tensor<T> off = slice_channels(out, 18 * i, 18);
        est.fields[i].offsets = base ? add((*base)[i].offsets, off) : off;
        est.fields[i].modulation = sigmoid(slice_channels(out, 36 + 9 * i, 9));
    }
    return est;
}

template <typename T>
ScaleEstimate<T> Pdwn<T>::coarsest_estimate(int scale, const PyramidFeatures<T>& pyramid) const {
    const auto [a, b] = nearest();
    const auto s = static_cast<std::size_t>(scale);
    const Tensor<T>& f0 = pyramid.levels[a][s];
    const Tensor<T>& f2 = pyramid.levels[b][s];
    std::vector<Tensor<T>> parts;
    if (Tensor<T> c = cost(scale, f0, f2); c.defined()) parts.push_back(c);
    parts.push_back(f0);
    parts.push_back(f2);
    if (config_.input_frames == 4) {
        parts.push_back(pyramid.levels[0][s]);
        parts.push_back(pyramid.levels[3][s]);
    }
    return head(scale, concat(parts), nullptr);
}

template <typename T>
ScaleEstimate<T> Pdwn<T>::upsample(const ScaleEstimate<T>& prev, std::int64_t h, std::int64_t w) const {
    ScaleEstimate<T> up;
    for (int i = 0; i < 2; ++i) {
        up.fields[i].offsets = pdwn::scale(bilinear_resize(prev.fields[i].offsets, h, w), T(2));
        if (prev.fields[i].modulation.defined())
            up.fields[i].modulation = bilinear_resize(prev.fields[i].modulation, h, w);
    }
    up.hidden = bilinear_resize(prev.hidden, h, w);
    return up;
}

template <typename T>
ScaleEstimate<T> Pdwn<T>::refine_scale(const ScaleEstimate<T>& prev, int scale, const PyramidFeatures<T>& pyramid) const {
    PDWN_CHECK(scale + 1 < config_.active_scales(), "refine_scale: no coarser scale above " << scale);
    const auto [a, b] = nearest();
    const auto s = static_cast<std::size_t>(scale);
    const Tensor<T>& f0 = pyramid.levels[a][s];
    const Tensor<T>& f2 = pyramid.levels[b][s];
    const Shape fs = f0.shape();
    const Shape ps = prev.hidden.shape();
    PDWN_CHECK(ps.h == (fs.h + 1) / 2 && ps.w == (fs.w + 1) / 2,
               "refine_scale: previous estimate " << ps.str() << " is not one scale above " << fs.str());
    ScaleEstimate<T> up = upsample(prev, fs.h, fs.w);

    const std::string filter = scale_name("warp", scale);
    Tensor<T> w0 = warp(f0, up.fields[0], filter);
    Tensor<T> w2 = warp(f2, up.fields[1], filter);
    std::vector<Tensor<T>> parts;
    if (Tensor<T> c = cost(scale, w0, w2); c.defined()) parts.push_back(c);
    parts.push_back(f0);
    parts.push_back(f2);
    if (config_.input_frames == 4) {
        parts.push_back(pyramid.levels[0][s]);
        parts.push_back(pyramid.levels[3][s]);
    }
    for (int i = 0; i < 2; ++i) parts.push_back(up.fields[i].offsets);
    for (int i = 0; i < 2; ++i)
        if (up.fields[i].modulation.defined()) parts.push_back(up.fields[i].modulation);
    parts.push_back(up.hidden);
    return head(scale, concat(parts), &up.fields);
}

template <typename T>
typename Pdwn<T>::Blend Pdwn<T>::blend(const Tensor<T>& frame0, const Tensor<T>& frame2, const ScaleEstimate<T>& finest,
                                       const Tensor<T>& feature0, const Tensor<T>& feature2) const {
    Blend out;
    out.frames[0] = warp(frame0, finest.fields[0], "blend.frame_filter");
    out.frames[1] = warp(frame2, finest.fields[1], "blend.frame_filter");
    out.features[0] = warp(feature0, finest.fields[0], "blend.feature_filter");
    out.features[1] = warp(feature2, finest.fields[1], "blend.feature_filter");
    const Shape fs = frame0.shape();
    if (config_.blending) {
        Tensor<T> x = concat(std::vector<Tensor<T>>{out.frames[0], out.frames[1], out.features[0], out.features[1]});
        x = act(conv("blend.conv0", x, 1));
        x = act(conv("blend.conv1", x, 1));
        Tensor<T> weights = softmax_channels(conv("blend.conv2", x, 1));
        out.alpha = slice_channels(weights, 0, 1);
        out.blended = alpha_blend(out.frames[0], out.frames[1], out.alpha);
    } else {
        out.alpha = Tensor<T>::full({fs.n, 1, fs.h, fs.w}, T(0.5));
        out.blended = pdwn::scale(add(out.frames[0], out.frames[1]), T(0.5));
    }
    return out;
}

template <typename T>
Tensor<T> Pdwn<T>::context_enhance(const Blend& b) const {
    Tensor<T> x = concat(std::vector<Tensor<T>>{b.blended, b.frames[0], b.frames[1], b.features[0], b.features[1]});
    x = act(conv("ctx.in", x, 1));
    for (int i = 0; i < config_.context_blocks; ++i) {
        const std::string p = "ctx.block" + std::to_string(i);
        x = add(x, conv(p + ".conv1", act(conv(p + ".conv0", x, 1)), 1));
    }
    return add(b.blended, conv("ctx.out", x, 1));
}

template <typename T>
ForwardResult<T> Pdwn<T>::forward(const std::vector<Tensor<T>>& frames, ForwardOptions options) const {
    PDWN_CHECK(static_cast<int>(frames.size()) == config_.input_frames,
               "forward: config expects " << config_.input_frames << " input frames, got " << frames.size());
    const Shape s0 = frames[0].shape();
    const int m = config_.spatial_multiple();
    PDWN_CHECK(s0.h % m == 0 && s0.w % m == 0,
               "forward: frame size " << s0.h << "x" << s0.w << " is not divisible by " << m);

    const PyramidFeatures<T> pyramid = encode_pyramid(frames);
    const int L = config_.active_scales();
    ForwardResult<T> result;
    auto& diag = result.diagnostics;
    diag.scales.resize(static_cast<std::size_t>(L));
    diag.scales[static_cast<std::size_t>(L - 1)] = coarsest_estimate(L - 1, pyramid);
    for (int s = L - 2; s >= 0; --s)
        diag.scales[static_cast<std::size_t>(s)] = refine_scale(diag.scales[static_cast<std::size_t>(s + 1)], s, pyramid);

    const auto [a, b] = nearest();
    const ScaleEstimate<T>& finest = diag.scales[0];
    Blend bl = blend(frames[a], frames[b], finest, pyramid.levels[a][0], pyramid.levels[b][0]);
    diag.warped_frames = bl.frames;
    diag.alpha = bl.alpha;
    diag.blended = bl.blended;
    for (int i = 0; i < 2; ++i) {
        const auto& f = finest.fields[i];
        diag.mean_offsets[i] = config_.warp == WarpMode::dconv ? mean_offset(f) : f.offsets.detach();
    }
    result.output = config_.context_enhancement && options.context ? context_enhance(bl) : bl.blended;
    return result;
}

template class Pdwn<float>;
template class Pdwn<double>;

}  // namespace pdwn
