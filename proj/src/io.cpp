// SPDX-License-Identifier: Apache-2.0

#include "pdwn/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

namespace pdwn {

namespace fs = std::filesystem;

namespace {

#define PDWN_IO_CHECK(cond, msg)                      \
    do {                                              \
        if (!(cond)) {                                \
            std::ostringstream pdwn_io_os_;           \
            pdwn_io_os_ << msg;                       \
            throw IoError(pdwn_io_os_.str());         \
        }                                             \
    } while (0)

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    PDWN_IO_CHECK(in, path.string() << ": cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    PDWN_IO_CHECK(out, path.string() << ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    PDWN_IO_CHECK(out, path.string() << ": write failed");
}

// PNM header tokens are separated by whitespace; '#' starts a comment that
// runs to the end of the line.
class HeaderReader {
public:
    HeaderReader(const std::vector<std::uint8_t>& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

    std::string token() {
        skip();
        std::string t;
        while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_]) && bytes_[pos_] != '#') t += static_cast<char>(bytes_[pos_++]);
        PDWN_IO_CHECK(!t.empty(), path_.string() << ": truncated PNM header");
        return t;
    }

    int number(const char* what) {
        const std::string t = token();
        PDWN_IO_CHECK(std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }) && t.size() <= 9,
                      path_.string() << ": PNM " << what << " is not a positive integer: '" << t << "'");
        return std::stoi(t);
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start() {
        PDWN_IO_CHECK(pos_ < bytes_.size() && std::isspace(bytes_[pos_]), path_.string() << ": truncated PNM header");
        return pos_ + 1;
    }

private:
    void skip() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    const fs::path& path_;
    std::size_t pos_ = 0;
};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void floats(std::span<const float> v) {
        for (float x : v) f32(x);
    }
    const std::vector<std::uint8_t>& data() const { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(std::vector<std::uint8_t> bytes, const fs::path& path) : in_(std::move(bytes)), path_(path) {}

    void need(std::size_t n, const std::string& what) {
        PDWN_IO_CHECK(in_.size() - pos_ >= n, path_.string() << ": truncated checkpoint while reading " << what);
    }
    std::uint8_t u8(const std::string& what) {
        need(1, what);
        return in_[pos_++];
    }
    std::uint32_t u32(const std::string& what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64(const std::string& what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    std::string str(const std::string& what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    std::vector<float> floats(std::size_t n, const std::string& what) {
        need(4 * n, what);
        std::vector<float> v(n);
        for (auto& x : v) x = std::bit_cast<float>(u32(what));
        return v;
    }
    bool at_end() const { return pos_ == in_.size(); }

private:
    std::vector<std::uint8_t> in_;
    const fs::path& path_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[8] = {'P', 'D', 'W', 'N', 'C', 'K', 'P', 'T'};

std::uint8_t quantize(float v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(255.0 * c + 0.5));
}

// Middlebury colour wheel: red, yellow, green, cyan, blue, magenta segments.
std::vector<std::array<double, 3>> color_wheel() {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<double, 3>> w;
    for (int i = 0; i < RY; ++i) w.push_back({255, std::floor(255.0 * i / RY), 0});
    for (int i = 0; i < YG; ++i) w.push_back({255 - std::floor(255.0 * i / YG), 255, 0});
    for (int i = 0; i < GC; ++i) w.push_back({0, 255, std::floor(255.0 * i / GC)});
    for (int i = 0; i < CB; ++i) w.push_back({0, 255 - std::floor(255.0 * i / CB), 255});
    for (int i = 0; i < BM; ++i) w.push_back({std::floor(255.0 * i / BM), 0, 255});
    for (int i = 0; i < MR; ++i) w.push_back({255, 0, 255 - std::floor(255.0 * i / MR)});
    return w;
}

}  // namespace

Image read_pnm(const fs::path& path) {
    const auto bytes = read_bytes(path);
    HeaderReader h(bytes, path);
    const std::string magic = h.token();
    PDWN_IO_CHECK(magic == "P5" || magic == "P6",
                  path.string() << ": unsupported PNM type '" << magic.substr(0, 8) << "', expected binary P5 or P6");
    Image img;
    img.channels = magic == "P6" ? 3 : 1;
    img.width = h.number("width");
    img.height = h.number("height");
    PDWN_IO_CHECK(img.width > 0 && img.height > 0, path.string() << ": PNM size " << img.width << "x" << img.height
                                                                 << " is empty");
    const int maxval = h.number("maxval");
    PDWN_IO_CHECK(maxval == 255, path.string() << ": unsupported PNM maxval " << maxval << ", expected 255");
    const std::size_t start = h.raster_start();
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    PDWN_IO_CHECK(bytes.size() >= start + n, path.string() << ": truncated PNM raster: expected " << n << " bytes, found "
                                                           << (bytes.size() > start ? bytes.size() - start : 0));
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                      bytes.begin() + static_cast<std::ptrdiff_t>(start + n));
    return img;
}

void write_pnm(const fs::path& path, const Image& image) {
    PDWN_IO_CHECK(image.channels == 1 || image.channels == 3,
                  path.string() << ": PNM needs 1 or 3 channels, got " << image.channels);
    PDWN_IO_CHECK(image.pixels.size() == static_cast<std::size_t>(image.width) * image.height * image.channels,
                  path.string() << ": pixel buffer does not match " << image.width << "x" << image.height);
    const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) +
                               " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
    write_bytes(path, bytes);
}

Image to_image(const Tensorf& tensor) {
    const Shape s = tensor.shape();
    PDWN_CHECK(s.n == 1 && (s.c == 1 || s.c == 3), "to_image: expected (1, 1|3, H, W), got " << s.str());
    Image img{static_cast<int>(s.w), static_cast<int>(s.h), static_cast<int>(s.c), {}};
    img.pixels.resize(static_cast<std::size_t>(s.numel()));
    for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x)
            for (std::int64_t c = 0; c < s.c; ++c)
                img.pixels[static_cast<std::size_t>((y * s.w + x) * s.c + c)] = quantize(tensor.at(0, c, y, x));
    return img;
}

Tensorf to_tensor(const Image& image) {
    Tensorf t({1, image.channels, image.height, image.width});
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c)
                t.at(0, c, y, x) =
                    static_cast<float>(image.pixels[static_cast<std::size_t>((y * image.width + x) * image.channels + c)]) /
                    255.0f;
    return t;
}

void save_checkpoint(const fs::path& path, const Pdwn<float>& model, const Adam<float>* optimizer, std::int64_t step) {
    Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(kCheckpointVersion);
    w.str(model.config().to_text());
    w.u64(static_cast<std::uint64_t>(step));
    const auto& items = model.parameters().items();
    w.u32(static_cast<std::uint32_t>(items.size()));
    for (const auto& p : items) {
        w.str(p.name);
        const Shape s = p.tensor.shape();
        for (std::int64_t d : {s.n, s.c, s.h, s.w}) w.u64(static_cast<std::uint64_t>(d));
        w.floats(p.tensor.data());
    }
    const bool moments = optimizer != nullptr && optimizer->first_moments().size() == items.size();
    w.u8(moments ? 1 : 0);
    if (moments) {
        for (const auto& m : optimizer->first_moments()) w.floats(m);
        for (const auto& v : optimizer->second_moments()) w.floats(v);
        for (std::int64_t t : optimizer->parameter_steps()) w.u64(static_cast<std::uint64_t>(t));
    }
    write_bytes(path, w.data());
}

Checkpoint read_checkpoint(const fs::path& path) {
    Reader r(read_bytes(path), path);
    r.need(sizeof(kMagic), "magic");
    char magic[8];
    for (char& c : magic) c = static_cast<char>(r.u8("magic"));
    PDWN_IO_CHECK(std::equal(magic, magic + 8, kMagic), path.string() << ": not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32("version");
    PDWN_IO_CHECK(version == kCheckpointVersion, path.string() << ": checkpoint version " << version
                                                               << " is not supported (this build reads version "
                                                               << kCheckpointVersion << ")");
    Checkpoint cp;
    try {
        cp.config = ArchConfig::from_text(r.str("config"));
    } catch (const std::invalid_argument& e) {
        throw IoError(path.string() + ": invalid embedded config: " + e.what());
    }
    cp.step = static_cast<std::int64_t>(r.u64("step"));
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str("tensor name");
        std::array<std::int64_t, 4> d{};
        for (auto& x : d) {
            x = static_cast<std::int64_t>(r.u64("shape of " + name));
            PDWN_IO_CHECK(x >= 0 && x < (1 << 24), path.string() << ": implausible shape for " << name);
        }
        const Shape s{d[0], d[1], d[2], d[3]};
        auto values = r.floats(static_cast<std::size_t>(s.numel()), "tensor " + name);
        cp.tensors.emplace_back(std::move(name), Tensorf(s, std::move(values)));
    }
    cp.has_optimizer = r.u8("optimizer flag") != 0;
    if (cp.has_optimizer) {
        for (auto* moments : {&cp.first_moments, &cp.second_moments})
            for (const auto& [name, t] : cp.tensors)
                moments->push_back(r.floats(static_cast<std::size_t>(t.numel()), "optimizer state of " + name));
        for (const auto& entry : cp.tensors)
            cp.parameter_steps.push_back(static_cast<std::int64_t>(r.u64("update count of " + entry.first)));
    }
    PDWN_IO_CHECK(r.at_end(), path.string() << ": trailing bytes after checkpoint data");
    return cp;
}

void apply_checkpoint(const Checkpoint& checkpoint, Pdwn<float>& model, Adam<float>* optimizer) {
    const auto key = model.config().first_difference(checkpoint.config);
    PDWN_IO_CHECK(!key, "checkpoint config differs from the requested config at key '" << *key << "'");
    auto& params = model.parameters();
    for (const auto& [name, t] : checkpoint.tensors)
        PDWN_IO_CHECK(params.find(name) != nullptr, "checkpoint holds unknown parameter name '" << name << "'");
    PDWN_IO_CHECK(checkpoint.tensors.size() == params.size(),
                  "checkpoint holds " << checkpoint.tensors.size() << " tensors, the model has " << params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.items()[i];
        const auto& [name, t] = checkpoint.tensors[i];
        PDWN_IO_CHECK(name == p.name, "checkpoint tensor " << i << " is '" << name << "', expected '" << p.name << "'");
        PDWN_IO_CHECK(t.shape() == p.tensor.shape(), "checkpoint tensor '" << name << "' has shape " << t.shape().str()
                                                                            << ", expected " << p.tensor.shape().str());
        std::copy(t.data().begin(), t.data().end(), p.tensor.data().begin());
    }
    if (optimizer != nullptr && checkpoint.has_optimizer)
        optimizer->restore({checkpoint.step, checkpoint.first_moments, checkpoint.second_moments, checkpoint.parameter_steps});
}

Pdwn<float> load_model(const fs::path& path, Adam<float>* optimizer, std::int64_t* step) {
    const Checkpoint cp = read_checkpoint(path);
    Pdwn<float> model(cp.config, 0);
    apply_checkpoint(cp, model, optimizer);
    if (step != nullptr) *step = cp.step;
    return model;
}

OffsetVisualization colorize_offsets(const Tensorf& mean_offset, std::optional<double> max_magnitude) {
    const Shape s = mean_offset.shape();
    PDWN_CHECK(s.n == 1 && s.c == 2, "colorize_offsets: expected (1, 2, H, W), got " << s.str());
    double largest = 0;
    for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x)
            largest = std::max(largest, std::hypot(double(mean_offset.at(0, 0, y, x)), double(mean_offset.at(0, 1, y, x))));
    OffsetVisualization out{Tensorf({1, 3, s.h, s.w}), max_magnitude.value_or(largest)};
    PDWN_CHECK(out.max_magnitude >= 0, "colorize_offsets: negative normalization");
    const double norm = out.max_magnitude > 0 ? out.max_magnitude : 1.0;
    static const auto wheel = color_wheel();
    const auto ncols = static_cast<double>(wheel.size());
    for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x) {
            const double v = mean_offset.at(0, 0, y, x) / norm, u = mean_offset.at(0, 1, y, x) / norm;
            const double rad = std::hypot(u, v);
            const double a = std::atan2(-v, -u) / std::numbers::pi;
            const double fk = (a + 1) / 2 * (ncols - 1);
            const auto k0 = static_cast<std::size_t>(std::floor(fk));
            const std::size_t k1 = (k0 + 1) % wheel.size();
            const double f = fk - std::floor(fk);
            for (int c = 0; c < 3; ++c) {
                double col = ((1 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
                col = rad <= 1 ? 1 - rad * (1 - col) : col * 0.75;
                out.rgb.at(0, c, y, x) = static_cast<float>(col);
            }
        }
    return out;
}

OffsetVisualization visualize_offsets(const Tensorf& mean_offset, const fs::path& path,
                                      std::optional<double> max_magnitude) {
    OffsetVisualization v = colorize_offsets(mean_offset, max_magnitude);
    write_pnm(path, to_image(v.rgb));
    std::ofstream side(path.string() + ".txt");
    PDWN_IO_CHECK(side, path.string() << ".txt: cannot open for writing");
    side << "# saturation 1 at this offset magnitude in pixels\nmax_magnitude = " << v.max_magnitude << '\n';
    return v;
}

void visualize_alpha(const Tensorf& alpha, const fs::path& path) {
    const Shape s = alpha.shape();
    PDWN_CHECK(s.c == 1, "visualize_alpha: expected one channel, got " << s.str());
    write_pnm(path, to_image(alpha));
}

void write_sample_dir(const fs::path& dir, const synth::Sample& sample) {
    fs::create_directories(dir);
    std::vector<Tensorf> frames = sample.inputs;
    frames.insert(frames.begin() + static_cast<std::ptrdiff_t>(frames.size() / 2), sample.target);
    for (std::size_t i = 0; i < frames.size(); ++i)
        write_pnm(dir / ("im" + std::to_string(i + 1) + ".ppm"), to_image(frames[i]));
    if (sample.occlusion.defined()) write_pnm(dir / "occlusion.pgm", to_image(sample.occlusion));
}

synth::Sample read_sample_dir(const fs::path& dir) {
    std::vector<Tensorf> frames;
    for (int i = 1; fs::exists(dir / ("im" + std::to_string(i) + ".ppm")); ++i)
        frames.push_back(to_tensor(read_pnm(dir / ("im" + std::to_string(i) + ".ppm"))));
    PDWN_IO_CHECK(frames.size() == 3 || frames.size() == 5,
                  dir.string() << ": expected im1.ppm .. im3.ppm or im1.ppm .. im5.ppm, found " << frames.size()
                               << " frames");
    for (const auto& f : frames)
        PDWN_IO_CHECK(f.shape() == frames[0].shape() && f.shape().c == 3,
                      dir.string() << ": frames differ in size or are not colour images");
    synth::Sample s;
    const std::size_t mid = frames.size() / 2;
    s.target = frames[mid];
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (i != mid) s.inputs.push_back(frames[i]);
    return s;
}

std::vector<fs::path> list_sample_dirs(const fs::path& root) {
    PDWN_IO_CHECK(fs::is_directory(root), root.string() << ": not a directory");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace pdwn
