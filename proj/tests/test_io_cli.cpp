// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sys/wait.h>

#include "oracles.hpp"
#include "pdwn/io.hpp"
#include "pdwn/ops.hpp"
#include "pdwn/train.hpp"

namespace fs = std::filesystem;
using namespace pdwn;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("pdwn_io_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path operator/(const std::string& s) const { return path / s; }
};

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void put_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string text_of(const fs::path& p) {
    const auto b = bytes_of(p);
    return {b.begin(), b.end()};
}

Image random_image(int w, int h, int c, std::mt19937_64& rng) {
    Image img{w, h, c, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h * c))};
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
    return img;
}

std::string io_error(const std::function<void()>& f) {
    try {
        f();
    } catch (const IoError& e) {
        return e.what();
    }
    return "no error";
}

struct Run {
    int status;
    std::string output;
};

Run cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(PDWN_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, text_of(log)};
}

std::int64_t count_params(const ArchConfig& c) {
    const auto conv = [](std::int64_t cout, std::int64_t cin, std::int64_t k) { return cout * cin * k * k + cout; };
    const auto& f = c.feature_channels;
    const auto& h = c.head_channels;
    const int L = c.active_scales();
    std::int64_t n = conv(f[0], 3, 7) + conv(f[0], f[0], 5);
    for (int s = 1; s < L; ++s) n += conv(f[s], f[s - 1], 3) + conv(f[s], f[s], 3);
    for (int s = 0; s < L; ++s) {
        if (s + 1 < L && c.warp == WarpMode::dconv) n += std::int64_t{f[s]} * f[s] * 9;
        if (c.cost_mode == CostMode::learnt)
            n += conv(c.learnt_cost_hidden, 2 * f[s], 3) + conv(c.cost_channels(s), c.learnt_cost_hidden, 3);
        n += conv(h[s], c.head_input_channels(s), 3) + conv(h[s], h[s], 3) + conv(c.head_output_channels(), h[s], 3);
    }
    if (c.warp == WarpMode::dconv) n += 3 * 3 * 9 + std::int64_t{f[0]} * f[0] * 9;
    if (c.blending)
        n += conv(c.blend_channels, c.blend_input_channels(), 3) + conv(c.blend_channels, c.blend_channels, 3) +
             conv(2, c.blend_channels, 3);
    if (c.context_enhancement)
        n += conv(c.context_channels, c.context_input_channels(), 3) +
             2 * c.context_blocks * conv(c.context_channels, c.context_channels, 3) + conv(3, c.context_channels, 3);
    return n;
}

}  // namespace

TEST_CASE("pnm images") {
    TempDir dir("pnm");
    std::mt19937_64 rng(1);

    SUBCASE("P5 and P6 round trips are bit exact") {
        for (int c : {1, 3}) {
            const Image img = random_image(17, 9, c, rng);
            const fs::path p = dir / (c == 3 ? "a.ppm" : "a.pgm");
            write_pnm(p, img);
            const Image back = read_pnm(p);
            CHECK(back.width == 17);
            CHECK(back.height == 9);
            CHECK(back.channels == c);
            CHECK(back.pixels == img.pixels);
            CHECK(text_of(p).rfind(c == 3 ? "P6\n17 9\n255\n" : "P5\n17 9\n255\n", 0) == 0);
        }
    }

    SUBCASE("tensor conversion preserves 8-bit values") {
        const Image img = random_image(8, 5, 3, rng);
        const Tensorf t = to_tensor(img);
        CHECK(t.shape() == Shape{1, 3, 5, 8});
        CHECK(t.at(0, 2, 4, 7) == static_cast<float>(img.pixels.back()) / 255.0f);
        CHECK(to_image(t).pixels == img.pixels);
        Tensorf q = Tensorf::full({1, 1, 1, 4}, 0);
        q.data()[0] = 0.5f;
        q.data()[1] = -0.2f;
        q.data()[2] = 1.7f;
        q.data()[3] = 1.5f / 255;
        CHECK(to_image(q).pixels == std::vector<std::uint8_t>{128, 0, 255, 2});
    }

    SUBCASE("headers with comments are accepted") {
        put_text(dir / "c.pgm", std::string("P5\n# made by hand\n2 1\n255\n") + "\x07\x09");
        CHECK(read_pnm(dir / "c.pgm").pixels == std::vector<std::uint8_t>{7, 9});
    }

    SUBCASE("each defect has its own diagnostic") {
        put_text(dir / "ascii.ppm", "P3\n1 1\n255\n0 0 0\n");
        put_text(dir / "deep.ppm", "P6\n1 1\n65535\n");
        put_text(dir / "short.ppm", "P6\n4 4\n255\nabc");
        put_text(dir / "header.ppm", "P6\n4");
        put_text(dir / "size.ppm", "P6\nfour 4\n255\n");
        const auto ascii = io_error([&] { read_pnm(dir / "ascii.ppm"); });
        const auto deep = io_error([&] { read_pnm(dir / "deep.ppm"); });
        const auto shrt = io_error([&] { read_pnm(dir / "short.ppm"); });
        const auto header = io_error([&] { read_pnm(dir / "header.ppm"); });
        const auto size = io_error([&] { read_pnm(dir / "size.ppm"); });
        const auto missing = io_error([&] { read_pnm(dir / "nope.ppm"); });
        CHECK(ascii.find("unsupported PNM type 'P3'") != std::string::npos);
        CHECK(deep.find("maxval 65535") != std::string::npos);
        CHECK(shrt.find("truncated PNM raster") != std::string::npos);
        CHECK(header.find("truncated PNM header") != std::string::npos);
        CHECK(size.find("width is not a positive integer") != std::string::npos);
        CHECK(missing.find("cannot open") != std::string::npos);
    }
}

TEST_CASE("checkpoints") {
    TempDir dir("ckpt");
    const ArchConfig arch = ArchConfig::desk();
    Pdwn<float> model(arch, 11);
    std::vector<synth::Sample> data;
    synth::DatasetOptions o;
    o.width = o.height = 16;
    for (const auto& s : synth::make_dataset(2, synth::Difficulty::easy, 3, o)) data.push_back(synth::render(s));
    TrainConfig tc;
    tc.steps = 2;
    tc.batch_size = 2;
    Trainer trainer(model, tc, data);
    trainer.run();
    const fs::path a = dir / "a.ckpt", b = dir / "b.ckpt";
    save_checkpoint(a, model, &trainer.optimizer(), trainer.step());

    SUBCASE("save, load, save is byte identical and restores every tensor") {
        Adam<float> opt;
        std::int64_t step = 0;
        const Pdwn<float> loaded = load_model(a, &opt, &step);
        CHECK(step == 2);
        CHECK(opt.step_count() == 2);
        CHECK(opt.first_moments() == trainer.optimizer().first_moments());
        CHECK(opt.second_moments() == trainer.optimizer().second_moments());
        CHECK(opt.parameter_steps() == trainer.optimizer().parameter_steps());
        for (std::size_t i = 0; i < model.parameters().size(); ++i) {
            const auto x = model.parameters().items()[i].tensor.data();
            const auto y = loaded.parameters().items()[i].tensor.data();
            CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
        }
        save_checkpoint(b, loaded, &opt, step);
        CHECK(bytes_of(a) == bytes_of(b));
    }

    SUBCASE("size follows the parameter count") {
        const std::int64_t n = count_params(arch);
        CHECK(n == model.parameters().scalar_count());
        const auto size = static_cast<std::int64_t>(fs::file_size(a));
        // Weights plus two Adam moments, four bytes each, plus names and shapes.
        CHECK(size > 12 * n);
        CHECK(size < 12 * n + 64 * 1024);
        CHECK(size < 10 * 1000 * 1000);
        save_checkpoint(b, model, nullptr, 0);
        CHECK(static_cast<std::int64_t>(fs::file_size(b)) < 4 * n + 64 * 1024);
        CHECK_FALSE(read_checkpoint(b).has_optimizer);
    }

    SUBCASE("defects are reported distinctly") {
        const auto good = bytes_of(a);
        auto bad = good;
        bad[0] = 'X';
        put_bytes(b, bad);
        CHECK(io_error([&] { read_checkpoint(b); }).find("bad magic") != std::string::npos);

        bad = good;
        bad[8] = 7;
        put_bytes(b, bad);
        const auto version = io_error([&] { read_checkpoint(b); });
        CHECK(version.find("version 7") != std::string::npos);
        CHECK(version.find("version 1") != std::string::npos);

        bad.assign(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() / 2));
        put_bytes(b, bad);
        CHECK(io_error([&] { read_checkpoint(b); }).find("truncated checkpoint while reading") != std::string::npos);

        bad = good;
        const std::string name = "head.s1.conv1.w";
        const auto it = std::search(bad.begin(), bad.end(), name.begin(), name.end());
        REQUIRE(it != bad.end());
        *(it + 6) = '9';
        put_bytes(b, bad);
        Pdwn<float> fresh(arch, 0);
        const auto unknown = io_error([&] { apply_checkpoint(read_checkpoint(b), fresh); });
        CHECK(unknown.find("unknown parameter name 'head.s9.conv1.w'") != std::string::npos);

        ArchConfig other = arch;
        other.context_channels = 8;
        Pdwn<float> mismatched(other, 0);
        const auto key = io_error([&] { apply_checkpoint(read_checkpoint(a), mismatched); });
        CHECK(key.find("at key 'context_channels'") != std::string::npos);
    }
}

TEST_CASE("visualizations") {
    TempDir dir("vis");
    SUBCASE("zero offsets are white") {
        const auto v = colorize_offsets(Tensorf::full({1, 2, 4, 5}, 0));
        for (float x : v.rgb.data()) CHECK(x == 1.0f);
        CHECK(v.max_magnitude == 0);
    }
    SUBCASE("a constant field has one colour; normalization changes saturation only") {
        Tensorf f({1, 2, 3, 3});
        for (std::int64_t i = 0; i < 9; ++i) f.data()[static_cast<std::size_t>(9 + i)] = 3.0f;
        const auto full = visualize_offsets(f, dir / "f.ppm");
        CHECK(full.max_magnitude == doctest::Approx(3.0));
        for (int c = 0; c < 3; ++c)
            for (std::int64_t p = 1; p < 9; ++p) CHECK(full.rgb.data()[c * 9 + p] == full.rgb.data()[c * 9]);
        const auto weak = colorize_offsets(f, 6.0);
        // Colours lie on the segment from white towards the wheel colour, so
        // 1 - rgb scales with saturation and keeps its direction.
        std::array<double, 3> d_full{}, d_weak{};
        for (int c = 0; c < 3; ++c) {
            d_full[c] = 1.0 - full.rgb.data()[c * 9];
            d_weak[c] = 1.0 - weak.rgb.data()[c * 9];
        }
        for (int c = 0; c < 3; ++c) CHECK(d_weak[c] == doctest::Approx(0.5 * d_full[c]).epsilon(1e-6));
        CHECK(std::max({d_full[0], d_full[1], d_full[2]}) > 0.5);
        CHECK(text_of(dir / "f.ppm.txt").find("max_magnitude = 3") != std::string::npos);
        CHECK(read_pnm(dir / "f.ppm").channels == 3);
    }
    SUBCASE("opposite directions get distinct hues") {
        Tensorf a = Tensorf::full({1, 2, 1, 1}, 0), b = Tensorf::full({1, 2, 1, 1}, 0);
        a.data()[1] = 1;
        b.data()[1] = -1;
        const auto ca = colorize_offsets(a), cb = colorize_offsets(b);
        double diff = 0;
        for (int c = 0; c < 3; ++c) diff += std::abs(ca.rgb.data()[c] - cb.rgb.data()[c]);
        CHECK(diff > 0.5);
    }
    SUBCASE("alpha maps") {
        visualize_alpha(Tensorf::full({1, 1, 3, 4}, 0.5f), dir / "half.pgm");
        const Image half = read_pnm(dir / "half.pgm");
        CHECK(half.channels == 1);
        for (auto p : half.pixels) CHECK(p == 128);
        Tensorf ramp({1, 1, 16, 16});
        for (int i = 0; i < 256; ++i) ramp.data()[static_cast<std::size_t>(i)] = static_cast<float>(i) / 255.0f;
        visualize_alpha(ramp, dir / "ramp.pgm");
        const Image r = read_pnm(dir / "ramp.pgm");
        for (int i = 0; i < 256; ++i) CHECK(r.pixels[static_cast<std::size_t>(i)] == i);
        visualize_alpha(to_tensor(r), dir / "ramp2.pgm");
        CHECK(bytes_of(dir / "ramp.pgm") == bytes_of(dir / "ramp2.pgm"));
    }
}

TEST_CASE("sample directories") {
    TempDir dir("samples");
    for (int frames : {3, 5}) {
        synth::DatasetOptions o;
        o.width = o.height = 16;
        o.frame_count = frames;
        const auto spec = synth::make_dataset(1, synth::Difficulty::easy, 4, o)[0];
        const synth::Sample s = synth::render(spec);
        const fs::path d = dir / ("s" + std::to_string(frames));
        write_sample_dir(d, s);
        const synth::Sample back = read_sample_dir(d);
        REQUIRE(back.inputs.size() == s.inputs.size());
        CHECK(to_image(back.target).pixels == to_image(s.target).pixels);
        CHECK(to_image(back.inputs.back()).pixels == to_image(s.inputs.back()).pixels);
        CHECK_FALSE(back.flow_to_first.defined());
        CHECK(synth::flip_horizontal(back).target.shape() == back.target.shape());
    }
    CHECK(list_sample_dirs(dir.path).size() == 2);
    fs::create_directories(dir / "broken");
    CHECK(io_error([&] { read_sample_dir(dir / "broken"); }).find("found 0 frames") != std::string::npos);
}

TEST_CASE("command line") {
    TempDir dir("cli");
    const fs::path log = dir / "log.txt";
    const std::string d = dir.path.string();

    const Run synth_run = cli("synth --n 2 --difficulty easy --size 16 --seed 3 --out " + d + "/data", log);
    REQUIRE(synth_run.status == 0);
    CHECK(fs::exists(dir / "data/00001/im3.ppm"));
    CHECK(fs::exists(dir / "data/00001/scene.txt"));

    const Run train = cli("train --data " + d + "/data --out " + d + "/m.ckpt --steps 2 --batch 2 --curve " + d +
                              "/curve.csv",
                          log);
    REQUIRE_MESSAGE(train.status == 0, train.output);
    CHECK(text_of(dir / "curve.csv").rfind("step,phase,loss\n", 0) == 0);

    SUBCASE("interpolate writes one frame of the input size, padding odd sizes") {
        std::mt19937_64 rng(5);
        write_pnm(dir / "f0.ppm", random_image(27, 30, 3, rng));
        write_pnm(dir / "f2.ppm", random_image(27, 30, 3, rng));
        const std::string args = "interpolate --checkpoint " + d + "/m.ckpt --frames " + d + "/f0.ppm " + d +
                                 "/f2.ppm --alpha " + d + "/alpha.pgm --out ";
        const Run r = cli(args + d + "/mid.ppm", log);
        REQUIRE_MESSAGE(r.status == 0, r.output);
        CHECK(r.output.find("pad bottom=2 right=1") != std::string::npos);
        const Image mid = read_pnm(dir / "mid.ppm");
        CHECK(mid.width == 27);
        CHECK(mid.height == 30);
        CHECK(mid.channels == 3);
        CHECK(read_pnm(dir / "alpha.pgm").width == 27);
        REQUIRE(cli(args + d + "/mid2.ppm", log).status == 0);
        CHECK(bytes_of(dir / "mid.ppm") == bytes_of(dir / "mid2.ppm"));
    }

    SUBCASE("four frames on a two-input checkpoint is a usage error") {
        const std::string f = d + "/data/00000/im1.ppm ";
        const Run r = cli("interpolate --checkpoint " + d + "/m.ckpt --frames " + f + f + f + f + "--out " + d + "/x.ppm",
                          log);
        CHECK(r.status == 1);
        CHECK(r.output.find("config mismatch") != std::string::npos);
        CHECK_FALSE(fs::exists(dir / "x.ppm"));
    }

    SUBCASE("eval on planted perfect predictions") {
        for (const auto& s : list_sample_dirs(dir / "data")) fs::copy_file(s / "im2.ppm", s / "pred.ppm");
        const Run r = cli("eval --dir " + d + "/data --csv " + d + "/eval.csv", log);
        REQUIRE_MESSAGE(r.status == 0, r.output);
        CHECK(r.output.find("mean,99,1,0") != std::string::npos);
        CHECK(r.output.find("IE 0.000") != std::string::npos);
        CHECK(r.output.find("SSIM 1.0000") != std::string::npos);
        const Run m = cli("eval --threads 2 --checkpoint " + d + "/m.ckpt --dir " + d + "/data", log);
        CHECK(m.status == 0);
        CHECK(m.output.find("00001,") != std::string::npos);
    }

    SUBCASE("usage errors") {
        const Run unknown = cli("train --frobnicate 3", log);
        CHECK(unknown.status == 1);
        CHECK(unknown.output.find("Usage") != std::string::npos);
        CHECK(cli("", log).status == 1);
        CHECK(cli("eval --dir " + d + "/nowhere", log).status == 1);
        CHECK(cli("--help", log).status == 0);
    }

    SUBCASE("numerical failures exit with status 2") {
        const Run r = cli("train --data " + d + "/data --out " + d + "/bad.ckpt --steps 6 --batch 2 --lr 1e30", log);
        CHECK_MESSAGE(r.status == 2, r.output);
        CHECK(r.output.find("training halted") != std::string::npos);
        CHECK(fs::exists(dir / "bad.ckpt"));
    }

    SUBCASE("gradcheck on a single op") {
        const Run r = cli("gradcheck --op sigmoid", log);
        CHECK_MESSAGE(r.status == 0, r.output);
        CHECK(r.output.find("PASS sigmoid") != std::string::npos);
    }
}
