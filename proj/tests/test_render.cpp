#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cyclelapse/render.hpp"
#include "cyclelapse/synthetic.hpp"
#include "test_util.hpp"

using namespace cyclelapse;
using cyclelapse::testing::TempDir;

namespace {

Image gray(int h, int w, double v) { return Image(h, w, float(quantize8(float(v))) / 255.0f); }

GeneratorRenderer small_renderer(std::uint64_t seed = 0) {
    GeneratorConfig cfg;
    cfg.latent_dim = 8;
    cfg.resolution = 8;
    cfg.channel_base = 64;
    cfg.channel_max = 16;
    cfg.mapping_depth = 2;
    cfg.cycles = derive_cycle_config(1000.0, true);
    torch::manual_seed(seed);
    Generator g(cfg);
    Rng rng(seed);
    {
        torch::NoGradGuard guard;
        for (auto& layer : g->layers())
            layer->cond_transform.copy_(normal_tensor(rng, layer->cond_transform.sizes()));
    }
    g->eval();
    return GeneratorRenderer(g, cfg.cycles);
}

}  // namespace

TEST(TimelapseImage, ConstantSourceGivesConstantImage) {
    const auto img = render_timelapse_image([](double) { return Image(6, 9, 0.375f); }, 0.0, 1.0, 40);
    EXPECT_EQ(img.height, 6);
    EXPECT_EQ(img.width, 40);
    for (float v : img.pixels) EXPECT_EQ(v, 0.375f);
}

TEST(TimelapseImage, GradientSourceTracksColumnTime) {
    for (int width : {2, 7, 64, 300}) {
        const double t0 = 0.1, t1 = 0.9;
        const auto img = render_timelapse_image([](double t) { return gray(5, 11, t); }, t0, t1, width);
        for (int x = 0; x < width; ++x) {
            const double tx = t0 + double(x) / double(width - 1) * (t1 - t0);
            for (int y = 0; y < img.height; ++y) EXPECT_LE(std::abs(img.at(y, x, 1) - tx), 1.0 / 255.0);
        }
    }
}

TEST(TimelapseImage, ColumnSelection) {
    const FrameSource source = [](double t) {
        Image img(3, 5);
        for (int x = 0; x < 5; ++x)
            for (int y = 0; y < 3; ++y)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = float(t) + float(x);
        return img;
    };
    const auto one = render_timelapse_image(source, 0.25, 0.75, 1);
    ASSERT_EQ(one.width, 1);
    EXPECT_EQ(one.at(0, 0, 0), 0.25f);

    const auto same = render_timelapse_image(source, 0.5, 0.5, 5);
    const auto frame = source(0.5);
    EXPECT_EQ(same, frame);

    const auto wide = render_timelapse_image(source, 0.0, 0.0, 9);
    for (int x = 0; x < 9; ++x) EXPECT_EQ(wide.at(0, x, 0), float(std::lround(x * 4.0 / 8.0)));
}

TEST(TimelapseImage, Errors) {
    const FrameSource source = [](double) { return Image(2, 2); };
    EXPECT_THROW(render_timelapse_image(source, 0.0, 1.0, 0), RenderError);
    EXPECT_THROW(render_timelapse_image(source, 0.0, std::nan(""), 4), RenderError);
    EXPECT_THROW(render_timelapse_image([](double) { return Image(); }, 0.0, 1.0, 4), RenderError);
    int calls = 0;
    EXPECT_THROW(render_timelapse_image([&](double) { return Image(++calls, 2); }, 0.0, 1.0, 4), RenderError);
}

TEST(TimelapseImage, NearestFrameTiesGoEarlier) {
    const std::vector<double> raw{0.0, 0.25, 0.75, 1.0};
    EXPECT_EQ(nearest_frame(raw, -1.0), 0u);
    EXPECT_EQ(nearest_frame(raw, 0.125), 0u);
    EXPECT_EQ(nearest_frame(raw, 0.1251), 1u);
    EXPECT_EQ(nearest_frame(raw, 0.5), 1u);
    EXPECT_EQ(nearest_frame(raw, 0.5001), 2u);
    EXPECT_EQ(nearest_frame(raw, 2.0), 3u);
    EXPECT_THROW(nearest_frame(std::vector<double>{}, 0.0), RenderError);
}

TEST(TimelapseImage, DatasetSource) {
    SyntheticSceneSpec spec;
    spec.image_size = 16;
    spec.length_days = 3;
    spec.frames_per_day = 4;
    const auto data = synthesize_dataset(spec);
    const auto& m = data.manifest;
    const auto img = render_timelapse_image(m, 0.0, 1.0, 16);
    EXPECT_EQ(img.height, 16);
    for (int y = 0; y < 16; ++y) EXPECT_EQ(img.at(y, 0, 2), m.frames.front().image.at(y, 0, 2));
    for (int y = 0; y < 16; ++y) EXPECT_EQ(img.at(y, 15, 2), m.frames.back().image.at(y, 15, 2));
    EXPECT_THROW(render_timelapse_image(m, -0.1, 1.0, 16), RenderError);
    EXPECT_THROW(render_timelapse_image(m, 0.0, 1.5, 16), RenderError);
    EXPECT_THROW(render_timelapse_image(DatasetManifest{}, 0.0, 1.0, 16), RenderError);
}

TEST(Latent, ParsePca) {
    const auto p = LatentSpec::parse_pca("0:1.5,3:-2");
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p[0], std::make_pair(0, 1.5));
    EXPECT_EQ(p[1], std::make_pair(3, -2.0));
    EXPECT_TRUE(LatentSpec::parse_pca("").empty());
    for (const char* bad : {"1", "a:1", "1:b", "-1:2", "1:2x", "1:nan", "1:2,,"})
        EXPECT_THROW(LatentSpec::parse_pca(bad), RenderError) << bad;
}

TEST(Latent, TripletOverrides) {
    TripletOverrides o;
    o.year = 0.25;
    EXPECT_EQ(o.apply(0.5), (TimeTriplet{0.5, 0.25, 0.5}));
}

TEST(GeneratorRendering, DeterministicAndSeedSensitive) {
    const auto r = small_renderer();
    const TimeTriplet t{0.3, 0.6, 0.2};
    LatentSpec spec;
    spec.seed = 4;
    const auto a = r.render(t, spec);
    EXPECT_EQ(a.height, 8);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(r.render(t, spec), a);
    spec.seed = 5;
    EXPECT_NE(r.render(t, spec), a);
}

TEST(GeneratorRendering, ExplicitLatent) {
    const auto r = small_renderer();
    LatentSpec spec;
    spec.seed = 11;
    const auto z = r.latent(spec);
    LatentSpec explicit_z;
    explicit_z.seed = 99;
    explicit_z.z = std::vector<float>(z.data_ptr<float>(), z.data_ptr<float>() + z.numel());
    EXPECT_EQ(r.render({0.1, 0.2, 0.3}, spec), r.render({0.1, 0.2, 0.3}, explicit_z));
    explicit_z.z->pop_back();
    EXPECT_THROW(r.render({0.1, 0.2, 0.3}, explicit_z), RenderError);
    EXPECT_THROW(r.render({0.1, std::nan(""), 0.3}, spec), RenderError);
}

TEST(GeneratorRendering, PcaOffsets) {
    const auto plain = small_renderer();
    LatentSpec spec;
    spec.pca_offsets = {{0, 0.0}};
    EXPECT_EQ(plain.render({0.1, 0.2, 0.3}, spec), plain.render({0.1, 0.2, 0.3}, LatentSpec{}));
    spec.pca_offsets = {{0, 1.0}};
    EXPECT_THROW(plain.render({0.1, 0.2, 0.3}, spec), RenderError);
}

TEST(SweepGrid, CellsMatchIndependentRenders) {
    const auto r = small_renderer();
    const SweepAxis days{SweepInput::day, {0.0, 0.25, 0.5}};
    const SweepAxis seeds{SweepInput::seed, {1, 2}};
    const TimeTriplet fixed{0.0, 0.4, 0.7};
    const auto grid = render_sweep_grid(r, days, seeds, fixed, LatentSpec{});
    ASSERT_EQ(grid.rows, 3);
    ASSERT_EQ(grid.cols, 2);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            LatentSpec l;
            l.seed = std::uint64_t(seeds.values[std::size_t(j)]);
            EXPECT_EQ(grid.cells[std::size_t(i * 2 + j)], r.render({days.values[std::size_t(i)], 0.4, 0.7}, l));
        }
    const auto m = grid.montage();
    EXPECT_EQ(m.height, 24);
    EXPECT_EQ(m.width, 16);
    EXPECT_EQ(m.at(8 + 3, 8 + 5, 1), grid.cells[3].at(3, 5, 1));
}

TEST(SweepGrid, SingleCellEqualsRender) {
    const auto r = small_renderer();
    const auto grid =
        render_sweep_grid(r, {SweepInput::trend, {0.3}}, {SweepInput::year, {0.8}}, {0.6, 0.0, 0.0}, LatentSpec{});
    ASSERT_EQ(grid.cells.size(), 1u);
    EXPECT_EQ(grid.cells[0], r.render({0.6, 0.8, 0.3}, LatentSpec{}));
    EXPECT_EQ(grid.montage(), grid.cells[0]);
}

TEST(SweepGrid, Errors) {
    const auto r = small_renderer();
    EXPECT_THROW(render_sweep_grid(r, {SweepInput::day, {0.1}}, {SweepInput::day, {0.2}}, {}, {}), RenderError);
    EXPECT_THROW(render_sweep_grid(r, {SweepInput::day, {}}, {SweepInput::year, {0.2}}, {}, {}), RenderError);
    EXPECT_THROW(render_sweep_grid(r, {SweepInput::seed, {1.5}}, {SweepInput::year, {0.2}}, {}, {}), RenderError);
    EXPECT_THROW(render_sweep_grid(r, {SweepInput::seed, {-1}}, {SweepInput::year, {0.2}}, {}, {}), RenderError);
    EXPECT_EQ(parse_sweep_input("td"), SweepInput::day);
    EXPECT_EQ(parse_sweep_input("trend"), SweepInput::trend);
    EXPECT_THROW(parse_sweep_input("hour"), RenderError);
}

TEST(Schedule, JsonRoundTrip) {
    RenderSchedule s;
    s.latent.seed = 7;
    s.latent.noise_seed = 8;
    s.latent.pca_offsets = {{1, 0.1}, {2, -3.0}};
    s.latent.z = std::vector<float>{0.5f, -1.25f};
    s.frames = {{0.1, 1.0 / 3.0, 0.7}, {1e-17, 0.0, 1.0}};
    const auto back = RenderSchedule::from_json(s.to_json());
    EXPECT_EQ(back.frames, s.frames);
    EXPECT_EQ(back.latent.seed, 7u);
    EXPECT_EQ(back.latent.noise_seed, 8u);
    EXPECT_EQ(back.latent.pca_offsets, s.latent.pca_offsets);
    EXPECT_EQ(back.latent.z, s.latent.z);
}

TEST(Schedule, RejectsMalformed) {
    EXPECT_THROW(RenderSchedule::from_json("{"), RenderError);
    EXPECT_THROW(RenderSchedule::from_json(R"({"format": "other", "frames": []})"), RenderError);
    EXPECT_THROW(RenderSchedule::from_json(R"({"format": "cyclelapse-schedule v1", "frames": [{"td": 0}]})"),
                 RenderError);
    RenderSchedule s;
    s.frames = {{0.0, std::numeric_limits<double>::infinity(), 0.0}};
    EXPECT_THROW(s.validate(), RenderError);
    TempDir dir;
    EXPECT_THROW(RenderSchedule::load(dir / "missing.json"), RenderError);
}

TEST(Schedule, Supersampling) {
    RenderSchedule s;
    s.frames = {{0.0, 0.0, 0.0}, {1.0, 0.5, 0.25}, {0.0, 0.0, 0.0}};
    EXPECT_EQ(s.supersampled(1).frames, s.frames);
    const auto x = s.supersampled(4);
    ASSERT_EQ(x.frames.size(), 9u);
    EXPECT_EQ(x.frames[0], s.frames[0]);
    EXPECT_EQ(x.frames[4], s.frames[1]);
    EXPECT_EQ(x.frames[8], s.frames[2]);
    EXPECT_EQ(x.frames[1], (TimeTriplet{0.25, 0.125, 0.0625}));
    EXPECT_THROW(s.supersampled(0), RenderError);
    EXPECT_TRUE(RenderSchedule{}.supersampled(3).frames.empty());
}

TEST(Sequence, EmptyScheduleWritesOnlyIndex) {
    TempDir dir;
    export_sequence(small_renderer(), RenderSchedule{}, dir / "seq");
    std::ifstream in(dir / "seq" / kSequenceIndexName);
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, kSequenceHeader);
    EXPECT_FALSE(std::getline(in, line));
    EXPECT_FALSE(std::filesystem::exists(dir / "seq" / "frame_000000.png"));
}

TEST(Sequence, IdenticalTripletsGiveIdenticalFiles) {
    TempDir dir;
    RenderSchedule s;
    s.frames.assign(10, {0.3, 0.4, 0.5});
    export_sequence(small_renderer(), s, dir.path());
    const auto first = read_png(dir / "frame_000000.png");
    for (int i = 1; i < 10; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%06d.png", i);
        EXPECT_EQ(read_png(dir / name), first);
    }
}

TEST(Sequence, ExportMatchesRendersAndIndex) {
    TempDir dir;
    const auto r = small_renderer();
    RenderSchedule s;
    s.latent.seed = 3;
    s.frames = {{0.0, 0.1, 0.2}, {1.0 / 3.0, 0.5, 0.9}};
    export_sequence(r, s, dir.path());
    EXPECT_EQ(read_png(dir / "frame_000001.png"), quantized(r.render(s.frames[1], s.latent)));
    std::ifstream in(dir / kSequenceIndexName);
    std::string header, name;
    std::getline(in, header);
    double td, ty, tg;
    in >> name >> td >> ty >> tg;
    in >> name >> td >> ty >> tg;
    EXPECT_EQ(name, "frame_000001.png");
    EXPECT_EQ(td, 1.0 / 3.0);
    EXPECT_EQ(tg, 0.9);
}

TEST(Sequence, ScheduleFileDrivesExport) {
    TempDir dir;
    RenderSchedule s;
    s.frames = {{0.2, 0.2, 0.2}};
    {
        std::ofstream out(dir / "schedule.json");
        out << s.to_json();
    }
    const auto loaded = RenderSchedule::load(dir / "schedule.json");
    EXPECT_EQ(loaded.frames, s.frames);
}
