#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "cyclelapse/dataset.hpp"
#include "test_util.hpp"

using namespace cyclelapse;
using namespace std::chrono;
using cyclelapse::testing::TempDir;

namespace {

const Instant d0 = sys_days{year{2014} / 6 / 1};

Image random_image(Rng& rng, int h, int w) {
    Image img(h, w);
    for (auto& v : img.pixels) v = float(rng.uniform());
    return img;
}

std::string stamp_name(Instant t) {
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[64];
    std::snprintf(buf, sizeof buf, "cam_%04d%02u%02u_%02ld%02ld%02ld.png", int(ymd.year()), unsigned(ymd.month()),
                  unsigned(ymd.day()), long(hms.hours().count()), long(hms.minutes().count()),
                  long(hms.seconds().count()));
    return buf;
}

AffineTransform4 random_transform(Rng& rng) {
    return {0.2 + 3.0 * rng.uniform(), (rng.uniform() * 2 - 1) * std::numbers::pi, (rng.uniform() * 2 - 1) * 50,
            (rng.uniform() * 2 - 1) * 50};
}

}  // namespace

// --- Statistics ------------------------------------------------------------------

TEST(DatasetStats, UniformHourly) {
    const std::vector<Instant> t{d0, d0 + hours(1), d0 + hours(2)};
    const auto s = compute_stats(t);
    EXPECT_EQ(s.frame_count, 3u);
    EXPECT_DOUBLE_EQ(s.median_sampling_hours, 1.0);
    EXPECT_DOUBLE_EQ(s.p95_sampling_hours, 1.0);
    ASSERT_EQ(s.longest_gaps_days.size(), 2u);
    EXPECT_DOUBLE_EQ(s.longest_gaps_days[0], 1.0 / 24);
    EXPECT_DOUBLE_EQ(s.longest_gaps_days[1], 1.0 / 24);
}

TEST(DatasetStats, LongestGap) {
    const std::vector<Instant> t{d0, d0 + minutes(30), d0 + minutes(48 * 60 + 30)};
    EXPECT_DOUBLE_EQ(compute_stats(t).longest_gaps_days.front(), 2.0);
}

TEST(DatasetStats, BarnShapedReport) {
    DatasetStats s;
    s.frame_count = 63806;
    s.first = d0;
    s.last = d0 + days(1729);
    s.length_days = 1729;
    s.median_sampling_hours = 0.50;
    s.p95_sampling_hours = 0.98;
    s.longest_gaps_days = {32, 18, 13};
    const auto text = format_stats(s);
    EXPECT_NE(text.find("63806 frames"), std::string::npos) << text;
    EXPECT_NE(text.find("1729 days"), std::string::npos) << text;
    EXPECT_NE(text.find("sampling 0.50h / 0.98h"), std::string::npos) << text;
    EXPECT_NE(text.find("gaps 32, 18, 13"), std::string::npos) << text;
}

TEST(DatasetStats, RejectsNonIncreasing) {
    const std::vector<Instant> t{d0, d0};
    EXPECT_THROW(compute_stats(t), DatasetError);
}

// --- Manifest ----------------------------------------------------------------------

TEST(Manifest, BuildSortsAndDropsDuplicates) {
    std::vector<FrameRecord> frames;
    frames.push_back({Image(4, 4, 0.2f), {d0 + hours(2), 0}, "b"});
    frames.push_back({Image(4, 4, 0.1f), {d0, 0}, "a"});
    frames.push_back({Image(4, 4, 0.3f), {d0 + hours(2), 0}, "b-dup"});
    const auto m = build_manifest(std::move(frames));
    ASSERT_EQ(m.frames.size(), 2u);
    EXPECT_EQ(m.frames[0].source, "a");
    EXPECT_EQ(m.frames[1].source, "b");
    EXPECT_EQ(m.raw_linear(), (std::vector<double>{0.0, 1.0}));
    EXPECT_FALSE(m.cycle_config.year_enabled);
}

TEST(Manifest, YearCycleFollowsSpan) {
    std::vector<FrameRecord> frames;
    frames.push_back({Image(2, 2), {d0, 0}, "a"});
    frames.push_back({Image(2, 2), {d0 + days(400), 0}, "b"});
    const auto m = build_manifest(std::move(frames));
    EXPECT_TRUE(m.cycle_config.year_enabled);
    EXPECT_EQ(m.cycle_config.day_frequency, 400.0);
}

TEST(Manifest, FilenameTimestamps) {
    EXPECT_EQ(parse_filename_timestamp("x/cam_20140601_013000.png"), d0 + minutes(90));
    EXPECT_EQ(parse_filename_timestamp("2014-06-01T01-30-00.jpg"), d0 + minutes(90));
    EXPECT_EQ(parse_filename_timestamp("2014-06-01T01:30:00.jpg"), d0 + minutes(90));
    EXPECT_FALSE(parse_filename_timestamp("notes.png"));
    EXPECT_FALSE(parse_filename_timestamp("cam_20141301_000000.png"));
}

TEST(Manifest, IngestReportsBadFilesAndContinues) {
    TempDir dir;
    Rng rng(1);
    const std::vector<Instant> times{d0, d0 + hours(1), d0 + hours(3)};
    for (auto t : times) write_png(dir / stamp_name(t), random_image(rng, 6, 10));
    write_png(dir / "undated.png", random_image(rng, 6, 10));
    std::ofstream(dir / stamp_name(d0 + hours(5))) << "not an image";

    const auto r = ingest_directory(dir.path());
    EXPECT_EQ(r.manifest.frames.size(), 3u);
    EXPECT_EQ(r.diagnostics.size(), 2u);
    EXPECT_EQ(r.manifest.original, (Resolution{6, 10}));
    EXPECT_EQ(r.manifest.padded, (Resolution{16, 16}));
    EXPECT_DOUBLE_EQ(r.manifest.stats.median_sampling_hours, 1.5);
}

TEST(Manifest, IngestErrors) {
    TempDir dir;
    EXPECT_THROW(ingest_directory(dir.path()), DatasetError);
    EXPECT_THROW(ingest_directory(dir / "missing"), DatasetError);
    write_png(dir / stamp_name(d0), Image(4, 4));
    EXPECT_THROW(ingest_directory(dir.path()), DatasetError);
}

TEST(Manifest, ExportReingestIsFixedPoint) {
    TempDir src, out;
    Rng rng(2);
    Instant t = d0;
    for (int i = 0; i < 12; ++i) {
        t += minutes(10 + rng.index(500));
        write_png(src / stamp_name(t), random_image(rng, 8, 8));
    }
    auto first = ingest_directory(src.path()).manifest;
    write_manifest(first, out.path());
    const auto second = load_manifest(out.path());
    EXPECT_EQ(second.stats, first.stats);
    EXPECT_EQ(second.raw_linear(), first.raw_linear());
    for (std::size_t i = 0; i < first.frames.size(); ++i) EXPECT_EQ(second.frames[i].image, first.frames[i].image);

    std::ifstream index(out / kManifestIndexName);
    std::string header;
    std::getline(index, header);
    EXPECT_EQ(header, "cyclelapse-manifest v1");
    std::string line;
    std::getline(index, line);
    EXPECT_EQ(line, "frames/000000.png\t" + format_iso8601(first.frames[0].timestamp.wall_clock));
}

// --- Alignment ---------------------------------------------------------------------

TEST(PartialAffine, IdentityFit) {
    const std::vector<Point2> p{{0, 0}, {3, 1}, {1, 4}, {-2, 2}};
    const auto fit = fit_partial_affine(p, p);
    EXPECT_NEAR(fit.transform.scale, 1.0, 1e-12);
    EXPECT_NEAR(fit.transform.rotation, 0.0, 1e-12);
    EXPECT_NEAR(fit.transform.tx, 0.0, 1e-12);
    EXPECT_NEAR(fit.transform.ty, 0.0, 1e-12);
    EXPECT_NEAR(fit.rms_residual, 0.0, 1e-12);
}

TEST(PartialAffine, PureShift) {
    const std::vector<Point2> src{{0, 0}, {3, 1}, {1, 4}};
    std::vector<Point2> dst;
    for (auto p : src) dst.push_back({p.x + 1, p.y + 2});
    const auto fit = fit_partial_affine(src, dst);
    EXPECT_NEAR(fit.transform.tx, 1.0, 1e-12);
    EXPECT_NEAR(fit.transform.ty, 2.0, 1e-12);
    EXPECT_NEAR(fit.transform.scale, 1.0, 1e-12);
    EXPECT_NEAR(fit.transform.rotation, 0.0, 1e-12);
}

TEST(PartialAffine, RecoversKnownTransform) {
    const AffineTransform4 t{2.0, std::numbers::pi / 2, 3.0, -1.0};
    const std::vector<Point2> src{{1, 0}, {0, 1}, {1, 1}};
    std::vector<Point2> dst;
    for (auto p : src) dst.push_back(t.apply(p));
    EXPECT_NEAR(dst[0].x, 3.0, 1e-12);
    EXPECT_NEAR(dst[0].y, 1.0, 1e-12);
    const auto fit = fit_partial_affine(src, dst);
    EXPECT_NEAR(fit.transform.scale, 2.0, 1e-6);
    EXPECT_NEAR(fit.transform.rotation, std::numbers::pi / 2, 1e-6);
    EXPECT_NEAR(fit.transform.tx, 3.0, 1e-6);
    EXPECT_NEAR(fit.transform.ty, -1.0, 1e-6);
    EXPECT_LT(fit.rms_residual, 1e-9);
}

TEST(PartialAffine, Errors) {
    const std::vector<Point2> two{{0, 0}, {1, 1}};
    EXPECT_THROW(fit_partial_affine(two, two), DatasetError);
    const std::vector<Point2> line{{0, 0}, {1, 1}, {2, 2}};
    EXPECT_THROW(fit_partial_affine(line, line), DatasetError);
    const std::vector<Point2> three{{0, 0}, {1, 0}, {0, 1}};
    EXPECT_THROW(fit_partial_affine(three, two), DatasetError);
}

TEST(PartialAffine, ResidualInvariantToRigidMotion) {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Point2> src, dst;
        for (int i = 0; i < 6; ++i) {
            src.push_back({rng.normal() * 10, rng.normal() * 10});
            dst.push_back({rng.normal() * 10, rng.normal() * 10});
        }
        AffineTransform4 rigid = random_transform(rng);
        rigid.scale = 1.0;
        std::vector<Point2> src2, dst2;
        for (auto p : src) src2.push_back(rigid.apply(p));
        for (auto p : dst) dst2.push_back(rigid.apply(p));
        EXPECT_NEAR(fit_partial_affine(src, dst).rms_residual, fit_partial_affine(src2, dst2).rms_residual, 1e-9);
    }
}

TEST(PartialAffine, ComposeAndInverse) {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = random_transform(rng), b = random_transform(rng);
        const Point2 p{rng.normal(), rng.normal()};
        const auto ab = a.compose(b).apply(p), direct = a.apply(b.apply(p));
        EXPECT_NEAR(ab.x, direct.x, 1e-9);
        EXPECT_NEAR(ab.y, direct.y, 1e-9);
        const auto back = a.inverse().apply(a.apply(p));
        EXPECT_NEAR(back.x, p.x, 1e-9);
        EXPECT_NEAR(back.y, p.y, 1e-9);
    }
}

TEST(PartialAffine, CorrespondenceImportFiltersConfidence) {
    TempDir dir;
    std::ofstream(dir / "c.txt") << "# matches\n0 0 1 1 0.9\n1 0 2 1 0.49\n0 1 1 2 0.5\n";
    const auto c = read_correspondences(dir / "c.txt");
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c[1].src.y, 1.0);
    std::ofstream(dir / "bad.txt") << "0 0 1\n";
    EXPECT_THROW(read_correspondences(dir / "bad.txt"), DatasetError);
}

namespace {

DatasetManifest manifest_of(std::vector<Image> images) {
    std::vector<FrameRecord> frames;
    for (std::size_t i = 0; i < images.size(); ++i)
        frames.push_back({std::move(images[i]), {d0 + hours(long(i)), 0}, std::to_string(i)});
    return build_manifest(std::move(frames));
}

}  // namespace

TEST(Alignment, IdentityIsBitExact) {
    Rng rng(3);
    const auto m = manifest_of({random_image(rng, 9, 7), random_image(rng, 9, 7), random_image(rng, 9, 7)});
    const std::vector<AlignmentSegment> seg{{0, 2, {}}};
    const auto out = apply_alignment(m, seg);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.frames[i].image, m.frames[i].image);
}

TEST(Alignment, IntegerShiftOfConstantImage) {
    const auto m = manifest_of({Image(10, 10, 0.4f), Image(10, 10, 0.4f)});
    const std::vector<AlignmentSegment> seg{{0, 0, {1, 0, 2, 0}}, {1, 1, {1, 0, -1, 3}}};
    const auto out = apply_alignment(m, seg);
    for (int y = 3; y < 8; ++y)
        for (int x = 2; x < 8; ++x) EXPECT_EQ(out.frames[1].image.at(y, x, 0), 0.4f);
    EXPECT_EQ(out.frames[0].image.at(5, 0, 0), 0.0f);
    EXPECT_EQ(out.frames[0].image.at(5, 5, 0), 0.4f);
}

TEST(Alignment, DeltaRelocation) {
    Image delta(16, 16);
    delta.at(4, 5, 1) = 1.0f;
    const AffineTransform4 t{1.0, std::numbers::pi / 2, 12.0, 0.0};
    const auto out = warp_image(delta, t);
    const auto target = t.apply({5, 4});
    EXPECT_NEAR(out.at(int(std::lround(target.y)), int(std::lround(target.x)), 1), 1.0f, 1e-6);
    float total = 0.0f;
    for (float v : out.pixels) total += v;
    EXPECT_NEAR(total, 1.0f, 1e-6);

    const auto half = warp_image(delta, {1.0, 0.0, 0.5, 0.0});
    EXPECT_NEAR(half.at(4, 5, 1), 0.5f, 1e-6);
    EXPECT_NEAR(half.at(4, 6, 1), 0.5f, 1e-6);
}

TEST(Alignment, SegmentsMustPartition) {
    const auto m = manifest_of({Image(4, 4), Image(4, 4), Image(4, 4)});
    const std::vector<AlignmentSegment> overlap{{0, 1, {}}, {1, 2, {}}};
    EXPECT_THROW(apply_alignment(m, overlap), DatasetError);
    const std::vector<AlignmentSegment> hole{{0, 0, {}}, {2, 2, {}}};
    EXPECT_THROW(apply_alignment(m, hole), DatasetError);
    const std::vector<AlignmentSegment> short_cover{{0, 1, {}}};
    EXPECT_THROW(apply_alignment(m, short_cover), DatasetError);
}

// --- Padding and images ------------------------------------------------------------

TEST(Padding, PaperResolutions) {
    EXPECT_EQ(pad_to_square(Image(646, 1024)).height, 1024);
    EXPECT_EQ(pad_to_square(Image(646, 1024)).width, 1024);
    EXPECT_EQ(pad_to_square(Image(358, 512)).width, 512);
    EXPECT_EQ(pad_to_square(Image(400, 600)).width, 1024);
    EXPECT_EQ(pad_to_square(Image(1, 1)).width, 1);
    EXPECT_THROW(pad_to_square(Image()), ImageError);
}

TEST(Padding, CenteredAndPreservesContent) {
    Rng rng(4);
    const Image img = random_image(rng, 5, 11);
    const Image out = pad_to_square(img);
    ASSERT_EQ(out.width, 16);
    std::vector<float> kept, original = img.pixels;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const bool inside = y >= 5 && y < 10 && x >= 2 && x < 13;
            for (int c = 0; c < 3; ++c) {
                if (inside) kept.push_back(out.at(y, x, c));
                else EXPECT_EQ(out.at(y, x, c), 0.0f);
            }
        }
    std::sort(kept.begin(), kept.end());
    std::sort(original.begin(), original.end());
    EXPECT_EQ(kept, original);
}

TEST(Images, Quantization) {
    EXPECT_EQ(quantize8(0.0f), 0);
    EXPECT_EQ(quantize8(1.0f), 255);
    EXPECT_EQ(quantize8(-3.0f), 0);
    EXPECT_EQ(quantize8(7.0f), 255);
    EXPECT_EQ(quantize8(0.5f / 255.0f), 1);
}

TEST(Images, PngRoundTrip) {
    TempDir dir;
    Rng rng(5);
    const Image img = quantized(random_image(rng, 7, 5));
    write_png(dir / "a.png", img);
    EXPECT_EQ(read_png(dir / "a.png"), img);
    const auto bytes = encode_png(img);
    EXPECT_EQ(decode_png(bytes), img);

    const Image wide = random_image(rng, 4, 4);
    write_png(dir / "b.png", wide, 16);
    const Image back = read_png(dir / "b.png");
    for (std::size_t i = 0; i < wide.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], wide.pixels[i], 0.5 / 65535 + 1e-7);
    EXPECT_THROW(write_png(dir / "c.png", wide, 12), ImageError);
}

TEST(Images, Downscale) {
    Image img(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = float(y * 4 + x);
    const Image out = downscale(img, 2);
    EXPECT_EQ(out.at(0, 0, 0), 2.5f);
    EXPECT_EQ(out.at(1, 1, 2), 12.5f);
    EXPECT_THROW(downscale(img, 3), ImageError);
}
