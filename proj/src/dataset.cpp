#include "cyclelapse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

namespace cyclelapse {

namespace fs = std::filesystem;

namespace {

double percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * double(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - double(lo);
    return v[lo] + (v[hi] - v[lo]) * frac;
}

bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

Instant make_instant(int y, int mo, int d, int h, int mi, int s) {
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{unsigned(mo)}, day{unsigned(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59) throw TimebaseError("invalid calendar value");
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

double sample_bilinear(const Image& img, double x, double y, int c) {
    const double fx0 = std::floor(x), fy0 = std::floor(y);
    const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
    const double ax = x - fx0, ay = y - fy0;
    auto px = [&](int yy, int xx) -> double {
        if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) return 0.0;
        return img.at(yy, xx, c);
    };
    double v = (1.0 - ax) * (1.0 - ay) * px(y0, x0);
    if (ax != 0.0) v += ax * (1.0 - ay) * px(y0, x0 + 1);
    if (ay != 0.0) v += (1.0 - ax) * ay * px(y0 + 1, x0);
    if (ax != 0.0 && ay != 0.0) v += ax * ay * px(y0 + 1, x0 + 1);
    return v;
}

}  // namespace

std::vector<double> DatasetManifest::raw_linear() const {
    std::vector<double> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.timestamp.raw_linear);
    return out;
}

std::vector<Instant> DatasetManifest::instants() const {
    std::vector<Instant> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.timestamp.wall_clock);
    return out;
}

DatasetStats compute_stats(std::span<const Instant> instants) {
    if (instants.size() < 2) throw DatasetError("statistics need at least two frames");
    DatasetStats s;
    s.frame_count = instants.size();
    s.first = instants.front();
    s.last = instants.back();
    s.length_days = double((s.last - s.first).count()) / kSecondsPerDay;
    std::vector<double> hours;
    hours.reserve(instants.size() - 1);
    for (std::size_t i = 1; i < instants.size(); ++i) {
        const auto dt = (instants[i] - instants[i - 1]).count();
        if (dt <= 0) throw DatasetError("frame timestamps must be strictly increasing");
        hours.push_back(double(dt) / 3600.0);
    }
    s.median_sampling_hours = percentile(hours, 0.5);
    s.p95_sampling_hours = percentile(hours, 0.95);
    std::sort(hours.begin(), hours.end(), std::greater<>());
    for (std::size_t i = 0; i < std::min<std::size_t>(3, hours.size()); ++i)
        s.longest_gaps_days.push_back(hours[i] / 24.0);
    return s;
}

std::string format_stats(const DatasetStats& s) {
    char buf[256];
    std::string gaps;
    for (std::size_t i = 0; i < 3; ++i) {
        if (i) gaps += ", ";
        if (i < s.longest_gaps_days.size()) {
            char g[32];
            std::snprintf(g, sizeof g, "%.0f", s.longest_gaps_days[i]);
            gaps += g;
        } else {
            gaps += "-";
        }
    }
    std::snprintf(buf, sizeof buf, "%zu frames, %s - %s, %.0f days, sampling %.2fh / %.2fh, gaps %s",
                  s.frame_count, format_iso8601(s.first).c_str(), format_iso8601(s.last).c_str(),
                  s.length_days, s.median_sampling_hours, s.p95_sampling_hours, gaps.c_str());
    return buf;
}

DatasetManifest build_manifest(std::vector<FrameRecord> frames, std::optional<Resolution> original) {
    if (frames.empty()) throw DatasetError("no frames");
    std::stable_sort(frames.begin(), frames.end(), [](const FrameRecord& a, const FrameRecord& b) {
        return a.timestamp.wall_clock < b.timestamp.wall_clock;
    });
    frames.erase(std::unique(frames.begin(), frames.end(),
                             [](const FrameRecord& a, const FrameRecord& b) {
                                 return a.timestamp.wall_clock == b.timestamp.wall_clock;
                             }),
                 frames.end());
    if (frames.size() < 2) throw DatasetError("need at least two distinct timestamps");

    const Resolution size{frames.front().image.height, frames.front().image.width};
    for (const auto& f : frames) {
        if (f.image.height != size.height || f.image.width != size.width)
            throw DatasetError("frame " + f.source + " has a different size");
    }

    DatasetManifest m;
    std::vector<Instant> instants;
    instants.reserve(frames.size());
    for (const auto& f : frames) instants.push_back(f.timestamp.wall_clock);
    const auto timeline = normalize_timestamps(instants);
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i].timestamp = timeline.stamps[i];
    m.stats = compute_stats(instants);
    m.cycle_config = derive_cycle_config(m.stats.length_days, m.stats.length_days >= kDaysPerYear);
    m.padded = size;
    m.original = original.value_or(size);
    m.frames = std::move(frames);
    return m;
}

std::optional<Instant> parse_filename_timestamp(const fs::path& path) {
    static const std::regex compact(R"((\d{4})(\d{2})(\d{2})_(\d{2})(\d{2})(\d{2}))");
    static const std::regex iso(R"((\d{4})-(\d{2})-(\d{2})T(\d{2})[-:](\d{2})[-:](\d{2}))");
    const std::string stem = path.stem().string();
    std::smatch m;
    if (std::regex_search(stem, m, iso) || std::regex_search(stem, m, compact)) {
        try {
            return make_instant(std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]), std::stoi(m[4]),
                                std::stoi(m[5]), std::stoi(m[6]));
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }
    return std::nullopt;
}

IngestResult ingest_directory(const fs::path& dir, const IngestOptions& options) {
    if (!fs::is_directory(dir)) throw DatasetError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    IngestResult result;
    std::vector<FrameRecord> frames;
    std::optional<Resolution> original;
    for (const auto& file : files) {
        const auto stamp = options.parser(file);
        if (!stamp) {
            result.diagnostics.push_back(file.filename().string() + ": unparsable timestamp");
            continue;
        }
        Image img;
        try {
            img = read_png(file);
        } catch (const ImageError& e) {
            result.diagnostics.push_back(file.filename().string() + ": " + e.what());
            continue;
        }
        if (!original) original = Resolution{img.height, img.width};
        if (img.height != original->height || img.width != original->width) {
            result.diagnostics.push_back(file.filename().string() + ": size differs from first frame");
            continue;
        }
        if (options.pad) img = pad_to_square(img);
        if (options.target_resolution > 0) {
            if (img.height != img.width || img.height % options.target_resolution != 0)
                throw DatasetError("target resolution must divide the padded frame size");
            img = downscale(img, img.height / options.target_resolution);
        }
        frames.push_back({std::move(img), Timestamp{*stamp, 0.0}, fs::relative(file, dir).string()});
    }
    if (frames.empty()) throw DatasetError("no decodable frames in " + dir.string());
    result.manifest = build_manifest(std::move(frames), original);
    return result;
}

void write_manifest(DatasetManifest& manifest, const fs::path& dir, int bit_depth) {
    fs::create_directories(dir / "frames");
    std::ofstream index(dir / kManifestIndexName, std::ios::binary | std::ios::trunc);
    if (!index) throw DatasetError("cannot write manifest in " + dir.string());
    index << kManifestHeader << '\n';
    for (std::size_t i = 0; i < manifest.frames.size(); ++i) {
        auto& f = manifest.frames[i];
        char name[32];
        std::snprintf(name, sizeof name, "frames/%06zu.png", i);
        write_png(dir / name, f.image, bit_depth);
        f.source = name;
        index << name << '\t' << format_iso8601(f.timestamp.wall_clock) << '\n';
    }
    if (!index) throw DatasetError("write failed for manifest index");
}

DatasetManifest load_manifest(const fs::path& index_or_dir) {
    const fs::path index_path =
        fs::is_directory(index_or_dir) ? index_or_dir / kManifestIndexName : index_or_dir;
    std::ifstream in(index_path, std::ios::binary);
    if (!in) throw DatasetError("cannot open manifest " + index_path.string());
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader)
        throw DatasetError("missing manifest header in " + index_path.string());
    const fs::path base = index_path.parent_path();
    std::vector<FrameRecord> frames;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DatasetError("manifest line " + std::to_string(lineno) + " has no tab separator");
        const std::string rel = line.substr(0, tab);
        const Instant t = parse_iso8601(line.substr(tab + 1));
        frames.push_back({read_png(base / rel), Timestamp{t, 0.0}, rel});
    }
    return build_manifest(std::move(frames));
}

// --- Alignment ------------------------------------------------------------------

Point2 AffineTransform4::apply(Point2 p) const {
    const double a = scale * std::cos(rotation), b = scale * std::sin(rotation);
    return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty};
}

AffineTransform4 AffineTransform4::inverse() const {
    if (!(scale > 0.0)) throw DatasetError("transform scale must be positive");
    AffineTransform4 inv;
    inv.scale = 1.0 / scale;
    inv.rotation = -rotation;
    const double a = inv.scale * std::cos(inv.rotation), b = inv.scale * std::sin(inv.rotation);
    inv.tx = -(a * tx - b * ty);
    inv.ty = -(b * tx + a * ty);
    return inv;
}

AffineTransform4 AffineTransform4::compose(const AffineTransform4& other) const {
    AffineTransform4 out;
    out.scale = scale * other.scale;
    out.rotation = std::remainder(rotation + other.rotation, 2.0 * M_PI);
    const Point2 t = apply({other.tx, other.ty});
    out.tx = t.x;
    out.ty = t.y;
    return out;
}

std::array<double, 6> AffineTransform4::matrix() const {
    const double a = scale * std::cos(rotation), b = scale * std::sin(rotation);
    return {a, -b, tx, b, a, ty};
}

AffineFit fit_partial_affine(std::span<const Point2> src, std::span<const Point2> dst) {
    if (src.size() != dst.size()) throw DatasetError("point sets differ in size");
    if (src.size() < 3) throw DatasetError("need at least three point pairs");
    const double n = double(src.size());
    Point2 ms{}, md{};
    for (std::size_t i = 0; i < src.size(); ++i) {
        ms.x += src[i].x / n;
        ms.y += src[i].y / n;
        md.x += dst[i].x / n;
        md.y += dst[i].y / n;
    }
    double sxx = 0, syy = 0, sxy = 0, num_a = 0, num_b = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double x = src[i].x - ms.x, y = src[i].y - ms.y;
        const double u = dst[i].x - md.x, v = dst[i].y - md.y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        num_a += x * u + y * v;
        num_b += x * v - y * u;
    }
    // Smallest eigenvalue of the source scatter matrix measures spread off the best-fit line.
    const double tr = sxx + syy;
    const double det = sxx * syy - sxy * sxy;
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    const double lambda_min = tr / 2.0 - disc;
    if (!(tr > 0.0) || lambda_min <= 1e-12 * tr)
        throw DatasetError("source points are collinear or coincident");

    const double a = num_a / tr, b = num_b / tr;
    AffineFit fit;
    fit.transform.scale = std::hypot(a, b);
    fit.transform.rotation = std::atan2(b, a);
    fit.transform.tx = md.x - (a * ms.x - b * ms.y);
    fit.transform.ty = md.y - (b * ms.x + a * ms.y);
    double sq = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Point2 p{a * src[i].x - b * src[i].y + fit.transform.tx,
                       b * src[i].x + a * src[i].y + fit.transform.ty};
        sq += (p.x - dst[i].x) * (p.x - dst[i].x) + (p.y - dst[i].y) * (p.y - dst[i].y);
    }
    fit.rms_residual = std::sqrt(sq / n);
    return fit;
}

std::vector<Correspondence> read_correspondences(const fs::path& path, double min_confidence) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open correspondences " + path.string());
    std::vector<Correspondence> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        Correspondence c;
        if (!(row >> c.src.x >> c.src.y >> c.dst.x >> c.dst.y >> c.confidence))
            throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": expected 5 numbers");
        if (c.confidence >= min_confidence) out.push_back(c);
    }
    return out;
}

Image warp_image(const Image& img, const AffineTransform4& t) {
    const AffineTransform4 inv = t.inverse();
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const Point2 p = inv.apply({double(x), double(y)});
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(sample_bilinear(img, p.x, p.y, c));
        }
    }
    return out;
}

DatasetManifest apply_alignment(const DatasetManifest& manifest, std::span<const AlignmentSegment> segments) {
    std::vector<AlignmentSegment> sorted(segments.begin(), segments.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const AlignmentSegment& a, const AlignmentSegment& b) { return a.first < b.first; });
    std::size_t expected = 0;
    for (const auto& s : sorted) {
        if (s.last < s.first) throw DatasetError("alignment segment has an empty range");
        if (s.first < expected) throw DatasetError("alignment segments overlap");
        if (s.first > expected) throw DatasetError("alignment segments leave frames uncovered");
        expected = s.last + 1;
    }
    if (expected != manifest.frames.size()) throw DatasetError("alignment segments do not cover the sequence");

    DatasetManifest out = manifest;
    for (const auto& s : sorted)
        for (std::size_t i = s.first; i <= s.last; ++i)
            out.frames[i].image = warp_image(manifest.frames[i].image, s.transform);
    return out;
}

int next_power_of_two(int v) {
    int side = 1;
    while (side < v) side *= 2;
    return side;
}

Image pad_to_square(const Image& img) {
    if (img.height < 1 || img.width < 1) throw ImageError("cannot pad an empty image");
    const int side = next_power_of_two(std::max(img.height, img.width));
    Image out(side, side, 0.0f);
    const int oy = (side - img.height) / 2, ox = (side - img.width) / 2;
    for (int y = 0; y < img.height; ++y)
        std::copy_n(&img.pixels[img.index(y, 0, 0)], std::size_t(img.width) * 3, &out.pixels[out.index(y + oy, ox, 0)]);
    return out;
}

}  // namespace cyclelapse
