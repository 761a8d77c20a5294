#include "cyclelapse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "cyclelapse/random.hpp"

namespace cyclelapse {

namespace {

using Rgb = std::array<double, 3>;

constexpr double kAmbient = 0.3;
constexpr double kTintMean = 0.6;
constexpr Rgb kClearSky{0.25, 0.55, 1.0};
constexpr Rgb kOvercastSky{0.6, 0.6, 0.6};
constexpr Rgb kGrass{0.15, 0.5, 0.15};
constexpr Rgb kSnow{0.95, 0.95, 0.95};
constexpr Rgb kTree{0.45, 0.2, 0.05};

double fract(double v) { return v - std::floor(v); }
double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Rgb mix(const Rgb& a, const Rgb& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

double channel_std(const Rgb& c) {
    const double m = (c[0] + c[1] + c[2]) / 3.0;
    return std::sqrt(((c[0] - m) * (c[0] - m) + (c[1] - m) * (c[1] - m) + (c[2] - m) * (c[2] - m)) / 3.0);
}

const double kClearChroma = channel_std(kClearSky) / kTintMean;

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

void SyntheticSceneSpec::validate() const {
    if (image_size < 8 || (image_size & (image_size - 1)) != 0)
        throw DatasetError("synthetic image size must be a power of two >= 8");
    if (!(length_days > 0.0)) throw DatasetError("synthetic length must be positive");
    if (frames_per_day < 1) throw DatasetError("frames_per_day must be >= 1");
    if (!(weather_autocorrelation >= 0.0 && weather_autocorrelation < 1.0))
        throw DatasetError("weather autocorrelation must lie in [0, 1)");
    if (!(sun_amplitude >= 0.0)) throw DatasetError("sun amplitude must be non-negative");
    for (const auto& g : gaps)
        if (!(g.end_day > g.start_day)) throw DatasetError("gap interval is empty or reversed");
}

SceneModel::SceneModel(const SyntheticSceneSpec& spec) : spec_(spec) {
    spec_.validate();
    const int s = spec_.image_size;
    tree_x0_ = s * 5 / 8;
    tree_x1_ = tree_x0_ + std::max(1, s / 8);
    tree_max_height_ = double(s / 2 - s / 8);
}

double SceneModel::sky_luminance(double day_phase, double weather) const {
    const double sun = std::max(0.0, std::sin(std::numbers::pi * clamp01((day_phase - 0.25) / 0.5)));
    return spec_.sun_amplitude * sun * (1.0 - kOvercastDimming * weather);
}

double SceneModel::snow_amount(double year_phase) const {
    double width = fract(spec_.snow_band_end - spec_.snow_band_start);
    if (width == 0.0) return 0.0;
    const double u = fract(year_phase - spec_.snow_band_start) / width;
    return u < 1.0 ? std::sin(std::numbers::pi * u) : 0.0;
}

SceneFactors SceneModel::factors_at(std::int64_t seconds, double weather) const {
    SceneFactors f;
    f.day_phase = double(seconds % 86400) / kSecondsPerDay;
    const double days = double(seconds) / kSecondsPerDay;
    f.year_phase = fract(spec_.year_phase_offset + days / kDaysPerYear);
    f.trend = clamp01(spec_.trend_growth_rate * days / spec_.length_days);
    f.weather = weather;
    return f;
}

SceneFactors SceneModel::factors_for(const TimeTriplet& t, double z0) const {
    SceneFactors f;
    f.day_phase = fract(t.day * spec_.length_days);
    f.year_phase = fract(spec_.year_phase_offset + t.year * spec_.length_days / kDaysPerYear);
    f.trend = clamp01(spec_.trend_growth_rate * t.trend);
    f.weather = normal_cdf(z0);
    return f;
}

Image SceneModel::render(const SceneFactors& f) const {
    const int s = spec_.image_size, h = horizon();
    Image img(s, s);
    const double lum = sky_luminance(f.day_phase, f.weather);
    const Rgb tint = mix(kClearSky, kOvercastSky, f.weather);
    const double brightness = kAmbient + (1.0 - kAmbient) * lum;
    const Rgb ground = mix(kGrass, kSnow, snow_amount(f.year_phase));
    const double tree_height = f.trend * tree_max_height_;
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            Rgb px;
            if (y < h) {
                px = {tint[0] * brightness, tint[1] * brightness, tint[2] * brightness};
            } else {
                px = ground;
                if (x >= tree_x0_ && x < tree_x1_) {
                    const double from_bottom = double(s - 1 - y);
                    px = mix(ground, kTree, clamp01(tree_height - from_bottom));
                }
            }
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(px[c]);
        }
    }
    return img;
}

ProxyValues SceneModel::measure(const Image& img) const {
    const int s = spec_.image_size, h = horizon();
    if (img.height != s || img.width != s) throw DatasetError("proxy input has the wrong size");

    Rgb sky{0, 0, 0};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < s; ++x)
            for (int c = 0; c < 3; ++c) sky[c] += img.at(y, x, c);
    for (auto& v : sky) v /= double(h * s);
    const double sky_mean = (sky[0] + sky[1] + sky[2]) / 3.0;
    const double luminance = (sky_mean / kTintMean - kAmbient) / (1.0 - kAmbient);
    const double chroma = sky_mean > 1e-6 ? channel_std(sky) / sky_mean : 0.0;
    const double weather = 1.0 - chroma / kClearChroma;

    double snow = 0.0;
    int count = 0;
    std::vector<Rgb> row_ground(static_cast<std::size_t>(s), Rgb{0, 0, 0});
    for (int y = h; y < s; ++y) {
        int row_count = 0;
        for (int x = 0; x < s; ++x) {
            if (x >= tree_x0_ && x < tree_x1_) continue;
            const double m = std::min({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
            snow += (m - kGrass[0]) / (kSnow[0] - kGrass[0]);
            ++count;
            for (int c = 0; c < 3; ++c) row_ground[y][c] += img.at(y, x, c);
            ++row_count;
        }
        for (auto& v : row_ground[y]) v /= double(row_count);
    }
    snow /= double(count);

    double occupied = 0.0;
    for (int x = tree_x0_; x < tree_x1_; ++x) {
        for (int y = h; y < s; ++y) {
            const Rgb& ref = row_ground[y];
            double num = 0.0, den = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = kTree[c] - ref[c];
                num += (img.at(y, x, c) - ref[c]) * d;
                den += d * d;
            }
            occupied += den > 1e-12 ? clamp01(num / den) : 0.0;
        }
    }
    const double trend = occupied / double(tree_x1_ - tree_x0_) / tree_max_height_;
    return {luminance, snow, trend, weather};
}

SyntheticDataset synthesize_dataset(const SyntheticSceneSpec& spec) {
    const SceneModel scene(spec);
    const double rho = spec.weather_autocorrelation;
    const double innovation = std::sqrt(1.0 - rho * rho);
    const auto total_seconds = static_cast<std::int64_t>(std::llround(spec.length_days * kSecondsPerDay));
    const double step = kSecondsPerDay / spec.frames_per_day;

    Rng rng(spec.seed);
    SyntheticDataset out;
    std::vector<FrameRecord> frames;
    double g = rng.normal();
    for (std::int64_t k = 0;; ++k) {
        const auto secs = static_cast<std::int64_t>(std::llround(double(k) * step));
        if (secs > total_seconds) break;
        if (k > 0) g = rho * g + innovation * rng.normal();
        GroundTruthRecord rec;
        rec.time = spec.start + std::chrono::seconds{secs};
        rec.factors = scene.factors_at(secs, normal_cdf(g));
        const double day = double(secs) / kSecondsPerDay;
        rec.in_manifest = std::none_of(spec.gaps.begin(), spec.gaps.end(), [&](const GapInterval& gap) {
            return day >= gap.start_day && day < gap.end_day;
        });
        if (rec.in_manifest)
            frames.push_back({scene.render(rec.factors), Timestamp{rec.time, 0.0}, "synthetic:" + std::to_string(k)});
        out.truth.push_back(rec);
    }
    if (frames.size() < 2) throw DatasetError("synthetic schedule is empty after removing gaps");
    out.manifest = build_manifest(std::move(frames));
    return out;
}

std::vector<GapInterval> periodic_gaps(double length_days, double period_days, double kept_days) {
    if (!(period_days > kept_days) || !(kept_days > 0.0)) throw DatasetError("invalid periodic gap layout");
    std::vector<GapInterval> gaps;
    for (double start = 0.0; start < length_days; start += period_days) {
        const double end = std::min(start + period_days, length_days);
        if (start + kept_days < end) gaps.push_back({start + kept_days, end});
    }
    return gaps;
}

GapInterval toy_long_gap(const SyntheticSceneSpec& spec, double long_gap_fraction) {
    const double start = 0.55 * spec.length_days;
    return {start, start + long_gap_fraction * spec.length_days};
}

SyntheticSceneSpec toy_scene_spec(std::uint64_t seed, double burst_period_days, double long_gap_fraction) {
    SyntheticSceneSpec spec;
    spec.seed = seed;
    spec.gaps = periodic_gaps(spec.length_days, burst_period_days, 1.0);
    if (long_gap_fraction > 0.0) spec.gaps.push_back(toy_long_gap(spec, long_gap_fraction));
    return spec;
}

void write_ground_truth(const std::filesystem::path& path, const std::vector<GroundTruthRecord>& truth) {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write " + path.string());
    out << "time\tday_phase\tyear_phase\ttrend\tweather\tin_manifest\n";
    out.precision(17);
    for (const auto& r : truth) {
        out << format_iso8601(r.time) << '\t' << r.factors.day_phase << '\t' << r.factors.year_phase << '\t'
            << r.factors.trend << '\t' << r.factors.weather << '\t' << (r.in_manifest ? 1 : 0) << '\n';
    }
}

}  // namespace cyclelapse
