#pragma once

// Procedural time-lapse scene with known day, year, trend and weather factors.
//
// Layout for an S×S frame: rows [0, S/2) are sky, rows [S/2, S) ground. A tree
// occupies columns [tree_x0, tree_x1) and grows upward from the bottom row.
//
//   sky   = tint(weather) * (ambient + (1 - ambient) * luminance)
//   luminance = amp * max(0, sin(pi * clamp01((day_phase - 0.25) / 0.5))) * (1 - 0.2 * weather)
//   ground = mix(green, white, snow(year_phase))
//   tree height = trend * max_height  (fractional top row is blended)
//
// Both sky tints have channel mean 0.6, so mean sky brightness encodes only
// luminance and sky chromaticity encodes only weather.

#include <array>
#include <filesystem>
#include <vector>

#include "cyclelapse/dataset.hpp"

namespace cyclelapse {

/// Fraction of sky luminance removed by full overcast.
inline constexpr double kOvercastDimming = 0.2;

struct GapInterval {
    double start_day = 0.0;  ///< inclusive, days since the first scheduled frame
    double end_day = 0.0;    ///< exclusive
};

struct SyntheticSceneSpec {
    int image_size = 32;
    double length_days = 4 * kDaysPerYear;
    int frames_per_day = 24;
    std::vector<GapInterval> gaps;
    double sun_amplitude = 1.0;
    double snow_band_start = 0.85;  ///< year phase; the band may wrap past 1
    double snow_band_end = 0.25;
    double trend_growth_rate = 1.0;
    double weather_autocorrelation = 0.9;
    double year_phase_offset = 0.0;
    std::uint64_t seed = 0;
    Instant start = std::chrono::sys_days{std::chrono::year{2012} / 1 / 1};

    void validate() const;
};

struct SceneFactors {
    double day_phase = 0.0;
    double year_phase = 0.0;
    double trend = 0.0;
    double weather = 0.0;
};

struct GroundTruthRecord {
    Instant time{};
    SceneFactors factors;
    bool in_manifest = true;  ///< false for frames removed by a gap
};

struct SyntheticDataset {
    DatasetManifest manifest;
    std::vector<GroundTruthRecord> truth;
};

/// Proxy measurements in the order {day, year, trend, weather}.
using ProxyValues = std::array<double, 4>;

class SceneModel {
public:
    explicit SceneModel(const SyntheticSceneSpec& spec);

    const SyntheticSceneSpec& spec() const { return spec_; }
    int size() const { return spec_.image_size; }
    int horizon() const { return spec_.image_size / 2; }
    int tree_x0() const { return tree_x0_; }
    int tree_x1() const { return tree_x1_; }
    double tree_max_height() const { return tree_max_height_; }

    double sky_luminance(double day_phase, double weather) const;
    double snow_amount(double year_phase) const;

    /// Factors at `seconds` after the first scheduled frame.
    SceneFactors factors_at(std::int64_t seconds, double weather) const;
    /// Factors for normalized inputs (t in [0,1] spans length_days); weather = Φ(z0).
    SceneFactors factors_for(const TimeTriplet& t, double z0) const;

    Image render(const SceneFactors& f) const;

    /// Recovers {luminance, snow, trend, weather} estimates from a frame.
    ProxyValues measure(const Image& img) const;

private:
    SyntheticSceneSpec spec_;
    int tree_x0_, tree_x1_;
    double tree_max_height_;
};

SyntheticDataset synthesize_dataset(const SyntheticSceneSpec& spec);

/// Removes everything except `kept_days` out of every `period_days`, producing
/// bursts of dense sampling.
std::vector<GapInterval> periodic_gaps(double length_days, double period_days, double kept_days);

/// Four-year 32×32 scene sampled hourly on one day out of every
/// `burst_period_days`, with one long gap covering `long_gap_fraction` of the
/// range starting at 55% of it.
SyntheticSceneSpec toy_scene_spec(std::uint64_t seed = 0, double burst_period_days = 17.0,
                                  double long_gap_fraction = 0.05);

/// The long gap of toy_scene_spec in days.
GapInterval toy_long_gap(const SyntheticSceneSpec& spec, double long_gap_fraction = 0.05);

/// Standard normal CDF.
double normal_cdf(double x);

void write_ground_truth(const std::filesystem::path& path, const std::vector<GroundTruthRecord>& truth);

}  // namespace cyclelapse
