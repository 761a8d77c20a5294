#pragma once

// Time normalization, cyclic conditioning encoding and timestamp jitter.

#include <chrono>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cyclelapse/random.hpp"

namespace cyclelapse {

using Instant = std::chrono::sys_seconds;

inline constexpr double kSecondsPerDay = 86400.0;
inline constexpr double kDaysPerYear = 365.25;
inline constexpr double kDefaultTrendScale = 1e-2;

class TimebaseError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Timestamp {
    Instant wall_clock;
    double raw_linear = 0.0;  ///< position in [0, 1] across the whole sequence
};

struct NormalizedTimeline {
    std::vector<Timestamp> stamps;
    double length_days = 0.0;
};

/// Linear timestamps for the day, year and trend inputs. At training time all
/// three equal the raw linear timestamp; afterwards they are set independently.
struct TimeTriplet {
    double day = 0.0;
    double year = 0.0;
    double trend = 0.0;

    static TimeTriplet uniform(double t) { return {t, t, t}; }
    bool operator==(const TimeTriplet&) const = default;
};

struct CycleConfig {
    double day_frequency = 1.0;   ///< cycles per unit normalized time
    double year_frequency = 1.0 / kDaysPerYear;
    double trend_scale = kDefaultTrendScale;
    bool day_enabled = true;
    bool year_enabled = true;

    /// Length of the conditioning vector.
    int dimension() const { return 2 * (int(day_enabled) + int(year_enabled)) + 2; }
    void validate() const;
};

/// Stacked sinusoid/linear encoding of a TimeTriplet. Layout:
/// [sin day, cos day, sin year, cos year, trend * k, 1] with disabled cycle
/// pairs omitted.
struct ConditioningVector {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

struct JitterConfig {
    double sigma_year = 0.0;   ///< normalized units
    double sigma_trend = 0.0;  ///< normalized units
    bool clamp = false;

    void validate() const;
};

NormalizedTimeline normalize_timestamps(std::span<const Instant> instants);

CycleConfig derive_cycle_config(double length_days, bool enable_year);

ConditioningVector encode_conditioning(const TimeTriplet& t, const CycleConfig& cfg);

/// Half the larger gap to the neighbouring frames; one-sided at the ends.
double dequantization_sigma(std::span<const double> raw_linear, std::size_t index);

/// T_j + sigma_j * unit_normal.
double dequantize_timestamp(std::size_t index, std::span<const double> raw_linear,
                            double unit_normal);
double dequantize_timestamp(std::size_t index, std::span<const double> raw_linear, Rng& rng);

TimeTriplet augment_discriminator_labels(const TimeTriplet& t, const JitterConfig& jc,
                                         double unit_normal_year, double unit_normal_trend);
TimeTriplet augment_discriminator_labels(const TimeTriplet& t, const JitterConfig& jc, Rng& rng);

/// Parses "<number><unit>" with unit d, w or y into days.
double parse_duration_days(std::string_view text);

/// Converts a duration in days into normalized time for a dataset of the given length.
inline double days_to_normalized(double days, double length_days) { return days / length_days; }

// ISO-8601 "YYYY-MM-DDTHH:MM:SSZ" (the trailing Z is optional on input).
std::string format_iso8601(Instant t);
Instant parse_iso8601(std::string_view text);

}  // namespace cyclelapse
