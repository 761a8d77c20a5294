#include "cyclelapse/timebase.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace cyclelapse {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

void CycleConfig::validate() const {
    if (!(trend_scale > 0.0) || !std::isfinite(trend_scale))
        throw TimebaseError("trend scale must be positive");
    if (day_enabled && !(day_frequency > 0.0))
        throw TimebaseError("day frequency must be positive");
    if (year_enabled && !(year_frequency > 0.0))
        throw TimebaseError("year frequency must be positive");
}

void JitterConfig::validate() const {
    if (!(sigma_year >= 0.0) || !(sigma_trend >= 0.0))
        throw TimebaseError("jitter sigmas must be non-negative");
}

NormalizedTimeline normalize_timestamps(std::span<const Instant> instants) {
    if (instants.size() < 2) throw TimebaseError("need at least two instants to normalize");
    if (!std::is_sorted(instants.begin(), instants.end()))
        throw TimebaseError("instants must be sorted ascending");
    const Instant first = instants.front();
    const Instant last = instants.back();
    if (first == last) throw TimebaseError("instants span a zero-length range");

    const double span = static_cast<double>((last - first).count());
    NormalizedTimeline out;
    out.stamps.reserve(instants.size());
    for (const Instant t : instants)
        out.stamps.push_back({t, static_cast<double>((t - first).count()) / span});
    out.stamps.back().raw_linear = 1.0;
    out.length_days = span / kSecondsPerDay;
    return out;
}

CycleConfig derive_cycle_config(double length_days, bool enable_year) {
    if (!(length_days > 0.0) || !std::isfinite(length_days))
        throw TimebaseError("sequence length must be positive");
    CycleConfig cfg;
    // One day spans 1/length_days of normalized time.
    cfg.day_frequency = length_days;
    cfg.year_enabled = enable_year;
    cfg.year_frequency = length_days / kDaysPerYear;
    cfg.trend_scale = kDefaultTrendScale;
    return cfg;
}

ConditioningVector encode_conditioning(const TimeTriplet& t, const CycleConfig& cfg) {
    ConditioningVector c;
    c.values.reserve(static_cast<std::size_t>(cfg.dimension()));
    if (cfg.day_enabled) {
        const double phase = kTwoPi * cfg.day_frequency * t.day;
        c.values.push_back(std::sin(phase));
        c.values.push_back(std::cos(phase));
    }
    if (cfg.year_enabled) {
        const double phase = kTwoPi * cfg.year_frequency * t.year;
        c.values.push_back(std::sin(phase));
        c.values.push_back(std::cos(phase));
    }
    c.values.push_back(t.trend * cfg.trend_scale);
    c.values.push_back(1.0);
    return c;
}

double dequantization_sigma(std::span<const double> raw_linear, std::size_t index) {
    const std::size_t n = raw_linear.size();
    if (n < 2) throw TimebaseError("dequantization needs at least two timestamps");
    if (index >= n) throw TimebaseError("frame index out of range");
    const double before = index > 0 ? raw_linear[index] - raw_linear[index - 1] : -1.0;
    const double after = index + 1 < n ? raw_linear[index + 1] - raw_linear[index] : -1.0;
    return std::max(before, after) / 2.0;
}

double dequantize_timestamp(std::size_t index, std::span<const double> raw_linear,
                            double unit_normal) {
    return raw_linear[index] + dequantization_sigma(raw_linear, index) * unit_normal;
}

double dequantize_timestamp(std::size_t index, std::span<const double> raw_linear, Rng& rng) {
    const double sigma = dequantization_sigma(raw_linear, index);
    return raw_linear[index] + sigma * rng.normal();
}

TimeTriplet augment_discriminator_labels(const TimeTriplet& t, const JitterConfig& jc,
                                         double unit_normal_year, double unit_normal_trend) {
    TimeTriplet out = t;
    out.year += jc.sigma_year * unit_normal_year;
    out.trend += jc.sigma_trend * unit_normal_trend;
    if (jc.clamp) {
        out.year = std::clamp(out.year, 0.0, 1.0);
        out.trend = std::clamp(out.trend, 0.0, 1.0);
    }
    return out;
}

TimeTriplet augment_discriminator_labels(const TimeTriplet& t, const JitterConfig& jc, Rng& rng) {
    const double ny = rng.normal();
    const double ng = rng.normal();
    return augment_discriminator_labels(t, jc, ny, ng);
}

double parse_duration_days(std::string_view text) {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
        text.remove_suffix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
        text.remove_prefix(1);
    if (text.size() < 2) throw TimebaseError("bad duration '" + std::string(text) + "'");
    const char unit = text.back();
    double factor = 0.0;
    switch (unit) {
        case 'd': factor = 1.0; break;
        case 'w': factor = 7.0; break;
        case 'y': factor = kDaysPerYear; break;
        default: throw TimebaseError("unknown duration unit in '" + std::string(text) + "'");
    }
    const std::string number(text.substr(0, text.size() - 1));
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(number, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != number.size() || !(value >= 0.0))
        throw TimebaseError("bad duration '" + std::string(text) + "'");
    return value * factor;
}

std::string format_iso8601(Instant t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()), int(hms.hours().count()),
                  int(hms.minutes().count()), int(hms.seconds().count()));
    return buf;
}

Instant parse_iso8601(std::string_view text) {
    using namespace std::chrono;
    auto field = [&](std::size_t pos, std::size_t len) {
        int v = 0;
        if (pos + len > text.size()) throw TimebaseError("truncated timestamp '" + std::string(text) + "'");
        auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
        if (ec != std::errc{} || ptr != text.data() + pos + len)
            throw TimebaseError("bad timestamp '" + std::string(text) + "'");
        return v;
    };
    if (text.size() < 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
        text[13] != ':' || text[16] != ':')
        throw TimebaseError("bad timestamp '" + std::string(text) + "'");
    if (text.size() > 20 || (text.size() == 20 && text[19] != 'Z'))
        throw TimebaseError("bad timestamp '" + std::string(text) + "'");
    const year_month_day ymd{year{field(0, 4)}, month{unsigned(field(5, 2))}, day{unsigned(field(8, 2))}};
    if (!ymd.ok()) throw TimebaseError("invalid date in '" + std::string(text) + "'");
    const int hh = field(11, 2), mm = field(14, 2), ss = field(17, 2);
    if (hh > 23 || mm > 59 || ss > 59) throw TimebaseError("invalid time in '" + std::string(text) + "'");
    return sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss};
}

}  // namespace cyclelapse
