#pragma once

// Experiment configuration file: INI-style text with [model], [train],
// [jitter] and [cycles] sections. Every key is optional; unknown sections or
// keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "cyclelapse/model.hpp"
#include "cyclelapse/timebase.hpp"

namespace cyclelapse {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelSpec {
    int latent_dim = 128;
    int resolution = 64;
    int channel_base = 4096;
    int channel_max = 512;
    int mapping_depth = 8;
    double mapping_lr_multiplier = 0.01;
    ConditioningMode conditioning = ConditioningMode::modulation;
    int d_channel_base = 0;  ///< 0 follows channel_base
    int d_channel_max = 0;   ///< 0 follows channel_max
    int feature_dim = 0;     ///< 0 selects the discriminator's 4x4 channel count
    int embed_depth = 8;
    int mbstd_group = 4;
};

struct TrainConfig {
    int batch_size = 32;
    std::optional<double> r1_gamma;  ///< unset: 4.0 up to 512 px, 16.0 above
    int r1_interval = 16;
    double g_lr = 2.5e-3;
    double d_lr = 2.5e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double epsilon = 1e-8;
    std::int64_t total_images = 100000;
    std::int64_t metric_interval = 10000;    ///< images between variance-share samples
    std::int64_t snapshot_interval = 50000;  ///< images between checkpoints
    int monitor_pairs = 256;
    bool dequantize = true;
    std::uint64_t seed = 0;

    double resolved_r1_gamma(int resolution) const;
    void validate() const;
};

/// Jitter strengths in days, converted to normalized time once the dataset
/// length is known.
struct JitterSpec {
    double sigma_year_days = 7.0;
    double sigma_trend_days = 1.5 * kDaysPerYear;
    bool clamp = false;

    JitterConfig resolve(double length_days) const;
};

struct CycleSpec {
    std::optional<bool> enable_year;  ///< unset: enabled when the data spans a year
    bool enable_day = true;
    double trend_scale = kDefaultTrendScale;

    CycleConfig resolve(double length_days) const;
};

struct ExperimentConfig {
    ModelSpec model;
    TrainConfig train;
    JitterSpec jitter;
    CycleSpec cycles;

    GeneratorConfig generator_config(const CycleConfig& cycles) const;
    DiscriminatorConfig discriminator_config(const CycleConfig& cycles) const;

    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);
    /// Round-trips through parse().
    std::string to_text() const;
};

/// "%.17g" formatting; parses back to the identical double.
std::string format_exact(double v);

}  // namespace cyclelapse
