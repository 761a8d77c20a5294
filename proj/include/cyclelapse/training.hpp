#pragma once

// Adversarial training loop: label sampling with dequantization and
// discriminator label augmentation, non-saturating logistic loss with lazy R1,
// Adam updates, variance-share monitoring and checkpointing.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cyclelapse/checkpoint.hpp"
#include "cyclelapse/config.hpp"
#include "cyclelapse/dataset.hpp"
#include "cyclelapse/model.hpp"

namespace cyclelapse {

class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, std::string snapshot)
        : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
    /// Human-readable dump of the step state at the time of failure.
    const std::string& snapshot() const { return snapshot_; }

private:
    std::string snapshot_;
};

struct LabelBatch {
    std::vector<std::size_t> indices;       ///< real frames
    std::vector<TimeTriplet> real_labels;   ///< discriminator labels for the real frames
    std::vector<TimeTriplet> gen_labels;    ///< generator conditioning
    std::vector<TimeTriplet> fake_labels;   ///< discriminator labels for the generated frames
};

/// Draws `batch` real frames and `batch` generator labels uniformly from the
/// training timestamps. Timestamps are dequantized when requested; labels
/// bound for the discriminator are additionally augmented.
LabelBatch sample_training_labels(std::span<const double> raw_linear, int batch, const JitterConfig& jitter,
                                  bool dequantize, Rng& rng);
LabelBatch sample_training_labels(const DatasetManifest& manifest, int batch, const JitterConfig& jitter,
                                  bool dequantize, Rng& rng);

/// Adam with bias correction. Moments are plain tensors so they checkpoint exactly.
class AdamOptimizer {
public:
    AdamOptimizer() = default;
    AdamOptimizer(std::vector<std::pair<std::string, torch::Tensor>> params, double lr, double beta1,
                  double beta2, double eps);

    void zero_grad();
    void step();
    /// L2 norm over all current gradients.
    double grad_norm() const;

    void store(Archive& archive, const std::string& prefix) const;
    void restore(const Archive& archive, const std::string& prefix);

    std::int64_t steps() const { return steps_; }

private:
    std::vector<std::pair<std::string, torch::Tensor>> params_;
    std::vector<torch::Tensor> m_, v_;
    double lr_ = 0.0, beta1_ = 0.0, beta2_ = 0.0, eps_ = 0.0;
    std::int64_t steps_ = 0;
};

struct StepMetrics {
    double d_loss = 0.0;
    double g_loss = 0.0;
    double r1 = 0.0;  ///< most recent (γ/2)·E‖∇D‖², carried between lazy steps
    bool r1_applied = false;
    double d_grad_norm = 0.0;
    double g_grad_norm = 0.0;
};

/// Share order: latent, noise, trend, year, day.
using ShareVector = std::array<double, 5>;

struct MetricRecord {
    std::int64_t images_shown = 0;
    std::int64_t step = 0;
    StepMetrics metrics;
    ShareVector shares{};
    bool collapse_warning = false;

    std::string to_json() const;
    static MetricRecord from_json(const std::string& line);
};

/// Training frames packed for batched access.
struct TrainingData {
    torch::Tensor images;  ///< [N, 3, R, R] in [-1, 1]
    std::vector<double> raw_linear;
    DatasetInfo info;

    static TrainingData from_manifest(const DatasetManifest& manifest);
};

struct TrainState {
    ExperimentConfig experiment;
    CycleConfig cycles;
    JitterConfig jitter;
    DatasetInfo dataset;

    Generator generator{nullptr};
    Discriminator discriminator{nullptr};
    AdamOptimizer g_opt, d_opt;

    std::int64_t images_shown = 0;
    std::int64_t step = 0;
    double last_r1 = 0.0;
    int low_latent_streak = 0;
    std::vector<MetricRecord> history;

    CheckpointHeader header() const;
};

/// Fresh networks for the experiment, initialized from train.seed.
TrainState init_train_state(const ExperimentConfig& experiment, const DatasetInfo& dataset);

/// One discriminator update (plus lazy R1 on every r1_interval-th step)
/// followed by one generator update.
StepMetrics train_step(TrainState& state, const TrainingData& data, Rng& rng);

/// Five normalized variance shares of the current generator.
ShareVector monitor_shares(TrainState& state, int pairs, std::uint64_t seed);

/// Latent share below this for three consecutive records raises the collapse flag.
inline constexpr double kCollapseLatentShare = 0.01;
inline constexpr int kCollapseIntervals = 3;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

struct RunOptions {
    std::filesystem::path out_dir;  ///< empty: no files are written
    std::optional<std::filesystem::path> resume;
    /// Stop once this many images have been shown (before the budget), still
    /// writing a checkpoint. Negative: run to the budget.
    std::int64_t stop_at_images = -1;
    std::function<void(const MetricRecord&)> on_record;
};

inline constexpr const char* kMetricLogName = "metrics.jsonl";
inline constexpr const char* kFinalCheckpointName = "final.ckpt";
inline constexpr const char* kLatestCheckpointName = "latest.ckpt";

/// Trains until the image budget is reached. The first record is taken before
/// any update; later records follow every metric_interval images.
TrainState training_run(const DatasetManifest& manifest, const ExperimentConfig& experiment,
                        const RunOptions& options = {});
TrainState training_run(const TrainingData& data, const ExperimentConfig& experiment,
                        const RunOptions& options = {});

}  // namespace cyclelapse
