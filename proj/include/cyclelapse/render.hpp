#pragma once

// Time-lapse images, conditioning sweep grids and frame sequence export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cyclelapse/analysis.hpp"
#include "cyclelapse/dataset.hpp"
#include "cyclelapse/model.hpp"

namespace cyclelapse {

class RenderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Frame at a linear time t.
using FrameSource = std::function<Image(double t)>;

/// Column x takes time t_x = t_start + x / max(width - 1, 1) * (t_end - t_start)
/// and copies source column round(x * (W - 1) / (width - 1)) of the frame at t_x.
Image render_timelapse_image(const FrameSource& source, double t_start, double t_end, int width);
/// Dataset source: the frame whose raw linear time is nearest to t_x.
Image render_timelapse_image(const DatasetManifest& manifest, double t_start, double t_end, int width);

/// Index of the manifest frame nearest to t (ties go to the earlier frame).
std::size_t nearest_frame(std::span<const double> raw_linear, double t);

/// Latent inputs held fixed across a rendering.
struct LatentSpec {
    std::uint64_t seed = 0;
    std::uint64_t noise_seed = 0;
    std::vector<std::pair<int, double>> pca_offsets;  ///< component index -> coefficient
    std::optional<std::vector<float>> z;             ///< overrides the seed when set

    /// Parses "i:v,i:v"; an empty string yields no offsets.
    static std::vector<std::pair<int, double>> parse_pca(const std::string& text);
};

/// Pins any of the triplet components; unset components follow t.
struct TripletOverrides {
    std::optional<double> day, year, trend;

    TimeTriplet apply(double t) const;
};

/// Deterministic single-frame generator evaluation. Frames are rendered one at
/// a time, so a frame never depends on what else is rendered alongside it.
class GeneratorRenderer {
public:
    GeneratorRenderer(Generator generator, CycleConfig cycles, std::optional<PCABasis> basis = {});

    Image render(const TimeTriplet& t, const LatentSpec& latent) const;
    FrameSource source(const LatentSpec& latent, const TripletOverrides& overrides = {}) const;

    torch::Tensor latent(const LatentSpec& latent) const;
    int resolution() const { return generator_->config().resolution; }
    const CycleConfig& cycles() const { return cycles_; }
    const std::optional<PCABasis>& basis() const { return basis_; }

private:
    Generator generator_;
    CycleConfig cycles_;
    std::optional<PCABasis> basis_;
};

enum class SweepInput { day, year, trend, seed };
SweepInput parse_sweep_input(const std::string& name);

struct SweepAxis {
    SweepInput input = SweepInput::day;
    std::vector<double> values;
};

struct SweepGrid {
    int rows = 0;
    int cols = 0;
    std::vector<Image> cells;  ///< row-major

    /// All cells tiled into one image.
    Image montage() const;
};

/// Rows follow axis1, columns axis2; every other input is held at `fixed`.
SweepGrid render_sweep_grid(const GeneratorRenderer& renderer, const SweepAxis& axis1, const SweepAxis& axis2,
                            const TimeTriplet& fixed, const LatentSpec& latent);

/// Frame triplets plus the latent inputs shared by every frame.
struct RenderSchedule {
    std::vector<TimeTriplet> frames;
    LatentSpec latent;

    /// Inserts factor - 1 linearly interpolated triplets between neighbours.
    RenderSchedule supersampled(int factor) const;
    void validate() const;

    std::string to_json() const;
    static RenderSchedule from_json(const std::string& text);
    static RenderSchedule load(const std::filesystem::path& path);
};

inline constexpr const char* kScheduleFormat = "cyclelapse-schedule v1";
inline constexpr const char* kSequenceHeader = "cyclelapse-sequence v1";
inline constexpr const char* kSequenceIndexName = "sequence.txt";

/// Writes frame_%06d.png files plus sequence.txt (frame file, t_d, t_y, t_g per line).
void export_sequence(const GeneratorRenderer& renderer, const RenderSchedule& schedule,
                     const std::filesystem::path& out_dir);

/// Tensor [1, 3, H, W] in [-1, 1] -> Image in [0, 1].
Image tensor_to_image(const torch::Tensor& t);

}  // namespace cyclelapse
