#pragma once

// Timestamped frame sequences: ingestion, statistics, alignment and padding.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cyclelapse/image.hpp"
#include "cyclelapse/timebase.hpp"

namespace cyclelapse {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kManifestHeader = "cyclelapse-manifest v1";
inline constexpr const char* kManifestIndexName = "index.txt";

struct FrameRecord {
    Image image;
    Timestamp timestamp;
    std::string source;  ///< path relative to the manifest directory, or a synthetic id
};

struct Resolution {
    int height = 0;
    int width = 0;
    bool operator==(const Resolution&) const = default;
};

struct DatasetStats {
    std::size_t frame_count = 0;
    Instant first{};
    Instant last{};
    double length_days = 0.0;
    double median_sampling_hours = 0.0;
    double p95_sampling_hours = 0.0;
    std::vector<double> longest_gaps_days;  ///< up to three, descending

    bool operator==(const DatasetStats&) const = default;
};

struct DatasetManifest {
    std::vector<FrameRecord> frames;
    DatasetStats stats;
    CycleConfig cycle_config;
    Resolution original;
    Resolution padded;

    std::vector<double> raw_linear() const;
    std::vector<Instant> instants() const;
};

/// Sampling statistics of a sorted, strictly increasing instant list.
DatasetStats compute_stats(std::span<const Instant> instants);

/// Human-readable one-line summary matching the dataset table columns.
std::string format_stats(const DatasetStats& stats);

/// Sorts frames by time, drops later duplicates of a timestamp, normalizes
/// timestamps and derives statistics and the cycle configuration. The year
/// cycle is enabled when the sequence spans at least one full year.
DatasetManifest build_manifest(std::vector<FrameRecord> frames, std::optional<Resolution> original = {});

using TimestampParser = std::function<std::optional<Instant>(const std::filesystem::path&)>;

/// Accepts file stems containing YYYYMMDD_HHMMSS or YYYY-MM-DDTHH-MM-SS (or ':' separators).
std::optional<Instant> parse_filename_timestamp(const std::filesystem::path& path);

struct IngestOptions {
    TimestampParser parser = parse_filename_timestamp;
    bool pad = true;
    int target_resolution = 0;  ///< downscale padded frames to this side; 0 keeps size
};

struct IngestResult {
    DatasetManifest manifest;
    std::vector<std::string> diagnostics;  ///< per-file problems that were skipped
};

IngestResult ingest_directory(const std::filesystem::path& dir, const IngestOptions& options = {});

/// Writes frames as PNG plus the index file; frame sources are rewritten to
/// the relative paths used.
void write_manifest(DatasetManifest& manifest, const std::filesystem::path& dir, int bit_depth = 8);
DatasetManifest load_manifest(const std::filesystem::path& index_or_dir);

// --- Alignment ----------------------------------------------------------------

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Translation, rotation and uniform scale: p' = s R(theta) p + t.
struct AffineTransform4 {
    double scale = 1.0;
    double rotation = 0.0;  ///< radians
    double tx = 0.0;
    double ty = 0.0;

    Point2 apply(Point2 p) const;
    AffineTransform4 inverse() const;
    /// (this ∘ other)(p) = this(other(p)).
    AffineTransform4 compose(const AffineTransform4& other) const;
    /// Row-major 2x3 matrix.
    std::array<double, 6> matrix() const;
};

struct AffineFit {
    AffineTransform4 transform;
    double rms_residual = 0.0;
};

/// Least-squares 4-DoF fit mapping src onto dst.
AffineFit fit_partial_affine(std::span<const Point2> src, std::span<const Point2> dst);

struct Correspondence {
    Point2 src, dst;
    double confidence = 1.0;
};

inline constexpr double kMinCorrespondenceConfidence = 0.5;
inline constexpr std::size_t kMinAutomaticKeypoints = 30;

/// Reads "x_src y_src x_dst y_dst confidence" rows, dropping low-confidence rows.
std::vector<Correspondence> read_correspondences(const std::filesystem::path& path,
                                                 double min_confidence = kMinCorrespondenceConfidence);

struct AlignmentSegment {
    std::size_t first = 0;  ///< inclusive
    std::size_t last = 0;   ///< inclusive
    AffineTransform4 transform;  ///< segment coordinates -> anchor coordinates
};

/// Bilinear resampling of `img` under `t`, zero outside the source.
Image warp_image(const Image& img, const AffineTransform4& t);

DatasetManifest apply_alignment(const DatasetManifest& manifest,
                                std::span<const AlignmentSegment> segments);

/// Centers the image on a square canvas whose side is the next power of two
/// at or above the larger dimension; padding is zero.
Image pad_to_square(const Image& img);

int next_power_of_two(int v);

}  // namespace cyclelapse
