#pragma once

// Variance images, latent-space PCA and disentanglement scoring.
//
// A generator is treated as G(z, n, t_g, t_y, t_d). The variance image for one
// input is estimated from N pairs of outputs that share every other input:
//
//   V ≈ (1/N) Σ ½ (G(.., x, ..) − G(.., x', ..))²

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cyclelapse/model.hpp"
#include "cyclelapse/synthetic.hpp"

namespace cyclelapse {

class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ProbeInput { latent = 0, noise = 1, trend = 2, year = 3, day = 4 };
inline constexpr std::array<ProbeInput, 5> kProbeInputs{ProbeInput::latent, ProbeInput::noise, ProbeInput::trend,
                                                         ProbeInput::year, ProbeInput::day};
std::string to_string(ProbeInput input);

/// A batch of generator inputs. Times are double [B].
struct ProbeBatch {
    torch::Tensor z;                  ///< [B, latent]
    std::vector<torch::Tensor> noise; ///< per layer [B, 1, r, r] or undefined
    torch::Tensor trend, year, day;

    std::int64_t size() const { return z.size(0); }
};

/// Shapes of the random inputs.
struct ProbeShape {
    int latent_dim = 1;
    std::vector<int> noise_resolutions;  ///< 0 marks a layer without noise
};

/// Evaluates the model on a batch; returns [B, ...] outputs of any fixed shape.
using ProbeOracle = std::function<torch::Tensor(const ProbeBatch&)>;

/// Monte-Carlo variance image for one input. Pair p draws from rng.split(p),
/// so the result does not depend on `chunk`.
torch::Tensor estimate_variance_image(const ProbeOracle& oracle, const ProbeShape& shape, ProbeInput varied,
                                      std::int64_t pairs, const Rng& rng, std::int64_t chunk = 64);

struct VarianceReport {
    std::array<torch::Tensor, 5> raw;         ///< double, oracle output shape
    std::array<torch::Tensor, 5> normalized;  ///< per-element shares
    std::array<double, 5> scalar_shares{};    ///< element-averaged normalized shares
    std::int64_t pairs = 0;
    std::uint64_t seed = 0;
};

VarianceReport variance_report(const ProbeOracle& oracle, const ProbeShape& shape, std::int64_t pairs,
                               std::uint64_t seed, std::int64_t chunk = 64);

inline constexpr double kShareEpsilon = 1e-12;

/// Per-element shares V_i / (Σ V + ε); elements whose raw sum is below ε get 0.2 each.
std::array<torch::Tensor, 5> normalize_variance_images(const std::array<torch::Tensor, 5>& raw);

/// Mean of each normalized image.
std::array<double, 5> scalar_shares(const std::array<torch::Tensor, 5>& normalized);

/// Oracle over grid indices (z, n, t_g, t_y, t_d) returning an output vector.
using GridOracle = std::function<std::vector<double>(const std::array<std::size_t, 5>&)>;

inline constexpr std::size_t kMaxEnumeration = 1000000;

/// Max abs difference between the nested conditional-variance form and the
/// pair form, both computed by exhaustive enumeration with uniform weights.
double verify_estimator_equivalence(const GridOracle& oracle, const std::array<std::size_t, 5>& grid_sizes);

/// Generator wrapped as a probe oracle. Outputs are [B, H, W, 3] in [0, 1].
ProbeOracle generator_oracle(Generator generator, const CycleConfig& cycles);
ProbeShape generator_probe_shape(Generator generator);

// --- PCA --------------------------------------------------------------------

struct PCABasis {
    std::vector<double> mean;
    std::vector<std::vector<double>> components;  ///< orthonormal rows
    std::vector<double> explained_variance;       ///< non-increasing
    std::int64_t samples = 0;
    bool rank_deficient = false;
    bool pre_mapping = false;  ///< computed on the mapping input (concat mode)
    double total_variance = 0.0;
};

using LatentMapping = std::function<torch::Tensor(const torch::Tensor& z)>;

/// Principal components of mapping(z) for standard-normal z.
PCABasis pca_of_mapping(const LatentMapping& mapping, int latent_dim, std::int64_t samples, Rng& rng,
                        int max_components = 0);
/// Generator overload: uses w in modulation and none modes, and the
/// concatenated mapping input in concat mode.
PCABasis pca_latent_directions(Generator generator, std::int64_t samples, Rng& rng, int max_components = 0);

// --- Disentanglement scoring --------------------------------------------------

/// Row order {t_d, t_y, t_g, z}; column order {day, year, trend, weather}.
using InfluenceMatrix = std::array<std::array<double, 4>, 4>;

struct DisentanglementResult {
    InfluenceMatrix influence{};
    std::array<double, 4> diagonal_share{};  ///< diagonal / row sum
    std::array<double, 4> dominance{};       ///< diagonal / max off-diagonal (inf when off-diagonals vanish)
};

/// Renders images [B, S, S, 3] in [0, 1] for z [B, latent] and triplets.
using TripletRenderer =
    std::function<std::vector<Image>(const torch::Tensor& z, const std::vector<TimeTriplet>& triplets)>;

/// For every input, draws probe pairs that differ only in that input and
/// averages the absolute proxy changes. Noise is held fixed inside pairs by
/// the renderer.
DisentanglementResult disentanglement_score(const TripletRenderer& render, const SceneModel& scene,
                                            int latent_dim, int probes, std::uint64_t seed);

/// The synthetic scene parameterized by the triplet, weather = Φ(z_0).
TripletRenderer scene_oracle(const SceneModel& scene);
/// Generator renderer; each pair member uses the same noise maps.
TripletRenderer generator_renderer(Generator generator, const CycleConfig& cycles, std::uint64_t noise_seed);

}  // namespace cyclelapse
