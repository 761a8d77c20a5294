#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cyclelapse/analysis.hpp"

using namespace cyclelapse;

namespace {

const ProbeShape kScalarShape{4, {2, 0}};

ProbeOracle latent_oracle() {
    return [](const ProbeBatch& b) { return b.z.narrow(1, 0, 1).to(torch::kDouble); };
}

ProbeOracle day_oracle(double beta) {
    return [beta](const ProbeBatch& b) { return (beta * torch::sin(2 * std::numbers::pi * b.day)).unsqueeze(1); };
}

ProbeOracle constant_oracle() {
    return [](const ProbeBatch& b) { return torch::full({b.size(), 2, 2}, 0.7, torch::kDouble); };
}

GridOracle lookup_oracle(Rng& rng, const std::array<std::size_t, 5>& sizes, std::size_t outputs) {
    std::size_t total = outputs;
    for (auto s : sizes) total *= s;
    auto table = std::make_shared<std::vector<double>>(total);
    for (auto& v : *table) v = rng.normal();
    return [table, sizes, outputs](const std::array<std::size_t, 5>& idx) {
        std::size_t flat = 0;
        for (std::size_t i = 0; i < 5; ++i) flat = flat * sizes[i] + idx[i];
        return std::vector<double>(table->begin() + long(flat * outputs), table->begin() + long((flat + 1) * outputs));
    };
}

GeneratorConfig tiny_generator(ConditioningMode mode = ConditioningMode::modulation) {
    GeneratorConfig cfg;
    cfg.latent_dim = 8;
    cfg.resolution = 8;
    cfg.channel_base = 64;
    cfg.channel_max = 16;
    cfg.mapping_depth = 2;
    cfg.mode = mode;
    cfg.cycles = derive_cycle_config(100.0, true);
    return cfg;
}

}  // namespace

// --- Variance estimator ------------------------------------------------------------------

TEST(VarianceEstimator, LatentOracle) {
    const auto v = estimate_variance_image(latent_oracle(), kScalarShape, ProbeInput::latent, 5000, Rng(1));
    EXPECT_NEAR(v.item<double>(), 1.0, 0.10);
    for (auto input : {ProbeInput::noise, ProbeInput::trend, ProbeInput::year, ProbeInput::day})
        EXPECT_EQ(estimate_variance_image(latent_oracle(), kScalarShape, input, 500, Rng(2)).item<double>(), 0.0);
}

TEST(VarianceEstimator, DaySinusoid) {
    const auto r = variance_report(day_oracle(2.0), kScalarShape, 5000, 3);
    EXPECT_NEAR(r.raw[4].item<double>(), 2.0, 0.15);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.raw[i].item<double>(), 0.0) << to_string(kProbeInputs[i]);
    EXPECT_NEAR(r.scalar_shares[4], 1.0, 1e-9);
}

TEST(VarianceEstimator, ConstantOracleIsZero) {
    for (auto input : kProbeInputs) {
        const auto v = estimate_variance_image(constant_oracle(), kScalarShape, input, 64, Rng(4));
        EXPECT_EQ(v.abs().max().item<double>(), 0.0);
        EXPECT_EQ(v.sizes(), (std::vector<int64_t>{2, 2}));
    }
}

TEST(VarianceEstimator, ChunkingDoesNotChangeResult) {
    const auto oracle = [](const ProbeBatch& b) {
        return (b.z.narrow(1, 0, 1).to(torch::kDouble).squeeze(1) * b.day + b.noise[0].flatten(1).sum(1).to(torch::kDouble))
            .unsqueeze(1);
    };
    for (auto input : kProbeInputs) {
        const auto a = estimate_variance_image(oracle, kScalarShape, input, 100, Rng(5), 7);
        const auto b = estimate_variance_image(oracle, kScalarShape, input, 100, Rng(5), 64);
        EXPECT_TRUE(torch::equal(a, b));
    }
}

TEST(VarianceEstimator, Errors) {
    EXPECT_THROW(estimate_variance_image(latent_oracle(), kScalarShape, ProbeInput::latent, 0, Rng(1)), AnalysisError);
}

TEST(EstimatorEquivalence, EnumeratedForms) {
    EXPECT_EQ(verify_estimator_equivalence([](const auto&) { return std::vector<double>{1.5, -2.0}; }, {2, 2, 2, 2, 2}),
              0.0);
    const GridOracle linear = [](const std::array<std::size_t, 5>& i) {
        return std::vector<double>{double(i[0]) - 2.0 * double(i[1]) + 0.5 * double(i[2]) + double(i[3]) * 3.0 - double(i[4])};
    };
    EXPECT_EQ(verify_estimator_equivalence(linear, {2, 2, 2, 2, 2}), 0.0);
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial)
        EXPECT_LT(verify_estimator_equivalence(lookup_oracle(rng, {3, 3, 3, 3, 3}, 2), {3, 3, 3, 3, 3}), 1e-12);
    EXPECT_THROW(verify_estimator_equivalence(linear, {20, 20, 20, 20, 20}), AnalysisError);
}

// --- Normalization -------------------------------------------------------------------------

TEST(Normalization, Examples) {
    auto at = [](std::array<double, 5> v) {
        std::array<torch::Tensor, 5> raw;
        for (std::size_t i = 0; i < 5; ++i) raw[i] = torch::tensor({v[i]}, torch::kDouble);
        return normalize_variance_images(raw);
    };
    for (const auto& s : at({1, 1, 1, 1, 1})) EXPECT_NEAR(s.item<double>(), 0.2, 1e-12);
    const auto b = at({3, 1, 0, 0, 0});
    EXPECT_NEAR(b[0].item<double>(), 0.75, 1e-12);
    EXPECT_NEAR(b[1].item<double>(), 0.25, 1e-12);
    EXPECT_EQ(b[2].item<double>(), 0.0);
    for (const auto& s : at({0, 0, 0, 0, 0})) EXPECT_EQ(s.item<double>(), 0.2);
}

TEST(Normalization, SumsToOneAndScaleInvariant) {
    Rng rng(7);
    std::array<torch::Tensor, 5> raw, scaled;
    for (std::size_t i = 0; i < 5; ++i) {
        raw[i] = normal_tensor(rng, {6, 5, 3}).abs().to(torch::kDouble);
        if (i == 2) raw[i].index_put_({0}, 0.0);
        scaled[i] = raw[i] * 37.5;
    }
    for (auto& r : raw) r.index_put_({1, 1}, 0.0);
    for (auto& r : scaled) r.index_put_({1, 1}, 0.0);
    const auto n = normalize_variance_images(raw), m = normalize_variance_images(scaled);
    auto sum = torch::zeros_like(n[0]);
    for (std::size_t i = 0; i < 5; ++i) {
        sum += n[i];
        EXPECT_GE(n[i].min().item<double>(), 0.0);
        EXPECT_LE(n[i].max().item<double>(), 1.0);
        EXPECT_LT((n[i] - m[i]).abs().max().item<double>(), 1e-12);
        EXPECT_EQ(n[i].index({1, 1}).min().item<double>(), 0.2);
    }
    EXPECT_LT((sum - 1.0).abs().max().item<double>(), 1e-6);
    const auto s = scalar_shares(n);
    EXPECT_NEAR(s[0] + s[1] + s[2] + s[3] + s[4], 1.0, 1e-6);
}

TEST(Normalization, Errors) {
    std::array<torch::Tensor, 5> raw;
    for (auto& r : raw) r = torch::ones({2}, torch::kDouble);
    raw[3] = torch::ones({3}, torch::kDouble);
    EXPECT_THROW(normalize_variance_images(raw), AnalysisError);
    raw[3] = -torch::ones({2}, torch::kDouble);
    EXPECT_THROW(normalize_variance_images(raw), AnalysisError);
}

// --- PCA ---------------------------------------------------------------------------------------

TEST(Pca, IdentityMappingIsIsotropic) {
    Rng rng(8);
    const auto basis = pca_of_mapping([](const torch::Tensor& z) { return z; }, 6, 50000, rng);
    ASSERT_EQ(basis.explained_variance.size(), 6u);
    for (double v : basis.explained_variance) EXPECT_NEAR(v, 1.0, 0.1);
    EXPECT_FALSE(basis.rank_deficient);
}

TEST(Pca, DiagonalMapping) {
    Rng rng(9);
    const auto basis = pca_of_mapping(
        [](const torch::Tensor& z) {
            auto w = z.clone();
            w.select(1, 0).mul_(2.0);
            return w;
        },
        5, 20000, rng);
    EXPECT_GT(std::abs(basis.components[0][0]), 0.99);
    EXPECT_NEAR(basis.explained_variance[0], 4.0, 0.3);
    for (std::size_t i = 1; i < basis.explained_variance.size(); ++i)
        EXPECT_LE(basis.explained_variance[i], basis.explained_variance[i - 1]);
    double total = 0.0;
    for (double v : basis.explained_variance) total += v;
    EXPECT_NEAR(total, basis.total_variance, 1e-6 * basis.total_variance);
    for (std::size_t i = 0; i < basis.components.size(); ++i)
        for (std::size_t j = 0; j < basis.components.size(); ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < 5; ++k) dot += basis.components[i][k] * basis.components[j][k];
            EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-6);
        }
}

TEST(Pca, RankDeficientIsFlagged) {
    Rng rng(10);
    const auto basis = pca_of_mapping(
        [](const torch::Tensor& z) { return torch::cat({z.narrow(1, 0, 2), z.narrow(1, 0, 2)}, 1); }, 4, 2000, rng);
    EXPECT_TRUE(basis.rank_deficient);
    EXPECT_EQ(basis.components.size(), 2u);
}

TEST(Pca, GeneratorSpaces) {
    torch::manual_seed(0);
    Rng rng(11);
    Generator g(tiny_generator());
    const auto w = pca_latent_directions(g, 500, rng, 3);
    EXPECT_FALSE(w.pre_mapping);
    EXPECT_EQ(w.components.size(), 3u);
    EXPECT_EQ(w.mean.size(), 8u);
    Generator c(tiny_generator(ConditioningMode::concat));
    const auto pre = pca_latent_directions(c, 500, rng);
    EXPECT_TRUE(pre.pre_mapping);
    EXPECT_EQ(pre.mean.size(), 8u + 2u);
}

// --- Disentanglement -------------------------------------------------------------------------

TEST(Disentanglement, PerfectOracleIsDiagonal) {
    const SceneModel scene(toy_scene_spec());
    const auto r = disentanglement_score(scene_oracle(scene), scene, 4, 400, 12);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_GT(r.influence[i][i], 0.0);
        for (std::size_t j = 0; j < 4; ++j)
            if (j != i) EXPECT_LT(r.influence[i][j], 0.1 * r.influence[i][i]) << "row " << i << " col " << j;
    }
    std::size_t argmax = 0;
    for (std::size_t j = 1; j < 4; ++j)
        if (r.influence[3][j] > r.influence[3][argmax]) argmax = j;
    EXPECT_EQ(argmax, 3u);
}

TEST(Disentanglement, ConstantGeneratorScoresZero) {
    const SceneModel scene(toy_scene_spec());
    const Image frame = scene.render({0.4, 0.3, 0.5, 0.5});
    const TripletRenderer constant = [frame](const torch::Tensor&, const std::vector<TimeTriplet>& t) {
        return std::vector<Image>(t.size(), frame);
    };
    const auto r = disentanglement_score(constant, scene, 4, 50, 1);
    for (const auto& row : r.influence)
        for (double v : row) EXPECT_EQ(v, 0.0);
}

TEST(Disentanglement, SymmetricUnderPairReversal) {
    const SceneModel scene(toy_scene_spec());
    const auto oracle = scene_oracle(scene);
    std::vector<std::pair<torch::Tensor, std::vector<TimeTriplet>>> calls;
    const TripletRenderer recording = [&](const torch::Tensor& z, const std::vector<TimeTriplet>& t) {
        calls.emplace_back(z, t);
        return oracle(z, t);
    };
    const auto forward = disentanglement_score(recording, scene, 4, 60, 13);
    std::size_t k = 0;
    const TripletRenderer swapped = [&](const torch::Tensor&, const std::vector<TimeTriplet>&) {
        const auto& partner = calls[k ^ 1u];
        ++k;
        return oracle(partner.first, partner.second);
    };
    const auto reversed = disentanglement_score(swapped, scene, 4, 60, 13);
    EXPECT_EQ(forward.influence, reversed.influence);
}

TEST(Disentanglement, GeneratorRendererShape) {
    torch::manual_seed(0);
    Generator g(tiny_generator());
    const auto render = generator_renderer(g, g->config().cycles, 5);
    Rng rng(14);
    const auto images = render(normal_tensor(rng, {3, 8}), {{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}, {0.3, 0.3, 0.3}});
    ASSERT_EQ(images.size(), 3u);
    EXPECT_EQ(images[0].height, 8);
    for (float v : images[1].pixels) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Disentanglement, GeneratorOracleOutputs) {
    torch::manual_seed(0);
    Generator g(tiny_generator());
    const auto report = variance_report(generator_oracle(g, g->config().cycles), generator_probe_shape(g), 16, 3);
    EXPECT_EQ(report.raw[0].sizes(), (std::vector<int64_t>{8, 8, 3}));
    double sum = 0.0;
    for (double s : report.scalar_shares) sum += s;
    EXPECT_NEAR(sum, 1.0, 1e-6);
}
