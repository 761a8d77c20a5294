#include "cyclelapse/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cyclelapse {

std::string to_string(ProbeInput input) {
    switch (input) {
        case ProbeInput::latent: return "z";
        case ProbeInput::noise: return "n";
        case ProbeInput::trend: return "tg";
        case ProbeInput::year: return "ty";
        case ProbeInput::day: return "td";
    }
    return "?";
}

namespace {

struct ProbeSample {
    torch::Tensor z;
    std::vector<torch::Tensor> noise;
    double trend = 0.0, year = 0.0, day = 0.0;
};

std::vector<torch::Tensor> draw_noise(Rng& rng, const ProbeShape& shape) {
    std::vector<torch::Tensor> out;
    for (int r : shape.noise_resolutions) out.push_back(r > 0 ? normal_tensor(rng, {1, 1, r, r}) : torch::Tensor());
    return out;
}

ProbeSample draw_sample(Rng& rng, const ProbeShape& shape) {
    ProbeSample s;
    s.z = normal_tensor(rng, {1, shape.latent_dim});
    s.noise = draw_noise(rng, shape);
    s.trend = rng.uniform();
    s.year = rng.uniform();
    s.day = rng.uniform();
    return s;
}

ProbeSample redraw(const ProbeSample& base, ProbeInput varied, Rng& rng, const ProbeShape& shape) {
    ProbeSample s = base;
    switch (varied) {
        case ProbeInput::latent: s.z = normal_tensor(rng, {1, shape.latent_dim}); break;
        case ProbeInput::noise: s.noise = draw_noise(rng, shape); break;
        case ProbeInput::trend: s.trend = rng.uniform(); break;
        case ProbeInput::year: s.year = rng.uniform(); break;
        case ProbeInput::day: s.day = rng.uniform(); break;
    }
    return s;
}

ProbeBatch stack(const std::vector<ProbeSample>& samples) {
    ProbeBatch b;
    std::vector<torch::Tensor> zs;
    std::vector<double> tg, ty, td;
    for (const auto& s : samples) {
        zs.push_back(s.z);
        tg.push_back(s.trend);
        ty.push_back(s.year);
        td.push_back(s.day);
    }
    b.z = torch::cat(zs, 0);
    const auto opts = torch::TensorOptions().dtype(torch::kDouble);
    b.trend = torch::tensor(tg, opts);
    b.year = torch::tensor(ty, opts);
    b.day = torch::tensor(td, opts);
    const std::size_t layers = samples.front().noise.size();
    for (std::size_t l = 0; l < layers; ++l) {
        if (!samples.front().noise[l].defined()) {
            b.noise.emplace_back();
            continue;
        }
        std::vector<torch::Tensor> maps;
        for (const auto& s : samples) maps.push_back(s.noise[l]);
        b.noise.push_back(torch::cat(maps, 0));
    }
    return b;
}

}  // namespace

torch::Tensor estimate_variance_image(const ProbeOracle& oracle, const ProbeShape& shape, ProbeInput varied,
                                      std::int64_t pairs, const Rng& rng, std::int64_t chunk) {
    if (pairs < 1) throw AnalysisError("pair count must be >= 1");
    if (chunk < 1) throw AnalysisError("chunk must be >= 1");
    torch::Tensor acc;
    for (std::int64_t start = 0; start < pairs; start += chunk) {
        const std::int64_t n = std::min(chunk, pairs - start);
        std::vector<ProbeSample> samples(static_cast<std::size_t>(2 * n));
        for (std::int64_t i = 0; i < n; ++i) {
            Rng r = rng.split(static_cast<std::uint64_t>(start + i));
            samples[i] = draw_sample(r, shape);
            samples[n + i] = redraw(samples[i], varied, r, shape);
        }
        const torch::Tensor out = oracle(stack(samples)).to(torch::kDouble);
        if (out.size(0) != 2 * n) throw AnalysisError("oracle returned the wrong batch size");
        if (!acc.defined()) acc = torch::zeros(out.sizes().slice(1), torch::kDouble);
        for (std::int64_t i = 0; i < n; ++i) {
            const auto d = out[i] - out[n + i];
            acc += 0.5 * d * d;
        }
    }
    return acc / double(pairs);
}

std::array<torch::Tensor, 5> normalize_variance_images(const std::array<torch::Tensor, 5>& raw) {
    for (const auto& v : raw) {
        if (!v.defined() || v.sizes() != raw[0].sizes()) throw AnalysisError("variance images differ in shape");
        if (v.numel() > 0 && v.min().item<double>() < 0.0) throw AnalysisError("variance image has negative values");
    }
    torch::Tensor sum = torch::zeros_like(raw[0], torch::kDouble);
    for (const auto& v : raw) sum += v.to(torch::kDouble);
    const auto dead = sum < kShareEpsilon;
    std::array<torch::Tensor, 5> out;
    for (std::size_t i = 0; i < 5; ++i)
        out[i] = torch::where(dead, torch::full_like(sum, 0.2), raw[i].to(torch::kDouble) / (sum + kShareEpsilon));
    return out;
}

std::array<double, 5> scalar_shares(const std::array<torch::Tensor, 5>& normalized) {
    std::array<double, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) out[i] = normalized[i].mean().item<double>();
    return out;
}

VarianceReport variance_report(const ProbeOracle& oracle, const ProbeShape& shape, std::int64_t pairs,
                               std::uint64_t seed, std::int64_t chunk) {
    VarianceReport r;
    r.pairs = pairs;
    r.seed = seed;
    const Rng base(seed);
    for (std::size_t i = 0; i < 5; ++i)
        r.raw[i] = estimate_variance_image(oracle, shape, kProbeInputs[i], pairs, base.split(i), chunk);
    r.normalized = normalize_variance_images(r.raw);
    r.scalar_shares = scalar_shares(r.normalized);
    return r;
}

double verify_estimator_equivalence(const GridOracle& oracle, const std::array<std::size_t, 5>& sizes) {
    std::size_t total = 1;
    for (auto s : sizes) {
        if (s == 0) throw AnalysisError("empty input grid");
        if (total > kMaxEnumeration / s) throw AnalysisError("grid too large to enumerate");
        total *= s;
    }

    // Cache every output once.
    std::vector<std::vector<double>> values(total);
    auto flat = [&](const std::array<std::size_t, 5>& idx) {
        std::size_t f = 0;
        for (std::size_t k = 0; k < 5; ++k) f = f * sizes[k] + idx[k];
        return f;
    };
    std::array<std::size_t, 5> idx{};
    for (std::size_t f = 0; f < total; ++f) {
        std::size_t rem = f;
        for (std::size_t k = 5; k-- > 0;) {
            idx[k] = rem % sizes[k];
            rem /= sizes[k];
        }
        values[f] = oracle(idx);
        if (values[f].size() != values[0].size()) throw AnalysisError("oracle output size changed");
    }
    const std::size_t dim = values[0].size();

    double worst = 0.0;
    for (std::size_t input = 0; input < 5; ++input) {
        const std::size_t n = sizes[input];
        std::vector<double> nested(dim, 0.0), paired(dim, 0.0);
        std::size_t groups = 0;
        for (std::size_t f = 0; f < total; ++f) {
            std::size_t rem = f;
            for (std::size_t k = 5; k-- > 0;) {
                idx[k] = rem % sizes[k];
                rem /= sizes[k];
            }
            if (idx[input] != 0) continue;
            ++groups;
            std::vector<std::size_t> members(n);
            for (std::size_t a = 0; a < n; ++a) {
                auto j = idx;
                j[input] = a;
                members[a] = flat(j);
            }
            for (std::size_t c = 0; c < dim; ++c) {
                double mean = 0.0;
                for (auto m : members) mean += values[m][c];
                mean /= double(n);
                double var = 0.0;
                for (auto m : members) var += (values[m][c] - mean) * (values[m][c] - mean);
                nested[c] += var / double(n);
                double pair = 0.0;
                for (auto a : members)
                    for (auto b : members) pair += 0.5 * (values[a][c] - values[b][c]) * (values[a][c] - values[b][c]);
                paired[c] += pair / double(n * n);
            }
        }
        for (std::size_t c = 0; c < dim; ++c)
            worst = std::max(worst, std::abs(nested[c] / double(groups) - paired[c] / double(groups)));
    }
    return worst;
}

ProbeOracle generator_oracle(Generator generator, const CycleConfig& cycles) {
    return [generator, cycles](const ProbeBatch& b) mutable {
        torch::NoGradGuard guard;
        std::vector<TimeTriplet> triplets(static_cast<std::size_t>(b.size()));
        const auto tg = b.trend.accessor<double, 1>();
        const auto ty = b.year.accessor<double, 1>();
        const auto td = b.day.accessor<double, 1>();
        for (std::size_t i = 0; i < triplets.size(); ++i) triplets[i] = {td[i], ty[i], tg[i]};
        const auto cond = conditioning_batch(triplets, cycles);
        return to_unit_range(generator->forward(b.z, b.noise, cond)).permute({0, 2, 3, 1}).contiguous();
    };
}

ProbeShape generator_probe_shape(Generator generator) {
    return {generator->config().latent_dim, generator->noise_resolutions()};
}

// --- PCA --------------------------------------------------------------------

PCABasis pca_of_mapping(const LatentMapping& mapping, int latent_dim, std::int64_t samples, Rng& rng,
                        int max_components) {
    if (samples < 2) throw AnalysisError("PCA needs at least two samples");
    torch::NoGradGuard guard;
    constexpr std::int64_t kChunk = 4096;
    std::vector<torch::Tensor> parts;
    for (std::int64_t start = 0; start < samples; start += kChunk) {
        const auto n = std::min(kChunk, samples - start);
        parts.push_back(mapping(normal_tensor(rng, {n, latent_dim})).to(torch::kDouble));
    }
    const auto w = torch::cat(parts, 0);
    const auto dim = w.size(1);
    if (samples < dim) throw AnalysisError("PCA needs at least as many samples as dimensions");

    const auto mean = w.mean(0);
    const auto centered = w - mean;
    const auto cov = centered.t().matmul(centered) / double(samples - 1);
    auto [evals, evecs] = torch::linalg_eigh(cov);
    evals = evals.flip(0);
    evecs = evecs.flip(1);

    PCABasis basis;
    basis.samples = samples;
    basis.total_variance = cov.trace().item<double>();
    basis.mean.assign(mean.data_ptr<double>(), mean.data_ptr<double>() + dim);
    const double top = std::max(evals[0].item<double>(), 0.0);
    const auto cols = evecs.t().contiguous();
    for (int64_t i = 0; i < dim; ++i) {
        const double v = evals[i].item<double>();
        if (!(v > 1e-10 * top) || top == 0.0) {
            basis.rank_deficient = true;
            break;
        }
        if (max_components > 0 && int(basis.components.size()) == max_components) break;
        const auto row = cols[i];
        basis.components.emplace_back(row.data_ptr<double>(), row.data_ptr<double>() + dim);
        basis.explained_variance.push_back(v);
    }
    return basis;
}

PCABasis pca_latent_directions(Generator generator, std::int64_t samples, Rng& rng, int max_components) {
    const auto& cfg = generator->config();
    if (cfg.mode != ConditioningMode::concat) {
        auto mapping = [&](const torch::Tensor& z) { return generator->mapping(z, torch::Tensor()); };
        return pca_of_mapping(mapping, cfg.latent_dim, samples, rng, max_components);
    }
    Rng label_rng = rng.split(0x636f6e63);
    auto mapping = [&](const torch::Tensor& z) {
        std::vector<TimeTriplet> t(static_cast<std::size_t>(z.size(0)));
        for (auto& v : t) v = {label_rng.uniform(), label_rng.uniform(), label_rng.uniform()};
        return generator->mapping_input(z, conditioning_batch(t, cfg.cycles));
    };
    auto basis = pca_of_mapping(mapping, cfg.latent_dim, samples, rng, max_components);
    basis.pre_mapping = true;
    return basis;
}

// --- Disentanglement ----------------------------------------------------------

DisentanglementResult disentanglement_score(const TripletRenderer& render, const SceneModel& scene,
                                            int latent_dim, int probes, std::uint64_t seed) {
    if (probes < 1) throw AnalysisError("probe count must be >= 1");
    DisentanglementResult res;
    const Rng base(seed);
    for (std::size_t row = 0; row < 4; ++row) {
        Rng rng = base.split(row);
        torch::Tensor za = normal_tensor(rng, {probes, latent_dim});
        torch::Tensor zb = za.clone();
        std::vector<TimeTriplet> ta(static_cast<std::size_t>(probes)), tb;
        for (auto& t : ta) t = {rng.uniform(), rng.uniform(), rng.uniform()};
        tb = ta;
        if (row == 3) {
            zb = normal_tensor(rng, {probes, latent_dim});
        } else {
            for (auto& t : tb) {
                const double v = rng.uniform();
                if (row == 0) t.day = v;
                if (row == 1) t.year = v;
                if (row == 2) t.trend = v;
            }
        }
        const auto ia = render(za, ta);
        const auto ib = render(zb, tb);
        if (ia.size() != ta.size() || ib.size() != tb.size()) throw AnalysisError("renderer returned the wrong count");
        std::array<double, 4> sum{};
        for (std::size_t p = 0; p < ia.size(); ++p) {
            const auto pa = scene.measure(ia[p]);
            const auto pb = scene.measure(ib[p]);
            for (std::size_t c = 0; c < 4; ++c) sum[c] += std::abs(pa[c] - pb[c]);
        }
        for (std::size_t c = 0; c < 4; ++c) res.influence[row][c] = sum[c] / double(probes);
    }
    for (std::size_t r = 0; r < 4; ++r) {
        const auto& row = res.influence[r];
        const double total = std::accumulate(row.begin(), row.end(), 0.0);
        double off = 0.0;
        for (std::size_t c = 0; c < 4; ++c)
            if (c != r) off = std::max(off, row[c]);
        res.diagonal_share[r] = total > 0.0 ? row[r] / total : 0.0;
        res.dominance[r] = off > 0.0 ? row[r] / off
                           : (row[r] > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    }
    return res;
}

TripletRenderer scene_oracle(const SceneModel& scene) {
    return [scene](const torch::Tensor& z, const std::vector<TimeTriplet>& triplets) {
        std::vector<Image> out;
        const auto zc = z.to(torch::kDouble).contiguous();
        for (std::size_t i = 0; i < triplets.size(); ++i)
            out.push_back(scene.render(scene.factors_for(triplets[i], zc[int64_t(i)][0].item<double>())));
        return out;
    };
}

TripletRenderer generator_renderer(Generator generator, const CycleConfig& cycles, std::uint64_t noise_seed) {
    return [generator, cycles, noise_seed](const torch::Tensor& z, const std::vector<TimeTriplet>& triplets) mutable {
        torch::NoGradGuard guard;
        Rng rng(noise_seed);
        const auto noise = sample_noise(rng, generator->noise_resolutions(), int(z.size(0)));
        const auto imgs =
            to_unit_range(generator->forward(z, noise, conditioning_batch(triplets, cycles))).permute({0, 2, 3, 1}).contiguous();
        std::vector<Image> out;
        const auto h = int(imgs.size(1)), w = int(imgs.size(2));
        for (int64_t i = 0; i < imgs.size(0); ++i) {
            Image img(h, w);
            const float* p = imgs[i].data_ptr<float>();
            std::copy(p, p + img.pixels.size(), img.pixels.begin());
            out.push_back(std::move(img));
        }
        return out;
    };
}

}  // namespace cyclelapse
