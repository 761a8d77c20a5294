#include "cyclelapse/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cyclelapse/config.hpp"

namespace cyclelapse {

using nlohmann::json;

Image tensor_to_image(const torch::Tensor& t) {
    const auto hwc = to_unit_range(t.detach()).squeeze(0).permute({1, 2, 0}).contiguous();
    Image img(int(hwc.size(0)), int(hwc.size(1)));
    const float* p = hwc.data_ptr<float>();
    std::copy(p, p + img.pixels.size(), img.pixels.begin());
    return img;
}

// --- Time-lapse image ------------------------------------------------------------

Image render_timelapse_image(const FrameSource& source, double t_start, double t_end, int width) {
    if (width < 1) throw RenderError("time-lapse width must be >= 1");
    if (!std::isfinite(t_start) || !std::isfinite(t_end)) throw RenderError("time range must be finite");
    Image out;
    for (int x = 0; x < width; ++x) {
        const double tx = t_start + double(x) / double(std::max(width - 1, 1)) * (t_end - t_start);
        const Image frame = source(tx);
        if (frame.empty()) throw RenderError("frame source returned an empty image");
        if (x == 0) out = Image(frame.height, width);
        if (frame.height != out.height) throw RenderError("frame heights differ");
        const int col = width == 1 ? 0 : int(std::lround(double(x) * (frame.width - 1) / double(width - 1)));
        for (int y = 0; y < frame.height; ++y)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = frame.at(y, col, c);
    }
    return out;
}

std::size_t nearest_frame(std::span<const double> raw, double t) {
    if (raw.empty()) throw RenderError("dataset has no frames");
    const auto it = std::lower_bound(raw.begin(), raw.end(), t);
    if (it == raw.begin()) return 0;
    if (it == raw.end()) return raw.size() - 1;
    const auto hi = std::size_t(it - raw.begin());
    return (t - raw[hi - 1] <= raw[hi] - t) ? hi - 1 : hi;
}

Image render_timelapse_image(const DatasetManifest& manifest, double t_start, double t_end, int width) {
    if (manifest.frames.empty()) throw RenderError("dataset has no frames");
    if (t_start < 0.0 || t_start > 1.0 || t_end < 0.0 || t_end > 1.0)
        throw RenderError("dataset time range must lie in [0, 1]");
    const auto raw = manifest.raw_linear();
    return render_timelapse_image([&](double t) { return manifest.frames[nearest_frame(raw, t)].image; }, t_start,
                                  t_end, width);
}

// --- Latents ---------------------------------------------------------------------

std::vector<std::pair<int, double>> LatentSpec::parse_pca(const std::string& text) {
    std::vector<std::pair<int, double>> out;
    if (text.empty()) return out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw RenderError("pca entry '" + item + "' is not index:value");
        std::size_t used = 0, used2 = 0;
        int index = 0;
        double value = 0.0;
        try {
            index = std::stoi(item.substr(0, colon), &used);
            value = std::stod(item.substr(colon + 1), &used2);
        } catch (const std::exception&) {
            throw RenderError("pca entry '" + item + "' is not index:value");
        }
        if (used != colon || used2 != item.size() - colon - 1 || index < 0 || !std::isfinite(value))
            throw RenderError("pca entry '" + item + "' is not index:value");
        out.emplace_back(index, value);
    }
    return out;
}

TimeTriplet TripletOverrides::apply(double t) const {
    return {day.value_or(t), year.value_or(t), trend.value_or(t)};
}

GeneratorRenderer::GeneratorRenderer(Generator generator, CycleConfig cycles, std::optional<PCABasis> basis)
    : generator_(std::move(generator)), cycles_(cycles), basis_(std::move(basis)) {}

torch::Tensor GeneratorRenderer::latent(const LatentSpec& spec) const {
    const int dim = generator_->config().latent_dim;
    if (spec.z) {
        if (int(spec.z->size()) != dim) throw RenderError("explicit z has the wrong length");
        return torch::tensor(*spec.z, torch::kFloat).view({1, dim});
    }
    Rng rng(spec.seed);
    return sample_latent(rng, 1, dim);
}

Image GeneratorRenderer::render(const TimeTriplet& t, const LatentSpec& spec) const {
    if (!std::isfinite(t.day) || !std::isfinite(t.year) || !std::isfinite(t.trend))
        throw RenderError("triplet must be finite");
    torch::NoGradGuard guard;
    auto& g = *generator_.ptr();
    const auto z = latent(spec);
    Rng noise_rng(spec.noise_seed);
    const auto noise = sample_noise(noise_rng, g.noise_resolutions(), 1);
    const TimeTriplet triplets[1] = {t};
    const auto cond = conditioning_batch(triplets, cycles_);

    torch::Tensor w;
    const bool offsets = std::any_of(spec.pca_offsets.begin(), spec.pca_offsets.end(),
                                     [](const auto& p) { return p.second != 0.0; });
    if (!offsets) {
        w = g.mapping(z, cond);
    } else {
        if (!basis_) throw RenderError("PCA offsets need a PCA basis");
        auto x = basis_->pre_mapping ? g.mapping_input(z, cond) : g.mapping(z, cond);
        auto delta = torch::zeros({x.size(1)}, torch::kDouble);
        for (const auto& [index, value] : spec.pca_offsets) {
            if (index < 0 || std::size_t(index) >= basis_->components.size())
                throw RenderError("PCA component " + std::to_string(index) + " does not exist");
            delta += value * torch::tensor(basis_->components[std::size_t(index)], torch::kDouble);
        }
        x = x + delta.to(torch::kFloat).unsqueeze(0);
        w = basis_->pre_mapping ? g.mapping_from_input(x) : x;
    }
    return tensor_to_image(g.synthesis(w, noise, cond));
}

FrameSource GeneratorRenderer::source(const LatentSpec& spec, const TripletOverrides& overrides) const {
    return [this, spec, overrides](double t) { return render(overrides.apply(t), spec); };
}

// --- Sweep grid -------------------------------------------------------------------

SweepInput parse_sweep_input(const std::string& name) {
    if (name == "td" || name == "day") return SweepInput::day;
    if (name == "ty" || name == "year") return SweepInput::year;
    if (name == "tg" || name == "trend") return SweepInput::trend;
    if (name == "seed" || name == "z") return SweepInput::seed;
    throw RenderError("unknown sweep input '" + name + "'");
}

Image SweepGrid::montage() const {
    if (cells.empty()) return {};
    const int h = cells.front().height, w = cells.front().width;
    Image out(rows * h, cols * w);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const Image& cell = cells[std::size_t(r * cols + c)];
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int k = 0; k < 3; ++k) out.at(r * h + y, c * w + x, k) = cell.at(y, x, k);
        }
    return out;
}

SweepGrid render_sweep_grid(const GeneratorRenderer& renderer, const SweepAxis& axis1, const SweepAxis& axis2,
                            const TimeTriplet& fixed, const LatentSpec& latent) {
    if (axis1.input == axis2.input) throw RenderError("sweep axes must vary different inputs");
    if (axis1.values.empty() || axis2.values.empty()) throw RenderError("sweep axes must not be empty");
    auto apply = [](const SweepAxis& axis, double v, TimeTriplet& t, LatentSpec& l) {
        switch (axis.input) {
            case SweepInput::day: t.day = v; break;
            case SweepInput::year: t.year = v; break;
            case SweepInput::trend: t.trend = v; break;
            case SweepInput::seed:
                if (v < 0.0 || v != std::floor(v)) throw RenderError("seed axis values must be non-negative integers");
                l.seed = std::uint64_t(v);
                l.z.reset();
                break;
        }
    };
    SweepGrid grid;
    grid.rows = int(axis1.values.size());
    grid.cols = int(axis2.values.size());
    for (double a : axis1.values)
        for (double b : axis2.values) {
            TimeTriplet t = fixed;
            LatentSpec l = latent;
            apply(axis1, a, t, l);
            apply(axis2, b, t, l);
            grid.cells.push_back(renderer.render(t, l));
        }
    return grid;
}

// --- Schedules ----------------------------------------------------------------------

void RenderSchedule::validate() const {
    for (const auto& t : frames)
        if (!std::isfinite(t.day) || !std::isfinite(t.year) || !std::isfinite(t.trend))
            throw RenderError("schedule contains a non-finite triplet");
}

RenderSchedule RenderSchedule::supersampled(int factor) const {
    if (factor < 1) throw RenderError("supersampling factor must be >= 1");
    RenderSchedule out;
    out.latent = latent;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        out.frames.push_back(frames[i]);
        if (i + 1 == frames.size()) break;
        for (int k = 1; k < factor; ++k) {
            const double a = double(k) / factor;
            const auto& p = frames[i];
            const auto& q = frames[i + 1];
            out.frames.push_back({p.day + a * (q.day - p.day), p.year + a * (q.year - p.year),
                                  p.trend + a * (q.trend - p.trend)});
        }
    }
    return out;
}

std::string RenderSchedule::to_json() const {
    json j;
    j["format"] = kScheduleFormat;
    j["seed"] = latent.seed;
    j["noise_seed"] = latent.noise_seed;
    j["pca"] = json::array();
    for (const auto& [i, v] : latent.pca_offsets) j["pca"].push_back({{"index", i}, {"value", v}});
    if (latent.z) j["z"] = *latent.z;
    j["frames"] = json::array();
    for (const auto& t : frames) j["frames"].push_back({{"td", t.day}, {"ty", t.year}, {"tg", t.trend}});
    return j.dump(2);
}

RenderSchedule RenderSchedule::from_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        if (j.at("format").get<std::string>() != kScheduleFormat) throw RenderError("unsupported schedule format");
        RenderSchedule s;
        s.latent.seed = j.value("seed", std::uint64_t{0});
        s.latent.noise_seed = j.value("noise_seed", std::uint64_t{0});
        if (j.contains("pca"))
            for (const auto& p : j.at("pca"))
                s.latent.pca_offsets.emplace_back(p.at("index").get<int>(), p.at("value").get<double>());
        if (j.contains("z")) s.latent.z = j.at("z").get<std::vector<float>>();
        for (const auto& f : j.at("frames"))
            s.frames.push_back({f.at("td").get<double>(), f.at("ty").get<double>(), f.at("tg").get<double>()});
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw RenderError(std::string("malformed schedule: ") + e.what());
    }
}

RenderSchedule RenderSchedule::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RenderError("cannot open schedule " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

void export_sequence(const GeneratorRenderer& renderer, const RenderSchedule& schedule,
                     const std::filesystem::path& out_dir) {
    schedule.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir)) throw RenderError("cannot create " + out_dir.string());
    std::ostringstream index;
    index << kSequenceHeader << "\n";
    char name[32];
    for (std::size_t i = 0; i < schedule.frames.size(); ++i) {
        std::snprintf(name, sizeof name, "frame_%06zu.png", i);
        try {
            write_png(out_dir / name, renderer.render(schedule.frames[i], schedule.latent));
        } catch (const ImageError& e) {
            throw RenderError(e.what());
        }
        const auto& t = schedule.frames[i];
        index << name << '\t' << format_exact(t.day) << '\t' << format_exact(t.year) << '\t'
              << format_exact(t.trend) << "\n";
    }
    const auto path = out_dir / kSequenceIndexName;
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << index.str();
        if (!out) throw RenderError("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace cyclelapse
