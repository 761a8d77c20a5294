// Command-line front end: dataset preparation, training, analysis, rendering
// and the HTTP service.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cyclelapse/analysis.hpp"
#include "cyclelapse/checkpoint.hpp"
#include "cyclelapse/config.hpp"
#include "cyclelapse/dataset.hpp"
#include "cyclelapse/render.hpp"
#include "cyclelapse/service.hpp"
#include "cyclelapse/synthetic.hpp"
#include "cyclelapse/training.hpp"

namespace fs = std::filesystem;
using namespace cyclelapse;

namespace {

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw CLI::ValidationError("list", "'" + item + "' is not a number");
        }
    }
    return out;
}

/// "c<i>=<v>" -> (i, v)
std::pair<int, double> parse_pca_flag(const std::string& text) {
    const auto eq = text.find('=');
    if (text.size() < 4 || text[0] != 'c' || eq == std::string::npos)
        throw CLI::ValidationError("--pca", "expected c<index>=<value>, got '" + text + "'");
    const auto parsed = LatentSpec::parse_pca(text.substr(1, eq - 1) + ":" + text.substr(eq + 1));
    return parsed.front();
}

/// Mean over channels, scaled so that `scale` maps to white.
Image heatmap(const torch::Tensor& hwc, double scale) {
    const auto mean = hwc.mean(2).contiguous();
    Image img(int(mean.size(0)), int(mean.size(1)));
    const auto a = mean.accessor<double, 2>();
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double v = scale > 0.0 ? std::clamp(a[y][x] / scale, 0.0, 1.0) : 0.0;
            // Dark blue -> yellow ramp.
            img.at(y, x, 0) = float(v);
            img.at(y, x, 1) = float(0.1 + 0.8 * v);
            img.at(y, x, 2) = float(0.4 * (1.0 - v));
        }
    return img;
}

struct LatentFlags {
    std::uint64_t seed = 0;
    std::uint64_t noise_seed = 0;
    std::vector<std::string> pca;
    std::int64_t pca_samples = 20000;

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "latent seed");
        app->add_option("--noise-seed", noise_seed, "noise seed");
        app->add_option("--pca", pca, "PCA offset c<index>=<value>, repeatable");
        app->add_option("--pca-samples", pca_samples, "samples for the PCA basis");
    }
    LatentSpec spec() const {
        LatentSpec l;
        l.seed = seed;
        l.noise_seed = noise_seed;
        for (const auto& p : pca) l.pca_offsets.push_back(parse_pca_flag(p));
        return l;
    }
};

GeneratorRenderer make_renderer(const InferenceModel& model, const LatentSpec& latent, std::int64_t pca_samples) {
    std::optional<PCABasis> basis;
    if (!latent.pca_offsets.empty()) {
        Rng rng(0);
        basis = pca_latent_directions(model.generator, pca_samples, rng);
    }
    return GeneratorRenderer(model.generator, model.header.cycles, basis);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cyclelapse: time-conditioned generative models for time-lapse sequences"};
    app.require_subcommand(1);
    torch::set_num_threads(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write the procedural toy dataset");
    fs::path synth_out;
    std::uint64_t synth_seed = 0;
    double burst_period = 17.0, long_gap = 0.05;
    int synth_size = 32;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", synth_seed, "scene seed");
    synth->add_option("--burst-period", burst_period, "days between sampled days");
    synth->add_option("--long-gap", long_gap, "fraction of the range removed as one gap");
    synth->add_option("--size", synth_size, "frame side in pixels");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "import timestamped images");
    fs::path ingest_in, ingest_out;
    int ingest_res = 0;
    bool no_pad = false;
    ingest->add_option("--in", ingest_in, "directory of images named by timestamp")->required();
    ingest->add_option("--out", ingest_out, "manifest directory")->required();
    ingest->add_option("--resolution", ingest_res, "downscale padded frames to this side");
    ingest->add_flag("--no-pad", no_pad, "keep the original frame shape");

    // stats
    auto* stats = app.add_subcommand("stats", "print dataset statistics");
    fs::path stats_data;
    stats->add_option("--data", stats_data, "manifest directory or index file")->required();

    // align
    auto* align = app.add_subcommand("align", "apply per-segment alignment from correspondence files");
    fs::path align_data, align_segments, align_out;
    align->add_option("--data", align_data, "manifest")->required();
    align->add_option("--segments", align_segments, "lines of: first last correspondence-file")->required();
    align->add_option("--out", align_out, "output manifest directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train a model");
    fs::path train_data, train_config, train_out, train_resume;
    std::int64_t train_images = -1;
    train->add_option("--data", train_data, "manifest")->required();
    train->add_option("--config", train_config, "experiment config (INI)");
    train->add_option("--out", train_out, "run directory")->required();
    train->add_option("--resume", train_resume, "checkpoint to continue from");
    train->add_option("--images", train_images, "override the image budget");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "variance images of a checkpoint");
    fs::path analyze_ckpt, analyze_out;
    std::int64_t analyze_pairs = 5000;
    std::uint64_t analyze_seed = 0;
    analyze->add_option("--ckpt", analyze_ckpt, "checkpoint")->required();
    analyze->add_option("--pairs", analyze_pairs, "pairs per input");
    analyze->add_option("--out", analyze_out, "output directory")->required();
    analyze->add_option("--seed", analyze_seed, "random seed");

    // score
    auto* score = app.add_subcommand("score", "disentanglement influence matrix on the toy scene");
    fs::path score_ckpt;
    int score_probes = 512;
    std::uint64_t score_seed = 0;
    score->add_option("--ckpt", score_ckpt, "checkpoint trained on the toy scene")->required();
    score->add_option("--probes", score_probes, "pairs per input");
    score->add_option("--seed", score_seed, "random seed");

    // pca
    auto* pca = app.add_subcommand("pca", "principal latent directions");
    fs::path pca_ckpt;
    std::int64_t pca_samples = 20000;
    int pca_components = 10;
    std::uint64_t pca_seed = 0;
    pca->add_option("--ckpt", pca_ckpt, "checkpoint")->required();
    pca->add_option("--samples", pca_samples, "latent samples");
    pca->add_option("--components", pca_components, "components to print");
    pca->add_option("--seed", pca_seed, "random seed");

    // render
    auto* render = app.add_subcommand("render", "render images from a checkpoint or dataset");
    render->require_subcommand(1);

    auto* r_tl = render->add_subcommand("timelapse", "time-lapse image");
    fs::path tl_ckpt, tl_data, tl_out;
    double tl_start = 0.0, tl_end = 1.0;
    int tl_width = 256;
    std::optional<double> tl_td, tl_ty, tl_tg;
    LatentFlags tl_latent;
    r_tl->add_option("--ckpt", tl_ckpt, "checkpoint (generator source)");
    r_tl->add_option("--data", tl_data, "manifest (dataset source)");
    r_tl->add_option("--t-start", tl_start, "start time");
    r_tl->add_option("--t-end", tl_end, "end time");
    r_tl->add_option("--width", tl_width, "output columns");
    r_tl->add_option("--td", tl_td, "pin the day input");
    r_tl->add_option("--ty", tl_ty, "pin the year input");
    r_tl->add_option("--tg", tl_tg, "pin the trend input");
    r_tl->add_option("--out", tl_out, "output PNG")->required();
    tl_latent.add(r_tl);

    auto* r_grid = render->add_subcommand("grid", "sweep grid over two inputs");
    fs::path grid_ckpt, grid_out;
    std::string grid_a1 = "ty", grid_a2 = "td", grid_v1 = "0,0.25,0.5,0.75", grid_v2 = "0,0.25,0.5,0.75";
    double grid_td = 0.5, grid_ty = 0.5, grid_tg = 0.5;
    LatentFlags grid_latent;
    r_grid->add_option("--ckpt", grid_ckpt, "checkpoint")->required();
    r_grid->add_option("--rows", grid_a1, "row input: td, ty, tg or seed");
    r_grid->add_option("--row-values", grid_v1, "comma-separated row values");
    r_grid->add_option("--cols", grid_a2, "column input: td, ty, tg or seed");
    r_grid->add_option("--col-values", grid_v2, "comma-separated column values");
    r_grid->add_option("--td", grid_td, "fixed day input");
    r_grid->add_option("--ty", grid_ty, "fixed year input");
    r_grid->add_option("--tg", grid_tg, "fixed trend input");
    r_grid->add_option("--out", grid_out, "output PNG")->required();
    grid_latent.add(r_grid);

    auto* r_seq = render->add_subcommand("sequence", "frame sequence from a schedule file");
    fs::path seq_ckpt, seq_schedule, seq_out;
    int seq_super = 1;
    std::int64_t seq_pca_samples = 20000;
    r_seq->add_option("--ckpt", seq_ckpt, "checkpoint")->required();
    r_seq->add_option("--schedule", seq_schedule, "schedule JSON")->required();
    r_seq->add_option("--out", seq_out, "output directory")->required();
    r_seq->add_option("--supersample", seq_super, "frames per schedule step");
    r_seq->add_option("--pca-samples", seq_pca_samples, "samples for the PCA basis");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP inference service");
    ServiceConfig svc;
    serve->add_option("--ckpt", svc.checkpoint, "checkpoint")->required();
    serve->add_option("--host", svc.host, "bind address");
    serve->add_option("--port", svc.port, "port");
    serve->add_option("--max-renders", svc.max_concurrent_renders, "concurrent renders");
    serve->add_option("--pca-samples", svc.pca_samples, "samples for the PCA basis");
    serve->add_option("--pca-cache", svc.pca_cache_size, "cached PCA bases");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            auto spec = toy_scene_spec(synth_seed, burst_period, long_gap);
            spec.image_size = synth_size;
            auto data = synthesize_dataset(spec);
            write_manifest(data.manifest, synth_out, 16);
            write_ground_truth(synth_out / "ground_truth.tsv", data.truth);
            std::cout << format_stats(data.manifest.stats) << "\n";
        } else if (ingest->parsed()) {
            IngestOptions opt;
            opt.pad = !no_pad;
            opt.target_resolution = ingest_res;
            auto result = ingest_directory(ingest_in, opt);
            for (const auto& d : result.diagnostics) std::cerr << "skipped: " << d << "\n";
            write_manifest(result.manifest, ingest_out);
            std::cout << format_stats(result.manifest.stats) << "\n";
        } else if (stats->parsed()) {
            std::cout << format_stats(load_manifest(stats_data).stats) << "\n";
        } else if (align->parsed()) {
            auto manifest = load_manifest(align_data);
            std::ifstream in(align_segments);
            if (!in) throw std::runtime_error("cannot open " + align_segments.string());
            std::vector<AlignmentSegment> segments;
            std::size_t first = 0, last = 0;
            std::string file;
            while (in >> first >> last >> file) {
                const auto corr = read_correspondences(align_segments.parent_path() / file);
                std::vector<Point2> src, dst;
                for (const auto& c : corr) {
                    src.push_back(c.src);
                    dst.push_back(c.dst);
                }
                if (corr.size() < kMinAutomaticKeypoints)
                    std::cerr << "warning: segment " << first << "-" << last << " has only " << corr.size()
                              << " correspondences\n";
                const auto fit = fit_partial_affine(src, dst);
                std::cout << "segment " << first << "-" << last << ": rms " << fit.rms_residual << "\n";
                segments.push_back({first, last, fit.transform});
            }
            auto aligned = apply_alignment(manifest, segments);
            write_manifest(aligned, align_out);
        } else if (train->parsed()) {
            const auto experiment = train_config.empty() ? ExperimentConfig{} : ExperimentConfig::load(train_config);
            auto exp = experiment;
            if (train_images >= 0) exp.train.total_images = train_images;
            RunOptions opt;
            opt.out_dir = train_out;
            if (!train_resume.empty()) opt.resume = train_resume;
            opt.on_record = [](const MetricRecord& r) { std::cout << r.to_json() << std::endl; };
            const auto manifest = load_manifest(train_data);
            const auto state = training_run(manifest, exp, opt);
            std::cout << "finished at " << state.images_shown << " images\n";
        } else if (analyze->parsed()) {
            const auto model = load_inference_model(analyze_ckpt);
            const auto report = variance_report(generator_oracle(model.generator, model.header.cycles),
                                                generator_probe_shape(model.generator), analyze_pairs, analyze_seed);
            fs::create_directories(analyze_out);
            double raw_max = 0.0;
            for (const auto& r : report.raw) raw_max = std::max(raw_max, r.mean(2).max().item<double>());
            std::ofstream txt(analyze_out / "report.txt");
            txt << "pairs " << report.pairs << "\nseed " << report.seed << "\n";
            for (std::size_t i = 0; i < 5; ++i) {
                const auto name = to_string(kProbeInputs[i]);
                write_png(analyze_out / ("share_" + name + ".png"), heatmap(report.normalized[i], 1.0));
                write_png(analyze_out / ("variance_" + name + ".png"), heatmap(report.raw[i], raw_max));
                txt << "share_" << name << " " << format_exact(report.scalar_shares[i]) << "\n";
                std::cout << name << " " << report.scalar_shares[i] << "\n";
            }
        } else if (score->parsed()) {
            const auto model = load_inference_model(score_ckpt);
            auto spec = toy_scene_spec();
            spec.image_size = model.generator->config().resolution;
            spec.length_days = model.header.dataset.length_days;
            const SceneModel scene(spec);
            const auto result =
                disentanglement_score(generator_renderer(model.generator, model.header.cycles, score_seed), scene,
                                      model.generator->config().latent_dim, score_probes, score_seed);
            const char* rows[] = {"td", "ty", "tg", "z"};
            std::printf("%-4s %10s %10s %10s %10s %10s\n", "", "day", "year", "trend", "weather", "dominance");
            for (std::size_t r = 0; r < 4; ++r)
                std::printf("%-4s %10.5f %10.5f %10.5f %10.5f %10.3f\n", rows[r], result.influence[r][0],
                            result.influence[r][1], result.influence[r][2], result.influence[r][3],
                            result.dominance[r]);
        } else if (pca->parsed()) {
            const auto model = load_inference_model(pca_ckpt);
            Rng rng(pca_seed);
            const auto basis = pca_latent_directions(model.generator, pca_samples, rng, pca_components);
            std::cout << "space " << (basis.pre_mapping ? "mapping_input" : "w") << "\nsamples " << basis.samples
                      << "\ntotal_variance " << basis.total_variance << "\n";
            if (basis.rank_deficient) std::cout << "rank_deficient true\n";
            for (std::size_t i = 0; i < basis.explained_variance.size(); ++i)
                std::cout << "c" << i << " " << basis.explained_variance[i] << "\n";
        } else if (r_tl->parsed()) {
            Image img;
            if (!tl_data.empty()) {
                img = render_timelapse_image(load_manifest(tl_data), tl_start, tl_end, tl_width);
            } else if (!tl_ckpt.empty()) {
                const auto model = load_inference_model(tl_ckpt);
                const auto latent = tl_latent.spec();
                const auto renderer = make_renderer(model, latent, tl_latent.pca_samples);
                TripletOverrides o{tl_td, tl_ty, tl_tg};
                img = render_timelapse_image(renderer.source(latent, o), tl_start, tl_end, tl_width);
            } else {
                throw std::runtime_error("render timelapse needs --ckpt or --data");
            }
            write_png(tl_out, img);
        } else if (r_grid->parsed()) {
            const auto model = load_inference_model(grid_ckpt);
            const auto latent = grid_latent.spec();
            const auto renderer = make_renderer(model, latent, grid_latent.pca_samples);
            const SweepAxis a1{parse_sweep_input(grid_a1), parse_list(grid_v1)};
            const SweepAxis a2{parse_sweep_input(grid_a2), parse_list(grid_v2)};
            const auto grid = render_sweep_grid(renderer, a1, a2, {grid_td, grid_ty, grid_tg}, latent);
            write_png(grid_out, grid.montage());
        } else if (r_seq->parsed()) {
            const auto model = load_inference_model(seq_ckpt);
            const auto schedule = RenderSchedule::load(seq_schedule).supersampled(seq_super);
            const auto renderer = make_renderer(model, schedule.latent, seq_pca_samples);
            export_sequence(renderer, schedule, seq_out);
            std::cout << schedule.frames.size() << " frames written to " << seq_out << "\n";
        } else if (serve->parsed()) {
            InferenceService service(svc);
            std::cout << "listening on " << svc.host << ":" << svc.port << std::endl;
            service.serve();
        }
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n" << e.snapshot() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
