#include "cyclelapse/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cyclelapse/analysis.hpp"

namespace cyclelapse {

using nlohmann::json;

namespace {

constexpr std::uint64_t kMonitorStream = 0x6d6f6e69746f72ULL;

std::vector<std::pair<std::string, torch::Tensor>> named(torch::nn::Module& m) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : m.named_parameters()) out.emplace_back(item.key(), item.value());
    return out;
}

void set_requires_grad(torch::nn::Module& m, bool on) {
    for (auto& p : m.parameters()) p.set_requires_grad(on);
}

torch::Tensor gather_frames(const torch::Tensor& images, const std::vector<std::size_t>& indices) {
    std::vector<int64_t> idx(indices.begin(), indices.end());
    return images.index_select(0, torch::tensor(idx, torch::kLong));
}

std::string describe(const std::string& phase, const TrainState& s, const LabelBatch& labels, double d_loss,
                     double g_loss) {
    std::ostringstream out;
    out << "phase=" << phase << " step=" << s.step << " images_shown=" << s.images_shown << " d_loss=" << d_loss
        << " g_loss=" << g_loss << " last_r1=" << s.last_r1 << "\nlabels (day year trend):";
    for (const auto& t : labels.gen_labels) out << "\n  " << t.day << ' ' << t.year << ' ' << t.trend;
    out << "\ngenerator parameters finite=" << parameters_finite(*s.generator)
        << " discriminator parameters finite=" << parameters_finite(*s.discriminator);
    return out.str();
}

void require_finite(double v, const std::string& phase, const TrainState& s, const LabelBatch& labels,
                    double d_loss, double g_loss) {
    if (!std::isfinite(v))
        throw TrainingError("non-finite " + phase + " at step " + std::to_string(s.step),
                            describe(phase, s, labels, d_loss, g_loss));
}

}  // namespace

// --- Labels --------------------------------------------------------------------

LabelBatch sample_training_labels(std::span<const double> raw_linear, int batch, const JitterConfig& jitter,
                                  bool dequantize, Rng& rng) {
    if (raw_linear.empty()) throw TrainingError("cannot sample labels from an empty dataset", "");
    if (batch < 1) throw TrainingError("batch must be positive", "");
    auto draw_time = [&](std::size_t j) {
        return dequantize ? dequantize_timestamp(j, raw_linear, rng) : raw_linear[j];
    };
    LabelBatch out;
    for (int b = 0; b < batch; ++b) {
        const std::size_t j = rng.index(raw_linear.size());
        out.indices.push_back(j);
        out.real_labels.push_back(augment_discriminator_labels(TimeTriplet::uniform(draw_time(j)), jitter, rng));
    }
    for (int b = 0; b < batch; ++b) {
        const std::size_t j = rng.index(raw_linear.size());
        const TimeTriplet t = TimeTriplet::uniform(draw_time(j));
        out.gen_labels.push_back(t);
        out.fake_labels.push_back(augment_discriminator_labels(t, jitter, rng));
    }
    return out;
}

LabelBatch sample_training_labels(const DatasetManifest& manifest, int batch, const JitterConfig& jitter,
                                  bool dequantize, Rng& rng) {
    const auto raw = manifest.raw_linear();
    return sample_training_labels(std::span<const double>(raw), batch, jitter, dequantize, rng);
}

// --- Adam ------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, torch::Tensor>> params, double lr, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, p] : params_) {
        m_.push_back(torch::zeros_like(p));
        v_.push_back(torch::zeros_like(p));
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& [name, p] : params_)
        if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
}

void AdamOptimizer::step() {
    torch::NoGradGuard guard;
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, double(steps_));
    const double c2 = 1.0 - std::pow(beta2_, double(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i].second;
        const auto& g = p.grad();
        if (!g.defined()) continue;
        m_[i].mul_(beta1_).add_(g, 1.0 - beta1_);
        v_[i].mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
        const auto denom = (v_[i] / c2).sqrt_().add_(eps_);
        p.addcdiv_(m_[i], denom, -lr_ / c1);
    }
}

double AdamOptimizer::grad_norm() const {
    double sum = 0.0;
    for (const auto& [name, p] : params_)
        if (p.grad().defined()) sum += p.grad().to(torch::kDouble).square().sum().item<double>();
    return std::sqrt(sum);
}

void AdamOptimizer::store(Archive& archive, const std::string& prefix) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        archive.put_tensor(prefix + params_[i].first + "/m", m_[i]);
        archive.put_tensor(prefix + params_[i].first + "/v", v_[i]);
    }
    archive.put_text(prefix + "steps", std::to_string(steps_));
}

void AdamOptimizer::restore(const Archive& archive, const std::string& prefix) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto m = archive.tensor(prefix + params_[i].first + "/m");
        const auto v = archive.tensor(prefix + params_[i].first + "/v");
        if (m.sizes() != m_[i].sizes() || v.sizes() != v_[i].sizes())
            throw CheckpointError("optimizer moment shape mismatch for " + params_[i].first);
        m_[i].copy_(m);
        v_[i].copy_(v);
    }
    steps_ = std::stoll(archive.text(prefix + "steps"));
}

// --- Metric records --------------------------------------------------------------

std::string MetricRecord::to_json() const {
    json j;
    j["images_shown"] = images_shown;
    j["step"] = step;
    j["d_loss"] = metrics.d_loss;
    j["g_loss"] = metrics.g_loss;
    j["r1"] = metrics.r1;
    j["d_grad_norm"] = metrics.d_grad_norm;
    j["g_grad_norm"] = metrics.g_grad_norm;
    j["shares"] = {{"z", shares[0]}, {"n", shares[1]}, {"tg", shares[2]}, {"ty", shares[3]}, {"td", shares[4]}};
    j["collapse_warning"] = collapse_warning;
    return j.dump();
}

MetricRecord MetricRecord::from_json(const std::string& line) {
    const auto j = json::parse(line);
    MetricRecord r;
    r.images_shown = j.at("images_shown").get<std::int64_t>();
    r.step = j.at("step").get<std::int64_t>();
    r.metrics.d_loss = j.at("d_loss").get<double>();
    r.metrics.g_loss = j.at("g_loss").get<double>();
    r.metrics.r1 = j.at("r1").get<double>();
    r.metrics.d_grad_norm = j.at("d_grad_norm").get<double>();
    r.metrics.g_grad_norm = j.at("g_grad_norm").get<double>();
    const auto& s = j.at("shares");
    r.shares = {s.at("z").get<double>(), s.at("n").get<double>(), s.at("tg").get<double>(),
                s.at("ty").get<double>(), s.at("td").get<double>()};
    r.collapse_warning = j.at("collapse_warning").get<bool>();
    return r;
}

// --- Data --------------------------------------------------------------------------

TrainingData TrainingData::from_manifest(const DatasetManifest& manifest) {
    if (manifest.frames.empty()) throw TrainingError("training manifest is empty", "");
    const int h = manifest.frames.front().image.height, w = manifest.frames.front().image.width;
    if (h != w) throw TrainingError("training frames must be square", "");
    TrainingData d;
    d.images = torch::empty({int64_t(manifest.frames.size()), 3, h, w}, torch::kFloat);
    for (std::size_t i = 0; i < manifest.frames.size(); ++i) {
        const auto& img = manifest.frames[i].image;
        if (img.height != h || img.width != w) throw TrainingError("training frames differ in size", "");
        const auto hwc = torch::from_blob(const_cast<float*>(img.pixels.data()), {h, w, 3}, torch::kFloat);
        d.images[int64_t(i)].copy_(hwc.permute({2, 0, 1}) * 2.0 - 1.0);
    }
    d.raw_linear = manifest.raw_linear();
    d.info = {manifest.stats.first, manifest.stats.last, manifest.stats.length_days, manifest.frames.size()};
    return d;
}

// --- State -------------------------------------------------------------------------

CheckpointHeader TrainState::header() const {
    CheckpointHeader h;
    h.experiment = experiment;
    h.cycles = cycles;
    h.jitter = jitter;
    h.dataset = dataset;
    h.images_shown = images_shown;
    h.step = step;
    return h;
}

namespace {

void build_networks(TrainState& s) {
    torch::manual_seed(s.experiment.train.seed);
    s.generator = Generator(s.experiment.generator_config(s.cycles));
    s.discriminator = Discriminator(s.experiment.discriminator_config(s.cycles));
    const auto& t = s.experiment.train;
    s.g_opt = AdamOptimizer(named(*s.generator), t.g_lr, t.beta1, t.beta2, t.epsilon);
    s.d_opt = AdamOptimizer(named(*s.discriminator), t.d_lr, t.beta1, t.beta2, t.epsilon);
}

}  // namespace

TrainState init_train_state(const ExperimentConfig& experiment, const DatasetInfo& dataset) {
    experiment.train.validate();
    TrainState s;
    s.experiment = experiment;
    s.dataset = dataset;
    s.cycles = experiment.cycles.resolve(dataset.length_days);
    s.jitter = experiment.jitter.resolve(dataset.length_days);
    build_networks(s);
    return s;
}

StepMetrics train_step(TrainState& s, const TrainingData& data, Rng& rng) {
    torch::AutoGradMode grad_mode(true);
    const auto& cfg = s.experiment.train;
    const int batch = cfg.batch_size;
    auto& G = s.generator;
    auto& D = s.discriminator;
    StepMetrics m;

    // Discriminator update.
    const LabelBatch labels = sample_training_labels(data.raw_linear, batch, s.jitter, cfg.dequantize, rng);
    const auto z = sample_latent(rng, batch, G->config().latent_dim);
    const auto noise = sample_noise(rng, G->noise_resolutions(), batch);
    torch::Tensor fake;
    {
        torch::NoGradGuard guard;
        fake = G->forward(z, noise, conditioning_batch(labels.gen_labels, s.cycles));
    }
    const bool lazy_r1 = s.step % cfg.r1_interval == 0;
    auto reals = gather_frames(data.images, labels.indices);
    if (lazy_r1) reals.set_requires_grad(true);

    set_requires_grad(*D, true);
    s.d_opt.zero_grad();
    const auto fake_logits = D->forward(fake, conditioning_batch(labels.fake_labels, s.cycles));
    const auto real_logits = D->forward(reals, conditioning_batch(labels.real_labels, s.cycles));
    auto d_loss = torch::softplus(fake_logits).mean() + torch::softplus(-real_logits).mean();
    m.d_loss = d_loss.item<double>();
    require_finite(m.d_loss, "discriminator loss", s, labels, m.d_loss, 0.0);
    if (lazy_r1) {
        const auto grad = torch::autograd::grad({real_logits.sum()}, {reals}, {}, true, true)[0];
        const double gamma = cfg.resolved_r1_gamma(G->config().resolution);
        const auto penalty = grad.square().sum({1, 2, 3}).mean() * (gamma / 2.0);
        s.last_r1 = penalty.item<double>();
        require_finite(s.last_r1, "R1 penalty", s, labels, m.d_loss, 0.0);
        d_loss = d_loss + penalty * double(cfg.r1_interval);
        m.r1_applied = true;
    }
    m.r1 = s.last_r1;
    d_loss.backward();
    m.d_grad_norm = s.d_opt.grad_norm();
    s.d_opt.step();
    s.d_opt.zero_grad();

    // Generator update with fresh labels and latents.
    const LabelBatch g_labels = sample_training_labels(data.raw_linear, batch, s.jitter, cfg.dequantize, rng);
    const auto z2 = sample_latent(rng, batch, G->config().latent_dim);
    const auto noise2 = sample_noise(rng, G->noise_resolutions(), batch);
    set_requires_grad(*D, false);
    s.g_opt.zero_grad();
    const auto gen = G->forward(z2, noise2, conditioning_batch(g_labels.gen_labels, s.cycles));
    const auto g_loss = torch::softplus(-D->forward(gen, conditioning_batch(g_labels.fake_labels, s.cycles))).mean();
    m.g_loss = g_loss.item<double>();
    require_finite(m.g_loss, "generator loss", s, g_labels, m.d_loss, m.g_loss);
    g_loss.backward();
    m.g_grad_norm = s.g_opt.grad_norm();
    s.g_opt.step();
    s.g_opt.zero_grad();
    set_requires_grad(*D, true);

    if (!parameters_finite(*G) || !parameters_finite(*D))
        throw TrainingError("parameters became non-finite at step " + std::to_string(s.step),
                            describe("update", s, g_labels, m.d_loss, m.g_loss));
    s.images_shown += batch;
    ++s.step;
    return m;
}

ShareVector monitor_shares(TrainState& s, int pairs, std::uint64_t seed) {
    const auto report =
        variance_report(generator_oracle(s.generator, s.cycles), generator_probe_shape(s.generator), pairs, seed);
    return report.scalar_shares;
}

// --- Checkpoints ---------------------------------------------------------------

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
    Archive a;
    a.put_text("config", s.header().to_text());
    store_parameters(a, "G/", *s.generator);
    store_parameters(a, "D/", *s.discriminator);
    s.g_opt.store(a, "opt/G/");
    s.d_opt.store(a, "opt/D/");
    std::ostringstream progress;
    progress << "last_r1 " << format_exact(s.last_r1) << "\nlow_latent_streak " << s.low_latent_streak << "\n";
    for (const auto& r : s.history) progress << r.to_json() << "\n";
    a.put_text("progress", progress.str());
    a.save(path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    const Archive a = Archive::load(path);
    const auto header = CheckpointHeader::parse(a.text("config"));
    TrainState s;
    s.experiment = header.experiment;
    s.cycles = header.cycles;
    s.jitter = header.jitter;
    s.dataset = header.dataset;
    s.images_shown = header.images_shown;
    s.step = header.step;
    build_networks(s);
    restore_parameters(a, "G/", *s.generator);
    restore_parameters(a, "D/", *s.discriminator);
    s.g_opt.restore(a, "opt/G/");
    s.d_opt.restore(a, "opt/D/");

    std::istringstream progress(a.text("progress"));
    std::string key, value;
    progress >> key >> value;
    if (key != "last_r1") throw CheckpointError("malformed progress entry");
    s.last_r1 = std::stod(value);
    progress >> key >> s.low_latent_streak;
    if (key != "low_latent_streak") throw CheckpointError("malformed progress entry");
    std::string line;
    while (std::getline(progress, line))
        if (!line.empty()) s.history.push_back(MetricRecord::from_json(line));
    return s;
}

// --- Run -------------------------------------------------------------------------

namespace {

void write_metric_log(const std::filesystem::path& path, const std::vector<MetricRecord>& history) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw TrainingError("cannot write " + tmp.string(), "");
        for (const auto& r : history) out << r.to_json() << "\n";
        if (!out) throw TrainingError("write failed for " + tmp.string(), "");
    }
    std::filesystem::rename(tmp, path);
}

void append_metric(const std::filesystem::path& path, const MetricRecord& r) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw TrainingError("cannot append to " + path.string(), "");
    out << r.to_json() << "\n";
}

}  // namespace

TrainState training_run(const DatasetManifest& manifest, const ExperimentConfig& experiment,
                        const RunOptions& options) {
    return training_run(TrainingData::from_manifest(manifest), experiment, options);
}

TrainState training_run(const TrainingData& data, const ExperimentConfig& experiment, const RunOptions& options) {
    experiment.train.validate();
    torch::set_num_threads(1);
    TrainState s;
    if (options.resume) {
        s = load_checkpoint(*options.resume);
        if (s.experiment.model.resolution != experiment.model.resolution ||
            s.experiment.model.latent_dim != experiment.model.latent_dim)
            throw TrainingError("resume checkpoint does not match the configured model", "");
        s.experiment.train.total_images = experiment.train.total_images;
    } else {
        s = init_train_state(experiment, data.info);
    }
    const int64_t res = s.generator->config().resolution;
    if (data.images.size(2) != res) throw TrainingError("dataset resolution does not match the model", "");

    const bool files = !options.out_dir.empty();
    const auto log_path = options.out_dir / kMetricLogName;
    if (files) {
        std::filesystem::create_directories(options.out_dir);
        write_metric_log(log_path, s.history);
    }
    const auto& cfg = s.experiment.train;
    const Rng root(cfg.seed);
    const Rng monitor_root = Rng(cfg.seed).split(kMonitorStream);

    auto record = [&](const StepMetrics& m) {
        MetricRecord r;
        r.images_shown = s.images_shown;
        r.step = s.step;
        r.metrics = m;
        r.shares = monitor_shares(s, cfg.monitor_pairs, monitor_root.split(std::uint64_t(s.history.size())).next());
        s.low_latent_streak = r.shares[0] < kCollapseLatentShare ? s.low_latent_streak + 1 : 0;
        r.collapse_warning = s.low_latent_streak >= kCollapseIntervals;
        s.history.push_back(r);
        if (files) append_metric(log_path, r);
        if (options.on_record) options.on_record(r);
    };
    auto checkpoint = [&](const std::string& name) {
        if (files) save_checkpoint(s, options.out_dir / name);
    };

    if (cfg.total_images > 0 && s.history.empty()) record(StepMetrics{});

    while (s.images_shown < cfg.total_images) {
        if (options.stop_at_images >= 0 && s.images_shown >= options.stop_at_images) {
            checkpoint(kLatestCheckpointName);
            return s;
        }
        const int64_t before = s.images_shown;
        Rng step_rng = root.split(std::uint64_t(s.step));
        const StepMetrics m = train_step(s, data, step_rng);
        if (s.images_shown / cfg.metric_interval > before / cfg.metric_interval) record(m);
        if (s.images_shown / cfg.snapshot_interval > before / cfg.snapshot_interval) {
            char name[64];
            std::snprintf(name, sizeof name, "snapshot-%09lld.ckpt", static_cast<long long>(s.images_shown));
            checkpoint(name);
            checkpoint(kLatestCheckpointName);
        }
    }
    checkpoint(kFinalCheckpointName);
    return s;
}

}  // namespace cyclelapse
