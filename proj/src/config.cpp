#include "cyclelapse/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace cyclelapse {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"model",
         {"latent_dim", "resolution", "channel_base", "channel_max", "mapping_depth", "mapping_lr_multiplier",
          "conditioning", "d_channel_base", "d_channel_max", "feature_dim", "embed_depth", "mbstd_group"}},
        {"train",
         {"batch_size", "r1_gamma", "r1_interval", "g_lr", "d_lr", "beta1", "beta2", "epsilon", "total_images",
          "metric_interval", "snapshot_interval", "monitor_pairs", "dequantize", "seed"}},
        {"jitter", {"sigma_year", "sigma_trend", "clamp"}},
        {"cycles", {"year", "day", "trend_scale"}},
    };
    return keys;
}

template <typename T>
T get_value(const pt::ptree& section, const std::string& sec, const std::string& key, T fallback) {
    const auto node = section.get_child_optional(key);
    if (!node) return fallback;
    std::istringstream in(node->data());
    T value{};
    in >> value;
    if (in.fail() || !(in >> std::ws).eof())
        throw ConfigError("[" + sec + "] " + key + ": cannot parse '" + node->data() + "'");
    return value;
}

bool parse_bool(const std::string& sec, const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("[" + sec + "] " + key + ": expected a boolean, got '" + v + "'");
}

}  // namespace

std::string format_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double TrainConfig::resolved_r1_gamma(int resolution) const {
    if (r1_gamma) return *r1_gamma;
    return resolution > 512 ? 16.0 : 4.0;
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (total_images < 0) throw ConfigError("total_images must be >= 0");
    if (r1_interval < 1) throw ConfigError("r1_interval must be >= 1");
    if (r1_gamma && *r1_gamma < 0.0) throw ConfigError("r1_gamma must be >= 0");
    if (metric_interval < 1 || snapshot_interval < 1) throw ConfigError("intervals must be positive");
    if (monitor_pairs < 1) throw ConfigError("monitor_pairs must be >= 1");
    if (!(g_lr > 0.0) || !(d_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must lie in [0, 1)");
}

JitterConfig JitterSpec::resolve(double length_days) const {
    JitterConfig jc;
    jc.sigma_year = days_to_normalized(sigma_year_days, length_days);
    jc.sigma_trend = days_to_normalized(sigma_trend_days, length_days);
    jc.clamp = clamp;
    jc.validate();
    return jc;
}

CycleConfig CycleSpec::resolve(double length_days) const {
    CycleConfig cfg = derive_cycle_config(length_days, enable_year.value_or(length_days >= kDaysPerYear));
    cfg.day_enabled = enable_day;
    cfg.trend_scale = trend_scale;
    cfg.validate();
    return cfg;
}

GeneratorConfig ExperimentConfig::generator_config(const CycleConfig& cycles) const {
    GeneratorConfig g;
    g.latent_dim = model.latent_dim;
    g.resolution = model.resolution;
    g.channel_base = model.channel_base;
    g.channel_max = model.channel_max;
    g.mapping_depth = model.mapping_depth;
    g.mapping_lr_multiplier = model.mapping_lr_multiplier;
    g.mode = model.conditioning;
    g.cycles = cycles;
    return g;
}

DiscriminatorConfig ExperimentConfig::discriminator_config(const CycleConfig& cycles) const {
    DiscriminatorConfig d;
    d.resolution = model.resolution;
    d.channel_base = model.d_channel_base > 0 ? model.d_channel_base : model.channel_base;
    d.channel_max = model.d_channel_max > 0 ? model.d_channel_max : model.channel_max;
    d.feature_dim = model.feature_dim;
    d.embed_depth = model.embed_depth;
    d.mbstd_group = model.mbstd_group;
    d.conditioning_dim = cycles.dimension();
    return d;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax error: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
        if (!body.data().empty()) throw ConfigError("key '" + section + "' outside a section");
        const auto it = known_keys().find(section);
        if (it == known_keys().end()) throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, value] : body)
            if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
    }

    ExperimentConfig c;
    const pt::ptree empty;
    const auto& m = tree.get_child("model", empty);
    c.model.latent_dim = get_value(m, "model", "latent_dim", c.model.latent_dim);
    c.model.resolution = get_value(m, "model", "resolution", c.model.resolution);
    c.model.channel_base = get_value(m, "model", "channel_base", c.model.channel_base);
    c.model.channel_max = get_value(m, "model", "channel_max", c.model.channel_max);
    c.model.mapping_depth = get_value(m, "model", "mapping_depth", c.model.mapping_depth);
    c.model.mapping_lr_multiplier = get_value(m, "model", "mapping_lr_multiplier", c.model.mapping_lr_multiplier);
    if (auto v = m.get_optional<std::string>("conditioning")) {
        try {
            c.model.conditioning = parse_conditioning_mode(*v);
        } catch (const ModelError& e) {
            throw ConfigError(std::string("[model] conditioning: ") + e.what());
        }
    }
    c.model.d_channel_base = get_value(m, "model", "d_channel_base", c.model.d_channel_base);
    c.model.d_channel_max = get_value(m, "model", "d_channel_max", c.model.d_channel_max);
    c.model.feature_dim = get_value(m, "model", "feature_dim", c.model.feature_dim);
    c.model.embed_depth = get_value(m, "model", "embed_depth", c.model.embed_depth);
    c.model.mbstd_group = get_value(m, "model", "mbstd_group", c.model.mbstd_group);

    const auto& t = tree.get_child("train", empty);
    c.train.batch_size = get_value(t, "train", "batch_size", c.train.batch_size);
    if (auto v = t.get_optional<std::string>("r1_gamma"); v && *v != "auto")
        c.train.r1_gamma = get_value(t, "train", "r1_gamma", 0.0);
    c.train.r1_interval = get_value(t, "train", "r1_interval", c.train.r1_interval);
    c.train.g_lr = get_value(t, "train", "g_lr", c.train.g_lr);
    c.train.d_lr = get_value(t, "train", "d_lr", c.train.d_lr);
    c.train.beta1 = get_value(t, "train", "beta1", c.train.beta1);
    c.train.beta2 = get_value(t, "train", "beta2", c.train.beta2);
    c.train.epsilon = get_value(t, "train", "epsilon", c.train.epsilon);
    c.train.total_images = get_value(t, "train", "total_images", c.train.total_images);
    c.train.metric_interval = get_value(t, "train", "metric_interval", c.train.metric_interval);
    c.train.snapshot_interval = get_value(t, "train", "snapshot_interval", c.train.snapshot_interval);
    c.train.monitor_pairs = get_value(t, "train", "monitor_pairs", c.train.monitor_pairs);
    if (auto v = t.get_optional<std::string>("dequantize")) c.train.dequantize = parse_bool("train", "dequantize", *v);
    c.train.seed = get_value(t, "train", "seed", c.train.seed);

    const auto& j = tree.get_child("jitter", empty);
    try {
        if (auto v = j.get_optional<std::string>("sigma_year")) c.jitter.sigma_year_days = parse_duration_days(*v);
        if (auto v = j.get_optional<std::string>("sigma_trend")) c.jitter.sigma_trend_days = parse_duration_days(*v);
    } catch (const TimebaseError& e) {
        throw ConfigError(std::string("[jitter] ") + e.what());
    }
    if (auto v = j.get_optional<std::string>("clamp")) c.jitter.clamp = parse_bool("jitter", "clamp", *v);

    const auto& cy = tree.get_child("cycles", empty);
    if (auto v = cy.get_optional<std::string>("year"); v && *v != "auto")
        c.cycles.enable_year = parse_bool("cycles", "year", *v);
    if (auto v = cy.get_optional<std::string>("day")) c.cycles.enable_day = parse_bool("cycles", "day", *v);
    c.cycles.trend_scale = get_value(cy, "cycles", "trend_scale", c.cycles.trend_scale);

    c.train.validate();
    if (!(c.cycles.trend_scale > 0.0)) throw ConfigError("[cycles] trend_scale must be positive");
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream out;
    out << "[model]\n"
        << "latent_dim = " << model.latent_dim << "\n"
        << "resolution = " << model.resolution << "\n"
        << "channel_base = " << model.channel_base << "\n"
        << "channel_max = " << model.channel_max << "\n"
        << "mapping_depth = " << model.mapping_depth << "\n"
        << "mapping_lr_multiplier = " << format_exact(model.mapping_lr_multiplier) << "\n"
        << "conditioning = " << to_string(model.conditioning) << "\n"
        << "d_channel_base = " << model.d_channel_base << "\n"
        << "d_channel_max = " << model.d_channel_max << "\n"
        << "feature_dim = " << model.feature_dim << "\n"
        << "embed_depth = " << model.embed_depth << "\n"
        << "mbstd_group = " << model.mbstd_group << "\n\n";
    out << "[train]\n"
        << "batch_size = " << train.batch_size << "\n"
        << "r1_gamma = " << (train.r1_gamma ? format_exact(*train.r1_gamma) : std::string("auto")) << "\n"
        << "r1_interval = " << train.r1_interval << "\n"
        << "g_lr = " << format_exact(train.g_lr) << "\n"
        << "d_lr = " << format_exact(train.d_lr) << "\n"
        << "beta1 = " << format_exact(train.beta1) << "\n"
        << "beta2 = " << format_exact(train.beta2) << "\n"
        << "epsilon = " << format_exact(train.epsilon) << "\n"
        << "total_images = " << train.total_images << "\n"
        << "metric_interval = " << train.metric_interval << "\n"
        << "snapshot_interval = " << train.snapshot_interval << "\n"
        << "monitor_pairs = " << train.monitor_pairs << "\n"
        << "dequantize = " << (train.dequantize ? "true" : "false") << "\n"
        << "seed = " << train.seed << "\n\n";
    out << "[jitter]\n"
        << "sigma_year = " << format_exact(jitter.sigma_year_days) << "d\n"
        << "sigma_trend = " << format_exact(jitter.sigma_trend_days) << "d\n"
        << "clamp = " << (jitter.clamp ? "true" : "false") << "\n\n";
    out << "[cycles]\n"
        << "year = " << (cycles.enable_year ? (*cycles.enable_year ? "true" : "false") : "auto") << "\n"
        << "day = " << (cycles.enable_day ? "true" : "false") << "\n"
        << "trend_scale = " << format_exact(cycles.trend_scale) << "\n";
    return out.str();
}

}  // namespace cyclelapse
