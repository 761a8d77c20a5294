#include "cyclelapse/service.hpp"

#include <charconv>
#include <cmath>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace cyclelapse {

using nlohmann::json;

namespace {

struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
};

HttpResponse error(int status, const std::string& message) {
    return {status, "application/json", json{{"code", status}, {"message", message}}.dump()};
}

HttpResponse png(const Image& img) {
    const auto bytes = encode_png(img);
    return {200, "image/png", std::string(bytes.begin(), bytes.end())};
}

std::optional<std::string> param(const QueryParams& q, const std::string& key) {
    const auto range = q.equal_range(key);
    if (range.first == range.second) return std::nullopt;
    if (std::next(range.first) != range.second) throw BadRequest("parameter '" + key + "' given more than once");
    return range.first->second;
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
        throw BadRequest("parameter '" + key + "' is not a finite decimal number");
    return v;
}

std::uint64_t parse_seed(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        throw BadRequest("parameter '" + key + "' is not a non-negative integer");
    return v;
}

double required_double(const QueryParams& q, const std::string& key) {
    const auto v = param(q, key);
    if (!v) throw BadRequest("missing parameter '" + key + "'");
    return parse_double(key, *v);
}

}  // namespace

void ServiceConfig::validate() const {
    if (port < 0 || port > 65535) throw std::invalid_argument("port must lie in [0, 65535]");
    if (max_concurrent_renders < 1) throw std::invalid_argument("max_concurrent_renders must be >= 1");
    if (pca_cache_size < 1) throw std::invalid_argument("pca_cache_size must be >= 1");
    if (pca_samples < 2) throw std::invalid_argument("pca_samples must be >= 2");
}

/// Holds one of the limited render slots for its lifetime.
class InferenceService::RenderSlot {
public:
    explicit RenderSlot(InferenceService& s) : s_(s) {
        std::unique_lock lock(s_.slots_mutex_);
        s_.slots_cv_.wait(lock, [&] { return s_.active_renders_ < s_.config_.max_concurrent_renders; });
        ++s_.active_renders_;
    }
    ~RenderSlot() {
        {
            std::lock_guard lock(s_.slots_mutex_);
            --s_.active_renders_;
        }
        s_.slots_cv_.notify_one();
    }
    RenderSlot(const RenderSlot&) = delete;
    RenderSlot& operator=(const RenderSlot&) = delete;

private:
    InferenceService& s_;
};

InferenceService::InferenceService(ServiceConfig config) : config_(std::move(config)) { config_.validate(); }

InferenceService::~InferenceService() { stop(); }

void InferenceService::load() { set_model(load_inference_model(config_.checkpoint)); }

void InferenceService::set_model(InferenceModel model) {
    model_ = std::move(model);
    renderer_ = std::make_unique<GeneratorRenderer>(model_->generator, model_->header.cycles);
    ready_.store(true);
}

std::shared_ptr<const PCABasis> InferenceService::pca_basis(std::int64_t samples) {
    std::lock_guard lock(pca_mutex_);
    for (auto it = pca_cache_.begin(); it != pca_cache_.end(); ++it) {
        if (it->first == samples) {
            pca_cache_.splice(pca_cache_.begin(), pca_cache_, it);
            return it->second;
        }
    }
    Rng rng(config_.pca_seed);
    auto basis = std::make_shared<const PCABasis>(pca_latent_directions(model_->generator, samples, rng));
    pca_cache_.emplace_front(samples, basis);
    while (int(pca_cache_.size()) > config_.pca_cache_size) pca_cache_.pop_back();
    return basis;
}

HttpResponse InferenceService::handle(const std::string& method, const std::string& path, const QueryParams& query,
                                      const std::string& body) {
    try {
        const bool known = path == "/meta" || path == "/frame" || path == "/pca" || path == "/render/timelapse";
        if (!known) return error(404, "no such endpoint: " + path);
        const std::string expected = path == "/render/timelapse" ? "POST" : "GET";
        if (method != expected) return error(405, path + " expects " + expected);
        if (!ready()) return error(503, "model is still loading");
        if (path == "/meta") return meta();
        if (path == "/frame") return frame(query);
        if (path == "/pca") return pca(query);
        return timelapse(body);
    } catch (const BadRequest& e) {
        return error(400, e.what());
    } catch (const RenderError& e) {
        return error(400, e.what());
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
}

HttpResponse InferenceService::meta() const {
    const auto& h = model_->header;
    const auto& g = model_->generator->config();
    json j;
    j["resolution"] = g.resolution;
    j["latent_dim"] = g.latent_dim;
    j["conditioning"] = to_string(g.mode);
    j["cycles"] = {{"day", h.cycles.day_enabled}, {"year", h.cycles.year_enabled}};
    j["f0"] = h.cycles.day_frequency;
    j["f1"] = h.cycles.year_frequency;
    j["k"] = h.cycles.trend_scale;
    j["date_range"] = {{"first", format_iso8601(h.dataset.first)}, {"last", format_iso8601(h.dataset.last)}};
    j["length_days"] = h.dataset.length_days;
    j["frame_count"] = h.dataset.frame_count;
    j["images_shown"] = h.images_shown;
    j["checkpoint_id"] = model_->checkpoint_id;
    return {200, "application/json", j.dump(2)};
}

HttpResponse InferenceService::frame(const QueryParams& q) {
    for (const auto& [key, value] : q)
        if (key != "td" && key != "ty" && key != "tg" && key != "seed" && key != "noise_seed" && key != "pca")
            throw BadRequest("unknown parameter '" + key + "'");
    const TimeTriplet t{required_double(q, "td"), required_double(q, "ty"), required_double(q, "tg")};
    LatentSpec latent;
    if (auto v = param(q, "seed")) latent.seed = parse_seed("seed", *v);
    if (auto v = param(q, "noise_seed")) latent.noise_seed = parse_seed("noise_seed", *v);
    if (auto v = param(q, "pca")) {
        try {
            latent.pca_offsets = LatentSpec::parse_pca(*v);
        } catch (const RenderError& e) {
            throw BadRequest(e.what());
        }
    }
    const bool offsets = std::any_of(latent.pca_offsets.begin(), latent.pca_offsets.end(),
                                     [](const auto& p) { return p.second != 0.0; });
    RenderSlot slot(*this);
    if (!offsets) return png(renderer_->render(t, latent));
    const auto basis = pca_basis(config_.pca_samples);
    for (const auto& [index, value] : latent.pca_offsets)
        if (std::size_t(index) >= basis->components.size())
            throw BadRequest("pca component " + std::to_string(index) + " does not exist");
    const GeneratorRenderer with_basis(model_->generator, model_->header.cycles, *basis);
    return png(with_basis.render(t, latent));
}

HttpResponse InferenceService::timelapse(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception&) {
        throw BadRequest("body is not valid JSON");
    }
    if (!j.is_object()) throw BadRequest("body must be a JSON object");
    auto number = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key)) return std::nullopt;
        if (!j[key].is_number()) throw BadRequest(std::string("'") + key + "' must be a number");
        const double v = j[key].get<double>();
        if (!std::isfinite(v)) throw BadRequest(std::string("'") + key + "' must be finite");
        return v;
    };
    const auto t_start = number("t_start"), t_end = number("t_end"), width = number("width");
    if (!t_start || !t_end || !width) throw BadRequest("t_start, t_end and width are required");
    if (*width != std::floor(*width) || *width < 1 || *width > config_.max_timelapse_width)
        throw BadRequest("width must be an integer in [1, " + std::to_string(config_.max_timelapse_width) + "]");

    LatentSpec latent;
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) throw BadRequest("'seed' must be a non-negative integer");
        latent.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("noise_seed")) {
        if (!j["noise_seed"].is_number_unsigned()) throw BadRequest("'noise_seed' must be a non-negative integer");
        latent.noise_seed = j["noise_seed"].get<std::uint64_t>();
    }
    if (j.contains("z")) {
        try {
            latent.z = j["z"].get<std::vector<float>>();
        } catch (const json::exception&) {
            throw BadRequest("'z' must be an array of numbers");
        }
        if (int(latent.z->size()) != model_->generator->config().latent_dim) throw BadRequest("'z' has the wrong length");
    }
    TripletOverrides overrides;
    overrides.day = number("td");
    overrides.year = number("ty");
    overrides.trend = number("tg");

    RenderSlot slot(*this);
    return png(render_timelapse_image(renderer_->source(latent, overrides), *t_start, *t_end, int(*width)));
}

HttpResponse InferenceService::pca(const QueryParams& q) {
    for (const auto& [key, value] : q)
        if (key != "k") throw BadRequest("unknown parameter '" + key + "'");
    std::uint64_t k = 3;
    if (auto v = param(q, "k")) k = parse_seed("k", *v);
    if (k < 1) throw BadRequest("k must be >= 1");
    const auto basis = pca_basis(config_.pca_samples);
    const std::size_t n = std::min<std::size_t>(k, basis->components.size());
    json j;
    j["samples"] = basis->samples;
    j["space"] = basis->pre_mapping ? "mapping_input" : "w";
    j["rank_deficient"] = basis->rank_deficient;
    j["total_variance"] = basis->total_variance;
    j["explained_variance"] =
        std::vector<double>(basis->explained_variance.begin(), basis->explained_variance.begin() + long(n));
    j["components"] = std::vector<std::vector<double>>(basis->components.begin(), basis->components.begin() + long(n));
    return {200, "application/json", j.dump()};
}

void InferenceService::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    server_->new_task_queue = [this] { return new httplib::ThreadPool(std::max(2, config_.max_concurrent_renders + 1)); };
    auto adapt = [this](const httplib::Request& req, httplib::Response& res) {
        QueryParams q(req.params.begin(), req.params.end());
        const auto out = handle(req.method, req.path, q, req.body);
        res.status = out.status;
        res.set_content(out.body, out.content_type);
    };
    for (const char* path : {"/meta", "/frame", "/pca"}) server_->Get(path, adapt);
    server_->Post("/render/timelapse", adapt);
    server_->set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return;
        const auto out = error(res.status, "no such endpoint: " + req.method + " " + req.path);
        res.set_content(out.body, out.content_type);
    });
}

void InferenceService::serve() {
    install_routes();
    if (!server_->bind_to_port(config_.host, config_.port))
        throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
    std::exception_ptr failure;
    std::thread loader([&] {
        try {
            load();
        } catch (...) {
            failure = std::current_exception();
            server_->stop();
        }
    });
    server_->listen_after_bind();
    loader.join();
    if (failure) std::rethrow_exception(failure);
}

int InferenceService::serve_in_background() {
    install_routes();
    const int port = server_->bind_to_any_port(config_.host);
    if (port < 0) throw std::runtime_error("cannot bind " + config_.host);
    server_thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void InferenceService::stop() {
    if (server_) server_->stop();
    if (server_thread_ && server_thread_->joinable()) server_thread_->join();
    server_thread_.reset();
}

}  // namespace cyclelapse
