#pragma once

// Local HTTP inference service.
//
//   GET  /meta                 model metadata (JSON)
//   GET  /frame?td=&ty=&tg=&seed=&noise_seed=&pca=i:v,...   PNG
//   POST /render/timelapse     {"t_start", "t_end", "width", "seed", ...} -> PNG
//   GET  /pca?k=               PCA basis summary (JSON)
//
// Errors carry a JSON body {"code": <status>, "message": <text>}.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "cyclelapse/analysis.hpp"
#include "cyclelapse/checkpoint.hpp"
#include "cyclelapse/render.hpp"

namespace httplib {
class Server;
}

namespace cyclelapse {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path checkpoint;
    int max_concurrent_renders = 2;
    int pca_cache_size = 4;
    std::int64_t pca_samples = 20000;
    std::uint64_t pca_seed = 0;
    int max_timelapse_width = 4096;

    void validate() const;
};

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

using QueryParams = std::multimap<std::string, std::string>;

class InferenceService {
public:
    explicit InferenceService(ServiceConfig config);
    ~InferenceService();

    /// Loads the configured checkpoint; requests answer 503 until this returns.
    void load();
    /// Installs an already loaded model instead of reading the checkpoint.
    void set_model(InferenceModel model);
    bool ready() const { return ready_.load(); }

    /// Dispatches one request; safe to call concurrently.
    HttpResponse handle(const std::string& method, const std::string& path, const QueryParams& query,
                        const std::string& body = {});

    /// Binds the socket, loads the model in the background and blocks until stop().
    void serve();
    /// Binds to an ephemeral port and serves on a background thread; returns the port.
    int serve_in_background();
    void stop();

    /// Cached basis; computed on first use.
    std::shared_ptr<const PCABasis> pca_basis(std::int64_t samples);

private:
    HttpResponse meta() const;
    HttpResponse frame(const QueryParams& query);
    HttpResponse timelapse(const std::string& body);
    HttpResponse pca(const QueryParams& query);
    void install_routes();

    class RenderSlot;

    ServiceConfig config_;
    std::atomic<bool> ready_{false};
    std::optional<InferenceModel> model_;
    std::unique_ptr<GeneratorRenderer> renderer_;

    std::mutex pca_mutex_;
    std::list<std::pair<std::int64_t, std::shared_ptr<const PCABasis>>> pca_cache_;

    std::mutex slots_mutex_;
    std::condition_variable slots_cv_;
    int active_renders_ = 0;

    std::unique_ptr<httplib::Server> server_;
    std::unique_ptr<std::thread> server_thread_;
};

}  // namespace cyclelapse
