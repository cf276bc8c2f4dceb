#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "cellbloom/bloomserve/store.hpp"

namespace httplib {
class Server;
}

namespace cellbloom::bloomserve {

inline constexpr const char* kExportTokenEnv = "CELLBLOOM_EXPORT_TOKEN";

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    // Operator token for /api/export; without one the endpoint answers 403.
    std::optional<std::string> export_token;
    // Static files (the browser client) mounted at "/".
    std::optional<fs::path> static_dir;
};

// Reads the export token from the environment; empty counts as unset.
std::optional<std::string> export_token_from_env();

// HTTP front end over an AnnotationStore:
//   GET  /api/tasks/next?annotator=<id>  200 {task_id, image_url, classes} | 204
//   GET  /api/images/<task_id>           PNG bytes
//   POST /api/annotations                201 | 400 | 404 | 409 | 422
//   GET  /api/progress                   {open, complete, total_votes}
//   GET  /api/export                     crowd-label manifest (Bearer token)
class BloomServer {
public:
    BloomServer(std::shared_ptr<AnnotationStore> store, ServerOptions options);
    ~BloomServer();
    BloomServer(const BloomServer&) = delete;
    BloomServer& operator=(const BloomServer&) = delete;

    // Binds and serves on a background thread; returns the bound port.
    int start();
    // Binds and serves on the calling thread until stop().
    void run();
    void stop();
    int port() const { return port_; }

private:
    void bind();

    std::shared_ptr<AnnotationStore> store_;
    ServerOptions options_;
    std::unique_ptr<httplib::Server> http_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace cellbloom::bloomserve
