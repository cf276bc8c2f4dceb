#include "cellbloom/bloomserve/server.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace cellbloom::bloomserve {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void send_json(httplib::Response& res, int status, const ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

bool tokens_equal(const std::string& a, const std::string& b) {
    if (a.size() != b.size()) return false;
    unsigned char diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
    return diff == 0;
}

}  // namespace

std::optional<std::string> export_token_from_env() {
    const char* v = std::getenv(kExportTokenEnv);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

BloomServer::BloomServer(std::shared_ptr<AnnotationStore> store, ServerOptions options)
    : store_(std::move(store)), options_(std::move(options)), http_(std::make_unique<httplib::Server>()) {
    if (!store_) throw std::invalid_argument("server needs a store");
    auto& srv = *http_;
    auto store_ptr = store_;

    srv.Get("/api/tasks/next", [store_ptr](const httplib::Request& req, httplib::Response& res) {
        const std::string annotator = req.get_param_value("annotator");
        if (annotator.empty()) return send_error(res, 400, "query parameter 'annotator' is required");
        const auto task = store_ptr->next_task(annotator);
        if (!task) {
            res.status = 204;
            return;
        }
        send_json(res, 200, task_view(*task));
    });

    srv.Get(R"(/api/images/([A-Za-z0-9_-]+))", [store_ptr](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!store_ptr->task(id)) return send_error(res, 404, "unknown task " + id);
        std::ifstream in(store_ptr->image_path(id), std::ios::binary);
        if (!in) return send_error(res, 500, "image for task " + id + " is missing");
        std::ostringstream bytes;
        bytes << in.rdbuf();
        res.status = 200;
        res.set_content(bytes.str(), "image/png");
    });

    srv.Post("/api/annotations", [store_ptr](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            return send_error(res, 400, "body is not valid JSON");
        }
        const auto field = [&](const char* key) -> std::optional<std::string> {
            if (!body.is_object() || !body.contains(key) || !body.at(key).is_string()) return std::nullopt;
            return body.at(key).get<std::string>();
        };
        const auto task_id = field("task_id"), annotator = field("annotator"), flower = field("flower_class");
        if (!task_id || !annotator || !flower) {
            return send_error(res, 422, "fields task_id, annotator and flower_class must be strings");
        }
        const std::string client_ts = field("client_timestamp").value_or("");
        SubmitResult result;
        try {
            result = store_ptr->submit(*task_id, *annotator, *flower, client_ts);
        } catch (const std::exception& e) {
            spdlog::error("annotation write failed: {}", e.what());
            return send_error(res, 500, "annotation could not be stored");
        }
        switch (result.outcome) {
            case SubmitOutcome::created: return send_json(res, 201, {{"task_id", *task_id}, {"accepted", true}});
            case SubmitOutcome::not_found: return send_error(res, 404, result.message);
            case SubmitOutcome::conflict: return send_error(res, 409, result.message);
            case SubmitOutcome::invalid: return send_error(res, 422, result.message);
        }
    });

    srv.Get("/api/progress", [store_ptr](const httplib::Request&, httplib::Response& res) {
        const auto p = store_ptr->progress();
        send_json(res, 200, {{"open", p.open}, {"complete", p.complete}, {"total_votes", p.total_votes}});
    });

    const auto token = options_.export_token;
    srv.Get("/api/export", [store_ptr, token](const httplib::Request& req, httplib::Response& res) {
        if (!token) return send_error(res, 403, "export is disabled; set " + std::string(kExportTokenEnv));
        const std::string auth = req.get_header_value("Authorization");
        const std::string prefix = "Bearer ";
        if (auth.rfind(prefix, 0) != 0 || !tokens_equal(auth.substr(prefix.size()), *token)) {
            return send_error(res, 401, "missing or invalid export token");
        }
        res.status = 200;
        res.set_content(store_ptr->export_labels().to_jsonl(store_ptr->data_dir()), "application/x-ndjson");
    });

    if (options_.static_dir && !srv.set_mount_point("/", options_.static_dir->string())) {
        throw BloomError("static directory " + options_.static_dir->string() + " does not exist");
    }
}

BloomServer::~BloomServer() { stop(); }

void BloomServer::bind() {
    if (options_.port == 0) {
        port_ = http_->bind_to_any_port(options_.host);
    } else {
        port_ = http_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
    }
    if (port_ < 0) throw BloomError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
}

int BloomServer::start() {
    bind();
    thread_ = std::thread([this] { http_->listen_after_bind(); });
    http_->wait_until_ready();
    return port_;
}

void BloomServer::run() {
    bind();
    spdlog::info("serving on http://{}:{}", options_.host, port_);
    http_->listen_after_bind();
}

void BloomServer::stop() {
    if (http_) http_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace cellbloom::bloomserve
