#pragma once

#include "vaal/service/label_service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <functional>
#include <string>

namespace vaal::service {

inline int http_status_for(const std::exception& e) {
    if (dynamic_cast<const NotFound*>(&e)) return 404;
    if (dynamic_cast<const Conflict*>(&e)) return 409;
    if (dynamic_cast<const PreconditionFailed*>(&e)) return 412;
    if (dynamic_cast<const ValidationError*>(&e)) return 422;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractViolation*>(&e)) return 400;
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 400;
    return 500;
}

/// JSON/HTTP front end:
///   GET  /v1/health
///   GET  /v1/experiments
///   GET  /v1/experiments/{id}/status
///   GET  /v1/experiments/{id}/batch          open batch, 404 when none
///   POST /v1/experiments/{id}/batch          open the next batch
///   POST /v1/experiments/{id}/batch/close    {"batch_id"} optional
///   POST /v1/experiments/{id}/train
///   GET  /v1/experiments/{id}/snapshot
///   POST /v1/labels                          {"batch_id","index","class","annotator_id"}
class HttpServer {
public:
    explicit HttpServer(LabelService& service) : service_(service) { routes(); }

    /// Binds to `port` (0 = any free port) and returns the bound port.
    int bind(const std::string& host, int port) {
        if (port == 0) return server_.bind_to_any_port(host);
        if (!server_.bind_to_port(host, port)) throw IoError("http: cannot bind " + host + ":" + std::to_string(port));
        return port;
    }
    /// Blocks until stop().
    void listen_after_bind() { server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() { server_.wait_until_ready(); }

private:
    LabelService& service_;
    httplib::Server server_;

    static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_content(body.dump(), "application/json");
    }

    void handle(httplib::Response& res, const std::function<nlohmann::json()>& fn, int ok = 200) {
        try {
            reply(res, ok, fn());
        } catch (const std::exception& e) {
            const int code = http_status_for(e);
            reply(res, code, {{"error", e.what()}, {"status", code}});
        }
    }

    static nlohmann::json body_of(const httplib::Request& req) {
        if (req.body.empty()) return nlohmann::json::object();
        auto j = nlohmann::json::parse(req.body);
        if (!j.is_object()) throw ValidationError("request body must be a JSON object");
        return j;
    }

    void routes() {
        server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
            handle(res, [] { return nlohmann::json{{"ok", true}}; });
        });
        server_.Get("/v1/experiments", [this](const httplib::Request&, httplib::Response& res) {
            handle(res, [this] { return nlohmann::json{{"experiments", service_.ids()}}; });
        });
        server_.Get(R"(/v1/experiments/([^/]+)/status)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return service_.status(req.matches[1]); });
        });
        server_.Get(R"(/v1/experiments/([^/]+)/snapshot)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return service_.snapshot(req.matches[1]); });
        });
        server_.Get(R"(/v1/experiments/([^/]+)/batch)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return service_.batch(req.matches[1]); });
        });
        server_.Post(R"(/v1/experiments/([^/]+)/batch)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return service_.open_batch(req.matches[1]); }, 201);
        });
        server_.Post(R"(/v1/experiments/([^/]+)/batch/close)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                const auto body = body_of(req);
                const auto s = service_.close_batch(req.matches[1], body.value("batch_id", std::string()));
                return nlohmann::json{{"round", s.round}, {"labeled", s.labeled}, {"unlabeled", s.unlabeled}, {"batch_size", s.batch_size}};
            });
        });
        server_.Post(R"(/v1/experiments/([^/]+)/train)", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return service_.train(req.matches[1]); });
        });
        server_.Post("/v1/labels", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                const auto body = body_of(req);
                LabelSubmission sub;
                try {
                    sub.batch_id = body.at("batch_id").get<std::string>();
                    const auto index = body.at("index").get<long long>();
                    if (index < 0) throw NotFound("index " + std::to_string(index) + " is not in the batch");
                    sub.index = static_cast<Index>(index);
                    sub.label = body.at("class").get<int>();
                    sub.annotator_id = body.value("annotator_id", std::string());
                    sub.submitted_at = body.value("submitted_at", std::string());
                } catch (const nlohmann::json::exception& e) {
                    throw ValidationError(std::string("label submission: ") + e.what());
                }
                const Ack a = service_.submit_label(sub);
                return nlohmann::json{{"seq", a.seq},
                                      {"correction", a.correction},
                                      {"labeled_in_batch", a.labeled_in_batch},
                                      {"batch_size", a.batch_size}};
            });
        });
        server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Origin", "*");
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });
    }
};

}  // namespace vaal::service
