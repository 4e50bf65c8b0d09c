#pragma once

// HTTP front end for FeedbackService.
//
//   GET  /api/tasks/next?rater_id=R   200 task JSON, 204 when R has rated everything
//   POST /api/ratings                 {"task_id","rater_id","rating"} -> 201, 404 or 422
//   GET  /api/progress                {"total":n,"rated":m}
//   GET  /images/{image_id}           raw bytes from the image directory
//   GET  /...                         optional static bundle (the rating console)
//
// Errors carry a JSON body {"error": message}. A queue without a manifest
// answers 503.

#include <filesystem>
#include <fstream>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "caprl/feedback/service.hpp"

namespace caprl {

struct HttpOptions {
    std::filesystem::path image_dir;   // empty: /images always 404
    std::filesystem::path static_dir;  // empty: nothing mounted at /
};

/// True for ids that name a plain file inside the image directory.
inline bool safe_image_id(std::string_view id) {
    if (id.empty() || id == "." || id == "..") return false;
    return id.find_first_of(std::string_view("/\\\0", 3)) == std::string_view::npos;
}

inline std::string image_content_type(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".png") return "image/png";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    return "application/octet-stream";
}

class FeedbackHttpServer {
public:
    FeedbackHttpServer(FeedbackService& service, HttpOptions options)
        : service_(service), options_(std::move(options)) {
        routes();
    }

    /// Binds to `port` (0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port) {
        if (port == 0) {
            const int bound = server_.bind_to_any_port(host);
            if (bound < 0) throw ServiceError("cannot bind " + host);
            return bound;
        }
        if (!server_.bind_to_port(host, port)) throw ServiceError("cannot bind " + host + ":" + std::to_string(port));
        return port;
    }

    /// Serves until stop() is called.
    void serve() {
        if (!server_.listen_after_bind()) throw ServiceError("server stopped with an error");
    }

    void stop() { server_.stop(); }
    void wait_until_ready() const { server_.wait_until_ready(); }

private:
    static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& message) {
        send_json(res, status, {{"error", message}});
    }

    template <class Fn>
    static void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const ValidationError& e) {
            send_error(res, 422, e.what());
        } catch (const NotFoundError& e) {
            send_error(res, 404, e.what());
        } catch (const ServiceError& e) {
            send_error(res, 503, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    }

    void routes() {
        server_.Get("/api/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto task = service_.next_task(req.get_param_value("rater_id"));
                if (!task) {
                    res.status = 204;
                    return;
                }
                send_json(res, 200, *task);
            });
        });

        server_.Post("/api/ratings", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                std::string task_id, rater_id;
                double rating = 0.0;
                try {
                    const auto body = nlohmann::json::parse(req.body);
                    const auto& t = body.at("task_id");
                    task_id = t.is_number_unsigned() ? std::to_string(t.get<std::uint64_t>()) : t.get<std::string>();
                    body.at("rater_id").get_to(rater_id);
                    const auto& r = body.at("rating");
                    if (!r.is_number()) throw ValidationError("rating must be a number");
                    rating = r.get<double>();
                } catch (const nlohmann::json::exception& e) {
                    throw ValidationError(std::string("malformed rating body: ") + e.what());
                }
                const auto record = service_.submit_rating(task_id, rater_id, rating);
                send_json(res, 201, record);
            });
        });

        server_.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                const auto p = service_.progress();
                send_json(res, 200, {{"total", p.total}, {"rated", p.rated}});
            });
        });

        server_.Get(R"(/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = httplib::detail::decode_url(req.matches[1].str(), false);
                if (options_.image_dir.empty() || !safe_image_id(id) || !service_.has_image(id)) {
                    throw NotFoundError("no such image");
                }
                const auto path = options_.image_dir / id;
                std::ifstream in(path, std::ios::binary);
                if (!in) throw NotFoundError("no such image");
                std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
                res.status = 200;
                res.set_content(std::move(bytes), image_content_type(path));
            });
        });

        if (!options_.static_dir.empty()) server_.set_mount_point("/", options_.static_dir.string());
    }

    FeedbackService& service_;
    HttpOptions options_;
    httplib::Server server_;
};

}  // namespace caprl
