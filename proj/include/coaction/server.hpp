#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <httplib.h>

#include "coaction/checkpoint.hpp"
#include "coaction/io.hpp"
#include "coaction/trainer.hpp"

namespace coaction {

struct ApiResponse {
    int status = 200;
    std::string body;
};

inline constexpr std::size_t kMaxFrontPoints = 10000;

/// Read-only request handling over a loaded checkpoint. Handlers share nothing mutable,
/// so they may run concurrently.
class ApiService {
public:
    explicit ApiService(const LoadedCheckpoint& ck) : ck_(ck)
    {
        for (std::size_t t = 0; t < ck_.problems.size(); ++t) {
            const auto& p = *ck_.problems[t];
            auto s = solve_grid(*ck_.model, p, t, theta_grid(p.m(), ck_.meta.eval_points));
            metrics_.push_back(compute_metrics(p.id(), s.fs, Point(p.m(), ck_.meta.reference_scalar)));
        }
    }

    ApiResponse tasks() const
    {
        json arr = json::array();
        for (const auto& p : ck_.problems) {
            const auto& d = p->descriptor();
            arr.push_back(json{{"id", d.id}, {"m", d.m}, {"n", d.n}, {"bounds", {{"lower", d.lower}, {"upper", d.upper}}}});
        }
        return ok(arr);
    }

    ApiResponse infer(const std::string& body) const
    {
        json req;
        try {
            req = json::parse(body);
        } catch (const json::parse_error&) {
            return error(400, "request body is not valid JSON");
        }
        if (!req.is_object() || !req.contains("task") || !req["task"].is_string()) {
            return error(400, "request needs a string field 'task'");
        }
        const auto task = find_task(req["task"].get<std::string>());
        if (!task) return error(404, "unknown task '" + req["task"].get<std::string>() + "'");
        const auto& p = *ck_.problems[*task];
        if (!req.contains("theta") || !req["theta"].is_array()) return error(400, "request needs an array field 'theta'");
        const auto& th = req["theta"];
        if (th.size() != p.m() - 1) {
            return error(400, "theta needs " + std::to_string(p.m() - 1) + " value(s) for task " + p.id());
        }
        std::vector<double> theta;
        for (const auto& v : th) {
            if (!v.is_number()) return error(400, "theta values must be numbers");
            const double a = v.get<double>();
            if (!(a >= 0.0 && a <= std::numbers::pi / 2.0)) return error(400, "theta values must lie in [0, pi/2]");
            theta.push_back(a);
        }
        const auto pref = make_preference(theta);
        auto s = solve_grid(*ck_.model, p, *task, {theta});
        return ok(json{{"task", p.id()},
                       {"theta", theta},
                       {"lambda", pref.lambda},
                       {"x", s.xs[0]},
                       {"f_raw", s.fs_raw[0]},
                       {"f_norm", s.fs[0]}});
    }

    /// k <= 0 selects the checkpoint's evaluation grid size.
    ApiResponse front(const std::string& id, const std::string& k_param) const
    {
        const auto task = find_task(id);
        if (!task) return error(404, "unknown task '" + id + "'");
        std::size_t k = ck_.meta.eval_points;
        if (!k_param.empty()) {
            std::size_t used = 0;
            long long v = 0;
            try {
                v = std::stoll(k_param, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != k_param.size() || v < 2 || v > static_cast<long long>(kMaxFrontPoints)) {
                return error(400, "k must be an integer in [2, " + std::to_string(kMaxFrontPoints) + "]");
            }
            k = static_cast<std::size_t>(v);
        }
        const auto& p = *ck_.problems[*task];
        const auto s = solve_grid(*ck_.model, p, *task, theta_grid(p.m(), k));
        json pts = json::array();
        for (std::size_t i = 0; i < s.thetas.size(); ++i) pts.push_back(json{{"theta", s.thetas[i]}, {"f_norm", s.fs[i]}});
        return ok(json{{"task", p.id()}, {"k", s.thetas.size()}, {"points", pts}});
    }

    ApiResponse metrics(const std::string& id) const
    {
        const auto task = find_task(id);
        if (!task) return error(404, "unknown task '" + id + "'");
        return ok(to_json(metrics_[*task]));
    }

    static ApiResponse error(int status, const std::string& message)
    {
        return ApiResponse{status, json{{"error", message}}.dump()};
    }

private:
    static ApiResponse ok(const json& j) { return ApiResponse{200, j.dump()}; }

    std::optional<std::size_t> find_task(const std::string& id) const
    {
        for (std::size_t t = 0; t < ck_.problems.size(); ++t) {
            if (ck_.problems[t]->id() == id) return t;
        }
        return std::nullopt;
    }

    const LoadedCheckpoint& ck_;
    std::vector<MetricsReport> metrics_;
};

/// Routes the API onto an httplib server; static_dir, when it exists, is served at /.
inline std::unique_ptr<httplib::Server> make_http_server(const ApiService& api, const std::string& static_dir)
{
    auto srv = std::make_unique<httplib::Server>();
    auto reply = [](httplib::Response& res, const ApiResponse& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    srv->Get("/api/tasks", [&api, reply](const httplib::Request&, httplib::Response& res) { reply(res, api.tasks()); });
    srv->Post("/api/infer",
              [&api, reply](const httplib::Request& req, httplib::Response& res) { reply(res, api.infer(req.body)); });
    srv->Get(R"(/api/front/([^/]+))", [&api, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, api.front(req.matches[1], req.has_param("k") ? req.get_param_value("k") : std::string()));
    });
    srv->Get(R"(/api/metrics/([^/]+))", [&api, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, api.metrics(req.matches[1]));
    });
    srv->set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty()) {
            const auto r = ApiService::error(res.status, "no route for " + req.method + " " + req.path);
            res.set_content(r.body, "application/json");
        }
    });
    if (!static_dir.empty()) {
        if (std::filesystem::is_directory(static_dir)) {
            srv->set_mount_point("/", static_dir);
        } else {
            std::clog << "warning: static directory " << static_dir << " not found, serving the API only\n";
        }
    }
    return srv;
}

}  // namespace coaction
