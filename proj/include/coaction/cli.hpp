#pragma once

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coaction/checkpoint.hpp"
#include "coaction/config.hpp"
#include "coaction/io.hpp"
#include "coaction/server.hpp"
#include "coaction/trainer.hpp"

namespace coaction {

namespace detail {

inline std::string fixed(double v, int digits)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

inline void print_reports(std::ostream& out, const std::vector<MetricsReport>& reports)
{
    out << std::left << std::setw(12) << "task" << std::right << std::setw(10) << "hv" << std::setw(10) << "range"
        << std::setw(12) << "sparsity" << std::setw(8) << "count" << '\n';
    for (const auto& r : reports) {
        out << std::left << std::setw(12) << r.task_id << std::right << std::setw(10) << fixed(r.hv, 4) << std::setw(10)
            << fixed(r.range, 4) << std::setw(12) << fixed(r.sparsity, 6) << std::setw(8) << r.count_after_filter
            << '\n';
    }
}

inline std::size_t require_task(const LoadedCheckpoint& ck, const std::string& id)
{
    for (std::size_t t = 0; t < ck.problems.size(); ++t) {
        if (ck.problems[t]->id() == id) return t;
    }
    throw ConfigError("task", "checkpoint has no task '" + id + "'");
}

inline void write_csv(std::ostream& out, const SolutionSet& s, std::size_t m)
{
    out << "task";
    for (std::size_t k = 0; k + 1 < m; ++k) out << ",theta" << k + 1;
    const std::size_t n = s.xs.empty() ? 0 : s.xs[0].size();
    for (std::size_t i = 0; i < n; ++i) out << ",x" << i + 1;
    for (std::size_t j = 0; j < m; ++j) out << ",f" << j + 1;
    out << '\n' << std::setprecision(17);
    for (std::size_t r = 0; r < s.xs.size(); ++r) {
        out << s.task_id;
        for (double v : s.thetas[r]) out << ',' << v;
        for (double v : s.xs[r]) out << ',' << v;
        for (double v : s.fs[r]) out << ',' << v;
        out << '\n';
    }
}

struct CompareRow {
    std::string task;
    std::string metric;
    double mean_a = 0.0;
    double mean_b = 0.0;
    WilcoxonResult test;
};

/// Pairs report files run by run (the i-th --a file with the i-th --b file) and tests each
/// task x metric over the runs.
inline std::vector<CompareRow> compare_reports(const std::vector<std::vector<MetricsReport>>& a,
                                               const std::vector<std::vector<MetricsReport>>& b)
{
    if (a.size() != b.size() || a.empty()) {
        throw ConfigError("b", "needs as many report files as --a (" + std::to_string(a.size()) + ")");
    }
    auto lookup = [](const std::vector<MetricsReport>& run, const std::string& id) -> const MetricsReport& {
        for (const auto& r : run) {
            if (r.task_id == id) return r;
        }
        throw ConfigError("b", "task " + id + " is missing from one of the reports");
    };
    auto metric_value = [](const MetricsReport& r, const std::string& metric) {
        return metric == "hv" ? r.hv : (metric == "range" ? r.range : r.sparsity);
    };
    std::vector<CompareRow> rows;
    for (const auto& first : a[0]) {
        for (const std::string metric : {"hv", "range", "sparsity"}) {
            std::vector<double> va;
            std::vector<double> vb;
            for (std::size_t i = 0; i < a.size(); ++i) {
                va.push_back(metric_value(lookup(a[i], first.task_id), metric));
                vb.push_back(metric_value(lookup(b[i], first.task_id), metric));
            }
            CompareRow row{first.task_id, metric, 0.0, 0.0, wilcoxon_exact(va, vb)};
            for (std::size_t i = 0; i < va.size(); ++i) {
                row.mean_a += va[i] / static_cast<double>(va.size());
                row.mean_b += vb[i] / static_cast<double>(vb.size());
            }
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace detail

/// Entry point of the coaction tool. Returns 0 on success, 2 for invalid input, 1 for runtime failures.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Multitask Pareto set learning: train, evaluate, export and serve preference-conditioned models"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, out_path, trace_path, report_path, task_id, format, host = "127.0.0.1";
    std::string static_dir = "web";
    std::vector<double> theta;
    std::vector<std::string> files_a, files_b;
    double alpha = 0.10;
    std::size_t points = 0;
    int port = 8080;
    bool quiet = false;

    auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
    train_cmd->add_option("--config", config_path, "run config JSON")->required();
    train_cmd->add_option("--out", out_path, "checkpoint file to write")->required();
    train_cmd->add_option("--trace", trace_path, "trace JSON (default: <out>.trace.json)");
    train_cmd->add_flag("--quiet", quiet, "no progress output");

    auto* eval_cmd = app.add_subcommand("eval", "compute HV / Range / Sparsity for every task");
    eval_cmd->add_option("--ckpt", ckpt_path)->required();
    eval_cmd->add_option("--report", report_path, "metrics JSON to write")->required();
    eval_cmd->add_option("--points", points, "grid size (default: the checkpoint's eval_points)");

    auto* infer_cmd = app.add_subcommand("infer", "decision vector for one preference");
    infer_cmd->add_option("--ckpt", ckpt_path)->required();
    infer_cmd->add_option("--task", task_id)->required();
    infer_cmd->add_option("--theta", theta, "polar angles, comma separated")->required()->delimiter(',');

    auto* export_cmd = app.add_subcommand("export", "write the front grid as CSV or JSON");
    export_cmd->add_option("--ckpt", ckpt_path)->required();
    export_cmd->add_option("--format", format)->required()->check(CLI::IsMember({"csv", "json"}));
    export_cmd->add_option("--out", out_path)->required();
    export_cmd->add_option("--task", task_id, "task to export (csv needs one when several are trained)");
    export_cmd->add_option("--points", points, "grid size (default: the checkpoint's eval_points)");

    auto* compare_cmd = app.add_subcommand("compare", "paired Wilcoxon signed-rank comparison of metric reports");
    compare_cmd->add_option("--a", files_a, "report file(s) of method A, one per run")->required();
    compare_cmd->add_option("--b", files_b, "report file(s) of method B, paired with --a")->required();
    compare_cmd->add_option("--alpha", alpha, "significance level")->check(CLI::Range(0.0, 1.0));

    auto* serve_cmd = app.add_subcommand("serve", "serve the HTTP inference API");
    serve_cmd->add_option("--ckpt", ckpt_path)->required();
    serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--host", host);
    serve_cmd->add_option("--static", static_dir, "directory served at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) {
            const auto rc = load_run_config(config_path);
            const auto problems = make_problems(rc.tasks);
            const auto mc = model_config_for(problems, rc.backbone, rc.d_task, rc.train.seed);
            const std::size_t every = std::max<std::size_t>(1, rc.train.iterations / 20);
            TrainObserver progress;
            if (!quiet) {
                progress = [&](const IterationRecord& r, ParetoModel&) {
                    if ((r.iteration + 1) % every == 0) {
                        err << "iteration " << r.iteration + 1 << '/' << rc.train.iterations << "  task "
                            << problems[r.task]->id() << "  loss " << detail::fixed(r.loss, 4) << '\n';
                    }
                };
            }
            auto result = train(problems, mc, rc.train, progress);
            save_checkpoint(out_path, *result.model, problems, training_meta(rc.train, result.trace));
            json trace = to_json(result.trace, problems);
            trace["config"] = to_json(rc);
            write_text(trace_path.empty() ? out_path + ".trace.json" : trace_path, trace.dump(1) + "\n");
            out << "trained " << rc.tasks.size() << " task(s) for " << rc.train.iterations << " iterations in "
                << detail::fixed(result.trace.wall_seconds, 1) << " s\n";
            detail::print_reports(out, result.trace.quality);
            return 0;
        }

        if (*compare_cmd) {
            std::vector<std::vector<MetricsReport>> ra, rb;
            for (const auto& f : files_a) ra.push_back(reports_from_document(read_json(f)));
            for (const auto& f : files_b) rb.push_back(reports_from_document(read_json(f)));
            const auto rows = detail::compare_reports(ra, rb);
            out << std::left << std::setw(12) << "task" << std::setw(10) << "metric" << std::right << std::setw(12)
                << "mean_a" << std::setw(12) << "mean_b" << std::setw(9) << "p" << std::setw(5) << "dir" << "  sig\n";
            for (const auto& r : rows) {
                out << std::left << std::setw(12) << r.task << std::setw(10) << r.metric << std::right << std::setw(12)
                    << detail::fixed(r.mean_a, 4) << std::setw(12) << detail::fixed(r.mean_b, 4) << std::setw(9)
                    << detail::fixed(r.test.p_two_sided, 4) << std::setw(5) << to_symbol(r.test.direction) << "  "
                    << (r.test.p_two_sided < alpha ? "yes" : "no") << '\n';
            }
            return 0;
        }

        const auto ck = load_checkpoint(ckpt_path);
        const std::size_t grid = points > 0 ? points : ck.meta.eval_points;
        if (grid < 2) throw ConfigError("points", "must be >= 2");

        if (*eval_cmd) {
            const auto reports = evaluate_quality(*ck.model, ck.problems, grid, ck.meta.reference_scalar);
            const json doc{{"checkpoint", ckpt_path},
                           {"seed", ck.meta.seed},
                           {"eval_points", grid},
                           {"reference_scalar", ck.meta.reference_scalar},
                           {"reports", to_json(reports)}};
            write_text(report_path, doc.dump(1) + "\n");
            detail::print_reports(out, reports);
            return 0;
        }

        if (*infer_cmd) {
            const std::size_t t = detail::require_task(ck, task_id);
            const auto& p = *ck.problems[t];
            if (theta.size() != p.m() - 1) {
                throw ConfigError("theta", "task " + p.id() + " needs " + std::to_string(p.m() - 1) + " angle(s)");
            }
            for (double a : theta) {
                if (!(a >= 0.0 && a <= std::numbers::pi / 2.0)) throw ConfigError("theta", "angles must lie in [0, pi/2]");
            }
            const auto s = solve_grid(*ck.model, p, t, {theta});
            out << json{{"task", p.id()},
                        {"theta", theta},
                        {"lambda", make_preference(theta).lambda},
                        {"x", s.xs[0]},
                        {"f_raw", s.fs_raw[0]},
                        {"f_norm", s.fs[0]}}
                       .dump()
                << '\n';
            return 0;
        }

        if (*export_cmd) {
            std::vector<std::size_t> tasks;
            if (!task_id.empty()) {
                tasks.push_back(detail::require_task(ck, task_id));
            } else if (format == "csv" && ck.problems.size() > 1) {
                throw ConfigError("task", "csv export of a multitask checkpoint needs --task");
            } else {
                for (std::size_t t = 0; t < ck.problems.size(); ++t) tasks.push_back(t);
            }
            std::ostringstream buf;
            json doc = json::array();
            for (auto t : tasks) {
                const auto& p = *ck.problems[t];
                const auto s = solve_grid(*ck.model, p, t, theta_grid(p.m(), grid));
                if (format == "csv") {
                    detail::write_csv(buf, s, p.m());
                } else {
                    doc.push_back(to_json(s));
                }
            }
            write_text(out_path, format == "csv" ? buf.str() : doc.dump(1) + "\n");
            return 0;
        }

        if (*serve_cmd) {
            ApiService api(ck);
            auto srv = make_http_server(api, static_dir);
            if (!srv->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
            out << "serving " << ckpt_path << " on http://" << host << ':' << port << std::endl;
            srv->listen_after_bind();
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace coaction
