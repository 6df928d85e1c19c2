#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "coaction/metrics.hpp"
#include "coaction/trainer.hpp"

namespace coaction {

using json = nlohmann::json;

inline json to_json(const MetricsReport& r)
{
    return json{{"task_id", r.task_id},   {"hv", r.hv},
                {"range", r.range},       {"sparsity", r.sparsity},
                {"count_after_filter", r.count_after_filter}, {"r_used", r.r_used}};
}

inline MetricsReport metrics_from_json(const json& j)
{
    MetricsReport r;
    r.task_id = j.at("task_id").get<std::string>();
    r.hv = j.at("hv").get<double>();
    r.range = j.at("range").get<double>();
    r.sparsity = j.at("sparsity").get<double>();
    r.count_after_filter = j.value("count_after_filter", std::size_t{0});
    r.r_used = j.value("r_used", std::vector<double>{});
    return r;
}

inline json to_json(const std::vector<MetricsReport>& reports)
{
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    return arr;
}

inline json to_json(const TrainTrace& t, const ProblemSet& problems)
{
    std::vector<std::string> ids;
    for (const auto& p : problems) ids.push_back(p->id());
    return json{{"tasks", ids},
                {"loss", t.loss},
                {"task_schedule", t.task_schedule},
                {"wall_seconds", t.wall_seconds},
                {"objective_evaluations", t.objective_evaluations},
                {"final_loss", t.loss.empty() ? 0.0 : t.loss.back()},
                {"quality", to_json(t.quality)}};
}

inline json to_json(const SolutionSet& s)
{
    return json{{"task", s.task_id}, {"theta", s.thetas}, {"x", s.xs}, {"f_raw", s.fs_raw}, {"f_norm", s.fs}};
}

inline std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline json read_json(const std::string& path)
{
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path + " is not valid JSON: " + e.what());
    }
}

/// Reports of an `eval` document, or of a bare array of reports.
inline std::vector<MetricsReport> reports_from_document(const json& doc)
{
    const json& arr = doc.is_array() ? doc : doc.at("reports");
    std::vector<MetricsReport> out;
    for (const auto& r : arr) out.push_back(metrics_from_json(r));
    return out;
}

}  // namespace coaction
