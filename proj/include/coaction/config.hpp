#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "coaction/io.hpp"
#include "coaction/model.hpp"
#include "coaction/trainer.hpp"

namespace coaction {

/// Invalid user input; the message names the offending field.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& field, const std::string& msg)
        : std::invalid_argument("config field '" + field + "': " + msg), field_(field)
    {
    }
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

inline constexpr std::size_t kMultitaskIterations = 5000;
inline constexpr std::size_t kSingleTaskIterations = 1000;

struct RunConfig {
    std::vector<std::string> tasks;
    Backbone backbone = Backbone::transformer;
    std::size_t d_task = kDefaultTaskDim;
    TrainConfig train;
};

namespace detail {

template <class T>
T field(const json& j, const char* name, T fallback)
{
    if (!j.contains(name)) return fallback;
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(name, "has the wrong type");
    }
}

inline std::size_t count_field(const json& j, const char* name, std::size_t fallback)
{
    if (!j.contains(name)) return fallback;
    const auto& v = j.at(name);
    if (!v.is_number_unsigned()) throw ConfigError(name, "must be a non-negative integer");
    return v.get<std::size_t>();
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& j)
{
    static const std::set<std::string> known = {"tasks",          "mode",      "backbone",     "d_task",
                                                "iterations",     "batch",     "lr",           "weight_decay",
                                                "clip_norm",      "use_extreme", "schedule_free", "reference_scalar",
                                                "eval_points",    "seed"};
    if (!j.is_object()) throw ConfigError("<root>", "must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError(key, "unknown key");
    }
    RunConfig c;
    if (!j.contains("tasks")) throw ConfigError("tasks", "is required");
    c.tasks = detail::field<std::vector<std::string>>(j, "tasks", {});
    if (c.tasks.empty()) throw ConfigError("tasks", "must list at least one problem id");
    std::set<std::string> seen;
    for (const auto& id : c.tasks) {
        if (std::find(problem_ids().begin(), problem_ids().end(), id) == problem_ids().end()) {
            throw ConfigError("tasks", "unknown problem id '" + id + "'");
        }
        if (!seen.insert(id).second) throw ConfigError("tasks", "duplicate problem id '" + id + "'");
    }
    auto& t = c.train;
    const auto mode = detail::field<std::string>(j, "mode", "multitask");
    const auto backbone = detail::field<std::string>(j, "backbone", "transformer");
    try {
        t.mode = parse_mode(mode);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("mode", e.what());
    }
    try {
        c.backbone = parse_backbone(backbone);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("backbone", e.what());
    }
    c.d_task = detail::count_field(j, "d_task", kDefaultTaskDim);
    if (c.d_task < 2 || c.d_task % 2 != 0) throw ConfigError("d_task", "must be even and >= 2");

    const std::size_t default_iters = t.mode == TrainMode::single_task ? kSingleTaskIterations : kMultitaskIterations;
    t.iterations = detail::count_field(j, "iterations", default_iters);
    if (t.iterations < 1) throw ConfigError("iterations", "must be >= 1");
    t.batch = detail::count_field(j, "batch", t.batch);
    if (t.batch < 1) throw ConfigError("batch", "must be >= 1");
    t.lr = detail::field<double>(j, "lr", t.lr);
    if (!(t.lr > 0.0) || !std::isfinite(t.lr)) throw ConfigError("lr", "must be positive");
    t.weight_decay = detail::field<double>(j, "weight_decay", t.weight_decay);
    if (!(t.weight_decay >= 0.0) || !std::isfinite(t.weight_decay)) throw ConfigError("weight_decay", "must be >= 0");
    if (j.contains("clip_norm")) {
        if (j.at("clip_norm").is_null()) {
            t.clip_norm.reset();
        } else {
            t.clip_norm = detail::field<double>(j, "clip_norm", 1.0);
            if (!(*t.clip_norm > 0.0)) throw ConfigError("clip_norm", "must be positive or null");
        }
    }
    t.use_extreme = detail::field<bool>(j, "use_extreme", t.use_extreme);
    t.schedule_free = detail::field<bool>(j, "schedule_free", t.schedule_free);
    t.reference_scalar = detail::field<double>(j, "reference_scalar", t.reference_scalar);
    if (!(t.reference_scalar >= 1.0)) throw ConfigError("reference_scalar", "must be >= 1");
    t.eval_points = detail::count_field(j, "eval_points", t.eval_points);
    if (t.eval_points < 2) throw ConfigError("eval_points", "must be >= 2");
    t.seed = detail::count_field(j, "seed", 0);
    if (t.mode == TrainMode::single_task && c.tasks.size() != 1) {
        throw ConfigError("mode", "single_task needs exactly one task, got " + std::to_string(c.tasks.size()));
    }
    return c;
}

/// COACTION_SEED, when set, replaces the configured seed.
inline void apply_environment(RunConfig& c)
{
    const char* s = std::getenv("COACTION_SEED");
    if (s == nullptr) return;
    const std::string v(s);
    std::size_t used = 0;
    unsigned long long seed = 0;
    try {
        seed = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (v.empty() || used != v.size() || v[0] == '-') {
        throw ConfigError("COACTION_SEED", "must be a non-negative integer, got '" + v + "'");
    }
    c.train.seed = seed;
}

inline RunConfig load_run_config(const std::string& path)
{
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }
    auto c = run_config_from_json(j);
    apply_environment(c);
    return c;
}

/// The effective configuration with every default filled in.
inline json to_json(const RunConfig& c)
{
    const auto& t = c.train;
    return json{{"tasks", c.tasks},
                {"mode", to_string(t.mode)},
                {"backbone", to_string(c.backbone)},
                {"d_task", c.d_task},
                {"iterations", t.iterations},
                {"batch", t.batch},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"clip_norm", t.clip_norm ? json(*t.clip_norm) : json(nullptr)},
                {"use_extreme", t.use_extreme},
                {"schedule_free", t.schedule_free},
                {"reference_scalar", t.reference_scalar},
                {"eval_points", t.eval_points},
                {"seed", t.seed}};
}

}  // namespace coaction
