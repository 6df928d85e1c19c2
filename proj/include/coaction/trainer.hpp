#pragma once

#include <chrono>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coaction/conditioning.hpp"
#include "coaction/hv_loss.hpp"
#include "coaction/metrics.hpp"
#include "coaction/model.hpp"
#include "coaction/optimizer.hpp"
#include "coaction/problems.hpp"

namespace coaction {

enum class TrainMode { multitask, single_task };

inline std::string to_string(TrainMode m) { return m == TrainMode::multitask ? "multitask" : "single_task"; }

inline TrainMode parse_mode(const std::string& s)
{
    if (s == "multitask") return TrainMode::multitask;
    if (s == "single_task") return TrainMode::single_task;
    throw std::invalid_argument("unknown mode '" + s + "' (expected multitask or single_task)");
}

struct TrainConfig {
    TrainMode mode = TrainMode::multitask;
    std::size_t iterations = 5000;
    std::size_t batch = 256;
    double lr = 2e-3;
    double weight_decay = 0.01;
    std::optional<double> clip_norm = 1.0;
    bool use_extreme = true;
    bool schedule_free = false;
    double reference_scalar = kDefaultReference;
    std::size_t eval_points = 100;
    std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c, std::size_t task_count)
{
    if (c.iterations == 0) throw std::invalid_argument("iterations must be >= 1");
    if (c.batch == 0) throw std::invalid_argument("batch must be >= 1");
    if (!(c.lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
    if (c.clip_norm && !(*c.clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
    if (!(c.reference_scalar >= 1.0)) throw std::invalid_argument("reference_scalar must be >= 1");
    if (c.eval_points < 2) throw std::invalid_argument("eval_points must be >= 2");
    if (c.mode == TrainMode::single_task && task_count != 1) {
        throw std::invalid_argument("single_task mode trains exactly one task, got " + std::to_string(task_count));
    }
}

using ProblemSet = std::vector<std::shared_ptr<const Problem>>;

inline ProblemSet make_problems(const std::vector<std::string>& ids)
{
    ProblemSet out;
    for (const auto& id : ids) out.push_back(make_problem(id));
    return out;
}

inline TaskSpec task_spec(const Problem& p)
{
    const auto& d = p.descriptor();
    return TaskSpec{d.id, d.n, d.m, d.lower, d.upper, true};
}

/// Architecture defaults with one head per problem.
inline ModelConfig model_config_for(const ProblemSet& problems, Backbone backbone, std::size_t d_task,
                                    std::uint64_t seed)
{
    ModelConfig c;
    c.backbone = backbone;
    c.d_task = d_task;
    c.seed = seed;
    for (const auto& p : problems) c.tasks.push_back(task_spec(*p));
    return c;
}

// ---- inference on preference grids -------------------------------------------------------

struct SolutionSet {
    std::string task_id;
    std::vector<std::vector<double>> thetas;
    std::vector<std::vector<double>> xs;
    std::vector<std::vector<double>> fs_raw;
    std::vector<std::vector<double>> fs;  // normalized, clamped to [0, 1]
};

/// Deterministic evaluation grid kept off the quadrant boundary: m=2 gives k angles in
/// [0.01, 0.99] * pi/2; m=3 gives a side x side grid with side = round(sqrt(k)).
inline std::vector<std::vector<double>> theta_grid(std::size_t m, std::size_t k)
{
    check_objective_count(m);
    const double lo = 0.01 * std::numbers::pi / 2.0;
    const double hi = 0.99 * std::numbers::pi / 2.0;
    auto axis = [&](std::size_t count) {
        std::vector<double> v(count);
        for (std::size_t i = 0; i < count; ++i) {
            v[i] = count == 1 ? (lo + hi) / 2.0 : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
        }
        return v;
    };
    std::vector<std::vector<double>> grid;
    if (m == 2) {
        for (double t : axis(k)) grid.push_back({t});
        return grid;
    }
    const auto side = static_cast<std::size_t>(std::max(1.0, std::round(std::sqrt(static_cast<double>(k)))));
    const auto a = axis(side);
    for (double t1 : a) {
        for (double t2 : a) grid.push_back({t1, t2});
    }
    return grid;
}

/// Decision vectors for the given polar angles, computed with dropout off.
inline Tensor predict(ParetoModel& model, std::size_t task, const std::vector<PreferenceSample>& prefs)
{
    const auto& cfg = model.config();
    const auto& spec = cfg.tasks.at(task);
    const Tensor input = assemble_batch(embed_task(task + 1, cfg.d_task), prefs, spec.m, cfg.d_max());
    ad::Graph g;
    CounterRng unused(0);
    return model.forward(g, input, task, false, unused).value();
}

inline SolutionSet solve_grid(ParetoModel& model, const Problem& problem, std::size_t task,
                              const std::vector<std::vector<double>>& thetas)
{
    SolutionSet s;
    s.task_id = problem.id();
    s.thetas = thetas;
    if (thetas.empty()) return s;
    std::vector<PreferenceSample> prefs;
    for (const auto& t : thetas) prefs.push_back(make_preference(t));
    const Tensor x = predict(model, task, prefs);
    for (std::size_t b = 0; b < thetas.size(); ++b) {
        auto row = x.row(b);
        auto v = evaluate_point(problem, row);
        s.xs.push_back(std::move(row));
        s.fs_raw.push_back(std::move(v.raw));
        s.fs.push_back(std::move(v.normalized));
    }
    return s;
}

/// Grid solutions and metrics per task; the quality measure reported after training.
inline std::vector<MetricsReport> evaluate_quality(ParetoModel& model, const ProblemSet& problems,
                                                   std::size_t eval_points, double reference_scalar)
{
    std::vector<MetricsReport> out;
    for (std::size_t t = 0; t < problems.size(); ++t) {
        const auto& p = *problems[t];
        auto s = solve_grid(model, p, t, theta_grid(p.m(), eval_points));
        out.push_back(compute_metrics(p.id(), s.fs, Point(p.m(), reference_scalar)));
    }
    return out;
}

// ---- training loop -----------------------------------------------------------------------

struct TrainTrace {
    std::vector<double> loss;
    std::vector<std::size_t> task_schedule;  // 0-based task positions
    double wall_seconds = 0.0;
    std::size_t objective_evaluations = 0;
    std::vector<MetricsReport> quality;
};

/// What one iteration saw, handed to an optional observer before the optimizer step.
struct IterationRecord {
    std::size_t iteration = 0;
    std::size_t task = 0;
    const Tensor* lambda = nullptr;    // (rows, m) truncated preferences
    const Tensor* f_scaled = nullptr;  // (rows, m) objectives fed to the loss
    double loss = 0.0;
};

using TrainObserver = std::function<void(const IterationRecord&, ParetoModel&)>;

struct TrainResult {
    std::unique_ptr<ParetoModel> model;
    TrainTrace trace;
};

/// Parameters are kept at float32 precision after training so the in-memory model and a
/// saved checkpoint are the same function.
inline void round_to_storage_precision(ParetoModel& model)
{
    for (auto* p : model.parameters()) {
        for (double& v : p->value.values()) v = static_cast<double>(static_cast<float>(v));
    }
}

/// Activation tensors of a few MB are allocated and freed every iteration. Serving them from
/// the heap instead of fresh mmap pages avoids a page-fault storm on each op.
inline void keep_large_blocks_on_heap()
{
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 512 << 20);
        return true;
    }();
    (void)once;
#endif
}

inline TrainResult train(const ProblemSet& problems, const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const TrainObserver& observer = nullptr, bool evaluate_at_end = true)
{
    if (problems.empty()) throw std::invalid_argument("at least one problem must be registered");
    validate(cfg, problems.size());
    if (model_cfg.tasks.size() != problems.size()) {
        throw std::invalid_argument("model has " + std::to_string(model_cfg.tasks.size()) + " heads for " +
                                    std::to_string(problems.size()) + " problems");
    }
    for (std::size_t t = 0; t < problems.size(); ++t) {
        if (model_cfg.tasks[t].id != problems[t]->id()) {
            throw std::invalid_argument("head " + model_cfg.tasks[t].id + " does not match problem " + problems[t]->id());
        }
    }

    keep_large_blocks_on_heap();
    TrainResult result;
    result.model = std::make_unique<ParetoModel>(model_cfg);
    ParetoModel& model = *result.model;
    const CounterRng root(cfg.seed);
    CounterRng init_rng = root.split(1);
    CounterRng task_rng = root.split(2);
    CounterRng pref_rng = root.split(3);
    CounterRng drop_rng = root.split(4);
    model.init(init_rng);

    const auto params = model.parameters();
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    auto opt = make_optimizer(params, opt_cfg, cfg.schedule_free);

    std::vector<LossContext> contexts;
    std::vector<std::vector<double>> embeddings;
    for (std::size_t t = 0; t < problems.size(); ++t) {
        contexts.push_back(make_loss_context(problems[t]->m(), cfg.reference_scalar));
        embeddings.push_back(embed_task(t + 1, model_cfg.d_task));
    }
    const std::size_t d_max = model_cfg.d_max();

    auto& trace = result.trace;
    trace.loss.reserve(cfg.iterations);
    trace.task_schedule.reserve(cfg.iterations);
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const std::size_t t = task_rng.uniform_index(problems.size());
        const Problem& problem = *problems[t];
        const std::size_t m = problem.m();
        auto prefs = apply_extreme_and_truncate(sample_preferences(m, cfg.batch, pref_rng), m, cfg.use_extreme);
        const Tensor input = assemble_batch(embeddings[t], prefs, m, d_max);
        const Tensor lambda = lambda_matrix(prefs);

        double loss_value = 0.0;
        try {
            ad::Graph g;
            ad::Var x = model.forward(g, input, t, true, drop_rng);
            auto obj = evaluate(problem, x);
            auto loss = psl_hv1_loss(obj.scaled, lambda, contexts[t]);
            loss_value = loss.loss.value().item();
            if (!std::isfinite(loss_value)) throw DomainError("loss is not finite");
            model.zero_grad();
            g.backward(loss.loss);
            if (observer) {
                observer(IterationRecord{it, t, &lambda, &obj.scaled.value(), loss_value}, model);
            }
        } catch (const DomainError& e) {
            throw std::runtime_error("training aborted at iteration " + std::to_string(it) + ": " + e.what());
        }
        trace.loss.push_back(loss_value);
        trace.task_schedule.push_back(t);
        trace.objective_evaluations += prefs.size();
        if (cfg.clip_norm) clip_gradients(params, *cfg.clip_norm);
        opt->step();
    }
    opt->finalize();
    round_to_storage_precision(model);
    trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (evaluate_at_end) {
        trace.quality = evaluate_quality(model, problems, cfg.eval_points, cfg.reference_scalar);
    }
    return result;
}

}  // namespace coaction
