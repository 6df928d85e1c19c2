// Acceptance suite A1-A8. Prints one PASS/FAIL line per criterion; exit status 1 if any fails.
// Pass criterion ids (e.g. `acceptance A1 A5`) to run a subset.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "coaction/checkpoint.hpp"
#include "coaction/cli.hpp"
#include "coaction/gradcheck.hpp"
#include "coaction/trainer.hpp"

using namespace coaction;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

const std::vector<std::string> kSuite = {"zdt1", "zdt2", "vlmop1", "vlmop2", "re21", "re24", "re37"};
const std::vector<std::string> kBbob = {"bbob_f1_f1", "bbob_f1_f2", "bbob_f1_f3", "bbob_f1_f4", "bbob_f1_f5"};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v, int digits = 4)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

struct Verdict {
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& what)
    {
        pass = pass && ok;
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [fail]");
    }
};

const MetricsReport& report_for(const std::vector<MetricsReport>& q, const std::string& id)
{
    for (const auto& r : q) {
        if (r.task_id == id) return r;
    }
    throw std::out_of_range("no report for " + id);
}

TrainResult run(const std::vector<std::string>& ids, Backbone backbone, TrainMode mode, std::size_t iterations,
                std::uint64_t seed, std::size_t batch = 256)
{
    const auto problems = make_problems(ids);
    TrainConfig c;
    c.mode = mode;
    c.iterations = iterations;
    c.batch = batch;
    c.seed = seed;
    std::clog << "  training " << ids.size() << " task(s) [" << ids.front() << (ids.size() > 1 ? ", ..." : "")
              << "] " << to_string(backbone) << " n=" << iterations << " seed=" << seed << std::endl;
    auto r = train(problems, model_config_for(problems, backbone, kDefaultTaskDim, seed), c);
    std::clog << "    " << num(r.trace.wall_seconds, 1) << " s" << std::endl;
    return r;
}

// ---- A1 ---------------------------------------------------------------------------------

Verdict a1()
{
    Verdict v;
    const auto start = Clock::now();
    const double hv1 = hypervolume(make_problem("zdt1")->front(1000), {3.5, 3.5});
    const double hv2 = hypervolume(make_problem("zdt2")->front(1000), {3.5, 3.5});
    const double elapsed = seconds_since(start);
    v.check(std::abs(hv1 - (12.25 - 1.0 / 3.0)) <= 0.01, "zdt1 hv=" + num(hv1) + " (11.9167 +- 0.01)");
    v.check(std::abs(hv2 - (12.25 - 2.0 / 3.0)) <= 0.01, "zdt2 hv=" + num(hv2) + " (11.5833 +- 0.01)");
    v.check(elapsed < 1.0, "time=" + num(elapsed, 3) + " s");
    return v;
}

// ---- A2 / A3 ----------------------------------------------------------------------------

// 7-task runs keyed by backbone and seed; the transformer seed-0 run serves A2, A3 and A4.
struct TimedRun {
    TrainResult result;
    double total_seconds = 0.0;
};

const TimedRun& multitask(Backbone backbone = Backbone::transformer, std::uint64_t seed = 0)
{
    static std::map<std::pair<Backbone, std::uint64_t>, TimedRun> cache;
    const auto key = std::make_pair(backbone, seed);
    auto it = cache.find(key);
    if (it == cache.end()) {
        const auto start = Clock::now();
        auto r = run(kSuite, backbone, TrainMode::multitask, 5000, seed);
        it = cache.emplace(key, TimedRun{std::move(r), seconds_since(start)}).first;
    }
    return it->second;
}

Verdict a2()
{
    Verdict v;
    const auto& mt = multitask();
    const auto& q = mt.result.trace.quality;
    v.check(mt.total_seconds < 1800.0, "total " + num(mt.total_seconds, 1) + " s < 1800 s");
    v.check(report_for(q, "zdt1").hv >= 11.7, "zdt1 hv=" + num(report_for(q, "zdt1").hv) + " >= 11.7");
    v.check(report_for(q, "zdt2").hv >= 11.3, "zdt2 hv=" + num(report_for(q, "zdt2").hv) + " >= 11.3");
    v.check(report_for(q, "re21").hv >= 11.8, "re21 hv=" + num(report_for(q, "re21").hv) + " >= 11.8");
    v.check(report_for(q, "zdt1").range >= 1.50, "zdt1 range=" + num(report_for(q, "zdt1").range) + " >= 1.50");
    std::clog << "  multitask quality:\n";
    for (const auto& rep : q) {
        std::clog << "    " << rep.task_id << " hv=" << num(rep.hv) << " range=" << num(rep.range)
                  << " sparsity=" << num(rep.sparsity, 6) << '\n';
    }
    return v;
}

Verdict a3()
{
    Verdict v;
    const auto& mt = multitask().result;
    std::size_t single_iterations = 0;
    double single_seconds = 0.0;
    for (const auto& id : kSuite) {
        const auto r = run({id}, Backbone::transformer, TrainMode::single_task, 1000, 0);
        single_iterations += r.trace.loss.size();
        single_seconds += r.trace.wall_seconds;
    }
    v.check(mt.trace.loss.size() < single_iterations,
            "iterations " + std::to_string(mt.trace.loss.size()) + " < " + std::to_string(single_iterations));
    v.check(mt.trace.wall_seconds < single_seconds,
            "wall " + num(mt.trace.wall_seconds, 1) + " s < " + num(single_seconds, 1) + " s (ratio " +
                num(mt.trace.wall_seconds / single_seconds, 3) + ")");
    return v;
}

// ---- A4 ---------------------------------------------------------------------------------

// The backbone ablation is run within the multitask setting, the same 7-task configuration as A2.

Verdict a4()
{
    Verdict v;
    double transformer = 0.0;
    double mlp = 0.0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const double ht = report_for(multitask(Backbone::transformer, seed).result.trace.quality, "re37").hv;
        const double hm = report_for(multitask(Backbone::mlp, seed).result.trace.quality, "re37").hv;
        transformer += ht / 3.0;
        mlp += hm / 3.0;
        per_seed += " " + num(ht, 3) + "/" + num(hm, 3);
    }
    v.check(transformer > mlp, "mean re37 hv transformer=" + num(transformer) + " > mlp=" + num(mlp) +
                                   " (per seed t/m:" + per_seed + ")");
    return v;
}

// ---- A5 ---------------------------------------------------------------------------------

// Two-sided exact p by counting sign patterns through a subset-sum table over doubled ranks
// (integers even with half-rank ties). Independent of the bitmask enumeration in the library.
double wilcoxon_oracle(const std::vector<double>& d)
{
    std::vector<double> nz;
    for (double x : d) {
        if (x != 0.0) nz.push_back(x);
    }
    if (nz.empty()) return 1.0;
    const std::size_t n = nz.size();
    std::vector<int> rank2(n);
    for (std::size_t i = 0; i < n; ++i) {
        int less = 0;
        int equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(nz[j]) < std::abs(nz[i])) ++less;
            if (std::abs(nz[j]) == std::abs(nz[i])) ++equal;
        }
        rank2[i] = 2 * less + equal + 1;  // twice the average rank
    }
    int total = 0;
    int wplus = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total += rank2[i];
        if (nz[i] > 0) wplus += rank2[i];
    }
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    for (int r : rank2) {
        for (int s = total; s >= r; --s) ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - r)];
    }
    // |2 W - total| compares deviations from the centre in doubled units.
    const int observed = std::abs(2 * wplus - total);
    double extreme = 0.0;
    for (int s = 0; s <= total; ++s) {
        if (std::abs(2 * s - total) >= observed) extreme += ways[static_cast<std::size_t>(s)];
    }
    return extreme / std::pow(2.0, static_cast<double>(n));
}

Verdict a5()
{
    Verdict v;
    const std::vector<double> zero(5, 0.0);
    const auto all_pos = wilcoxon_exact({0.1, 0.2, 0.3, 0.4, 0.5}, zero);
    v.check(all_pos.p_two_sided == 0.0625, "all-positive n=5 p=" + num(all_pos.p_two_sided, 6));
    const auto mixed = wilcoxon_exact({1, -2, 3, -4, 5}, zero);
    v.check(mixed.p_two_sided == 0.8125, "d=(1,-2,3,-4,5) p=" + num(mixed.p_two_sided, 6));
    CounterRng rng(2024);
    std::size_t agree = 0;
    for (int c = 0; c < 200; ++c) {
        const std::size_t n = 4 + rng.uniform_index(5);
        std::vector<double> a(n);
        std::vector<double> b(n);
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Values on a coarse grid so ties and zero differences occur.
            a[i] = static_cast<double>(rng.uniform_index(7)) * 0.5;
            b[i] = static_cast<double>(rng.uniform_index(7)) * 0.5;
            d[i] = a[i] - b[i];
        }
        if (std::abs(wilcoxon_exact(a, b).p_two_sided - wilcoxon_oracle(d)) < 1e-12) ++agree;
    }
    v.check(agree == 200, "random cases matching oracle " + std::to_string(agree) + "/200");
    return v;
}

// ---- A6 ---------------------------------------------------------------------------------

Verdict a6()
{
    Verdict v;
    // Model + loss on a shrunken configuration, 50 random parameter probes.
    const auto problems = make_problems({"zdt1", "re37"});
    auto mc = model_config_for(problems, Backbone::transformer, kDefaultTaskDim, 0);
    mc.embed_dim = 8;
    mc.heads = 2;
    mc.ff_dim = 8;
    mc.pool_hidden = 4;
    ParetoModel model(mc);
    CounterRng rng(606);
    model.init(rng);
    for (auto* p : model.parameters()) {
        if (!p->name.ends_with(".weight")) {
            for (auto& x : p->value.values()) x = rng.uniform(-0.3, 0.3);
        }
    }
    std::size_t probes = 0;
    double worst = 0.0;
    for (std::size_t task = 0; task < problems.size(); ++task) {
        const std::size_t m = problems[task]->m();
        auto prefs = apply_extreme_and_truncate(sample_preferences(m, 6, rng), m, true);
        const Tensor input = assemble_batch(embed_task(task + 1, mc.d_task), prefs, m, mc.d_max());
        const Tensor lambda = lambda_matrix(prefs);
        const auto ctx = make_loss_context(m);
        auto loss = [&](bool backward) {
            ad::Graph g;
            CounterRng unused(0);
            auto obj = evaluate(*problems[task], model.forward(g, input, task, false, unused));
            auto l = psl_hv1_loss(obj.scaled, lambda, ctx).loss;
            if (backward) g.backward(l);
            return l.value().item();
        };
        model.zero_grad();
        loss(true);
        const auto params = model.parameters();
        for (int k = 0; k < 25; ++k) {
            auto* p = params[rng.uniform_index(params.size())];
            if (p->name.starts_with("head.") && !p->name.starts_with("head." + problems[task]->id() + ".")) {
                --k;
                continue;
            }
            const std::size_t i = rng.uniform_index(p->value.size());
            const double analytic = p->grad[i];
            const double saved = p->value[i];
            const double h = 1e-5;
            p->value[i] = saved + h;
            const double up = loss(false);
            p->value[i] = saved - h;
            const double down = loss(false);
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            // Relative error; slopes under 1e-4 are judged against the quotient's roundoff floor.
            const double err = std::abs(analytic) >= 1e-4 ? std::abs(analytic - numeric) / std::abs(analytic)
                                                          : std::abs(analytic - numeric) / 1e-4;
            worst = std::max(worst, err);
            ++probes;
        }
    }
    v.check(probes == 50 && worst < 1e-4, "model+loss probes=" + std::to_string(probes) + " worst rel=" + num(worst * 1e6, 3) + "e-6");

    // Problem Jacobians, every registered problem, 100 interior points each.
    double worst_problem = 0.0;
    std::string worst_id;
    for (const auto& id : problem_ids()) {
        auto p = make_problem(id);
        const auto& d = p->descriptor();
        CounterRng prng(66, std::hash<std::string>{}(id));
        for (int point = 0; point < 100; ++point) {
            std::vector<double> x(d.n);
            for (std::size_t i = 0; i < d.n; ++i) {
                const double w = d.upper[i] - d.lower[i];
                x[i] = prng.uniform(d.lower[i] + 0.01 * w, d.upper[i] - 0.01 * w);
            }
            const auto fx = evaluate_point(*p, x).raw;
            for (std::size_t j = 0; j < d.m; ++j) {
                auto r = ad::finite_diff_report(
                    [&](ad::Graph&, ad::Var xv) { return ad::sum(ad::slice(evaluate(*p, xv).raw, j, j + 1)); },
                    Tensor(Shape{1, d.n}, x));
                const double floor = 1e-5 * (std::abs(fx[j]) + 1.0);
                for (std::size_t i = 0; i < d.n; ++i) {
                    const double e = std::abs(r.analytic[i] - r.numeric[i]) / (std::abs(r.analytic[i]) + floor);
                    if (e > worst_problem) {
                        worst_problem = e;
                        worst_id = id;
                    }
                }
            }
        }
    }
    v.check(worst_problem < 1e-4, "problems 12x100 worst rel=" + num(worst_problem * 1e6, 3) + "e-6 (" + worst_id + ")");
    return v;
}

// ---- A7 ---------------------------------------------------------------------------------

Verdict a7()
{
    Verdict v;
    const auto r = run(kBbob, Backbone::transformer, TrainMode::multitask, 1500, 0);
    const auto& loss = r.trace.loss;
    double head = 0.0;
    double tail = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        head += loss[i] / 50.0;
        tail += loss[loss.size() - 50 + i] / 50.0;
    }
    // Reduction measured against the magnitude of the starting mean (the loss is signed).
    const double reduction = (head - tail) / std::abs(head);
    v.check(reduction >= 0.5, "mean loss first50=" + num(head) + " last50=" + num(tail) + " reduction=" +
                                  num(100.0 * reduction, 1) + "%");
    const auto problems = make_problems(kBbob);
    std::size_t violations = 0;
    std::string sizes;
    for (std::size_t t = 0; t < problems.size(); ++t) {
        const auto& p = *problems[t];
        const auto s = solve_grid(*r.model, p, t, theta_grid(p.m(), 100));
        const auto front = nondominated_filter(s.fs);
        for (std::size_t a = 0; a < front.size(); ++a) {
            for (std::size_t b = 0; b < front.size(); ++b) {
                if (a != b && dominates(front[a], front[b])) ++violations;
            }
        }
        sizes += " " + std::to_string(front.size());
    }
    v.check(violations == 0, "filtered fronts mutually non-dominated (sizes" + sizes + ")");
    return v;
}

// ---- A8 ---------------------------------------------------------------------------------

Verdict a8()
{
    Verdict v;
    const auto problems = make_problems(kSuite);
    TrainConfig c;
    c.iterations = 40;
    c.seed = 8;
    const auto mc = model_config_for(problems, Backbone::transformer, kDefaultTaskDim, 8);
    auto first = train(problems, mc, c);
    auto second = train(problems, mc, c);
    v.check(first.trace.loss == second.trace.loss, "identical loss arrays over " + std::to_string(c.iterations) + " iterations");

    const auto dir = fs::temp_directory_path() / ("coaction_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const std::string ckpt = (dir / "a8.ckpt").string();
    save_checkpoint(ckpt, *first.model, problems, training_meta(c, first.trace));
    const auto loaded = load_checkpoint(ckpt);
    bool identical = true;
    for (std::size_t t = 0; t < problems.size(); ++t) {
        const auto grid = theta_grid(problems[t]->m(), 100);
        identical = identical && solve_grid(*first.model, *problems[t], t, grid).xs ==
                                     solve_grid(*loaded.model, *loaded.problems[t], t, grid).xs;
    }
    v.check(identical, "checkpoint round-trip inference bit-identical");

    double worst = 0.0;
    std::size_t rows = 0;
    for (const auto& id : kSuite) {
        const std::string csv = (dir / (id + ".csv")).string();
        const std::vector<std::string> args = {"coaction", "export", "--ckpt", ckpt, "--format", "csv", "--task", id, "--out", csv};
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out;
        std::ostringstream err;
        if (run_cli(static_cast<int>(argv.size()), argv.data(), out, err) != 0) {
            v.check(false, "export " + id + ": " + err.str());
            continue;
        }
        const auto p = make_problem(id);
        std::ifstream in(csv);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            std::vector<double> cells;
            std::stringstream ss(line);
            std::string cell;
            std::getline(ss, cell, ',');
            while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
            const std::size_t off = p->m() - 1;
            const std::vector<double> x(cells.begin() + static_cast<std::ptrdiff_t>(off),
                                        cells.begin() + static_cast<std::ptrdiff_t>(off + p->n()));
            const auto f = evaluate_point(*p, x).normalized;
            for (std::size_t j = 0; j < p->m(); ++j) worst = std::max(worst, std::abs(f[j] - cells[off + p->n() + j]));
            ++rows;
        }
    }
    fs::remove_all(dir);
    v.check(worst <= 1e-5 && rows > 0, "csv re-evaluation rows=" + std::to_string(rows) + " max |df|=" + num(worst * 1e6, 3) + "e-6");
    return v;
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<std::string, Verdict (*)()>> criteria = {
        {"A1", a1}, {"A5", a5}, {"A6", a6}, {"A8", a8}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A7", a7}};
    std::set<std::string> selected(argv + 1, argv + argc);
    std::map<std::string, Verdict> results;
    for (const auto& [id, fn] : criteria) {
        if (!selected.empty() && !selected.contains(id)) continue;
        std::clog << id << " running" << std::endl;
        const auto start = Clock::now();
        try {
            results[id] = fn();
        } catch (const std::exception& e) {
            results[id] = Verdict{false, std::string("error: ") + e.what()};
        }
        std::clog << id << " done in " << num(seconds_since(start), 1) << " s" << std::endl;
    }
    bool all = true;
    for (const auto& [id, v] : results) {
        std::cout << id << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << '\n';
        all = all && v.pass;
    }
    return all ? 0 : 1;
}
