// Acceptance run: prints one PASS/FAIL line per criterion, exits nonzero if any fail.

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

using namespace oracle;

namespace
{

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t)
{
    return std::chrono::duration<double>(clock_type::now() - t).count();
}

struct verdict
{
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

std::string fmt(const char* f, double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

// ---------------------------------------------------------------------------

verdict gradient_check()
{
    verdict v;
    const auto start = clock_type::now();
    double worst = 0.0;
    for (std::size_t t : {0u, 1u, 2u}) {
        const auto r = run_gradcheck({16, 32, 6, 5}, t, pooling_mode::weighted, 1, 1e-5);
        worst = std::max(worst, r.max_rel_error);
        v.require(r.max_rel_error < 1e-4, "T=" + std::to_string(t) + " error " + fmt("%.3g", r.max_rel_error));
    }
    const double secs = seconds_since(start);
    v.require(secs < 30.0, "took " + fmt("%.1f", secs) + " s");
    if (v.pass) v.detail = "max rel error " + fmt("%.3g", worst) + " over T=0,1,2, " + fmt("%.1f", secs) + " s";
    return v;
}

verdict pooling_oracle()
{
    verdict v;
    const auto start = clock_type::now();
    std::mt19937_64 gen(2024);
    const std::size_t h = 8;
    const model_dims d{3, h, 3, 3};
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + gen() % 6;
        std::vector<node_pair> pairs;
        for (const auto& pr : all_pairs(n)) {
            if (gen() % 3 != 0) pairs.push_back(pr);
        }
        const auto c = build_channel_index(pairs, n);
        const auto st = random_state(gen, n, pairs.size(), h);
        const auto p = scaled_params(d, 9000 + trial, 3.0);
        const auto nodes = rows(st.node_hidden);
        const auto edges = rows(st.edge_hidden);
        for (auto mode : {pooling_mode::weighted, pooling_mode::avg, pooling_mode::max}) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto got = to_vector(pool_node_messages(i, st, c, p, mode));
                const auto want = node_pool_oracle(i, nodes, edges, pairs, p, mode);
                for (std::size_t k = 0; k < h; ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
            }
            for (std::size_t e = 0; e < pairs.size(); ++e) {
                const auto got = to_vector(pool_edge_messages(e, st, c, p, mode));
                const auto want = edge_pool_oracle(e, nodes, edges, pairs, p, mode);
                for (std::size_t k = 0; k < h; ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
            }
        }
    }
    const double secs = seconds_since(start);
    v.require(worst <= 1e-10, "max deviation " + fmt("%.3g", worst));
    v.require(secs < 5.0, "took " + fmt("%.2f", secs) + " s");
    if (v.pass) v.detail = "100 instances x 3 modes, max deviation " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s";
    return v;
}

verdict gru_checks()
{
    verdict v;
    std::mt19937_64 gen(77);

    const auto zero = zero_gru(6, 4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto h = testutil::random_vec(gen, 6, false, 10.0);
        const auto out = to_vector(gru_step(testutil::random_vec(gen, 4), h, zero));
        const auto hv = to_vector(h);
        for (std::size_t k = 0; k < hv.size(); ++k) {
            if (out[k] != hv[k] / 2.0) {
                v.require(false, "zero-parameter step is not h/2");
                trial = 20;
                break;
            }
        }
    }

    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = scaled_params({5, 6, 3, 3}, 300 + trial, 2.0);
        const auto x = testutil::random_vec(gen, 6);
        const auto h = testutil::random_vec(gen, 6);
        const auto got = to_vector(gru_step(x, h, p.edge_gru));
        const auto want = gru_oracle(to_vector(x), to_vector(h), p.edge_gru);
        for (std::size_t k = 0; k < got.size(); ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
    }
    v.require(worst <= 1e-12, "oracle deviation " + fmt("%.3g", worst));

    const auto pairs = all_pairs(4);
    const auto c = build_channel_index(pairs, 4);
    const auto p = initialize_params({3, 5, 3, 3}, 8);
    const auto st = random_state(gen, 4, pairs.size(), 5);
    std::size_t compositions = 0;
    for (auto mode : {pooling_mode::weighted, pooling_mode::avg, pooling_mode::max}) {
        for (std::size_t a = 0; a <= 3; ++a) {
            for (std::size_t b = 0; b <= 3; ++b) {
                ++compositions;
                const auto whole = iterate(st, c, p, a + b, mode);
                const auto parts = iterate(iterate(st, c, p, a, mode), c, p, b, mode);
                if (!same_state(whole, parts)) {
                    v.require(false, "iterate(" + std::to_string(a + b) + ") differs from composition");
                }
            }
        }
    }
    if (v.pass) {
        v.detail = "h/2 exact, oracle deviation " + fmt("%.3g", worst) + ", " + std::to_string(compositions) +
                   " compositions bitwise";
    }
    return v;
}

verdict metric_oracles()
{
    verdict v;
    const auto start = clock_type::now();
    std::mt19937_64 gen(4242);
    std::size_t instances = 0, mismatches = 0;
    for (int trial = 0; trial < 300; ++trial, ++instances) {
        const std::size_t n = 1 + gen() % 6;
        const auto in = random_instance(gen, std::max<std::size_t>(n, 2), 3 + gen() % 3, 3 + gen() % 8, false);
        for (auto task : {eval_task::predcls, eval_task::sgcls, eval_task::sggen}) {
            const auto ranked = extract_triplets(task_source(in.s, in.pred, in.edges, task, eval_config{}), task, 100);
            for (std::size_t k : {1u, 2u, 5u, 20u, 50u, 100u}) {
                mismatches += recall_at_k(ranked, in.s, k, task).matched != ref_recall_hits(ranked, in.s, k, task);
            }
        }
        const auto got5 = per_predicate_recall5(in.pred, in.edges, in.s);
        const auto want5 = ref_recall5(in.pred, in.edges, in.s);
        bool same5 = got5.size() == want5.size();
        for (const auto& [p, h] : want5) {
            same5 = same5 && got5.contains(p) && got5.at(p).hits == h.hits && got5.at(p).total == h.total;
        }
        mismatches += !same5;

        std::vector<box> boxes;
        std::vector<double> scores;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = 40 * u(gen), y = 40 * u(gen);
            boxes.push_back({x, y, x + 5 + 30 * u(gen), y + 5 + 30 * u(gen)});
            scores.push_back(std::round(u(gen) * 4.0) / 4.0);
        }
        const double thr = 0.1 + 0.6 * u(gen);
        const std::size_t keep = 1 + gen() % 6;
        mismatches += nms(boxes, scores, thr, keep) != ref_nms(boxes, scores, thr, keep);
    }
    const double secs = seconds_since(start);
    v.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
    v.require(instances >= 200, "only " + std::to_string(instances) + " instances");
    v.require(secs < 10.0, "took " + fmt("%.2f", secs) + " s");
    if (v.pass) v.detail = std::to_string(instances) + " instances, exact agreement, " + fmt("%.2f", secs) + " s";
    return v;
}

// ---------------------------------------------------------------------------
// Training runs shared by the remaining criteria.

struct run_output
{
    std::string checkpoint_bytes;
    std::string report_text;
    std::vector<eval_report> reports;
    double seconds = 0.0;
};

run_output train_and_report(const std::vector<scene_graph_sample>& train, const std::vector<scene_graph_sample>& eval_on,
                            const vocab_meta& vocab, std::size_t feature_dim, const train_config& cfg)
{
    const auto start = clock_type::now();
    const model_dims dims{feature_dim, 32, vocab.num_classes(), vocab.num_predicates()};
    const auto fitted = fit(train, dims, cfg);
    run_output out;
    checkpoint c;
    c.seed = cfg.seed;
    c.iterations = cfg.iterations;
    c.pooling = cfg.pooling;
    c.vocab = vocab;
    c.params = fitted.params;
    out.checkpoint_bytes = serialize_checkpoint(c);
    eval_config ec;
    ec.iterations = cfg.iterations;
    ec.pooling = cfg.pooling;
    out.reports = evaluate(eval_on, fitted.params, ec);
    for (const auto& r : out.reports) out.report_text += format_report(r, vocab);
    out.seconds = seconds_since(start);
    return out;
}

double recall_of(const run_output& r, eval_task task, std::size_t k)
{
    for (const auto& rep : r.reports) {
        if (rep.task == task) return k == 50 ? rep.r_at_50 : rep.r_at_100;
    }
    return -1.0;
}

train_config overfit_config()
{
    train_config cfg;
    cfg.epochs = 300;
    cfg.learning_rate = 1e-3;
    cfg.iterations = 2;
    cfg.pooling = pooling_mode::weighted;
    cfg.seed = 3;
    return cfg;
}

run_output overfit_run()
{
    synth_config sc;
    sc.num_images = 20;
    sc.num_classes = 6;
    sc.num_predicates = 5;
    sc.seed = 11;
    const auto d = synth_generate(sc);
    return train_and_report(d.samples, d.samples, d.vocab, d.feature_dim, overfit_config());
}

struct cell
{
    std::size_t iters;
    pooling_mode pooling;
};

const std::vector<cell> ablation_cells = {
    {0, pooling_mode::weighted}, {2, pooling_mode::weighted}, {2, pooling_mode::avg}, {2, pooling_mode::max}};

std::vector<run_output> ablation_runs(std::uint64_t seed)
{
    synth_config sc;
    sc.num_images = 200;
    sc.context_ambiguity = 0.7;
    sc.seed = seed;
    const auto d = synth_generate(sc);
    const std::vector<scene_graph_sample> train(d.samples.begin(), d.samples.begin() + 140);
    const std::vector<scene_graph_sample> test(d.samples.begin() + 140, d.samples.end());
    std::vector<run_output> out;
    for (const auto& c : ablation_cells) {
        train_config cfg;
        cfg.epochs = 60;
        cfg.learning_rate = 1e-3;
        cfg.iterations = c.iters;
        cfg.pooling = c.pooling;
        cfg.seed = seed;
        out.push_back(train_and_report(train, test, d.vocab, d.feature_dim, cfg));
    }
    return out;
}

verdict overfit_sanity(const run_output& r)
{
    verdict v;
    const double r50 = recall_of(r, eval_task::predcls, 50);
    v.require(r50 >= 0.95, "training-set PredCls R@50 " + fmt("%.4f", r50));
    v.require(r.seconds < 300.0, "took " + fmt("%.1f", r.seconds) + " s");
    if (v.pass) v.detail = "training-set PredCls R@50 " + fmt("%.4f", r50) + " after 300 epochs, " + fmt("%.1f", r.seconds) + " s";
    return v;
}

verdict context_benefit(const std::vector<std::vector<run_output>>& per_seed)
{
    verdict v;
    std::size_t held = 0;
    double total_secs = 0.0;
    std::string rows;
    for (std::size_t s = 0; s < per_seed.size(); ++s) {
        const auto& runs = per_seed[s];
        const double t0 = recall_of(runs[0], eval_task::predcls, 100);
        const double w2 = recall_of(runs[1], eval_task::predcls, 100);
        const double a2 = recall_of(runs[2], eval_task::predcls, 100);
        const double m2 = recall_of(runs[3], eval_task::predcls, 100);
        for (const auto& r : runs) total_secs += r.seconds;
        const bool ok = w2 - t0 >= 0.10 && w2 >= a2 && w2 >= m2 - 0.02;
        held += ok;
        rows += (rows.empty() ? "" : ", ") + std::string("seed ") + std::to_string(s + 1) + " [T0 " + fmt("%.3f", t0) +
                " w2 " + fmt("%.3f", w2) + " avg2 " + fmt("%.3f", a2) + " max2 " + fmt("%.3f", m2) +
                (ok ? " ok]" : " miss]");
    }
    v.require(held >= 2, "held on " + std::to_string(held) + "/3 seeds");
    v.require(total_secs < 1800.0, "took " + fmt("%.0f", total_secs) + " s");
    v.detail += (v.detail.empty() ? "" : "; ") + rows + ", " + fmt("%.0f", total_secs) + " s";
    return v;
}

verdict task_ordering(const std::vector<const run_output*>& runs)
{
    verdict v;
    for (const auto* r : runs) {
        for (std::size_t k : {50u, 100u}) {
            const double p = recall_of(*r, eval_task::predcls, k);
            const double c = recall_of(*r, eval_task::sgcls, k);
            const double g = recall_of(*r, eval_task::sggen, k);
            if (!(p >= c && c >= g)) {
                v.require(false, "R@" + std::to_string(k) + " " + fmt("%.4f", p) + " / " + fmt("%.4f", c) + " / " +
                                     fmt("%.4f", g));
            }
        }
    }
    if (v.pass) v.detail = "PredCls >= SGCls >= SGGen at K=50,100 on " + std::to_string(runs.size()) + " evaluation runs";
    return v;
}

verdict determinism(const std::vector<std::pair<const run_output*, run_output>>& pairs)
{
    verdict v;
    for (const auto& [first, again] : pairs) {
        v.require(first->checkpoint_bytes == again.checkpoint_bytes, "checkpoint bytes differ");
        v.require(first->report_text == again.report_text, "report differs");
    }
    if (v.pass) v.detail = std::to_string(pairs.size()) + " reruns, checkpoints and reports bit-identical";
    return v;
}

void print(int n, const std::string& name, const verdict& v, bool& all)
{
    std::printf("criterion %d (%s): %s - %s\n", n, name.c_str(), v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    all = all && v.pass;
}

} // namespace

int main()
{
    bool all = true;
    try {
        print(1, "gradient check", gradient_check(), all);
        print(2, "pooling oracle", pooling_oracle(), all);
        print(3, "GRU form", gru_checks(), all);
        print(4, "metric oracles", metric_oracles(), all);

        const auto overfit = overfit_run();
        print(5, "overfit sanity", overfit_sanity(overfit), all);

        std::vector<std::vector<run_output>> ablation;
        for (std::uint64_t seed = 1; seed <= 3; ++seed) ablation.push_back(ablation_runs(seed));
        print(6, "context benefit", context_benefit(ablation), all);

        std::vector<const run_output*> evaluated = {&overfit};
        for (const auto& seed_runs : ablation) {
            for (const auto& r : seed_runs) evaluated.push_back(&r);
        }
        print(7, "task ordering", task_ordering(evaluated), all);

        std::vector<std::pair<const run_output*, run_output>> reruns;
        reruns.emplace_back(&overfit, overfit_run());
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            auto again = ablation_runs(seed);
            for (std::size_t k = 0; k < again.size(); ++k) reruns.emplace_back(&ablation[seed - 1][k], std::move(again[k]));
        }
        print(8, "determinism", determinism(reruns), all);
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%s\n", all ? "ALL PASS" : "SOME CRITERIA FAILED");
    return all ? 0 : 1;
}
