// sgg: generate data, train, evaluate, predict, gradient-check, ablate and
// export scene graphs.

#include "sgg/sgg.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace
{

enum exit_code : int
{
    exit_ok = 0,
    exit_usage = 2,
    exit_io = 3,
    exit_numeric = 4,
    exit_verify = 5,
};

std::string fixed6(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

std::string real17(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw sgg::io_error("cannot open " + path + " for writing");
    f << text;
    if (!f) throw sgg::io_error("write failed: " + path);
}

sgg::pooling_mode pooling_from(const std::string& s)
{
    const auto m = sgg::parse_pooling_mode(s);
    if (!m) throw sgg::config_error("unknown pooling mode '" + s + "' (weighted, avg, max)");
    return *m;
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<sgg::eval_task> tasks_from(const std::string& s)
{
    std::vector<sgg::eval_task> tasks;
    for (const auto& name : split_list(s)) {
        const auto t = sgg::parse_eval_task(name);
        if (!t) throw sgg::config_error("unknown task '" + name + "' (predcls, sgcls, sggen)");
        tasks.push_back(*t);
    }
    if (tasks.empty()) throw sgg::config_error("no task selected");
    return tasks;
}

std::vector<std::size_t> sizes_from(const std::string& s)
{
    std::vector<std::size_t> out;
    for (const auto& item : split_list(s)) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw sgg::config_error("not a non-negative integer: '" + item + "'");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Option groups

struct train_options
{
    sgg::train_config cfg;
    std::size_t hidden = 32;
    std::string pooling = "weighted";
    std::string optimizer = "adam";

    void add(CLI::App* app)
    {
        app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
        app->add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
        app->add_option("--iters", cfg.iterations, "Message-passing iterations T")->capture_default_str();
        app->add_option("--pooling", pooling, "weighted, avg or max")->capture_default_str();
        app->add_option("--hidden", hidden, "Hidden size H")->capture_default_str();
        app->add_option("--max-boxes", cfg.max_boxes, "Boxes per minibatch")->capture_default_str();
        app->add_option("--max-edges", cfg.max_edges, "Edges per minibatch")->capture_default_str();
        app->add_option("--bbox-weight", cfg.bbox_loss_weight, "Box regression loss weight")
            ->capture_default_str();
        app->add_option("--optimizer", optimizer, "adam or sgd")->capture_default_str();
        app->add_option("--beta1", cfg.beta1, "Adam beta1")->capture_default_str();
        app->add_option("--beta2", cfg.beta2, "Adam beta2")->capture_default_str();
        app->add_option("--adam-eps", cfg.adam_eps, "Adam epsilon")->capture_default_str();
        app->add_option("--eval-every", cfg.eval_every, "Training-set PredCls R@50 every N epochs (0 = off)")
            ->capture_default_str();
        app->add_option("--seed", cfg.seed, "Seed")->capture_default_str();
    }

    sgg::train_config resolve() const
    {
        sgg::train_config c = cfg;
        c.pooling = pooling_from(pooling);
        const auto k = sgg::parse_optimizer_kind(optimizer);
        if (!k) throw sgg::config_error("unknown optimizer '" + optimizer + "' (adam, sgd)");
        c.optimizer = *k;
        sgg::validate_config(c);
        return c;
    }
};

sgg::model_dims dims_for(const sgg::dataset_file& d, std::size_t hidden)
{
    return {d.feature_dim, hidden, d.vocab.class_names.size(), d.vocab.predicate_names.size()};
}

sgg::dataset_file load_nonempty(const std::string& path)
{
    auto d = sgg::load_dataset(path);
    if (d.samples.empty()) throw sgg::data_error(path + ": dataset has no samples");
    return d;
}

void require_compatible(const sgg::checkpoint& c, const sgg::dataset_file& d)
{
    if (c.vocab.class_names != d.vocab.class_names || c.vocab.predicate_names != d.vocab.predicate_names) {
        throw sgg::config_error("vocabulary mismatch between checkpoint and dataset");
    }
    if (c.params.dims.feature_dim != d.feature_dim) {
        throw sgg::config_error("feature dimension mismatch: checkpoint " +
                                std::to_string(c.params.dims.feature_dim) + ", dataset " +
                                std::to_string(d.feature_dim));
    }
}

std::string epoch_line(const sgg::epoch_record& r)
{
    std::string line = "{\"epoch\":" + std::to_string(r.epoch);
    line += ",\"loss\":" + real17(r.loss.total);
    line += ",\"cls_loss\":" + real17(r.loss.cls_loss);
    line += ",\"pred_loss\":" + real17(r.loss.pred_loss);
    line += ",\"bbox_loss\":" + real17(r.loss.bbox_loss);
    if (r.predcls_r50) line += ",\"predcls_r_at_50\":" + real17(*r.predcls_r50);
    return line + "}\n";
}

// ---------------------------------------------------------------------------
// Commands

struct synth_cmd
{
    sgg::synth_config cfg;
    std::string out;

    void add(CLI::App* app)
    {
        app->add_option("--out", out, "Output dataset path")->required();
        app->add_option("--images", cfg.num_images, "Number of images")->capture_default_str();
        app->add_option("--min-objects", cfg.min_objects, "Minimum objects per image")->capture_default_str();
        app->add_option("--max-objects", cfg.max_objects, "Maximum objects per image")->capture_default_str();
        app->add_option("--classes", cfg.num_classes, "Object classes, background included")
            ->capture_default_str();
        app->add_option("--predicates", cfg.num_predicates, "Predicates, none included")->capture_default_str();
        app->add_option("--features", cfg.feature_dim, "Feature dimension D")->capture_default_str();
        app->add_option("--noise", cfg.feature_noise_sigma, "Feature noise sigma")->capture_default_str();
        app->add_option("--ambiguity", cfg.context_ambiguity, "Fraction of context-dependent rules")
            ->capture_default_str();
        app->add_option("--canvas-width", cfg.canvas_width, "Image width")->capture_default_str();
        app->add_option("--canvas-height", cfg.canvas_height, "Image height")->capture_default_str();
        app->add_option("--seed", cfg.seed, "Seed")->capture_default_str();
    }

    int run() const
    {
        const auto d = sgg::synth_generate(cfg);
        sgg::save_dataset(d, out);
        std::size_t nodes = 0;
        std::size_t edges = 0;
        std::size_t relations = 0;
        for (const auto& s : d.samples) {
            nodes += s.num_nodes();
            edges += s.edge_features.size();
            for (const auto& [pair, p] : s.gt_predicates) relations += p != 0;
        }
        std::cout << "samples = " << d.samples.size() << "\n"
                  << "objects = " << nodes << "\n"
                  << "edges = " << edges << "\n"
                  << "relations = " << relations << "\n"
                  << "config_hash = " << d.origin.config_hash << "\n";
        return exit_ok;
    }
};

struct train_cmd
{
    train_options opts;
    std::string data;
    std::string out;
    std::string log;

    void add(CLI::App* app)
    {
        app->add_option("--data", data, "Training dataset")->required();
        app->add_option("--out", out, "Checkpoint path")->required();
        app->add_option("--log", log, "Training log path (JSON lines; default stdout)");
        opts.add(app);
    }

    int run() const
    {
        const auto cfg = opts.resolve();
        const auto d = load_nonempty(data);
        std::ofstream log_file;
        if (!log.empty()) {
            log_file.open(log, std::ios::binary | std::ios::trunc);
            if (!log_file) throw sgg::io_error("cannot open " + log + " for writing");
        }
        std::ostream& log_out = log.empty() ? std::cout : log_file;
        const auto result = sgg::fit(d.samples, dims_for(d, opts.hidden), cfg,
                                     [&](const sgg::epoch_record& r) { log_out << epoch_line(r) << std::flush; });
        if (!log.empty() && !log_file) throw sgg::io_error("write failed: " + log);

        sgg::checkpoint c;
        c.seed = cfg.seed;
        c.iterations = cfg.iterations;
        c.pooling = cfg.pooling;
        c.vocab = d.vocab;
        c.params = result.params;
        sgg::save_checkpoint(c, out);
        return exit_ok;
    }
};

struct eval_cmd
{
    std::string data;
    std::string ckpt;
    std::string task = "predcls,sgcls,sggen";
    std::string out;
    sgg::eval_config cfg;

    void add(CLI::App* app)
    {
        app->add_option("--data", data, "Evaluation dataset")->required();
        app->add_option("--checkpoint", ckpt, "Checkpoint path")->required();
        app->add_option("--task", task, "Comma-separated tasks")->capture_default_str();
        app->add_option("--out", out, "Also write the report here");
        app->add_option("--nms-iou", cfg.nms_iou, "SGGen NMS threshold")->capture_default_str();
        app->add_option("--nms-max-keep", cfg.nms_max_keep, "SGGen boxes kept after NMS")->capture_default_str();
    }

    int run()
    {
        cfg.tasks = tasks_from(task);
        const auto c = sgg::load_checkpoint(ckpt);
        const auto d = load_nonempty(data);
        require_compatible(c, d);
        cfg.iterations = c.iterations;
        cfg.pooling = c.pooling;
        std::string text;
        for (const auto& r : sgg::evaluate(d.samples, c.params, cfg)) text += sgg::format_report(r, d.vocab);
        std::cout << text;
        if (!out.empty()) write_text(out, text);
        return exit_ok;
    }
};

struct predict_cmd
{
    std::string data;
    std::string ckpt;
    std::string task = "sggen";
    std::string out;
    std::size_t top = 100;

    void add(CLI::App* app)
    {
        app->add_option("--data", data, "Dataset to run on")->required();
        app->add_option("--checkpoint", ckpt, "Checkpoint path")->required();
        app->add_option("--task", task, "predcls, sgcls or sggen")->capture_default_str();
        app->add_option("--top", top, "Triplets kept per image")->capture_default_str();
        app->add_option("--out", out, "Output path (JSON lines; default stdout)");
    }

    int run() const
    {
        const auto tasks = tasks_from(task);
        if (tasks.size() != 1) throw sgg::config_error("predict takes exactly one task");
        const auto c = sgg::load_checkpoint(ckpt);
        const auto d = load_nonempty(data);
        require_compatible(c, d);
        sgg::eval_config cfg;
        cfg.iterations = c.iterations;
        cfg.pooling = c.pooling;

        auto box_json = [](const sgg::box& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); };
        std::string text;
        for (const auto& s : d.samples) {
            const auto [pred, edges] = sgg::predict_all_pairs(s, c.params, c.iterations, c.pooling);
            const auto ranked = sgg::extract_triplets(sgg::task_source(s, pred, edges, tasks[0], cfg), tasks[0], top);
            nlohmann::ordered_json j;
            j["image_id"] = s.image_id;
            j["task"] = std::string(sgg::to_string(tasks[0]));
            auto& list = j["triplets"] = nlohmann::json::array();
            for (const auto& t : ranked) {
                nlohmann::ordered_json row;
                row["subject"] = t.subj;
                row["subject_class"] = d.vocab.class_names[t.subj_class];
                row["predicate"] = d.vocab.predicate_names[t.pred];
                row["object"] = t.obj;
                row["object_class"] = d.vocab.class_names[t.obj_class];
                row["score"] = t.score;
                row["subject_box"] = box_json(t.subj_box);
                row["object_box"] = box_json(t.obj_box);
                list.push_back(std::move(row));
            }
            text += j.dump() + "\n";
        }
        if (out.empty()) {
            std::cout << text;
        } else {
            write_text(out, text);
        }
        return exit_ok;
    }
};

struct gradcheck_cmd
{
    sgg::model_dims dims{16, 32, 6, 5};
    std::size_t iters = 2;
    std::string pooling = "weighted";
    std::uint64_t seed = 1;
    double eps = 1e-5;
    double threshold = 1e-4;

    void add(CLI::App* app)
    {
        app->add_option("--iters", iters, "Message-passing iterations T")->capture_default_str();
        app->add_option("--pooling", pooling, "weighted, avg or max")->capture_default_str();
        app->add_option("--hidden", dims.hidden, "Hidden size H")->capture_default_str();
        app->add_option("--features", dims.feature_dim, "Feature dimension D")->capture_default_str();
        app->add_option("--classes", dims.num_classes, "Object classes, background included")
            ->capture_default_str();
        app->add_option("--predicates", dims.num_predicates, "Predicates, none included")->capture_default_str();
        app->add_option("--eps", eps, "Finite-difference step")->capture_default_str();
        app->add_option("--threshold", threshold, "Maximum relative error")->capture_default_str();
        app->add_option("--seed", seed, "Seed")->capture_default_str();
    }

    int run() const
    {
        if (dims.hidden == 0 || dims.feature_dim == 0) throw sgg::config_error("--hidden and --features must be >= 1");
        if (dims.num_classes < 2 || dims.num_predicates < 2) {
            throw sgg::config_error("--classes and --predicates must be >= 2");
        }
        if (!(eps > 0.0)) throw sgg::config_error("--eps must be > 0");
        const auto r = sgg::run_gradcheck(dims, iters, pooling_from(pooling), seed, eps);
        const bool ok = r.max_rel_error < threshold;
        std::cout << "iterations = " << iters << "\n"
                  << "pooling = " << pooling << "\n"
                  << "max_rel_error = " << r.max_rel_error << "\n"
                  << "worst_param = " << r.worst_param << "[" << r.worst_index << "]\n"
                  << "analytic = " << r.analytic << "\n"
                  << "numeric = " << r.numeric << "\n"
                  << "status = " << (ok ? "pass" : "fail") << "\n";
        return ok ? exit_ok : exit_verify;
    }
};

struct ablate_cmd
{
    train_options opts;
    std::string data;
    std::string eval_data;
    std::string iters = "0,1,2,4";
    std::string modes = "weighted,avg,max";
    std::string out;

    void add(CLI::App* app)
    {
        app->add_option("--data", data, "Training dataset")->required();
        app->add_option("--eval-data", eval_data, "Evaluation dataset (default: training set)");
        app->add_option("--grid-iters", iters, "Iteration counts")->capture_default_str();
        app->add_option("--grid-pooling", modes, "Pooling modes")->capture_default_str();
        app->add_option("--out", out, "Also write the table here");
        opts.add(app);
    }

    int run() const
    {
        const auto base = opts.resolve();
        const auto grid_t = sizes_from(iters);
        std::vector<sgg::pooling_mode> grid_m;
        for (const auto& m : split_list(modes)) grid_m.push_back(pooling_from(m));
        if (grid_t.empty() || grid_m.empty()) throw sgg::config_error("empty ablation grid");

        const auto train = load_nonempty(data);
        const auto test = eval_data.empty() ? train : load_nonempty(eval_data);
        if (test.vocab.class_names != train.vocab.class_names ||
            test.vocab.predicate_names != train.vocab.predicate_names || test.feature_dim != train.feature_dim) {
            throw sgg::config_error("training and evaluation datasets disagree on vocabulary or features");
        }

        std::string text = "iters pooling predcls_r_at_50 predcls_r_at_100\n";
        for (std::size_t t : grid_t) {
            for (sgg::pooling_mode m : grid_m) {
                sgg::train_config cfg = base;
                cfg.iterations = t;
                cfg.pooling = m;
                const auto fitted = sgg::fit(train.samples, dims_for(train, opts.hidden), cfg);
                sgg::eval_config ec;
                ec.iterations = t;
                ec.pooling = m;
                ec.tasks = {sgg::eval_task::predcls};
                const auto r = sgg::evaluate(test.samples, fitted.params, ec).front();
                const std::string row =
                    std::to_string(t) + " " + std::string(sgg::to_string(m)) + " " + fixed6(r.r_at_50) + " " +
                    fixed6(r.r_at_100) + "\n";
                std::cout << row << std::flush;
                text += row;
            }
        }
        if (!out.empty()) write_text(out, text);
        return exit_ok;
    }
};

struct export_cmd
{
    std::string data;
    std::string image;
    std::string ckpt;
    std::string out;

    void add(CLI::App* app)
    {
        app->add_option("--data", data, "Dataset")->required();
        app->add_option("--image", image, "Image id or zero-based index")->required();
        app->add_option("--checkpoint", ckpt, "Overlay predictions from this checkpoint");
        app->add_option("--out", out, "Output path (default stdout)");
    }

    int run() const
    {
        const auto d = sgg::load_dataset(data);
        const sgg::scene_graph_sample* s = nullptr;
        for (const auto& x : d.samples) {
            if (x.image_id == image) s = &x;
        }
        if (!s && !image.empty() && image.find_first_not_of("0123456789") == std::string::npos) {
            const auto idx = std::stoull(image);
            if (idx < d.samples.size()) s = &d.samples[idx];
        }
        if (!s) throw sgg::config_error("no image '" + image + "' in " + data);

        std::string text;
        if (ckpt.empty()) {
            text = sgg::export_dot(*s, d.vocab);
        } else {
            const auto c = sgg::load_checkpoint(ckpt);
            require_compatible(c, d);
            const auto [pred, edges] = sgg::predict_all_pairs(*s, c.params, c.iterations, c.pooling);
            text = sgg::export_dot(*s, d.vocab, &pred, &edges);
        }
        if (out.empty()) {
            std::cout << text;
        } else {
            write_text(out, text);
        }
        return exit_ok;
    }
};

/// Arguments with the keys of `--config FILE` spliced in after the
/// subcommand name. Keys already given as flags on the command line are
/// skipped. Keys may sit at top level or in a section named after the
/// subcommand.
std::vector<std::string> with_config_file(std::vector<std::string> args)
{
    if (args.empty() || args[0].starts_with("-")) return args;
    std::string path;
    for (std::size_t k = 1; k < args.size(); ++k) {
        if (args[k] == "--config" && k + 1 < args.size()) path = args[k + 1];
        if (args[k].starts_with("--config=")) path = args[k].substr(9);
    }
    if (path.empty()) return args;

    auto given = [&](const std::string& key) {
        const std::string flag = "--" + key;
        for (std::size_t k = 1; k < args.size(); ++k) {
            if (args[k] == flag || args[k].starts_with(flag + "=")) return true;
        }
        return false;
    };
    std::vector<std::string> injected;
    for (const auto& item : CLI::ConfigINI().from_file(path)) {
        if (item.name == "++" || item.name == "--") continue;
        const bool ours = item.parents.empty() || (item.parents.size() == 1 && item.parents[0] == args[0]);
        if (!ours || given(item.name)) continue;
        injected.push_back("--" + item.name);
        for (const auto& v : item.inputs) injected.push_back(v);
    }
    args.insert(args.begin() + 1, injected.begin(), injected.end());
    return args;
}

int classify(const sgg::error& e)
{
    if (dynamic_cast<const sgg::numeric_error*>(&e)) return exit_numeric;
    if (dynamic_cast<const sgg::config_error*>(&e) || dynamic_cast<const sgg::dimension_error*>(&e)) {
        return exit_usage;
    }
    return exit_io;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Scene graph prediction with GRU message passing"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("sgg 1.0.0"));

    synth_cmd synth;
    train_cmd train;
    eval_cmd eval;
    predict_cmd predict;
    gradcheck_cmd gradcheck;
    ablate_cmd ablate;
    export_cmd dot;

    struct entry
    {
        CLI::App* app;
        std::function<int()> run;
    };
    std::vector<entry> commands;
    auto add = [&](const char* name, const char* help, auto& cmd) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", "Read options from a key = value file");
        cmd.add(sub);
        commands.push_back({sub, [&cmd] { return cmd.run(); }});
    };
    add("synth", "Generate a synthetic dataset", synth);
    add("train", "Train a model", train);
    add("eval", "Evaluate a checkpoint", eval);
    add("predict", "Write ranked triplets per image", predict);
    add("gradcheck", "Compare analytic and finite-difference gradients", gradcheck);
    add("ablate", "Train and evaluate an iterations x pooling grid", ablate);
    add("export-dot", "Write one scene graph as DOT", dot);

    try {
        auto args = with_config_file(std::vector<std::string>(argv + 1, argv + argc));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    for (const auto& c : commands) {
        if (!c.app->parsed()) continue;
        std::cerr << "# " << c.app->get_name() << " configuration (flag > config file > default)\n"
                  << c.app->config_to_str(true, false);
        try {
            return c.run();
        } catch (const sgg::error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return classify(e);
        } catch (const std::ios_base::failure& e) {
            std::cerr << "error: " << e.what() << "\n";
            return exit_io;
        }
    }
    return exit_usage;
}
