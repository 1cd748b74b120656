#ifndef SGG_EVALUATION_HPP
#define SGG_EVALUATION_HPP

#include "sgg/box_coder.hpp"
#include "sgg/error.hpp"
#include "sgg/graph.hpp"
#include "sgg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace sgg
{

enum class eval_task
{
    predcls,
    sgcls,
    sggen
};

inline std::string_view to_string(eval_task t)
{
    switch (t) {
        case eval_task::predcls: return "predcls";
        case eval_task::sgcls: return "sgcls";
        case eval_task::sggen: return "sggen";
    }
    return "?";
}

inline std::optional<eval_task> parse_eval_task(std::string_view s)
{
    if (s == "predcls") return eval_task::predcls;
    if (s == "sgcls") return eval_task::sgcls;
    if (s == "sggen") return eval_task::sggen;
    return std::nullopt;
}

inline double iou(const box& a, const box& b)
{
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

/// Greedy non-maximum suppression. Visits boxes by descending score (ties by
/// lower index) and drops any box whose IoU with a kept box exceeds
/// `iou_thresh`. Returns kept indices in selection order.
inline std::vector<std::size_t> nms(const std::vector<box>& boxes, const std::vector<double>& scores,
                                    double iou_thresh, std::size_t max_keep)
{
    if (boxes.size() != scores.size()) throw dimension_error("nms: boxes and scores differ in length");
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::size_t> kept;
    for (std::size_t idx : order) {
        if (kept.size() >= max_keep) break;
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return iou(boxes[idx], boxes[k]) > iou_thresh;
        });
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

struct triplet_prediction
{
    std::size_t subj = 0;
    std::size_t pred = 0;
    std::size_t obj = 0;
    double score = 0.0;
    box subj_box;
    box obj_box;
    std::size_t subj_class = 0;
    std::size_t obj_class = 0;
};

/// Index of the largest entry in [first, size), ties to the lower index.
inline std::size_t argmax_from(std::span<const double> v, std::size_t first)
{
    std::size_t best = first;
    for (std::size_t k = first + 1; k < v.size(); ++k) {
        if (v[k] > v[best]) best = k;
    }
    return best;
}

/// Inputs shared by the three task pipelines for one image.
struct triplet_source
{
    const prediction* pred = nullptr;
    std::vector<node_pair> edges;             // aligned with pred->pred_probs
    std::vector<box> boxes;                   // per node
    std::vector<std::size_t> classes;         // per node; used by predcls
    std::vector<bool> keep;                   // per node; empty = keep all
};

/**
 *  Ranked triplets for one image.
 *
 *  An edge whose most likely predicate is "none" yields no triplet; any
 *  other edge yields one, with its best non-none predicate. Subject and
 *  object classes are the given ones for predcls (factor 1) and the best
 *  non-background class otherwise. Score is the product of the three
 *  factors. Sorted by score, then (subj, obj); truncated to k_cap.
 */
inline std::vector<triplet_prediction> extract_triplets(const triplet_source& src, eval_task task,
                                                        std::size_t k_cap)
{
    const prediction& p = *src.pred;
    std::vector<triplet_prediction> out;
    const bool use_gt_classes = task == eval_task::predcls;
    for (std::size_t e = 0; e < src.edges.size(); ++e) {
        const auto [i, j] = src.edges[e];
        if (!src.keep.empty() && !(src.keep[i] && src.keep[j])) continue;
        const auto probs = p.pred_probs[e].values();
        if (probs.size() < 2 || argmax_from(probs, 0) == 0) continue;
        const std::size_t best = argmax_from(probs, 1);

        triplet_prediction t;
        t.subj = i;
        t.obj = j;
        t.pred = best;
        t.subj_box = src.boxes[i];
        t.obj_box = src.boxes[j];
        double score = probs[best];
        if (use_gt_classes) {
            t.subj_class = src.classes[i];
            t.obj_class = src.classes[j];
        } else {
            const auto ps = p.class_probs[i].values();
            const auto po = p.class_probs[j].values();
            t.subj_class = ps.size() > 1 ? argmax_from(ps, 1) : 0;
            t.obj_class = po.size() > 1 ? argmax_from(po, 1) : 0;
            score *= ps[t.subj_class] * po[t.obj_class];
        }
        t.score = score;
        out.push_back(t);
    }
    std::sort(out.begin(), out.end(), [](const triplet_prediction& a, const triplet_prediction& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.subj != b.subj) return a.subj < b.subj;
        return a.obj < b.obj;
    });
    if (out.size() > k_cap) out.resize(k_cap);
    return out;
}

/// One ground-truth (subject, predicate, object) triplet.
struct gt_triplet
{
    std::size_t subj = 0;
    std::size_t pred = 0;
    std::size_t obj = 0;
};

inline std::vector<gt_triplet> gt_triplets(const scene_graph_sample& s)
{
    std::vector<gt_triplet> out;
    for (const auto& [pair, pred] : s.gt_predicates) {
        if (pred != 0) out.push_back({pair.first, pred, pair.second});
    }
    return out;
}

constexpr double match_iou = 0.5;

/// Whether a predicted triplet satisfies a ground-truth triplet under `task`.
inline bool triplet_matches(const triplet_prediction& t, const gt_triplet& g,
                            const scene_graph_sample& s, eval_task task)
{
    if (t.pred != g.pred) return false;
    switch (task) {
        case eval_task::predcls: return t.subj == g.subj && t.obj == g.obj;
        case eval_task::sgcls:
            return t.subj == g.subj && t.obj == g.obj && t.subj_class == s.gt_classes[g.subj] &&
                   t.obj_class == s.gt_classes[g.obj];
        case eval_task::sggen:
            return t.subj_class == s.gt_classes[g.subj] && t.obj_class == s.gt_classes[g.obj] &&
                   iou(t.subj_box, gt_box(s, g.subj)) >= match_iou &&
                   iou(t.obj_box, gt_box(s, g.obj)) >= match_iou;
    }
    return false;
}

struct recall_count
{
    std::size_t matched = 0;
    std::size_t total = 0;

    bool skipped() const { return total == 0; }
    double recall() const { return total == 0 ? 0.0 : static_cast<double>(matched) / total; }
};

/**
 *  Recall of the ground-truth triplets among the first k predictions.
 *
 *  Every prediction matches at most one ground-truth triplet and vice
 *  versa. Predictions are assigned in rank order; when one conflicts with
 *  an earlier assignment, an augmenting path re-routes the earlier match if
 *  that frees a ground-truth triplet, so the count is the largest one-to-one
 *  matching. `total == 0` marks an image to skip.
 */
inline recall_count recall_at_k(const std::vector<triplet_prediction>& ranked,
                                const scene_graph_sample& s, std::size_t k, eval_task task)
{
    const auto gts = gt_triplets(s);
    recall_count rc;
    rc.total = gts.size();
    if (gts.empty()) return rc;
    const std::size_t top = std::min(k, ranked.size());

    std::vector<std::vector<std::size_t>> adj(top);
    for (std::size_t r = 0; r < top; ++r) {
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (triplet_matches(ranked[r], gts[g], s, task)) adj[r].push_back(g);
        }
    }

    std::vector<std::ptrdiff_t> owner(gts.size(), -1);
    std::vector<char> seen;
    std::function<bool(std::size_t)> augment = [&](std::size_t r) {
        for (std::size_t g : adj[r]) {
            if (seen[g]) continue;
            seen[g] = 1;
            if (owner[g] < 0 || augment(static_cast<std::size_t>(owner[g]))) {
                owner[g] = static_cast<std::ptrdiff_t>(r);
                return true;
            }
        }
        return false;
    };
    for (std::size_t r = 0; r < top; ++r) {
        if (adj[r].empty()) continue;
        seen.assign(gts.size(), 0);
        if (augment(r)) ++rc.matched;
    }
    return rc;
}

struct hit_count
{
    std::size_t hits = 0;
    std::size_t total = 0;
};

/// Rank (0-based) of `label` among the non-none predicates of one edge,
/// ordered by probability with ties to the lower index.
inline std::size_t predicate_rank(std::span<const double> probs, std::size_t label)
{
    std::size_t rank = 0;
    for (std::size_t q = 1; q < probs.size(); ++q) {
        if (q == label) continue;
        if (probs[q] > probs[label] || (probs[q] == probs[label] && q < label)) ++rank;
    }
    return rank;
}

/// Top-5 predicate hits for every labeled (non-none) edge present in `edges`.
inline std::map<std::size_t, hit_count> per_predicate_recall5(const prediction& pred,
                                                              const std::vector<node_pair>& edges,
                                                              const scene_graph_sample& s)
{
    std::map<std::size_t, hit_count> out;
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const std::size_t label = s.predicate_of(edges[e]);
        if (label == 0) continue;
        auto& h = out[label];
        ++h.total;
        if (predicate_rank(pred.pred_probs[e].values(), label) < 5) ++h.hits;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation

struct eval_report
{
    eval_task task = eval_task::predcls;
    double r_at_50 = 0.0;
    double r_at_100 = 0.0;
    std::map<std::size_t, hit_count> per_predicate; // predcls only
    std::size_t images_evaluated = 0;
    std::size_t images_skipped = 0;
};

struct eval_config
{
    std::size_t iterations = 2;
    pooling_mode pooling = pooling_mode::weighted;
    std::vector<eval_task> tasks{eval_task::predcls, eval_task::sgcls, eval_task::sggen};
    double nms_iou = 0.3;
    std::size_t nms_max_keep = 50;
};

/// Per-image recalls at 50 and 100 for every requested task.
struct image_eval
{
    std::string image_id;
    std::map<eval_task, std::pair<recall_count, recall_count>> recalls;
    std::map<std::size_t, hit_count> per_predicate;
};

/// Boxes, classes and NMS survivors for one task pipeline.
inline triplet_source task_source(const scene_graph_sample& s, const prediction& pred,
                                  const std::vector<node_pair>& edges, eval_task task, const eval_config& cfg)
{
    triplet_source src;
    src.pred = &pred;
    src.edges = edges;
    src.classes = s.gt_classes;
    src.boxes.resize(s.num_nodes());
    if (task == eval_task::sggen) {
        std::vector<double> scores(s.num_nodes());
        for (std::size_t i = 0; i < s.num_nodes(); ++i) {
            const auto probs = pred.class_probs[i].values();
            const std::size_t c = probs.size() > 1 ? argmax_from(probs, 1) : 0;
            scores[i] = probs[c];
            src.boxes[i] = decode_offsets(s.proposals[i], pred.offsets(i, c), image_bounds{s.width, s.height});
        }
        src.keep.assign(s.num_nodes(), false);
        for (std::size_t k : nms(src.boxes, scores, cfg.nms_iou, cfg.nms_max_keep)) src.keep[k] = true;
    } else {
        for (std::size_t i = 0; i < s.num_nodes(); ++i) src.boxes[i] = gt_box(s, i);
    }
    return src;
}

/// Full-graph forward pass over every ordered pair, without gradient tape.
inline std::pair<prediction, std::vector<node_pair>> predict_all_pairs(const scene_graph_sample& s,
                                                                       const model_params& params,
                                                                       std::size_t iterations, pooling_mode mode)
{
    no_grad_guard guard;
    auto channels = build_channel_index(all_pairs(s.num_nodes()), s.num_nodes());
    prediction pred = forward(s, channels, params, iterations, mode);
    return {std::move(pred), std::move(channels.edges)};
}

/// Runs the model on every pair of one image and scores the requested tasks.
inline image_eval evaluate_image(const scene_graph_sample& s, const model_params& params,
                                 const eval_config& cfg)
{
    const auto [pred, edges] = predict_all_pairs(s, params, cfg.iterations, cfg.pooling);
    image_eval out;
    out.image_id = s.image_id;
    for (eval_task task : cfg.tasks) {
        const auto ranked = extract_triplets(task_source(s, pred, edges, task, cfg), task, 100);
        out.recalls[task] = {recall_at_k(ranked, s, 50, task), recall_at_k(ranked, s, 100, task)};
        if (task == eval_task::predcls) out.per_predicate = per_predicate_recall5(pred, edges, s);
    }
    return out;
}

/// Image-wise mean of per-image results, reduced in image_id order.
inline std::vector<eval_report> reduce_reports(std::vector<image_eval> images, const eval_config& cfg)
{
    std::stable_sort(images.begin(), images.end(),
                     [](const image_eval& a, const image_eval& b) { return a.image_id < b.image_id; });
    std::vector<eval_report> reports;
    for (eval_task task : cfg.tasks) {
        eval_report r;
        r.task = task;
        double sum50 = 0.0;
        double sum100 = 0.0;
        for (const auto& im : images) {
            const auto& [at50, at100] = im.recalls.at(task);
            if (at50.skipped()) {
                ++r.images_skipped;
                continue;
            }
            ++r.images_evaluated;
            sum50 += at50.recall();
            sum100 += at100.recall();
            if (task == eval_task::predcls) {
                for (const auto& [p, h] : im.per_predicate) {
                    r.per_predicate[p].hits += h.hits;
                    r.per_predicate[p].total += h.total;
                }
            }
        }
        if (r.images_evaluated > 0) {
            r.r_at_50 = sum50 / static_cast<double>(r.images_evaluated);
            r.r_at_100 = sum100 / static_cast<double>(r.images_evaluated);
        }
        reports.push_back(std::move(r));
    }
    return reports;
}

inline std::vector<eval_report> evaluate(const std::vector<scene_graph_sample>& dataset,
                                         const model_params& params, const eval_config& cfg)
{
    if (dataset.empty()) throw data_error("evaluate: no images");
    std::vector<image_eval> images;
    images.reserve(dataset.size());
    for (const auto& s : dataset) {
        try {
            images.push_back(evaluate_image(s, params, cfg));
        } catch (const data_error& e) {
            throw data_error("image " + s.image_id + ": " + e.what());
        }
    }
    return reduce_reports(std::move(images), cfg);
}

/// Fixed-order key/value text. Per-predicate rows are sorted by number of
/// labeled instances (descending, ties by index).
inline std::string format_report(const eval_report& r, const vocab_meta& vocab)
{
    auto fixed = [](double x) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", x);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "[" << to_string(r.task) << "]\n";
    os << "task = " << to_string(r.task) << "\n";
    os << "r_at_50 = " << fixed(r.r_at_50) << "\n";
    os << "r_at_100 = " << fixed(r.r_at_100) << "\n";
    os << "images_evaluated = " << r.images_evaluated << "\n";
    os << "images_skipped = " << r.images_skipped << "\n";
    if (r.task == eval_task::predcls) {
        std::vector<std::pair<std::size_t, hit_count>> rows(r.per_predicate.begin(), r.per_predicate.end());
        std::stable_sort(rows.begin(), rows.end(),
                         [](const auto& a, const auto& b) { return a.second.total > b.second.total; });
        for (const auto& [p, h] : rows) {
            const std::string name =
                p < vocab.predicate_names.size() ? vocab.predicate_names[p] : std::to_string(p);
            const double rec = h.total ? static_cast<double>(h.hits) / h.total : 0.0;
            os << "recall5." << name << " = " << fixed(rec) << " (" << h.hits << "/" << h.total << ")\n";
        }
    }
    return os.str();
}

} // namespace sgg
#endif // header guard
