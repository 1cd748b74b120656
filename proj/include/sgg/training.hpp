#ifndef SGG_TRAINING_HPP
#define SGG_TRAINING_HPP

#include "sgg/box_coder.hpp"
#include "sgg/error.hpp"
#include "sgg/evaluation.hpp"
#include "sgg/graph.hpp"
#include "sgg/model.hpp"
#include "sgg/rng.hpp"
#include "sgg/tensor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace sgg
{

// ---------------------------------------------------------------------------
// Losses

/// -log(probs[label]). When `probs` is a softmax output the loss is taken
/// from its logits with log-sum-exp, and the gradient flows to the logits.
inline tensor cross_entropy(const tensor& probs, std::size_t label)
{
    if (label >= probs.size()) {
        throw dimension_error("cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                              std::to_string(probs.size()) + ")");
    }
    if (const auto& logits_node = probs.impl()->logits) {
        const tensor logits = tensor::wrap(logits_node);
        const auto z = logits.values();
        const double mx = *std::max_element(z.begin(), z.end());
        double acc = 0.0;
        for (double v : z) acc += std::exp(v - mx);
        const double loss = mx + std::log(acc) - z[label];
        std::vector<double> soft(probs.values().begin(), probs.values().end());
        return detail::make_result({}, {loss}, {logits}, [soft = std::move(soft), label](detail::node& self) {
            const double g = self.grad[0];
            auto& gz = self.parents[0]->ensure_grad();
            for (std::size_t k = 0; k < gz.size(); ++k) gz[k] += g * soft[k];
            gz[label] -= g;
        }, "cross_entropy");
    }
    const double p = probs[label];
    if (!(p > 0.0)) throw numeric_error("cross_entropy: probability of label is zero");
    return detail::make_result({}, {-std::log(p)}, {probs}, [label, p](detail::node& self) {
        self.parents[0]->ensure_grad()[label] -= self.grad[0] / p;
    }, "cross_entropy");
}

/// sum |pred - target|; the subgradient at 0 is 0.
inline tensor l1_loss(const tensor& pred, const tensor& target)
{
    detail::require_same_shape(pred, target, "l1_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
    return detail::make_result({}, {acc}, {pred, target}, [](detail::node& self) {
        const double g = self.grad[0];
        const auto& a = self.parents[0]->values;
        const auto& b = self.parents[1]->values;
        for (std::size_t p = 0; p < 2; ++p) {
            if (!detail::wants_grad(self, p)) continue;
            auto& gp = self.parents[p]->ensure_grad();
            const double dir = p == 0 ? 1.0 : -1.0;
            for (std::size_t i = 0; i < gp.size(); ++i) {
                const double d = a[i] - b[i];
                const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                gp[i] += dir * g * sign;
            }
        }
    }, "l1_loss");
}

// ---------------------------------------------------------------------------
// Configuration

enum class optimizer_kind
{
    sgd,
    adam
};

inline std::string_view to_string(optimizer_kind k)
{
    return k == optimizer_kind::sgd ? "sgd" : "adam";
}

inline std::optional<optimizer_kind> parse_optimizer_kind(std::string_view s)
{
    if (s == "sgd") return optimizer_kind::sgd;
    if (s == "adam") return optimizer_kind::adam;
    return std::nullopt;
}

struct train_config
{
    double learning_rate = 1e-3;
    std::size_t epochs = 100;
    std::size_t iterations = 2;
    pooling_mode pooling = pooling_mode::weighted;
    std::size_t max_boxes = 128;
    std::size_t max_edges = 128;
    double bbox_loss_weight = 1.0;
    std::uint64_t seed = 1;
    optimizer_kind optimizer = optimizer_kind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Evaluate PredCls on the training set every this many epochs (0 = never).
    std::size_t eval_every = 0;
};

inline void validate_config(const train_config& c)
{
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
        throw config_error("learning_rate must be positive");
    }
    if (!(c.bbox_loss_weight >= 0.0)) throw config_error("bbox_loss_weight must be non-negative");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
        throw config_error("adam betas must lie in [0, 1)");
    }
    if (!(c.adam_eps > 0.0)) throw config_error("adam_eps must be positive");
}

struct loss_breakdown
{
    double cls_loss = 0.0;
    double pred_loss = 0.0;
    double bbox_loss = 0.0;
    double total = 0.0;
};

// ---------------------------------------------------------------------------
// Sampling

/// Boxes (sorted original indices) and edges (original indices) of one step.
struct minibatch
{
    std::vector<std::size_t> boxes;
    std::vector<node_pair> edges;
};

/**
 *  Picks the boxes and edges one training step runs over.
 *
 *  All boxes are used when n <= max_boxes, otherwise a seeded subset. Among
 *  the chosen boxes, labeled pairs come first and unlabeled pairs (which
 *  count as "none") fill the remaining edge quota; see build_edge_set.
 */
inline minibatch sample_minibatch(const scene_graph_sample& s, const train_config& cfg, rng& gen)
{
    minibatch mb;
    const std::size_t n = s.num_nodes();
    mb.boxes.resize(n);
    std::iota(mb.boxes.begin(), mb.boxes.end(), std::size_t{0});
    if (n > cfg.max_boxes) {
        gen.shuffle(mb.boxes);
        mb.boxes.resize(cfg.max_boxes);
        std::sort(mb.boxes.begin(), mb.boxes.end());
    }
    std::vector<std::ptrdiff_t> local(n, -1);
    for (std::size_t k = 0; k < mb.boxes.size(); ++k) local[mb.boxes[k]] = static_cast<std::ptrdiff_t>(k);

    std::set<node_pair> labeled;
    for (const auto& [pair, pred] : s.gt_predicates) {
        if (local[pair.first] >= 0 && local[pair.second] >= 0) {
            labeled.emplace(static_cast<std::size_t>(local[pair.first]),
                            static_cast<std::size_t>(local[pair.second]));
        }
    }
    for (const auto& [i, j] : build_edge_set(mb.boxes.size(), labeled, edge_mode::train, cfg.max_edges, gen)) {
        mb.edges.emplace_back(mb.boxes[i], mb.boxes[j]);
    }
    return mb;
}

/// The minibatch as a standalone sample (nodes renumbered 0..k-1) with the
/// channels the forward pass runs over.
inline std::pair<scene_graph_sample, channel_index> minibatch_graph(const scene_graph_sample& s,
                                                                    const minibatch& mb)
{
    scene_graph_sample sub;
    sub.image_id = s.image_id;
    sub.width = s.width;
    sub.height = s.height;
    std::vector<std::size_t> local(s.num_nodes(), 0);
    for (std::size_t k = 0; k < mb.boxes.size(); ++k) {
        const std::size_t i = mb.boxes[k];
        local[i] = k;
        sub.proposals.push_back(s.proposals[i]);
        sub.node_features.push_back(s.node_features[i]);
        sub.gt_classes.push_back(s.gt_classes[i]);
        sub.gt_offsets.push_back(s.gt_offsets[i]);
    }
    std::vector<node_pair> edges;
    edges.reserve(mb.edges.size());
    for (const auto& e : mb.edges) {
        const node_pair le{local[e.first], local[e.second]};
        edges.push_back(le);
        const auto it = s.edge_features.find(e);
        if (it == s.edge_features.end()) {
            throw data_error("sample " + s.image_id + ": missing edge feature for pair " + pair_str(e));
        }
        sub.edge_features.emplace(le, it->second);
        if (const auto p = s.gt_predicates.find(e); p != s.gt_predicates.end()) {
            sub.gt_predicates.emplace(le, p->second);
        }
    }
    auto channels = build_channel_index(edges, sub.num_nodes());
    return {std::move(sub), std::move(channels)};
}

/// Loss tensors of one step (for backward) plus their values.
struct step_loss
{
    tensor total;
    loss_breakdown values;
};

/**
 *  Mean cross-entropy over boxes and over edges, plus mean l1 over the
 *  offset row of each non-background box's ground-truth class.
 *
 *  `pred` node k and edge e correspond to mb.boxes[k] and mb.edges[e].
 */
inline step_loss compute_loss(const prediction& pred, const scene_graph_sample& s, const minibatch& mb,
                              double bbox_loss_weight)
{
    if (pred.class_probs.size() != mb.boxes.size() || pred.pred_probs.size() != mb.edges.size()) {
        throw dimension_error("compute_loss: prediction does not match the minibatch");
    }
    auto mean = [](const std::vector<tensor>& terms) {
        if (terms.empty()) return tensor::scalar(0.0);
        return scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
    };

    std::vector<tensor> cls_terms;
    std::vector<tensor> bbox_terms;
    for (std::size_t k = 0; k < mb.boxes.size(); ++k) {
        const std::size_t i = mb.boxes[k];
        const std::size_t c = s.gt_classes[i];
        cls_terms.push_back(cross_entropy(pred.class_probs[k], c));
        if (c != 0) {
            const auto& t = s.gt_offsets[i];
            bbox_terms.push_back(l1_loss(slice(pred.bbox_offsets[k], 4 * c, 4),
                                         tensor::vec({t[0], t[1], t[2], t[3]})));
        }
    }
    std::vector<tensor> pred_terms;
    for (std::size_t e = 0; e < mb.edges.size(); ++e) {
        pred_terms.push_back(cross_entropy(pred.pred_probs[e], s.predicate_of(mb.edges[e])));
    }

    const tensor cls = mean(cls_terms);
    const tensor prd = mean(pred_terms);
    const tensor bbx = mean(bbox_terms);
    step_loss out;
    out.total = add(add(cls, prd), scale(bbx, bbox_loss_weight));
    out.values.cls_loss = cls.item();
    out.values.pred_loss = prd.item();
    out.values.bbox_loss = bbx.item();
    out.values.total = out.total.item();
    return out;
}

/// Forward pass plus loss for one minibatch.
inline step_loss minibatch_loss(const scene_graph_sample& s, const minibatch& mb, const model_params& params,
                                std::size_t iterations, pooling_mode mode, double bbox_loss_weight)
{
    const auto [sub, channels] = minibatch_graph(s, mb);
    const prediction pred = forward(sub, channels, params, iterations, mode);
    return compute_loss(pred, s, mb, bbox_loss_weight);
}

// ---------------------------------------------------------------------------
// Optimizer

class optimizer
{
public:
    explicit optimizer(const train_config& cfg) : cfg_(cfg) {}

    /// One update from the gradients currently stored on `params`.
    void step(model_params& params)
    {
        auto slots = params.slots();
        if (cfg_.optimizer == optimizer_kind::adam && first_.empty()) {
            for (const auto& [name, t] : slots) {
                first_.emplace_back(t->size(), 0.0);
                second_.emplace_back(t->size(), 0.0);
            }
        }
        for (const auto& [name, t] : slots) {
            for (double g : t->grad()) {
                if (!std::isfinite(g)) throw training_error("non-finite gradient for parameter " + name);
            }
        }
        ++steps_;
        const double lr = cfg_.learning_rate;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t k = 0; k < slots.size(); ++k) {
            auto values = slots[k].second->mutable_values();
            const auto grads = slots[k].second->grad();
            if (cfg_.optimizer == optimizer_kind::sgd) {
                for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grads[i];
                continue;
            }
            auto& m = first_[k];
            auto& v = second_[k];
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double g = grads[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                values[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
            }
        }
    }

    std::size_t steps() const { return steps_; }

private:
    train_config cfg_;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
    std::size_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Epoch loop

struct epoch_record
{
    std::size_t epoch = 0;
    loss_breakdown loss; // mean over images
    double wall_ms = 0.0;
    std::optional<double> predcls_r50; // on the training set, when requested
};

struct fit_result
{
    model_params params;
    std::vector<epoch_record> history;
};

using epoch_callback = std::function<void(const epoch_record&)>;

/// Seed of the parameter initialization stream.
inline std::uint64_t init_seed(std::uint64_t seed) { return seed; }
/// Seed of the minibatch / image-order stream.
inline std::uint64_t sampling_seed(std::uint64_t seed) { return rng::derive(seed, 1); }

/**
 *  Trains from a fresh seeded initialization, one image per step.
 *
 *  Each epoch visits the images in a seeded shuffled order; each step
 *  samples a minibatch, runs init -> iterate -> heads, back-propagates the
 *  loss and applies one optimizer update.
 */
inline fit_result fit(const std::vector<scene_graph_sample>& dataset, const model_dims& dims,
                      const train_config& cfg, const epoch_callback& on_epoch = {})
{
    if (dataset.empty()) throw data_error("fit: empty dataset");
    validate_config(cfg);
    fit_result result;
    result.params = initialize_params(dims, init_seed(cfg.seed));
    optimizer opt(cfg);
    rng gen(sampling_seed(cfg.seed));

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        gen.shuffle(order);
        epoch_record rec;
        rec.epoch = epoch;
        for (std::size_t idx : order) {
            const auto& s = dataset[idx];
            try {
                const minibatch mb = sample_minibatch(s, cfg, gen);
                result.params.zero_grad();
                const step_loss loss = minibatch_loss(s, mb, result.params, cfg.iterations, cfg.pooling,
                                                      cfg.bbox_loss_weight);
                backward(loss.total);
                opt.step(result.params);
                rec.loss.cls_loss += loss.values.cls_loss;
                rec.loss.pred_loss += loss.values.pred_loss;
                rec.loss.bbox_loss += loss.values.bbox_loss;
                rec.loss.total += loss.values.total;
            } catch (const numeric_error& e) {
                throw training_error("epoch " + std::to_string(epoch) + ", image " + s.image_id + ": " +
                                     e.what());
            }
        }
        const double n = static_cast<double>(dataset.size());
        rec.loss.cls_loss /= n;
        rec.loss.pred_loss /= n;
        rec.loss.bbox_loss /= n;
        rec.loss.total /= n;
        if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) {
            eval_config ec;
            ec.iterations = cfg.iterations;
            ec.pooling = cfg.pooling;
            ec.tasks = {eval_task::predcls};
            rec.predcls_r50 = evaluate(dataset, result.params, ec).front().r_at_50;
        }
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

} // namespace sgg
#endif // header guard
