#ifndef SGG_SYNTH_HPP
#define SGG_SYNTH_HPP

#include "sgg/box_coder.hpp"
#include "sgg/data_io.hpp"
#include "sgg/error.hpp"
#include "sgg/graph.hpp"
#include "sgg/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

/**
 *  \file
 *  Synthetic scenes whose predicates need context.
 *
 *  Each ordered object pair with a spatial relation gets a predicate from a
 *  rule table keyed on (subject class, object class, relation). A
 *  `context_ambiguity` fraction of the table entries map to predicates that
 *  depend on the class pair; the rest depend on the relation only. Edge
 *  features see the union box and an undirected layout category but never
 *  the classes, so ambiguous entries cannot be resolved from the edge
 *  feature alone. Node features carry the class.
 */

namespace sgg
{

enum class spatial_relation
{
    left_of,
    above,
    overlapping,
    containing
};

constexpr std::size_t num_spatial_relations = 4;

/// Undirected layout of a pair, the only relation information edge
/// features carry.
enum class pair_layout
{
    horizontal,
    vertical,
    overlapping,
    nested
};

inline double intersection_area(const box& a, const box& b)
{
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    return (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
}

inline pair_layout layout_of(const box& a, const box& b)
{
    if (a.contains(b) || b.contains(a)) return a == b ? pair_layout::overlapping : pair_layout::nested;
    if (intersection_area(a, b) > 0.0) return pair_layout::overlapping;
    const double dx = b.center_x() - a.center_x();
    const double dy = b.center_y() - a.center_y();
    return std::abs(dx) >= std::abs(dy) ? pair_layout::horizontal : pair_layout::vertical;
}

/**
 *  Directed relation of subject `a` to object `b`, if any.
 *
 *  containing: a contains b (identical boxes count as overlapping);
 *  overlapping: positive intersection; otherwise the dominant center axis
 *  decides (ties go horizontal), and only the left / upper box relates.
 */
inline std::optional<spatial_relation> relation_of(const box& a, const box& b)
{
    switch (layout_of(a, b)) {
        case pair_layout::nested:
            if (a.contains(b)) return spatial_relation::containing;
            return std::nullopt;
        case pair_layout::overlapping: return spatial_relation::overlapping;
        case pair_layout::horizontal:
            if (b.center_x() > a.center_x()) return spatial_relation::left_of;
            return std::nullopt;
        case pair_layout::vertical:
            if (b.center_y() > a.center_y()) return spatial_relation::above;
            return std::nullopt;
    }
    return std::nullopt;
}

struct synth_config
{
    std::size_t num_images = 20;
    std::size_t min_objects = 3;
    std::size_t max_objects = 6;
    std::size_t num_classes = 6;    // including background
    std::size_t num_predicates = 5; // including none
    std::size_t feature_dim = 16;
    double feature_noise_sigma = 0.1;
    double context_ambiguity = 0.7;
    std::uint64_t seed = 1;
    double canvas_width = 256.0;
    double canvas_height = 256.0;
};

constexpr double min_box_side = 8.0;

inline void validate_config(const synth_config& c)
{
    if (c.num_classes < 2) throw config_error("num_classes must be at least 2 (background + one class)");
    if (c.num_predicates < 2) throw config_error("num_predicates must be at least 2 (none + one predicate)");
    if (c.feature_dim == 0) throw config_error("feature_dim must be positive");
    if (c.min_objects == 0) throw config_error("min_objects must be positive");
    if (c.max_objects < c.min_objects) throw config_error("max_objects is smaller than min_objects");
    if (!(c.feature_noise_sigma >= 0.0) || !std::isfinite(c.feature_noise_sigma)) {
        throw config_error("feature_noise_sigma must be finite and non-negative");
    }
    if (!(c.context_ambiguity >= 0.0 && c.context_ambiguity <= 1.0)) {
        throw config_error("context_ambiguity must lie in [0, 1]");
    }
    if (!(c.canvas_width >= 4 * min_box_side && c.canvas_height >= 4 * min_box_side)) {
        throw config_error("canvas must be at least " + std::to_string(4 * min_box_side) + " on each side");
    }
    const auto capacity = static_cast<std::size_t>(std::floor(c.canvas_width / min_box_side) *
                                                   std::floor(c.canvas_height / min_box_side));
    if (c.min_objects > capacity) {
        throw config_error("min_objects " + std::to_string(c.min_objects) + " exceeds canvas capacity " +
                           std::to_string(capacity));
    }
}

/// Canonical text of a config, hashed into the dataset provenance.
inline std::string canonical_text(const synth_config& c)
{
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "images=%zu;objects=%zu..%zu;classes=%zu;predicates=%zu;dim=%zu;sigma=%.17g;"
                  "ambiguity=%.17g;seed=%llu;canvas=%.17gx%.17g",
                  c.num_images, c.min_objects, c.max_objects, c.num_classes, c.num_predicates, c.feature_dim,
                  c.feature_noise_sigma, c.context_ambiguity, static_cast<unsigned long long>(c.seed),
                  c.canvas_width, c.canvas_height);
    return buf;
}

inline std::string config_hash(const synth_config& c)
{
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (unsigned char ch : canonical_text(c)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Predicate lookup for (subject class, object class, relation).
class rule_table
{
public:
    rule_table() = default;

    rule_table(std::size_t num_classes, std::size_t num_predicates, double ambiguity, rng& gen)
        : classes_(num_classes), predicates_(num_predicates)
    {
        const std::size_t real = num_classes - 1;
        const std::size_t n = real * real * num_spatial_relations;
        table_.assign(n, 0);
        ambiguous_.assign(n, false);
        for (std::size_t k = 0; k < n; ++k) {
            table_[k] = spatial_predicate(static_cast<spatial_relation>(k % num_spatial_relations));
        }

        std::vector<std::size_t> order(n);
        for (std::size_t k = 0; k < n; ++k) order[k] = k;
        gen.shuffle(order);
        const auto count = static_cast<std::size_t>(std::llround(ambiguity * static_cast<double>(n)));

        // Ambiguous entries of each relation cycle through all predicates so
        // every predicate is equally common given the relation.
        const std::size_t choices = num_predicates - 1;
        std::array<std::size_t, num_spatial_relations> next{};
        for (auto& x : next) x = static_cast<std::size_t>(gen.below(choices));
        for (std::size_t a = 0; a < count; ++a) {
            const std::size_t k = order[a];
            const std::size_t rel = k % num_spatial_relations;
            ambiguous_[k] = true;
            table_[k] = 1 + (next[rel]++ % choices);
        }
    }

    std::size_t lookup(std::size_t subj_class, std::size_t obj_class, spatial_relation rel) const
    {
        return table_[index(subj_class, obj_class, rel)];
    }

    bool ambiguous(std::size_t subj_class, std::size_t obj_class, spatial_relation rel) const
    {
        return ambiguous_[index(subj_class, obj_class, rel)];
    }

    /// Predicate of a non-ambiguous entry: a function of the relation only.
    std::size_t spatial_predicate(spatial_relation rel) const
    {
        return 1 + static_cast<std::size_t>(rel) % (predicates_ - 1);
    }

    std::size_t size() const { return table_.size(); }

private:
    std::size_t index(std::size_t s, std::size_t o, spatial_relation rel) const
    {
        if (s == 0 || o == 0 || s >= classes_ || o >= classes_) {
            throw validation_error("rule_table: class index out of range");
        }
        return ((s - 1) * (classes_ - 1) + (o - 1)) * num_spatial_relations + static_cast<std::size_t>(rel);
    }

    std::size_t classes_ = 0;
    std::size_t predicates_ = 0;
    std::vector<std::size_t> table_;
    std::vector<bool> ambiguous_;
};

/// Fixed random embeddings shared by every image of one dataset.
struct synth_world
{
    rule_table rules;
    std::vector<std::vector<double>> class_embedding;  // per class
    std::vector<std::vector<double>> layout_embedding; // per pair_layout
    std::vector<std::array<double, 4>> node_geometry;  // D rows
    std::vector<std::array<double, 4>> edge_geometry;  // D rows
};

inline synth_world build_world(const synth_config& cfg)
{
    validate_config(cfg);
    rng gen(rng::derive(cfg.seed, 0));
    synth_world w;
    w.rules = rule_table(cfg.num_classes, cfg.num_predicates, cfg.context_ambiguity, gen);
    auto gaussian_vec = [&](std::size_t n, double scale) {
        std::vector<double> v(n);
        for (double& x : v) x = scale * gen.normal();
        return v;
    };
    for (std::size_t c = 0; c < cfg.num_classes; ++c) w.class_embedding.push_back(gaussian_vec(cfg.feature_dim, 1.0));
    for (std::size_t l = 0; l < 4; ++l) w.layout_embedding.push_back(gaussian_vec(cfg.feature_dim, 1.0));
    auto geometry = [&]() {
        std::vector<std::array<double, 4>> g(cfg.feature_dim);
        for (auto& row : g) {
            for (double& x : row) x = 0.5 * gen.normal();
        }
        return g;
    };
    w.node_geometry = geometry();
    w.edge_geometry = geometry();
    return w;
}

namespace detail
{

inline std::array<double, 4> geometry_code(const box& b, double width, double height)
{
    return {2.0 * b.center_x() / width - 1.0, 2.0 * b.center_y() / height - 1.0, b.width() / width,
            b.height() / height};
}

inline std::vector<double> embed(const std::vector<double>& base, const std::vector<std::array<double, 4>>& geom,
                                 const std::array<double, 4>& code, double sigma, rng& gen)
{
    std::vector<double> f(base);
    for (std::size_t d = 0; d < f.size(); ++d) {
        for (std::size_t k = 0; k < 4; ++k) f[d] += geom[d][k] * code[k];
        if (sigma > 0.0) f[d] += sigma * gen.normal();
    }
    return f;
}

inline box random_box(double width, double height, rng& gen)
{
    const double w = std::max(min_box_side, gen.uniform(0.12, 0.35) * width);
    const double h = std::max(min_box_side, gen.uniform(0.12, 0.35) * height);
    const double x1 = gen.uniform(0.0, width - w);
    const double y1 = gen.uniform(0.0, height - h);
    return {x1, y1, x1 + w, y1 + h};
}

/// A box strictly inside `parent`, or nullopt when the parent is too small.
inline std::optional<box> nested_box(const box& parent, rng& gen)
{
    if (parent.width() < 3 * min_box_side || parent.height() < 3 * min_box_side) return std::nullopt;
    const double w = std::max(min_box_side, gen.uniform(0.3, 0.7) * parent.width());
    const double h = std::max(min_box_side, gen.uniform(0.3, 0.7) * parent.height());
    const double x1 = gen.uniform(parent.x1 + 1.0, parent.x2 - w - 1.0);
    const double y1 = gen.uniform(parent.y1 + 1.0, parent.y2 - h - 1.0);
    return box{x1, y1, x1 + w, y1 + h};
}

/// Ground-truth box perturbed the way a detector proposal would be.
inline box jitter(const box& gt, double width, double height, rng& gen)
{
    const double sx = 0.04 * gt.width();
    const double sy = 0.04 * gt.height();
    box p{std::clamp(gt.x1 + sx * gen.normal(), 0.0, width), std::clamp(gt.y1 + sy * gen.normal(), 0.0, height),
          std::clamp(gt.x2 + sx * gen.normal(), 0.0, width), std::clamp(gt.y2 + sy * gen.normal(), 0.0, height)};
    if (p.width() < 1.0 || p.height() < 1.0) return gt;
    return p;
}

} // namespace detail

inline vocab_meta synth_vocab(const synth_config& cfg)
{
    vocab_meta v;
    v.class_names.push_back("background");
    for (std::size_t c = 1; c < cfg.num_classes; ++c) v.class_names.push_back("class_" + std::to_string(c));
    v.predicate_names.push_back("none");
    for (std::size_t p = 1; p < cfg.num_predicates; ++p) v.predicate_names.push_back("pred_" + std::to_string(p));
    return v;
}

/// Ground-truth boxes of a generated sample (proposal + offsets).
inline std::vector<box> gt_boxes(const scene_graph_sample& s)
{
    std::vector<box> out;
    for (std::size_t i = 0; i < s.num_nodes(); ++i) out.push_back(gt_box(s, i));
    return out;
}

/// Deterministic in cfg: equal configs give byte-identical files.
inline dataset_file synth_generate(const synth_config& cfg)
{
    const synth_world world = build_world(cfg);
    dataset_file d;
    d.vocab = synth_vocab(cfg);
    d.feature_dim = cfg.feature_dim;
    d.origin = {"synthetic-v1", "synthetic-embedding", cfg.seed, config_hash(cfg)};

    const double W = cfg.canvas_width;
    const double H = cfg.canvas_height;
    for (std::size_t img = 0; img < cfg.num_images; ++img) {
        rng gen(rng::derive(cfg.seed, 1000 + img));
        scene_graph_sample s;
        char id[32];
        std::snprintf(id, sizeof id, "synth_%06zu", img);
        s.image_id = id;
        s.width = W;
        s.height = H;

        const std::size_t n = cfg.min_objects + gen.below(cfg.max_objects - cfg.min_objects + 1);
        std::vector<box> truth;
        for (std::size_t k = 0; k < n; ++k) {
            std::optional<box> b;
            if (k > 0 && gen.uniform() < 0.2) b = detail::nested_box(truth[gen.below(k)], gen);
            truth.push_back(b ? *b : detail::random_box(W, H, gen));
            s.gt_classes.push_back(1 + gen.below(cfg.num_classes - 1));
        }
        for (std::size_t k = 0; k < n; ++k) {
            const box p = detail::jitter(truth[k], W, H, gen);
            s.proposals.push_back(p);
            s.gt_offsets.push_back(encode_offsets(p, truth[k]));
            s.node_features.push_back(detail::embed(world.class_embedding[s.gt_classes[k]], world.node_geometry,
                                                    detail::geometry_code(p, W, H), cfg.feature_noise_sigma, gen));
        }
        for (const auto& [i, j] : all_pairs(n)) {
            const auto layout = static_cast<std::size_t>(layout_of(truth[i], truth[j]));
            const box u = union_box(s.proposals[i], s.proposals[j]);
            s.edge_features.emplace(node_pair{i, j},
                                    detail::embed(world.layout_embedding[layout], world.edge_geometry,
                                                  detail::geometry_code(u, W, H), cfg.feature_noise_sigma, gen));
            if (const auto rel = relation_of(truth[i], truth[j])) {
                s.gt_predicates.emplace(node_pair{i, j}, world.rules.lookup(s.gt_classes[i], s.gt_classes[j], *rel));
            }
        }
        d.samples.push_back(std::move(s));
    }
    return d;
}

} // namespace sgg
#endif // header guard
