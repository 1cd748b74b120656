#ifndef SGG_GRAPH_HPP
#define SGG_GRAPH_HPP

#include "sgg/error.hpp"
#include "sgg/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sgg
{

/// Ordered (subject, object) node pair.
using node_pair = std::pair<std::size_t, std::size_t>;

inline std::string pair_str(const node_pair& p)
{
    return "(" + std::to_string(p.first) + "," + std::to_string(p.second) + ")";
}

/// Axis-aligned box in corner form. Areas are (x2-x1)*(y2-y1), no +1.
struct box
{
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double center_x() const { return x1 + 0.5 * width(); }
    double center_y() const { return y1 + 0.5 * height(); }

    bool valid() const
    {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
               std::isfinite(y2) && x1 >= 0.0 && y1 >= 0.0 && x1 <= x2 && y1 <= y2;
    }

    bool contains(const box& o) const
    {
        return x1 <= o.x1 && y1 <= o.y1 && x2 >= o.x2 && y2 >= o.y2;
    }

    friend bool operator==(const box&, const box&) = default;
};

inline box union_box(const box& a, const box& b)
{
    return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
            std::max(a.y2, b.y2)};
}

/// Class and predicate names. Index 0 is reserved in both lists.
struct vocab_meta
{
    std::vector<std::string> class_names;
    std::vector<std::string> predicate_names;

    std::size_t num_classes() const { return class_names.size(); }
    std::size_t num_predicates() const { return predicate_names.size(); }

    friend bool operator==(const vocab_meta&, const vocab_meta&) = default;
};

inline void validate_vocab(const vocab_meta& v)
{
    auto check = [](const std::vector<std::string>& names, const char* field, const char* first) {
        if (names.empty()) throw validation_error(std::string(field) + ": empty");
        if (names[0] != first) {
            throw validation_error(std::string(field) + "[0]: must be \"" + first + "\", got \"" +
                                   names[0] + "\"");
        }
        std::unordered_set<std::string> seen;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (!seen.insert(names[i]).second) {
                throw validation_error(std::string(field) + "[" + std::to_string(i) +
                                       "]: duplicate name \"" + names[i] + "\"");
            }
        }
    };
    check(v.class_names, "class_names", "background");
    check(v.predicate_names, "predicate_names", "none");
}

/**
 *  One image: proposals with their features and ground truth.
 *
 *  Pairs missing from `gt_predicates` are unlabeled, which is distinct from
 *  a pair explicitly labeled with predicate 0 ("none"). Training treats both
 *  the same way once an unlabeled pair is sampled.
 */
struct scene_graph_sample
{
    std::string image_id;
    double width = 0.0;
    double height = 0.0;
    std::vector<box> proposals;
    std::vector<std::vector<double>> node_features;
    std::map<node_pair, std::vector<double>> edge_features;
    std::vector<std::size_t> gt_classes;
    // Regression targets; rows of background nodes are unused (kept zero).
    std::vector<std::array<double, 4>> gt_offsets;
    std::map<node_pair, std::size_t> gt_predicates;

    std::size_t num_nodes() const { return proposals.size(); }

    std::size_t feature_dim() const
    {
        return node_features.empty() ? 0 : node_features.front().size();
    }

    /// Ground-truth predicate of a pair, 0 when unlabeled.
    std::size_t predicate_of(const node_pair& p) const
    {
        const auto it = gt_predicates.find(p);
        return it == gt_predicates.end() ? 0 : it->second;
    }

    friend bool operator==(const scene_graph_sample&, const scene_graph_sample&) = default;
};

/// Bipartite message channels between node and edge states.
struct channel_index
{
    std::vector<node_pair> edges;
    std::vector<std::vector<std::size_t>> outbound; // edges with source i
    std::vector<std::vector<std::size_t>> inbound;  // edges with target i

    std::size_t num_nodes() const { return outbound.size(); }
    std::size_t num_edges() const { return edges.size(); }
};

enum class edge_mode
{
    train,
    test
};

/// All ordered pairs (i, j), i != j, in lexicographic order.
inline std::vector<node_pair> all_pairs(std::size_t n)
{
    std::vector<node_pair> out;
    if (n > 1) out.reserve(n * (n - 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) out.emplace_back(i, j);
        }
    }
    return out;
}

/**
 *  Edges a forward pass runs over.
 *
 *  Test mode returns every ordered pair. Train mode returns the labeled
 *  pairs in ascending order, followed by unlabeled pairs taken from a
 *  Fisher-Yates shuffle (see `rng::shuffle`) of the lexicographic list of
 *  unlabeled pairs, until `quota` edges are selected. When more than `quota`
 *  pairs are labeled, a shuffled subset of `quota` of them is kept instead.
 */
inline std::vector<node_pair> build_edge_set(std::size_t n, const std::set<node_pair>& labeled,
                                             edge_mode mode, std::size_t quota, rng& gen)
{
    for (const auto& p : labeled) {
        if (p.first == p.second) throw validation_error("labeled pair " + pair_str(p) + " is a self-pair");
        if (p.first >= n || p.second >= n) {
            throw validation_error("labeled pair " + pair_str(p) + " out of range for " +
                                   std::to_string(n) + " nodes");
        }
    }
    if (mode == edge_mode::test) return all_pairs(n);

    if (labeled.size() >= quota) {
        std::vector<node_pair> chosen(labeled.begin(), labeled.end());
        if (chosen.size() > quota) {
            gen.shuffle(chosen);
            chosen.resize(quota);
            std::sort(chosen.begin(), chosen.end());
        }
        return chosen;
    }

    std::vector<node_pair> out(labeled.begin(), labeled.end());
    std::vector<node_pair> unlabeled;
    for (const auto& p : all_pairs(n)) {
        if (!labeled.contains(p)) unlabeled.push_back(p);
    }
    gen.shuffle(unlabeled);
    const std::size_t room = quota - out.size();
    for (std::size_t k = 0; k < unlabeled.size() && k < room; ++k) out.push_back(unlabeled[k]);
    return out;
}

inline channel_index build_channel_index(const std::vector<node_pair>& edges, std::size_t n)
{
    channel_index c;
    c.edges = edges;
    c.outbound.resize(n);
    c.inbound.resize(n);
    std::set<node_pair> seen;
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto& [i, j] = edges[e];
        if (i >= n || j >= n) {
            throw validation_error("edge " + pair_str(edges[e]) + " out of range for " +
                                   std::to_string(n) + " nodes");
        }
        if (i == j) throw validation_error("edge " + pair_str(edges[e]) + " is a self-pair");
        if (!seen.insert(edges[e]).second) {
            throw validation_error("duplicate edge " + pair_str(edges[e]));
        }
        c.outbound[i].push_back(e);
        c.inbound[j].push_back(e);
    }
    return c;
}

/// Throws validation_error naming the first violated field and index.
inline void validate_sample(const scene_graph_sample& s, const vocab_meta& v)
{
    const std::string where = "sample " + s.image_id + ": ";
    auto fail = [&](const std::string& msg) { throw validation_error(where + msg); };

    const std::size_t n = s.num_nodes();
    if (n == 0) fail("proposals: at least one proposal required");
    if (!(std::isfinite(s.width) && s.width > 0.0)) fail("width: must be positive");
    if (!(std::isfinite(s.height) && s.height > 0.0)) fail("height: must be positive");
    for (std::size_t i = 0; i < n; ++i) {
        if (!s.proposals[i].valid()) fail("proposals[" + std::to_string(i) + "]: invalid box");
    }

    if (s.node_features.size() != n) {
        fail("node_features: " + std::to_string(s.node_features.size()) + " rows for " +
             std::to_string(n) + " proposals");
    }
    const std::size_t dim = s.feature_dim();
    for (std::size_t i = 0; i < n; ++i) {
        if (s.node_features[i].size() != dim) {
            fail("node_features[" + std::to_string(i) + "]: dimension " +
                 std::to_string(s.node_features[i].size()) + ", expected " + std::to_string(dim));
        }
        for (double x : s.node_features[i]) {
            if (!std::isfinite(x)) fail("node_features[" + std::to_string(i) + "]: non-finite value");
        }
    }

    if (s.gt_classes.size() != n) {
        fail("gt_classes: " + std::to_string(s.gt_classes.size()) + " entries for " +
             std::to_string(n) + " proposals");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (s.gt_classes[i] >= v.num_classes()) {
            fail("gt_classes[" + std::to_string(i) + "]: class index " +
                 std::to_string(s.gt_classes[i]) + " out of range [0, " +
                 std::to_string(v.num_classes()) + ")");
        }
    }
    if (s.gt_offsets.size() != n) {
        fail("gt_offsets: " + std::to_string(s.gt_offsets.size()) + " rows for " +
             std::to_string(n) + " proposals");
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (double x : s.gt_offsets[i]) {
            if (!std::isfinite(x)) fail("gt_offsets[" + std::to_string(i) + "]: non-finite value");
        }
    }

    auto check_pair = [&](const node_pair& p, const char* field) {
        if (p.first == p.second) fail(std::string(field) + pair_str(p) + ": self-pair");
        if (p.first >= n || p.second >= n) {
            fail(std::string(field) + pair_str(p) + ": node index out of range [0, " +
                 std::to_string(n) + ")");
        }
    };
    for (const auto& [p, f] : s.edge_features) {
        check_pair(p, "edge_features");
        if (f.size() != dim) {
            fail("edge_features" + pair_str(p) + ": dimension " + std::to_string(f.size()) +
                 ", expected " + std::to_string(dim));
        }
        for (double x : f) {
            if (!std::isfinite(x)) fail("edge_features" + pair_str(p) + ": non-finite value");
        }
    }
    for (const auto& [p, pred] : s.gt_predicates) {
        check_pair(p, "gt_predicates");
        if (pred >= v.num_predicates()) {
            fail("gt_predicates" + pair_str(p) + ": predicate index " + std::to_string(pred) +
                 " out of range [0, " + std::to_string(v.num_predicates()) + ")");
        }
        if (!s.edge_features.empty() && !s.edge_features.contains(p)) {
            fail("gt_predicates" + pair_str(p) + ": no edge_features entry");
        }
    }
}

} // namespace sgg
#endif // header guard
