#ifndef SGG_MODEL_HPP
#define SGG_MODEL_HPP

#include "sgg/error.hpp"
#include "sgg/graph.hpp"
#include "sgg/rng.hpp"
#include "sgg/tensor.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

/**
 *  \file
 *  Rounds of message exchange between node and edge GRU states.
 *
 *  Node and edge states start from their projected visual features. Each
 *  round pools edge states into a message per node and node states into a
 *  message per edge, then advances every GRU by one step. Prediction heads
 *  read the final states.
 */

namespace sgg
{

struct model_dims
{
    std::size_t feature_dim = 16;
    std::size_t hidden = 32;
    std::size_t num_classes = 6;
    std::size_t num_predicates = 5;

    friend bool operator==(const model_dims&, const model_dims&) = default;
};

enum class pooling_mode
{
    weighted,
    avg,
    max
};

inline std::string_view to_string(pooling_mode m)
{
    switch (m) {
        case pooling_mode::weighted: return "weighted";
        case pooling_mode::avg: return "avg";
        case pooling_mode::max: return "max";
    }
    return "?";
}

inline std::optional<pooling_mode> parse_pooling_mode(std::string_view s)
{
    if (s == "weighted") return pooling_mode::weighted;
    if (s == "avg") return pooling_mode::avg;
    if (s == "max") return pooling_mode::max;
    return std::nullopt;
}

/// Weights of one GRU cell; input size equals the hidden size.
struct gru_params
{
    tensor w_z, w_r, w_h;
    tensor u_z, u_r, u_h;
    tensor b_z, b_r, b_h;
};

/**
 *  Every learnable weight of the model.
 *
 *  Parameters are shared handles: copying a model_params aliases the same
 *  storage. Use clone() for an independent copy.
 */
struct model_params
{
    model_dims dims;
    tensor input_proj_node; // H x D
    tensor input_proj_edge; // H x D
    gru_params node_gru;
    gru_params edge_gru;
    tensor v1, v2; // node pooling gates, 2H each
    tensor w1, w2; // edge pooling gates, 2H each
    tensor cls_weight, cls_bias;   // |C| x H, |C|
    tensor bbox_weight, bbox_bias; // 4|C| x H, 4|C|
    tensor pred_weight, pred_bias; // |R| x H, |R|

    /// Named parameters in canonical order, aliasing this model's storage.
    std::vector<param_tensor> entries() const
    {
        std::vector<param_tensor> out;
        for (const auto& [name, t] : slots()) out.push_back({name, *t});
        return out;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& [name, t] : slots()) n += t->size();
        return n;
    }

    void zero_grad()
    {
        for (auto& [name, t] : slots()) t->zero_grad();
    }

    model_params clone() const
    {
        model_params copy = *this;
        for (auto& [name, t] : copy.slots()) {
            *t = tensor(t->shape(), std::vector<double>(t->values().begin(), t->values().end()), true);
        }
        return copy;
    }

    /// Canonical (name, storage) list. The order fixes initialization and
    /// checkpoint layout.
    std::vector<std::pair<std::string, tensor*>> slots()
    {
        std::vector<std::pair<std::string, tensor*>> s{
            {"input_proj_node", &input_proj_node},
            {"input_proj_edge", &input_proj_edge},
        };
        auto gru = [&s](const std::string& prefix, gru_params& g) {
            s.emplace_back(prefix + ".W_z", &g.w_z);
            s.emplace_back(prefix + ".W_r", &g.w_r);
            s.emplace_back(prefix + ".W_h", &g.w_h);
            s.emplace_back(prefix + ".U_z", &g.u_z);
            s.emplace_back(prefix + ".U_r", &g.u_r);
            s.emplace_back(prefix + ".U_h", &g.u_h);
            s.emplace_back(prefix + ".b_z", &g.b_z);
            s.emplace_back(prefix + ".b_r", &g.b_r);
            s.emplace_back(prefix + ".b_h", &g.b_h);
        };
        gru("node_gru", node_gru);
        gru("edge_gru", edge_gru);
        s.emplace_back("pool.v1", &v1);
        s.emplace_back("pool.v2", &v2);
        s.emplace_back("pool.w1", &w1);
        s.emplace_back("pool.w2", &w2);
        s.emplace_back("cls_head.weight", &cls_weight);
        s.emplace_back("cls_head.bias", &cls_bias);
        s.emplace_back("bbox_head.weight", &bbox_weight);
        s.emplace_back("bbox_head.bias", &bbox_bias);
        s.emplace_back("pred_head.weight", &pred_weight);
        s.emplace_back("pred_head.bias", &pred_bias);
        return s;
    }

    std::vector<std::pair<std::string, const tensor*>> slots() const
    {
        std::vector<std::pair<std::string, const tensor*>> out;
        for (const auto& [name, t] : const_cast<model_params*>(this)->slots()) out.emplace_back(name, t);
        return out;
    }
};

struct param_layout
{
    shape_t shape;
    std::size_t fan_in;
};

/// Shape and init fan-in of every parameter, in canonical slot order.
inline std::vector<param_layout> parameter_layout(const model_dims& d)
{
    const std::size_t h = d.hidden;
    std::vector<param_layout> s{{{h, d.feature_dim}, d.feature_dim}, {{h, d.feature_dim}, d.feature_dim}};
    for (int g = 0; g < 2; ++g) {
        for (int k = 0; k < 6; ++k) s.push_back({{h, h}, h});
        for (int k = 0; k < 3; ++k) s.push_back({{h}, h});
    }
    for (int k = 0; k < 4; ++k) s.push_back({{2 * h}, 2 * h});
    s.push_back({{d.num_classes, h}, h});
    s.push_back({{d.num_classes}, h});
    s.push_back({{4 * d.num_classes, h}, h});
    s.push_back({{4 * d.num_classes}, h});
    s.push_back({{d.num_predicates, h}, h});
    s.push_back({{d.num_predicates}, h});
    return s;
}

inline model_params initialize_params(const model_dims& d, std::uint64_t seed)
{
    if (d.feature_dim == 0 || d.hidden == 0 || d.num_classes == 0 || d.num_predicates == 0) {
        throw config_error("model dimensions must be positive");
    }
    model_params p;
    p.dims = d;
    rng gen(seed);
    const auto layout = parameter_layout(d);
    auto slots = p.slots();
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layout[k].fan_in));
        std::vector<double> v(shape_size(layout[k].shape));
        for (double& x : v) x = gen.uniform(-bound, bound);
        *slots[k].second = tensor(layout[k].shape, std::move(v), true);
    }
    return p;
}

/// All-zero parameters of the given size.
inline model_params zero_params(const model_dims& d)
{
    model_params p;
    p.dims = d;
    const auto layout = parameter_layout(d);
    auto slots = p.slots();
    for (std::size_t k = 0; k < slots.size(); ++k) *slots[k].second = tensor::zeros(layout[k].shape, true);
    return p;
}

// ---------------------------------------------------------------------------

/// One GRU update:
///   z = sigmoid(W_z x + U_z h + b_z)
///   r = sigmoid(W_r x + U_r h + b_r)
///   c = tanh(W_h x + U_h (r * h) + b_h)
///   h' = (1 - z) * h + z * c
inline tensor gru_step(const tensor& x, const tensor& h, const gru_params& p)
{
    if (h.rank() != 1 || p.u_z.rank() != 2 || p.u_z.shape()[0] != h.size()) {
        throw dimension_error("gru_step: hidden state " + shape_str(h.shape()) +
                              " does not match U_z " + shape_str(p.u_z.shape()));
    }
    auto affine = [&](const tensor& w, const tensor& u, const tensor& b, const tensor& hh) {
        return add(add(matvec(w, x), matvec(u, hh)), b);
    };
    const tensor z = sigmoid(affine(p.w_z, p.u_z, p.b_z, h));
    const tensor r = sigmoid(affine(p.w_r, p.u_r, p.b_r, h));
    const tensor candidate = tanh(affine(p.w_h, p.u_h, p.b_h, mul(r, h)));
    return add(mul(one_minus(z), h), mul(z, candidate));
}

struct inference_state
{
    std::vector<tensor> node_hidden;
    std::vector<tensor> edge_hidden;
    std::size_t iteration = 0;
};

inline inference_state init_state(const scene_graph_sample& sample, const channel_index& channels,
                                  const model_params& params)
{
    const std::size_t hdim = params.dims.hidden;
    const tensor zero = tensor::zeros({hdim});
    inference_state st;
    if (sample.num_nodes() != channels.num_nodes()) {
        throw data_error("init_state: sample has " + std::to_string(sample.num_nodes()) +
                         " nodes, channels have " + std::to_string(channels.num_nodes()));
    }
    st.node_hidden.reserve(sample.num_nodes());
    for (const auto& f : sample.node_features) {
        const tensor x = matvec(params.input_proj_node, tensor::vec(f));
        st.node_hidden.push_back(gru_step(x, zero, params.node_gru));
    }
    st.edge_hidden.reserve(channels.num_edges());
    for (const auto& e : channels.edges) {
        const auto it = sample.edge_features.find(e);
        if (it == sample.edge_features.end()) {
            throw data_error("sample " + sample.image_id + ": missing edge feature for pair " +
                             pair_str(e));
        }
        const tensor x = matvec(params.input_proj_edge, tensor::vec(it->second));
        st.edge_hidden.push_back(gru_step(x, zero, params.edge_gru));
    }
    return st;
}

/// Message into node i from its outbound and inbound edge states.
inline tensor pool_node_messages(std::size_t i, const inference_state& state,
                                 const channel_index& channels, const model_params& params,
                                 pooling_mode mode)
{
    if (i >= channels.num_nodes()) throw dimension_error("pool_node_messages: node index out of range");
    const auto& out = channels.outbound[i];
    const auto& in = channels.inbound[i];
    if (out.empty() && in.empty()) return tensor::zeros({params.dims.hidden});

    const tensor& hi = state.node_hidden[i];
    std::vector<tensor> terms;
    terms.reserve(out.size() + in.size());
    switch (mode) {
        case pooling_mode::weighted:
            for (std::size_t e : out) {
                const tensor& he = state.edge_hidden[e];
                terms.push_back(gate(sigmoid(dot(params.v1, concat(hi, he))), he));
            }
            for (std::size_t e : in) {
                const tensor& he = state.edge_hidden[e];
                terms.push_back(gate(sigmoid(dot(params.v2, concat(hi, he))), he));
            }
            return add_n(terms);
        case pooling_mode::avg:
            for (std::size_t e : out) terms.push_back(state.edge_hidden[e]);
            for (std::size_t e : in) terms.push_back(state.edge_hidden[e]);
            return scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
        case pooling_mode::max:
            for (std::size_t e : out) terms.push_back(state.edge_hidden[e]);
            for (std::size_t e : in) terms.push_back(state.edge_hidden[e]);
            return maximum(terms);
    }
    throw error("pool_node_messages: unknown pooling mode");
}

/// Message into edge e = (i -> j) from its subject and object node states.
inline tensor pool_edge_messages(std::size_t e, const inference_state& state,
                                 const channel_index& channels, const model_params& params,
                                 pooling_mode mode)
{
    if (e >= channels.num_edges()) throw dimension_error("pool_edge_messages: edge index out of range");
    const auto [i, j] = channels.edges[e];
    const tensor& hi = state.node_hidden[i];
    const tensor& hj = state.node_hidden[j];
    const tensor& he = state.edge_hidden[e];
    switch (mode) {
        case pooling_mode::weighted:
            return add(gate(sigmoid(dot(params.w1, concat(hi, he))), hi),
                       gate(sigmoid(dot(params.w2, concat(hj, he))), hj));
        case pooling_mode::avg: return scale(add(hi, hj), 0.5);
        case pooling_mode::max: return maximum({hi, hj});
    }
    throw error("pool_edge_messages: unknown pooling mode");
}

/// T synchronous rounds: all messages are computed from the pre-round state,
/// then every node and edge GRU advances once.
inline inference_state iterate(inference_state state, const channel_index& channels,
                               const model_params& params, std::size_t rounds, pooling_mode mode)
{
    for (std::size_t t = 0; t < rounds; ++t) {
        std::vector<tensor> node_msg(state.node_hidden.size());
        std::vector<tensor> edge_msg(state.edge_hidden.size());
        for (std::size_t i = 0; i < node_msg.size(); ++i) {
            node_msg[i] = pool_node_messages(i, state, channels, params, mode);
        }
        for (std::size_t e = 0; e < edge_msg.size(); ++e) {
            edge_msg[e] = pool_edge_messages(e, state, channels, params, mode);
        }
        inference_state next;
        next.iteration = state.iteration + 1;
        next.node_hidden.reserve(node_msg.size());
        next.edge_hidden.reserve(edge_msg.size());
        for (std::size_t i = 0; i < node_msg.size(); ++i) {
            next.node_hidden.push_back(gru_step(node_msg[i], state.node_hidden[i], params.node_gru));
        }
        for (std::size_t e = 0; e < edge_msg.size(); ++e) {
            next.edge_hidden.push_back(gru_step(edge_msg[e], state.edge_hidden[e], params.edge_gru));
        }
        state = std::move(next);
    }
    return state;
}

/// Per-variable output distributions read off the final states.
struct prediction
{
    std::vector<tensor> class_probs;  // per node, |C|
    std::vector<tensor> bbox_offsets; // per node, 4|C| (row c at [4c, 4c+4))
    std::vector<tensor> pred_probs;   // per edge, |R|

    /// Offset row of class `cls` for node `node`.
    std::array<double, 4> offsets(std::size_t node, std::size_t cls) const
    {
        const auto v = bbox_offsets[node].values();
        return {v[4 * cls], v[4 * cls + 1], v[4 * cls + 2], v[4 * cls + 3]};
    }
};

inline prediction predict_heads(const inference_state& state, const model_params& params)
{
    prediction p;
    p.class_probs.reserve(state.node_hidden.size());
    p.bbox_offsets.reserve(state.node_hidden.size());
    for (const auto& h : state.node_hidden) {
        p.class_probs.push_back(softmax(add(matvec(params.cls_weight, h), params.cls_bias)));
        p.bbox_offsets.push_back(add(matvec(params.bbox_weight, h), params.bbox_bias));
    }
    p.pred_probs.reserve(state.edge_hidden.size());
    for (const auto& h : state.edge_hidden) {
        p.pred_probs.push_back(softmax(add(matvec(params.pred_weight, h), params.pred_bias)));
    }
    return p;
}

/// init_state -> iterate(rounds) -> predict_heads.
inline prediction forward(const scene_graph_sample& sample, const channel_index& channels,
                          const model_params& params, std::size_t rounds, pooling_mode mode)
{
    auto state = iterate(init_state(sample, channels, params), channels, params, rounds, mode);
    return predict_heads(state, params);
}

} // namespace sgg
#endif // header guard
