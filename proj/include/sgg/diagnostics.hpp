#ifndef SGG_DIAGNOSTICS_HPP
#define SGG_DIAGNOSTICS_HPP

#include "sgg/graph.hpp"
#include "sgg/model.hpp"
#include "sgg/rng.hpp"
#include "sgg/tensor.hpp"
#include "sgg/training.hpp"

#include <cstdint>

namespace sgg
{

/// Seeded 3-node sample with features on all six ordered pairs, two labeled
/// predicates, one labeled-none pair and one background node.
inline scene_graph_sample gradcheck_sample(const model_dims& dims, std::uint64_t seed)
{
    rng gen(seed);
    scene_graph_sample s;
    s.image_id = "gradcheck";
    s.width = 100.0;
    s.height = 100.0;
    s.proposals = {{10, 10, 40, 50}, {35, 20, 80, 60}, {5, 55, 50, 95}};
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> f(dims.feature_dim);
        for (double& x : f) x = gen.normal();
        s.node_features.push_back(std::move(f));
        s.gt_offsets.push_back({0.1 * gen.normal(), 0.1 * gen.normal(), 0.1 * gen.normal(), 0.1 * gen.normal()});
    }
    for (const auto& p : all_pairs(3)) {
        std::vector<double> f(dims.feature_dim);
        for (double& x : f) x = gen.normal();
        s.edge_features.emplace(p, std::move(f));
    }
    const std::size_t c = dims.num_classes;
    const std::size_t r = dims.num_predicates;
    s.gt_classes = {1 % c, 0, (c > 2 ? 2 : 1) % c};
    s.gt_offsets[1] = {0, 0, 0, 0};
    s.gt_predicates = {{{0, 2}, 1 % r}, {{2, 0}, (r > 2 ? 2 : 1) % r}, {{1, 0}, 0}};
    return s;
}

/// Central-difference check of the full training loss, over every
/// parameter, through `iterations` message-passing rounds on all six edges.
inline grad_check_result run_gradcheck(const model_dims& dims, std::size_t iterations, pooling_mode mode,
                                       std::uint64_t seed, double eps = 1e-5)
{
    const scene_graph_sample s = gradcheck_sample(dims, rng::derive(seed, 7));
    model_params params = initialize_params(dims, seed);
    minibatch mb;
    mb.boxes = {0, 1, 2};
    mb.edges = all_pairs(3);
    const auto [sub, channels] = minibatch_graph(s, mb);
    auto entries = params.entries();
    return grad_check(
        [&]() {
            const prediction pred = forward(sub, channels, params, iterations, mode);
            return compute_loss(pred, s, mb, 1.0).total;
        },
        entries, eps);
}

} // namespace sgg
#endif // header guard
