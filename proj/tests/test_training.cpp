#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sgg;
using testutil::to_vector;

namespace
{

std::vector<std::vector<double>> snapshot(const model_params& p)
{
    std::vector<std::vector<double>> out;
    for (const auto& e : p.entries()) out.push_back(to_vector(e.value));
    return out;
}

scene_graph_sample three_node_sample()
{
    std::mt19937_64 gen(77);
    auto s = testutil::random_sample(gen, 3, 4, 4, 3);
    s.gt_classes = {1, 0, 3};
    s.gt_predicates = {{{0, 1}, 2}, {{2, 0}, 1}};
    return s;
}

dataset_file overfit_set(std::size_t images = 20)
{
    synth_config sc;
    sc.num_images = images;
    sc.seed = 11;
    return synth_generate(sc);
}

} // namespace

TEST(CrossEntropy, UniformOverFour)
{
    const auto probs = tensor::vec({0.25, 0.25, 0.25, 0.25});
    for (std::size_t label = 0; label < 4; ++label) EXPECT_NEAR(cross_entropy(probs, label).item(), std::log(4.0), 1e-15);
    EXPECT_NEAR(cross_entropy(softmax(tensor::vec({0, 0, 0, 0})), 2).item(), 1.3862943611198906, 1e-12);
}

TEST(CrossEntropy, OneHotCorrectIsZero)
{
    EXPECT_EQ(cross_entropy(tensor::vec({0, 1, 0}), 1).item(), 0.0);
}

TEST(CrossEntropy, ReferenceValue)
{
    EXPECT_NEAR(cross_entropy(tensor::vec({0.7, 0.3}), 1).item(), 1.2039728043259361, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange)
{
    EXPECT_THROW(cross_entropy(tensor::vec({0.5, 0.5}), 2), dimension_error);
}

TEST(CrossEntropy, StableForExtremeLogits)
{
    auto logits = tensor::vec({800, -800, 0}, true);
    const auto loss = cross_entropy(softmax(logits), 1);
    EXPECT_NEAR(loss.item(), 1600.0, 1e-9);
    backward(loss);
    EXPECT_NEAR(logits.grad()[0], 1.0, 1e-12);
    EXPECT_NEAR(logits.grad()[1], -1.0, 1e-12);
}

TEST(CrossEntropy, GradientThroughSoftmax)
{
    std::mt19937_64 gen(3);
    auto logits = testutil::random_vec(gen, 5, true, 2.0);
    auto probs = testutil::random_vec(gen, 4, true);
    for (auto& v : probs.mutable_values()) v = 0.2 + std::abs(v);
    std::vector<param_tensor> params = {{"logits", logits}, {"probs", probs}};
    for (std::size_t label = 0; label < 4; ++label) {
        const auto r = grad_check([&] { return add(cross_entropy(softmax(logits), label), cross_entropy(probs, label)); },
                                  params, 1e-5);
        EXPECT_LT(r.max_rel_error, 1e-6);
    }
}

TEST(L1Loss, Examples)
{
    EXPECT_EQ(l1_loss(tensor::vec({1, 2, 3, 4}), tensor::vec({1, 2, 3, 4})).item(), 0.0);
    EXPECT_EQ(l1_loss(tensor::vec({1, 0, 0, 0}), tensor::zeros({4})).item(), 1.0);
}

TEST(L1Loss, MatchesScalarLoop)
{
    std::mt19937_64 gen(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = testutil::random_values(gen, 4, -3, 3);
        const auto b = testutil::random_values(gen, 4, -3, 3);
        double want = 0.0;
        for (std::size_t k = 0; k < 4; ++k) want += std::abs(a[k] - b[k]);
        EXPECT_NEAR(l1_loss(tensor::vec(a), tensor::vec(b)).item(), want, 1e-14);
    }
}

TEST(L1Loss, SubgradientAtZeroIsZero)
{
    auto p = tensor::vec({1, 2, -1, 0.5}, true);
    backward(l1_loss(p, tensor::vec({1, 0, 0, 0.5})));
    EXPECT_EQ(testutil::grad_of(p), (std::vector<double>{0, 1, -1, 0}));
}

TEST(EncodeOffsets, IdentityIsZero)
{
    const box b{3, 4, 20, 30};
    EXPECT_EQ(encode_offsets(b, b), (box_offsets{0, 0, 0, 0}));
}

TEST(EncodeOffsets, ReferenceValue)
{
    const auto t = encode_offsets({0, 0, 10, 10}, {0, 0, 20, 10});
    EXPECT_NEAR(t[0], 0.5, 1e-15);
    EXPECT_NEAR(t[1], 0.0, 1e-15);
    EXPECT_NEAR(t[2], 0.69314718055994531, 1e-15);
    EXPECT_NEAR(t[3], 0.0, 1e-15);
}

TEST(EncodeOffsets, RoundTrip)
{
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> pos(0.0, 500.0);
    std::uniform_real_distribution<double> side(0.5, 200.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double px = pos(gen), py = pos(gen), gx = pos(gen), gy = pos(gen);
        const box p{px, py, px + side(gen), py + side(gen)};
        const box g{gx, gy, gx + side(gen), gy + side(gen)};
        const box back = decode_offsets(p, encode_offsets(p, g));
        EXPECT_NEAR(back.x1, g.x1, 1e-9);
        EXPECT_NEAR(back.y1, g.y1, 1e-9);
        EXPECT_NEAR(back.x2, g.x2, 1e-9);
        EXPECT_NEAR(back.y2, g.y2, 1e-9);
    }
}

TEST(EncodeOffsets, DegenerateProposal)
{
    EXPECT_THROW(encode_offsets({5, 5, 5, 10}, {0, 0, 1, 1}), geometry_error);
    EXPECT_THROW(encode_offsets({5, 5, 10, 5}, {0, 0, 1, 1}), geometry_error);
}

TEST(SampleMinibatch, LabeledFirstThenNoneEdges)
{
    const auto s = three_node_sample();
    train_config cfg;
    rng gen(1);
    const auto mb = sample_minibatch(s, cfg, gen);
    EXPECT_EQ(mb.boxes, (std::vector<std::size_t>{0, 1, 2}));
    ASSERT_EQ(mb.edges.size(), 6u);
    EXPECT_EQ(mb.edges[0], (node_pair{0, 1}));
    EXPECT_EQ(mb.edges[1], (node_pair{2, 0}));
    for (std::size_t e = 2; e < 6; ++e) EXPECT_EQ(s.predicate_of(mb.edges[e]), 0u);
}

TEST(SampleMinibatch, ZeroEdgeQuota)
{
    train_config cfg;
    cfg.max_edges = 0;
    rng gen(1);
    EXPECT_TRUE(sample_minibatch(three_node_sample(), cfg, gen).edges.empty());
}

TEST(SampleMinibatch, SeededRepeatable)
{
    std::mt19937_64 g(6);
    const auto s = testutil::random_sample(g, 7, 3, 3, 3);
    train_config cfg;
    cfg.max_boxes = 4;
    cfg.max_edges = 5;
    rng a(9);
    rng b(9);
    const auto x = sample_minibatch(s, cfg, a);
    const auto y = sample_minibatch(s, cfg, b);
    EXPECT_EQ(x.boxes, y.boxes);
    EXPECT_EQ(x.edges, y.edges);
}

TEST(SampleMinibatch, BoxSubsampleBoundsEdges)
{
    std::mt19937_64 g(7);
    const auto s = testutil::random_sample(g, 8, 3, 3, 3);
    train_config cfg;
    cfg.max_boxes = 3;
    rng gen(2);
    const auto mb = sample_minibatch(s, cfg, gen);
    EXPECT_EQ(mb.boxes.size(), 3u);
    EXPECT_TRUE(std::is_sorted(mb.boxes.begin(), mb.boxes.end()));
    EXPECT_EQ(mb.edges.size(), 6u);
    const std::set<std::size_t> chosen(mb.boxes.begin(), mb.boxes.end());
    for (const auto& [i, j] : mb.edges) {
        EXPECT_TRUE(chosen.contains(i));
        EXPECT_TRUE(chosen.contains(j));
    }
}

TEST(ComputeLoss, PerfectPredictionsGiveZero)
{
    const auto s = three_node_sample();
    minibatch mb;
    mb.boxes = {0, 1, 2};
    mb.edges = {{0, 1}, {2, 0}, {1, 2}};
    prediction pred;
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> probs(4, 0.0);
        probs[s.gt_classes[i]] = 1.0;
        pred.class_probs.push_back(tensor::vec(probs));
        std::vector<double> off(16, 0.0);
        for (std::size_t k = 0; k < 4; ++k) off[4 * s.gt_classes[i] + k] = s.gt_offsets[i][k];
        pred.bbox_offsets.push_back(tensor::vec(off));
    }
    for (const auto& e : mb.edges) {
        std::vector<double> probs(3, 0.0);
        probs[s.predicate_of(e)] = 1.0;
        pred.pred_probs.push_back(tensor::vec(probs));
    }
    const auto loss = compute_loss(pred, s, mb, 1.0);
    EXPECT_EQ(loss.values.total, 0.0);
}

TEST(ComputeLoss, UniformPredictions)
{
    const auto s = three_node_sample();
    const auto c = build_channel_index(all_pairs(3), 3);
    minibatch mb;
    mb.boxes = {0, 1, 2};
    mb.edges = c.edges;
    const auto pred = forward(s, c, zero_params({4, 3, 4, 3}), 2, pooling_mode::weighted);
    const auto loss = compute_loss(pred, s, mb, 0.0);
    EXPECT_NEAR(loss.values.cls_loss, std::log(4.0), 1e-12);
    EXPECT_NEAR(loss.values.pred_loss, std::log(3.0), 1e-12);
    EXPECT_NEAR(loss.values.total, std::log(4.0) + std::log(3.0), 1e-12);
}

TEST(ComputeLoss, TwoNodeHandComposition)
{
    std::mt19937_64 g(8);
    auto s = testutil::random_sample(g, 2, 3, 3, 3);
    s.gt_classes = {2, 1};
    s.gt_predicates = {{{1, 0}, 2}};
    const auto p = initialize_params({3, 4, 3, 3}, 12);
    minibatch mb;
    mb.boxes = {0, 1};
    mb.edges = {{1, 0}, {0, 1}};
    const auto [sub, c] = minibatch_graph(s, mb);
    const auto pred = forward(sub, c, p, 1, pooling_mode::weighted);
    const double w = 0.7;
    const auto loss = compute_loss(pred, s, mb, w);

    const double cls = 0.5 * (-std::log(pred.class_probs[0][2]) - std::log(pred.class_probs[1][1]));
    const double prd = 0.5 * (-std::log(pred.pred_probs[0][2]) - std::log(pred.pred_probs[1][0]));
    double bbox = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        const auto row = pred.offsets(i, s.gt_classes[i]);
        for (std::size_t k = 0; k < 4; ++k) bbox += std::abs(row[k] - s.gt_offsets[i][k]);
    }
    bbox *= 0.5;
    EXPECT_NEAR(loss.values.cls_loss, cls, 1e-12);
    EXPECT_NEAR(loss.values.pred_loss, prd, 1e-12);
    EXPECT_NEAR(loss.values.bbox_loss, bbox, 1e-12);
    EXPECT_NEAR(loss.values.total, cls + prd + w * bbox, 1e-12);
}

TEST(ComputeLoss, NonNegativeOnRandomModels)
{
    std::mt19937_64 g(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = testutil::random_sample(g, 2 + trial % 4, 3, 4, 3);
        train_config cfg;
        rng gen(trial);
        const auto mb = sample_minibatch(s, cfg, gen);
        const auto loss = minibatch_loss(s, mb, initialize_params({3, 4, 4, 3}, trial), 2, pooling_mode::weighted, 1.0);
        EXPECT_GT(loss.values.total, 0.0);
        EXPECT_GE(loss.values.bbox_loss, 0.0);
    }
}

TEST(Optimizer, ZeroGradsLeaveParams)
{
    for (auto kind : {optimizer_kind::sgd, optimizer_kind::adam}) {
        auto p = initialize_params({2, 3, 3, 3}, 1);
        const auto before = snapshot(p);
        p.zero_grad();
        for (auto& e : p.entries()) e.value.mutable_grad();
        train_config cfg;
        cfg.optimizer = kind;
        optimizer opt(cfg);
        opt.step(p);
        EXPECT_EQ(snapshot(p), before);
    }
}

TEST(Optimizer, SgdLinearRule)
{
    auto p = zero_params({1, 1, 2, 2});
    p.v1.mutable_values()[0] = 3.0;
    p.v1.mutable_grad()[0] = 3.0;
    train_config cfg;
    cfg.optimizer = optimizer_kind::sgd;
    cfg.learning_rate = 1.0;
    optimizer opt(cfg);
    opt.step(p);
    EXPECT_EQ(p.v1[0], 0.0);
}

TEST(Optimizer, SgdZeroLearningRateIsBitwiseNoop)
{
    auto p = initialize_params({2, 3, 3, 3}, 4);
    for (auto& e : p.entries()) {
        for (double& g : e.value.mutable_grad()) g = 0.37;
    }
    const auto before = snapshot(p);
    train_config cfg;
    cfg.optimizer = optimizer_kind::sgd;
    cfg.learning_rate = 0.0;
    optimizer opt(cfg);
    opt.step(p);
    EXPECT_EQ(snapshot(p), before);
}

TEST(Optimizer, AdamTextbookSteps)
{
    auto p = zero_params({1, 1, 2, 2});
    train_config cfg;
    cfg.learning_rate = 0.01;
    optimizer opt(cfg);
    double theta = 0.5;
    double m = 0.0;
    double v = 0.0;
    p.v1.mutable_values()[0] = theta;
    const double grads[] = {0.2, -0.05, 0.4};
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        p.zero_grad();
        p.v1.mutable_grad()[0] = g;
        opt.step(p);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        theta -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
        EXPECT_NEAR(p.v1[0], theta, 1e-15);
    }
}

TEST(Optimizer, NonFiniteGradientNamesParameter)
{
    auto p = initialize_params({2, 3, 3, 3}, 1);
    p.zero_grad();
    for (auto& e : p.entries()) e.value.mutable_grad();
    p.w2.mutable_grad()[1] = std::numeric_limits<double>::infinity();
    optimizer opt(train_config{});
    try {
        opt.step(p);
        FAIL() << "no exception";
    } catch (const training_error& e) {
        EXPECT_NE(std::string(e.what()).find("pool.w2"), std::string::npos) << e.what();
    }
}

TEST(TrainConfig, Validation)
{
    train_config c;
    EXPECT_NO_THROW(validate_config(c));
    c.learning_rate = 0.0;
    EXPECT_THROW(validate_config(c), config_error);
    c = {};
    c.beta1 = 1.0;
    EXPECT_THROW(validate_config(c), config_error);
    c = {};
    c.adam_eps = 0.0;
    EXPECT_THROW(validate_config(c), config_error);
}

TEST(Fit, ZeroEpochsReturnsInitialization)
{
    const auto d = overfit_set(3);
    train_config cfg;
    cfg.epochs = 0;
    cfg.seed = 5;
    const model_dims dims{d.feature_dim, 8, 6, 5};
    const auto r = fit(d.samples, dims, cfg);
    EXPECT_TRUE(r.history.empty());
    EXPECT_EQ(snapshot(r.params), snapshot(initialize_params(dims, 5)));
}

TEST(Fit, SameSeedBitIdenticalTrajectory)
{
    const auto d = overfit_set(4);
    train_config cfg;
    cfg.epochs = 3;
    const model_dims dims{d.feature_dim, 8, 6, 5};
    const auto a = fit(d.samples, dims, cfg);
    const auto b = fit(d.samples, dims, cfg);
    ASSERT_EQ(a.history.size(), 3u);
    for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_EQ(a.history[e].loss.total, b.history[e].loss.total);
        EXPECT_EQ(a.history[e].loss.cls_loss, b.history[e].loss.cls_loss);
    }
    EXPECT_EQ(snapshot(a.params), snapshot(b.params));
}

TEST(Fit, EarlyLossMostlyNonIncreasing)
{
    const auto d = overfit_set();
    train_config cfg;
    cfg.epochs = 6;
    const auto r = fit(d.samples, {d.feature_dim, 32, 6, 5}, cfg);
    int non_increasing = 0;
    for (std::size_t e = 1; e < r.history.size(); ++e) non_increasing += r.history[e].loss.total <= r.history[e - 1].loss.total;
    EXPECT_GE(non_increasing, 4);
}

TEST(Fit, EmptyDatasetRejected)
{
    EXPECT_THROW(fit({}, {}, train_config{}), data_error);
}

TEST(Fit, DivergenceReportsEpochAndImage)
{
    const auto d = overfit_set(2);
    train_config cfg;
    cfg.epochs = 50;
    cfg.optimizer = optimizer_kind::sgd;
    cfg.learning_rate = 1e300;
    try {
        fit(d.samples, {d.feature_dim, 4, 6, 5}, cfg);
        FAIL() << "no exception";
    } catch (const training_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch "), std::string::npos) << msg;
        EXPECT_NE(msg.find("image synth_"), std::string::npos) << msg;
    }
}

TEST(Fit, PeriodicEvaluationRecorded)
{
    const auto d = overfit_set(3);
    train_config cfg;
    cfg.epochs = 4;
    cfg.eval_every = 2;
    std::vector<std::size_t> seen;
    const auto r = fit(d.samples, {d.feature_dim, 8, 6, 5}, cfg, [&](const epoch_record& rec) { seen.push_back(rec.epoch); });
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4}));
    EXPECT_FALSE(r.history[0].predcls_r50.has_value());
    ASSERT_TRUE(r.history[1].predcls_r50.has_value());
    EXPECT_GE(*r.history[1].predcls_r50, 0.0);
    EXPECT_LE(*r.history[1].predcls_r50, 1.0);
}
