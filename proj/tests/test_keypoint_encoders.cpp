#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "permakey/errors.hpp"
#include "permakey/keypoint_encoders.hpp"
#include "permakey/training.hpp"
#include "reference_gnn.hpp"

using namespace permakey;
using namespace permakey::test_support;

namespace {

void set_linear(torch::nn::Linear& l, std::vector<double> w, std::vector<double> b) {
  torch::NoGradGuard g;
  l->weight.copy_(torch::tensor(w, l->weight.options()).view_as(l->weight));
  l->bias.copy_(torch::tensor(b, l->bias.options()));
}

}  // namespace

TEST(GraphStateTest, CompleteGraphOrdering) {
  auto g = GraphState::complete(torch::rand({4, 3}), 5);
  ASSERT_EQ(g.senders.numel(), 12);
  EXPECT_EQ(g.edges.sizes().vec(), (std::vector<int64_t>{12, 5}));
  EXPECT_EQ(g.edges.abs().sum().item<float>(), 0.f);
  std::set<std::pair<int64_t, int64_t>> seen;
  for (int64_t e = 0; e < 12; ++e) {
    const auto s = g.senders[e].item<int64_t>(), r = g.receivers[e].item<int64_t>();
    EXPECT_NE(s, r);
    EXPECT_EQ(GraphState::edge_index(4, s, r), e);
    seen.insert({s, r});
  }
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_THROW(GraphState::edge_index(4, 2, 2), PreconditionError);
}

TEST(InteractionStep, TwoNodeHandTrace) {
  InteractionNetwork net(1, 1, 1);
  auto& el = net->edge_fn->layers();
  set_linear(el[0], {1.0, 2.0, 0.5}, {0.0});
  set_linear(el[1], {1.0}, {0.0});
  auto& nl = net->node_fn->layers();
  set_linear(nl[0], {1.0, 0.5}, {0.0});
  set_linear(nl[1], {1.0}, {0.0});
  auto g = GraphState::complete(torch::tensor({{1.0f}, {3.0f}}), 1);
  auto out = interaction_step(net, g);
  // e'_01 = relu(1 + 2*3) = 7, e'_10 = relu(3 + 2*1) = 5.
  EXPECT_FLOAT_EQ(out.edges[GraphState::edge_index(2, 0, 1)][0].item<float>(), 7.f);
  EXPECT_FLOAT_EQ(out.edges[GraphState::edge_index(2, 1, 0)][0].item<float>(), 5.f);
  // v'_0 = 1 + 0.5 * e'_10 = 3.5, v'_1 = 3 + 0.5 * e'_01 = 6.5.
  EXPECT_FLOAT_EQ(out.nodes[0][0].item<float>(), 3.5f);
  EXPECT_FLOAT_EQ(out.nodes[1][0].item<float>(), 6.5f);
}

TEST(InteractionStep, SingleNodeAggregatesZero) {
  torch::manual_seed(0);
  InteractionNetwork net(3, 4, 8);
  auto v = torch::rand({1, 3});
  auto out = interaction_step(net, GraphState::complete(v, 4));
  EXPECT_EQ(out.edges.size(0), 0);
  auto expect = net->node_fn->forward(torch::cat({v, torch::zeros({1, 8})}, -1));
  EXPECT_TRUE(torch::equal(out.nodes, expect));
}

TEST(InteractionStep, MatchesLoopReference) {
  torch::manual_seed(1);
  for (int64_t k : {2, 3, 5}) {
    InteractionNetwork net(3, 2, 6);
    net->to(torch::kFloat64);
    auto g = GraphState::complete(torch::randn({k, 3}, torch::kFloat64), 2);
    g.edges = torch::randn({k * (k - 1), 2}, torch::kFloat64);
    auto out = interaction_step(net, g);
    auto ref = reference_interaction(net, to_rows(g.nodes), to_rows(g.edges));
    EXPECT_LE(max_abs_diff(out.nodes, ref.nodes), 1e-9) << k;
    EXPECT_LE(max_abs_diff(out.edges, ref.edges), 1e-9) << k;
  }
}

TEST(InteractionStep, DirectedEdges) {
  torch::manual_seed(2);
  InteractionNetwork net(2, 1, 8);
  auto g = GraphState::complete(torch::tensor({{0.1f, 0.9f}, {0.7f, -0.3f}}), 1);
  auto out = interaction_step(net, g);
  EXPECT_FALSE(torch::allclose(out.edges[0], out.edges[1]));
}

TEST(InteractionStep, PermutationEquivariant) {
  torch::manual_seed(3);
  std::mt19937_64 rng(3);
  InteractionNetwork net(4, 3, 16);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t k = 2 + static_cast<int64_t>(rng() % 6);
    auto g = GraphState::complete(torch::randn({k, 4}), 3);
    g.edges = torch::randn({k * (k - 1), 3});
    std::vector<int64_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // Node i of the permuted graph is node perm[i] of the original.
    auto pg = GraphState::complete(g.nodes.index({torch::tensor(perm)}), 3);
    for (int64_t s = 0; s < k; ++s)
      for (int64_t r = 0; r < k; ++r)
        if (s != r)
          pg.edges[GraphState::edge_index(k, s, r)] =
              g.edges[GraphState::edge_index(k, perm[s], perm[r])];
    auto a = interaction_step(net, g);
    auto b = interaction_step(net, pg);
    for (int64_t i = 0; i < k; ++i)
      EXPECT_TRUE(torch::allclose(b.nodes[i], a.nodes[perm[i]], 0, 1e-5));
    for (int64_t s = 0; s < k; ++s)
      for (int64_t r = 0; r < k; ++r)
        if (s != r)
          EXPECT_TRUE(torch::allclose(b.edges[GraphState::edge_index(k, s, r)],
                                      a.edges[GraphState::edge_index(k, perm[s], perm[r])],
                                      0, 1e-5));
  }
}

TEST(InteractionStep, BatchedMatchesSingle) {
  torch::manual_seed(4);
  InteractionNetwork net(3, 3, 8);
  auto nodes = torch::randn({5, 4, 3});
  auto out = interaction_step(net, GraphState::complete(nodes, 3));
  for (int64_t b = 0; b < 5; ++b) {
    auto one = interaction_step(net, GraphState::complete(nodes[b], 3));
    EXPECT_TRUE(torch::allclose(out.nodes[b], one.nodes, 0, 1e-6));
  }
}

TEST(CnnEncoder, OutputAndDeterminism) {
  torch::manual_seed(5);
  CnnKeypointEncoderImpl enc(16, 21);
  enc.eval();
  auto x = torch::rand({2, 16, 21, 21});
  auto a = enc.forward(x);
  EXPECT_EQ(a.sizes().vec(), (std::vector<int64_t>{2, 128}));
  EXPECT_TRUE(torch::equal(a, enc.forward(x)));
  EXPECT_THROW(enc.forward(torch::rand({2, 15, 21, 21})), ShapeError);
}

TEST(CnnEncoder, ZeroInputZeroBias) {
  CnnKeypointEncoderImpl enc(4, 10);
  zero_biases(enc);
  enc.eval();
  EXPECT_EQ(enc.forward(torch::zeros({3, 4, 10, 10})).abs().sum().item<float>(), 0.f);
}

TEST(Positional, ShapeAndFunction) {
  torch::manual_seed(6);
  PositionalEmbedding pe;
  auto c = torch::tensor({{0.2f, -0.4f}, {0.2f, -0.4f}, {0.5f, 0.1f}});
  auto e = pe->forward(c);
  EXPECT_EQ(e.sizes().vec(), (std::vector<int64_t>{3, 64}));
  EXPECT_TRUE(torch::equal(e[0], e[1]));
  EXPECT_FALSE(torch::allclose(e[0], e[2]));
}

TEST(Positional, DistinctAfterTraining) {
  torch::manual_seed(7);
  PositionalEmbedding pe;
  torch::optim::Adam opt(pe->parameters(), torch::optim::AdamOptions(1e-2));
  auto c = torch::rand({32, 2}) * 2 - 1;
  auto target = torch::cat({c, c.pow(2)}, -1).repeat({1, 16});
  for (int i = 0; i < 100; ++i) optimizer_step(opt, (pe->forward(c) - target).pow(2).mean());
  auto probe = pe->forward(torch::tensor({{-0.5f, 0.5f}, {0.5f, -0.5f}}));
  EXPECT_GT((probe[0] - probe[1]).abs().max().item<float>(), 1e-2f);
}

TEST(GnnEncoder, MatchesLoopTraceThreeKeypoints) {
  torch::manual_seed(8);
  GnnKeypointEncoderImpl enc(3, 4);
  enc.to(torch::kFloat64);
  auto feats = torch::randn({3, 4}, torch::kFloat64);
  auto centers = torch::rand({3, 2}, torch::kFloat64) * 2 - 1;
  auto out = enc.encode(feats, centers);
  auto ref = reference_gnn_encode(enc, to_rows(feats), to_rows(centers));
  ASSERT_EQ(out.numel(), static_cast<int64_t>(ref.size()));
  for (size_t i = 0; i < ref.size(); ++i)
    EXPECT_NEAR(out[i].item<double>(), ref[i], 1e-9);
}

TEST(GnnEncoder, ShapesAndZeroCase) {
  GnnKeypointEncoderImpl enc(5, 6);
  auto obs = torch::rand({2, 5, 8});
  EXPECT_EQ(enc.forward(obs).sizes().vec(), (std::vector<int64_t>{2, 128}));
  EXPECT_THROW(enc.forward(torch::rand({2, 4, 8})), ShapeError);
  zero_biases(enc);
  EXPECT_EQ(enc.encode(torch::zeros({5, 6}), torch::zeros({5, 2})).abs().sum().item<float>(),
            0.f);
}

TEST(GnnEncoder, NotPermutationInvariant) {
  torch::manual_seed(9);
  GnnKeypointEncoderImpl enc(4, 3);
  auto obs = torch::rand({1, 4, 5});
  auto a = enc.forward(obs);
  bool changed = false;
  for (auto perm : {std::vector<int64_t>{1, 0, 2, 3}, {3, 2, 1, 0}, {0, 2, 3, 1}})
    changed |= !torch::allclose(a, enc.forward(obs.index({torch::indexing::Slice(),
                                                           torch::tensor(perm)})));
  EXPECT_TRUE(changed);
}

TEST(EncoderFactory, Kinds) {
  EXPECT_EQ(make_state_encoder(EncoderKind::kIdentity, {5})->output_dim(), 5);
  EXPECT_EQ(make_state_encoder(EncoderKind::kCnn, {8, 21, 21})->output_dim(), 128);
  EXPECT_EQ(make_state_encoder(EncoderKind::kGnn, {6, 10})->output_dim(), 128);
  EXPECT_THROW(make_state_encoder(EncoderKind::kCnn, {8, 21}), ShapeError);
  EXPECT_EQ(encoder_kind_from_string(to_string(EncoderKind::kGnn)), EncoderKind::kGnn);
  EXPECT_THROW(encoder_kind_from_string("rnn"), ConfigError);
}
