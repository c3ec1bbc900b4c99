#include <gtest/gtest.h>

#include <cmath>

#include "qvad/error.h"
#include "qvad/generation.h"

using namespace qvad;

namespace {

ModelConfig small_config(std::size_t vocab = 30) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embedding_dim = 8;
  c.hidden_dim = 12;
  c.gcn_layers = 2;
  c.encoder_layers = 2;
  c.decoder_layers = 3;
  c.heads = 3;
  c.ffn_dim = 16;
  c.max_decode_length = 6;
  return c;
}

Akwg graph() {
  Akwg g(30, 1.0, 20);
  g.add_edge(4, 5, 1.4);
  g.add_edge(5, 6, 1.9);
  g.add_edge(6, 7, 1.2);
  g.sort_neighbors();
  return g;
}

SubGraph sub_of(std::vector<TypedWord> words) { return build_subgraph(words, graph()); }

struct Fixture {
  explicit Fixture(ModelConfig cfg = small_config(), std::uint64_t seed = 3)
      : config(cfg), rng(seed), gen(store, config, rng) {}
  ModelConfig config;
  ParamStore store;
  Rng rng;
  GenerationModule gen;
};

}  // namespace

TEST(EmbedNodes, ShapeAndTypeOffsets) {
  Fixture f;
  Tape tape;
  const SubGraph s = sub_of({{4, NodeType::kKeyword}, {5, NodeType::kQuery}, {6, NodeType::kKeyword}});
  const Tensor x = f.gen.embed_nodes(tape, s).value();
  EXPECT_EQ(x.shape(), (Shape{3, 8}));
  SubGraph as = s;
  as.node_types[0] = NodeType::kAssociated;
  const Tensor y = f.gen.embed_nodes(tape, as).value();
  const Tensor& t = f.gen.type_embedding().value;
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(x(0, c) - y(0, c), t(0, c) - t(2, c), 1e-15);
}

TEST(EmbedNodes, ZeroTypeEmbeddingGivesWordEmbedding) {
  Fixture f;
  f.gen.type_embedding().value.fill(0.0);
  Tape tape;
  const Tensor x = f.gen.embed_nodes(tape, sub_of({{7, NodeType::kQuery}})).value();
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(x[c], f.gen.word_embedding().value(7, c));
}

TEST(EncodeGraph, SingleNodeShape) {
  Fixture f;
  Tape tape;
  const EncodedGraph e = f.gen.encode_graph(tape, sub_of({{4, NodeType::kKeyword}}));
  EXPECT_EQ(e.memories.shape(), (Shape{1, 12}));
  EXPECT_EQ(e.source_mask, (Mask{1}));
  EXPECT_THROW(f.gen.encode_graph(tape, SubGraph{}), DataError);
}

TEST(EncodeGraph, PermutedNodesPermuteMemories) {
  Fixture f;
  Tape tape;
  const SubGraph a = sub_of({{4, NodeType::kKeyword}, {5, NodeType::kKeyword},
                             {6, NodeType::kQuery}, {9, NodeType::kKeyword}});
  const SubGraph b = sub_of({{9, NodeType::kKeyword}, {6, NodeType::kQuery},
                             {4, NodeType::kKeyword}, {5, NodeType::kKeyword}});
  const Tensor ma = f.gen.encode_graph(tape, a).memories.value();
  const Tensor mb = f.gen.encode_graph(tape, b).memories.value();
  const std::size_t map_b_to_a[4] = {3, 2, 0, 1};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 12; ++c) EXPECT_NEAR(mb(r, c), ma(map_b_to_a[r], c), 1e-6);
  }
}

TEST(DecodeTrain, LossIsMeanOfStepCrossEntropies) {
  Fixture f;
  Tape tape;
  const EncodedGraph e = f.gen.encode_graph(tape, sub_of({{4, NodeType::kKeyword}, {5, NodeType::kKeyword}}));
  const std::vector<WordId> target = {kBos, 11, kEos};
  const DecodeOutput out = f.gen.decode_train(e, target);
  const Tensor& logits = out.logits.value();
  ASSERT_EQ(logits.shape(), (Shape{2, 30}));
  double ce = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    double mx = -1e300, z = 0.0;
    for (std::size_t c = 0; c < 30; ++c) mx = std::max(mx, logits(r, c));
    for (std::size_t c = 0; c < 30; ++c) z += std::exp(logits(r, c) - mx);
    ce += -(logits(r, target[r + 1]) - mx - std::log(z)) / 2.0;
  }
  EXPECT_NEAR(out.loss.value()[0], ce, 1e-12);
}

TEST(DecodeTrain, GoldProbabilitiesAgreeWithLoss) {
  Fixture f;
  const SubGraph s = sub_of({{4, NodeType::kKeyword}, {6, NodeType::kKeyword}});
  const std::vector<WordId> target = {kBos, 11, 12, 13, kEos};
  Tape tape;
  const double loss = f.gen.decode_train(f.gen.encode_graph(tape, s), target).loss.value()[0];
  const auto probs = f.gen.gold_probabilities(s, target);
  ASSERT_EQ(probs.size(), 4u);
  double ce = 0.0;
  for (double p : probs) ce -= std::log(p) / 4.0;
  EXPECT_NEAR(ce, loss, 1e-12);
}

TEST(DecodeTrain, UntrainedLossNearLogV) {
  ModelConfig cfg;  // default dimensions
  cfg.vocab_size = 1000;
  Fixture f(cfg, 9);
  Tape tape;
  const EncodedGraph e = f.gen.encode_graph(tape, sub_of({{4, NodeType::kKeyword}, {5, NodeType::kKeyword},
                                                          {6, NodeType::kKeyword}}));
  const std::vector<WordId> target = {kBos, 100, 200, 300, 400, 500, kEos};
  const double loss = f.gen.decode_train(e, target).loss.value()[0];
  EXPECT_NEAR(loss, std::log(1000.0), 0.1 * std::log(1000.0));
}

TEST(DecodeTrain, LengthErrors) {
  Fixture f;
  Tape tape;
  const EncodedGraph e = f.gen.encode_graph(tape, sub_of({{4, NodeType::kKeyword}}));
  const std::vector<WordId> too_long(f.gen.max_target_length() + 1, 11);
  EXPECT_THROW(f.gen.decode_train(e, too_long), Error);
  const std::vector<WordId> too_short = {kBos};
  EXPECT_THROW(f.gen.decode_train(e, too_short), Error);
  const std::vector<WordId> max_ok(f.gen.max_target_length(), 11);
  EXPECT_NO_THROW(f.gen.decode_train(e, max_ok));
}

TEST(Generate, ForcedTokenRepeatsToMaxLength) {
  Fixture f;
  f.gen.output_bias().value[17] = 1e6;
  const SubGraph s = sub_of({{4, NodeType::kKeyword}});
  const auto out = f.gen.generate(s, DecodeMode::kGreedy, 1, 6);
  EXPECT_EQ(out, std::vector<WordId>(6, 17));
  EXPECT_EQ(f.gen.generate(s, DecodeMode::kBeam, 3, 6), out);
  EXPECT_EQ(f.gen.generate(s, DecodeMode::kGreedy, 1, 3).size(), 3u);
}

TEST(Generate, ForcedEosGivesEmptyText) {
  Fixture f;
  f.gen.output_bias().value[kEos] = 1e6;
  const SubGraph s = sub_of({{4, NodeType::kKeyword}, {5, NodeType::kKeyword}});
  EXPECT_TRUE(f.gen.generate(s, DecodeMode::kGreedy, 1, 6).empty());
  EXPECT_TRUE(f.gen.generate(s, DecodeMode::kBeam, 4, 6).empty());
}

TEST(Generate, BeamOfOneEqualsGreedy) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    Fixture f(small_config(), seed);
    const SubGraph s = sub_of({{4, NodeType::kKeyword}, {5, NodeType::kQuery}, {6, NodeType::kKeyword}});
    EXPECT_EQ(f.gen.generate(s, DecodeMode::kBeam, 1, 6), f.gen.generate(s, DecodeMode::kGreedy, 1, 6));
  }
}

TEST(Generate, DeterministicAndBounded) {
  Fixture f(small_config(), 5);
  const SubGraph s = sub_of({{4, NodeType::kKeyword}, {7, NodeType::kKeyword}});
  const auto a = f.gen.generate(s, DecodeMode::kBeam, 4, 6);
  EXPECT_EQ(a, f.gen.generate(s, DecodeMode::kBeam, 4, 6));
  EXPECT_LE(a.size(), 6u);
  for (WordId w : a) {
    EXPECT_NE(w, kEos);
    EXPECT_NE(w, kBos);
  }
}

TEST(Generate, GreedyInvariantUnderNodePermutation) {
  Fixture f(small_config(), 6);
  const SubGraph a = sub_of({{4, NodeType::kKeyword}, {5, NodeType::kKeyword}, {6, NodeType::kQuery}});
  const SubGraph b = sub_of({{6, NodeType::kQuery}, {4, NodeType::kKeyword}, {5, NodeType::kKeyword}});
  EXPECT_EQ(f.gen.generate(a, DecodeMode::kGreedy, 1, 6), f.gen.generate(b, DecodeMode::kGreedy, 1, 6));
}

TEST(Positions, SinusoidalValues) {
  const Tensor pe = sinusoidal_positions(5, 6);
  EXPECT_EQ(pe.shape(), (Shape{5, 6}));
  EXPECT_EQ(pe(0, 0), 0.0);
  EXPECT_EQ(pe(0, 1), 1.0);
  EXPECT_NEAR(pe(3, 0), std::sin(3.0), 1e-15);
  EXPECT_NEAR(pe(3, 2), std::sin(3.0 / std::pow(10000.0, 2.0 / 6.0)), 1e-15);
  EXPECT_NEAR(pe(2, 5), std::cos(2.0 / std::pow(10000.0, 4.0 / 6.0)), 1e-15);
}
