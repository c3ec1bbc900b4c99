#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "qvad/error.h"
#include "qvad/trainer.h"
#include "support/synthetic.h"

using namespace qvad;

namespace {

struct Toy {
  std::vector<Record> records;
  Vocab vocab;
  Akwg graph;
  RunConfig config;
};

Toy make_toy(std::size_t n = 12) {
  Toy t;
  t.records = qvad::testing::toy_corpus();
  t.records.resize(n);
  t.vocab = build_vocab(t.records, 1000);
  std::vector<std::vector<WordId>> docs;
  for (const Record& r : t.records) docs.push_back(encode_words(r.ad_text, t.vocab));
  t.graph = build_graph(count_cooccurrence(docs), 1.0, 20, t.vocab.size());
  RunConfig& c = t.config;
  c.model.vocab_size = t.vocab.size();
  c.model.embedding_dim = 8;
  c.model.hidden_dim = 12;
  c.model.heads = 2;
  c.model.ffn_dim = 16;
  c.model.decoder_layers = 2;
  c.phi = 2;
  c.batch_size = 4;
  c.learning_rate = 3e-3;
  c.rl_learning_rate = 1e-2;
  c.stage1_epochs = 6;
  c.stage2_epochs = 2;
  c.stage3_epochs = 2;
  c.seed = 13;
  return t;
}

std::vector<Tensor> snapshot(Model& m, const std::string& prefix) {
  std::vector<Tensor> out;
  for (Parameter* p : m.params().with_prefix(prefix)) out.push_back(p->value);
  return out;
}

std::unordered_set<WordId> ids_of(const std::vector<std::string>& words, const Vocab& v) {
  std::unordered_set<WordId> out;
  for (const auto& w : words) out.insert(v.id(w));
  return out;
}

}  // namespace

TEST(PrepareInput, TrainingUsesKeywordsOnly) {
  const Toy t = make_toy();
  for (const Record& r : t.records) {
    const SubGraph s = prepare_train_input(r, t.vocab, t.graph);
    EXPECT_EQ(s.node_ids, encode_words(r.keywords, t.vocab));
    for (NodeType type : s.node_types) EXPECT_EQ(type, NodeType::kKeyword);
    for (const LocalEdge& e : s.edges) {
      EXPECT_TRUE(t.graph.edge(s.node_ids[e.a], s.node_ids[e.b]));
    }
  }
}

TEST(PrepareInput, InferenceMergesQueryWithoutStopWords) {
  Vocab v;
  for (const char* w : {"the", "camera", "phone", "sale", "new"}) v.add(w);
  const Akwg g(v.size(), 1.0, 20);
  const Record r{{"the", "camera"}, {"phone", "sale", "new"}, {"x"}, {}};
  const SubGraph s = prepare_infer_input(r, v, g, {"the"});
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s.node_ids.back(), v.id("camera"));
  EXPECT_EQ(s.node_types.back(), NodeType::kQuery);
  EXPECT_EQ(s.norm_adj, Tensor::identity(4));

  const Record overlap{{"phone", "camera"}, {"phone", "sale", "new"}, {"x"}, {}};
  const SubGraph o = prepare_infer_input(overlap, v, g, {});
  ASSERT_EQ(o.size(), 4u);
  EXPECT_EQ(o.node_types[0], NodeType::kKeyword);

  const Record stops{{"the"}, {"phone", "sale", "new"}, {"x"}, {}};
  EXPECT_EQ(prepare_infer_input(stops, v, g, {"the"}).size(), 3u);
}

TEST(Policy, NamesRoundTrip) {
  for (auto p : {SelectionPolicy::kRandom, SelectionPolicy::kTopPmi, SelectionPolicy::kNoFilter,
                 SelectionPolicy::kLearned}) {
    EXPECT_EQ(parse_policy(policy_name(p)), p);
  }
  EXPECT_THROW(parse_policy("best"), UsageError);
}

TEST(Policy, CandidateChoices) {
  const Toy t = make_toy();
  Model model(t.config.model, 1);
  Rng rng(4);
  for (const Record& r : t.records) {
    const SubGraph s = prepare_train_input(r, t.vocab, t.graph);
    const auto cands = one_hop_candidates(s, t.graph);
    std::vector<WordId> ids;
    std::vector<double> weights;
    for (const auto& c : cands) {
      ids.push_back(c.id);
      weights.push_back(c.max_weight());
    }
    const auto all = choose_candidates(SelectionPolicy::kNoFilter, model, s, t.graph, 2, rng);
    EXPECT_EQ(all, ids);
    EXPECT_EQ(choose_candidates(SelectionPolicy::kTopPmi, model, s, t.graph, 2, rng),
              select_top_phi(weights, ids, 2));
    const auto random = choose_candidates(SelectionPolicy::kRandom, model, s, t.graph, 2, rng);
    EXPECT_EQ(random.size(), std::min<std::size_t>(2, ids.size()));
    for (WordId w : random) EXPECT_NE(std::find(ids.begin(), ids.end(), w), ids.end());
    const auto learned = choose_candidates(SelectionPolicy::kLearned, model, s, t.graph, 2, rng);
    if (!ids.empty()) {
      Tape tape(false);
      const auto enc = model.association().encode(tape, s);
      const Tensor sc = model.association().score(enc.global, ids).value();
      const std::vector<double> scores(sc.values().begin(), sc.values().end());
      EXPECT_EQ(learned, select_top_phi(scores, ids, 2));
    } else {
      EXPECT_TRUE(learned.empty());
    }
  }
}

TEST(EpochLog, CsvLine) {
  EXPECT_EQ(epoch_log_header(), "stage,epoch,loss,mean_reward,seconds");
  EXPECT_EQ(epoch_log_line({2, 3, 0.5, 0.25, 1.0}), "2,3,0.5,0.25,1.000");
}

TEST(Stage1, LossDecreasesAndNoQueryEverEnters) {
  const Toy t = make_toy();
  Model model(t.config.model, t.config.seed);
  TrainingData data{&t.vocab, &t.graph, t.records};
  Trainer trainer(model, data, t.config);
  std::size_t events = 0;
  trainer.set_observer([&](const SubGraphEvent& e) {
    ++events;
    EXPECT_EQ(e.phase, SubGraphEvent::Phase::kTrain);
    const Record& r = t.records[e.record];
    const auto kw = ids_of(r.keywords, t.vocab);
    for (std::size_t i = 0; i < e.base->size(); ++i) {
      EXPECT_TRUE(kw.count(e.base->node_ids[i]));
      EXPECT_NE(e.base->node_types[i], NodeType::kQuery);
    }
    for (NodeType type : e.extended->node_types) EXPECT_NE(type, NodeType::kQuery);
  });
  const auto logs = trainer.stage1();
  ASSERT_EQ(logs.size(), 6u);
  EXPECT_EQ(events, 6u * t.records.size());
  EXPECT_LT(logs.back().loss, logs.front().loss);
  for (const Parameter* p : model.params().all()) EXPECT_TRUE(p->value.all_finite()) << p->name;
}

TEST(Stage1, ZeroPhiRunsWithoutAssociation) {
  Toy t = make_toy(6);
  t.config.phi = 0;
  t.config.stage1_epochs = 1;
  Model model(t.config.model, 2);
  TrainingData data{&t.vocab, &t.graph, t.records};
  Trainer trainer(model, data, t.config);
  trainer.set_observer([](const SubGraphEvent& e) { EXPECT_EQ(e.extended->size(), e.base->size()); });
  EXPECT_EQ(trainer.stage1().size(), 1u);
}

TEST(Stage1, LeavesAssociationUntouchedAndIsReproducible) {
  const Toy t = make_toy(8);
  auto run = [&] {
    Model model(t.config.model, t.config.seed);
    model.round_to_float();  // stage exit rounds every parameter
    const auto assoc = snapshot(model, "assoc.");
    TrainingData data{&t.vocab, &t.graph, t.records};
    Trainer(model, data, t.config).stage1();
    EXPECT_EQ(snapshot(model, "assoc."), assoc);
    return snapshot(model, "gen.");
  };
  EXPECT_EQ(run(), run());
}

TEST(Stages, FreezeContractsAndLogs) {
  const Toy t = make_toy();
  Model model(t.config.model, t.config.seed);
  TrainingData data{&t.vocab, &t.graph, t.records};
  Trainer trainer(model, data, t.config);
  trainer.stage1();

  const auto gen_before = snapshot(model, "gen.");
  std::ostringstream dump;
  trainer.set_selection_dump(&dump);
  const auto logs2 = trainer.stage2();
  EXPECT_EQ(snapshot(model, "gen."), gen_before);
  ASSERT_EQ(logs2.size(), 3u);  // evaluation pass plus two epochs
  EXPECT_EQ(logs2.front().epoch, 0u);
  for (const auto& l : logs2) {
    EXPECT_GT(l.mean_reward, 0.0);
    EXPECT_LE(l.mean_reward, 1.0);
  }
  std::istringstream lines(dump.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"example", "epoch", "candidates", "scores", "chosen", "reward"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_EQ(j["candidates"].size(), j["scores"].size());
    EXPECT_LE(j["chosen"].size(), t.config.phi);
    ++n;
  }
  EXPECT_GT(n, 0u);

  const double exit_loss = trainer.dataset_loss(SelectionPolicy::kLearned, 1);
  const auto assoc_before = snapshot(model, "assoc.");
  const auto logs3 = trainer.stage3();
  EXPECT_EQ(snapshot(model, "assoc."), assoc_before);
  EXPECT_EQ(logs3.size(), 2u);
  EXPECT_LE(trainer.dataset_loss(SelectionPolicy::kLearned, 1), exit_loss);
}

TEST(Stage2, EmbeddingsCopiedFromGenerator) {
  const Toy t = make_toy(4);
  Model model(t.config.model, 3);
  EXPECT_NE(model.association().word_embedding().value, model.generation().word_embedding().value);
  model.copy_embeddings_to_association();
  EXPECT_EQ(model.association().word_embedding().value, model.generation().word_embedding().value);
  EXPECT_EQ(model.association().type_embedding().value, model.generation().type_embedding().value);
}

TEST(Stage3, SelectionStableAcrossEpochs) {
  Toy t = make_toy(6);
  t.config.stage1_epochs = 1;
  t.config.stage3_epochs = 3;
  Model model(t.config.model, 5);
  TrainingData data{&t.vocab, &t.graph, t.records};
  Trainer trainer(model, data, t.config);
  trainer.stage1();
  std::map<std::size_t, std::vector<WordId>> seen;
  trainer.set_observer([&](const SubGraphEvent& e) {
    auto [it, fresh] = seen.emplace(e.record, e.extended->node_ids);
    if (!fresh) EXPECT_EQ(it->second, e.extended->node_ids);
  });
  trainer.stage3();
  EXPECT_EQ(seen.size(), t.records.size());
}

TEST(Checkpoint, RoundTripAndStageTag) {
  const Toy t = make_toy(4);
  const auto dir = qvad::testing::scratch_dir("ckpt");
  Model a(t.config.model, 1);
  a.round_to_float();
  a.save(dir / "s1.ckpt", 1);
  EXPECT_EQ(Model::checkpoint_stage(dir / "s1.ckpt"), 1u);
  Model b(t.config.model, 2);
  EXPECT_EQ(b.load(dir / "s1.ckpt", 1), 1u);
  for (std::size_t i = 0; i < a.params().all().size(); ++i) {
    EXPECT_EQ(a.params().all()[i]->value, b.params().all()[i]->value);
  }
  Model c(t.config.model, 3);
  const auto before = snapshot(c, "");
  EXPECT_THROW(c.load(dir / "s1.ckpt", 2), DataError);
  EXPECT_EQ(snapshot(c, ""), before);
}

TEST(Checkpoint, RejectsOtherConfigAndCorruption) {
  const Toy t = make_toy(4);
  const auto dir = qvad::testing::scratch_dir("ckpt_bad");
  Model a(t.config.model, 1);
  a.save(dir / "a.ckpt", 1);
  ModelConfig other = t.config.model;
  other.hidden_dim = 16;
  Model b(other, 1);
  EXPECT_THROW(b.load(dir / "a.ckpt"), DataError);
  // Truncated file.
  std::ifstream in(dir / "a.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  Model c(t.config.model, 4);
  const auto before = snapshot(c, "");
  EXPECT_THROW(c.load(dir / "cut.ckpt"), DataError);
  EXPECT_EQ(snapshot(c, ""), before);
  EXPECT_THROW(c.load(dir / "none.ckpt"), DataError);
}

TEST(GenerateAll, QueryContractAndJson) {
  const Toy t = make_toy(8);
  Model model(t.config.model, 1);
  GenerateOptions opts;
  opts.phi = 2;
  opts.policy = SelectionPolicy::kTopPmi;
  const StopWords stop = qvad::testing::toy_stopwords();
  std::size_t query_nodes = 0;
  const auto with_q = generate_all(model, t.vocab, t.graph, t.records, stop, opts,
                                   [&](const SubGraphEvent& e) {
                                     EXPECT_EQ(e.phase, SubGraphEvent::Phase::kInfer);
                                     const Record& r = t.records[e.record];
                                     for (const auto& w : remove_stopwords(r.query, stop)) {
                                       EXPECT_TRUE(e.base->contains(t.vocab.id(w))) << w;
                                     }
                                     for (NodeType type : e.base->node_types) {
                                       query_nodes += type == NodeType::kQuery;
                                     }
                                   });
  EXPECT_GT(query_nodes, 0u);
  ASSERT_EQ(with_q.size(), t.records.size());
  opts.use_query = false;
  generate_all(model, t.vocab, t.graph, t.records, stop, opts, [&](const SubGraphEvent& e) {
    for (NodeType type : e.base->node_types) EXPECT_NE(type, NodeType::kQuery);
  });
  const Generation& g = with_q.front();
  const Generation back = generation_from_json(generation_to_json(g));
  EXPECT_EQ(back.item, g.item);
  EXPECT_EQ(back.query, g.query);
  EXPECT_EQ(back.text, g.text);
  EXPECT_EQ(back.text_keywords, g.text_keywords);
  EXPECT_EQ(back.associated, g.associated);
  EXPECT_THROW(generation_from_json("{\"item\": 3}"), DataError);
  EXPECT_THROW(generation_from_json("not json"), DataError);
}
