#include "qvad/gradcheck_suite.h"

#include <cmath>
#include <functional>
#include <memory>

#include "qvad/association.h"
#include "qvad/generation.h"
#include "qvad/optim.h"

namespace qvad {

namespace {

constexpr double kLinearTolerance = 1e-6;
constexpr double kTolerance = 1e-4;

// Values in ±[0.2, 1.2], kept away from the relu kink at zero.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = uniform(std::move(shape), 1.0, rng);
  for (double& v : t.values()) v = v < 0 ? v - 0.2 : v + 0.2;
  return t;
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  Parameter& param(const std::string& name, Shape shape) {
    return store_.add(name + "#" + std::to_string(store_.all().size()),
                      away_from_zero(std::move(shape), rng_));
  }

  void check(const std::string& name, double tolerance, const std::vector<Parameter*>& params,
             const std::function<Var(Tape&)>& f) {
    const GradCheckResult r = grad_check(f, params);
    cases_.push_back({name, r.max_relative_error, tolerance, r.coordinates, r.worst});
  }

  Rng& rng() { return rng_; }
  std::vector<GradCheckCase> take() { return std::move(cases_); }

 private:
  Rng rng_;
  ParamStore store_;
  std::vector<GradCheckCase> cases_;
};

void op_cases(Suite& s) {
  Parameter& a = s.param("a", {3, 4});
  Parameter& b = s.param("b", {3, 4});
  Parameter& row = s.param("row", {1, 4});
  Parameter& m = s.param("m", {4, 5});
  Parameter& pos = s.param("pos", {3, 4});
  for (double& v : pos.value.values()) v = std::abs(v);

  // Each entry: name, tolerance, inputs, op.
  struct OpCase {
    const char* name;
    double tolerance;
    std::vector<Parameter*> inputs;
    std::function<Var(Tape&)> op;
  };
  const std::vector<std::uint32_t> gather_ids = {2, 0, 2, 1};
  const std::vector<std::uint32_t> targets = {1, 3, 0};
  const Mask mask = {1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0};

  std::vector<OpCase> cases = {
      {"add", kLinearTolerance, {&a, &b}, [&](Tape& t) { return add(t.param(a), t.param(b)); }},
      {"add_row_broadcast", kLinearTolerance, {&a, &row},
       [&](Tape& t) { return add(t.param(a), t.param(row)); }},
      {"sub", kLinearTolerance, {&a, &b}, [&](Tape& t) { return sub(t.param(a), t.param(b)); }},
      {"mul", kLinearTolerance, {&a, &b}, [&](Tape& t) { return mul(t.param(a), t.param(b)); }},
      {"mul_row_broadcast", kLinearTolerance, {&a, &row},
       [&](Tape& t) { return mul(t.param(a), t.param(row)); }},
      {"scale", kLinearTolerance, {&a}, [&](Tape& t) { return scale(t.param(a), -1.7); }},
      {"matmul", kLinearTolerance, {&a, &m},
       [&](Tape& t) { return matmul(t.param(a), t.param(m)); }},
      {"transpose", kLinearTolerance, {&a}, [&](Tape& t) { return transpose(t.param(a)); }},
      {"concat_cols", kLinearTolerance, {&a, &b},
       [&](Tape& t) { return concat_cols({t.param(a), t.param(b)}); }},
      {"concat_rows", kLinearTolerance, {&a, &row},
       [&](Tape& t) { return concat_rows({t.param(a), t.param(row)}); }},
      {"slice_rows", kLinearTolerance, {&a}, [&](Tape& t) { return slice_rows(t.param(a), 1, 2); }},
      {"slice_cols", kLinearTolerance, {&a}, [&](Tape& t) { return slice_cols(t.param(a), 1, 2); }},
      {"gather_rows", kLinearTolerance, {&a},
       [&](Tape& t) { return gather_rows(t.param(a), gather_ids); }},
      {"sum", kLinearTolerance, {&a}, [&](Tape& t) { return sum(t.param(a)); }},
      {"mean", kLinearTolerance, {&a}, [&](Tape& t) { return mean(t.param(a)); }},
      {"pick", kLinearTolerance, {&a}, [&](Tape& t) { return pick(t.param(a), 2, 1); }},
      {"tanh", kTolerance, {&a}, [&](Tape& t) { return tanh(t.param(a)); }},
      {"sigmoid", kTolerance, {&a}, [&](Tape& t) { return sigmoid(t.param(a)); }},
      {"relu", kTolerance, {&a}, [&](Tape& t) { return relu(t.param(a)); }},
      {"exp", kTolerance, {&a}, [&](Tape& t) { return exp(t.param(a)); }},
      {"log", kTolerance, {&pos}, [&](Tape& t) { return log(t.param(pos)); }},
      {"softmax_rows", kTolerance, {&a}, [&](Tape& t) { return softmax_rows(t.param(a)); }},
      {"softmax_rows_masked", kTolerance, {&a},
       [&](Tape& t) { return softmax_rows(t.param(a), mask); }},
      {"log_softmax_rows", kTolerance, {&a},
       [&](Tape& t) { return log_softmax_rows(t.param(a), mask); }},
      {"layer_norm", kTolerance, {&a, &row, &b},
       [&](Tape& t) {
         return layer_norm(t.param(a), t.param(row), slice_rows(t.param(b), 0, 1));
       }},
      {"cross_entropy", kTolerance, {&a},
       [&](Tape& t) { return cross_entropy(t.param(a), targets); }},
  };
  for (auto& c : cases) {
    const bool scalar_out = std::string(c.name) == "sum" || std::string(c.name) == "mean" ||
                            std::string(c.name) == "pick" ||
                            std::string(c.name) == "cross_entropy";
    // Tensor outputs are reduced with fixed random weights so every output
    // coordinate carries a distinct gradient.
    Tape probe(false);
    const Shape out_shape = c.op(probe).shape();
    auto weights = std::make_shared<Tensor>(uniform(out_shape, 1.0, s.rng()));
    auto f = [op = c.op, weights, scalar_out](Tape& t) {
      Var y = op(t);
      return scalar_out ? y : sum(mul(y, t.constant(*weights)));
    };
    s.check(std::string("op/") + c.name, c.tolerance, c.inputs, f);
  }
}

void layer_cases(Suite& s) {
  ParamStore store;
  Rng& rng = s.rng();
  const std::size_t n = 4, d = 6;
  Parameter& h = store.add("h", away_from_zero({n, d}, rng));
  Parameter& w = store.add("w", xavier_uniform(d, d, rng));
  // Path graph 0-1-2 plus isolated node 3.
  const Tensor adj = normalized_adjacency(n, std::vector<LocalEdge>{{0, 1, 1.5}, {1, 2, 1.2}});
  auto proj = std::make_shared<Tensor>(uniform({n, d}, 1.0, rng));
  s.check("layer/gcn_layer", kTolerance, {&h, &w}, [&, adj, proj](Tape& t) {
    return sum(mul(gcn_layer(t.param(h), t.constant(adj), t.param(w)), t.constant(*proj)));
  });

  LstmCell cell(store, "lstm", d, d, rng);
  for (double& v : cell.bias()->value.values()) v = uniform({1, 1}, 0.5, rng)[0];
  Parameter& c0 = store.add("c0", away_from_zero({n, d}, rng));
  s.check("layer/lstm_cell", kTolerance,
          {&h, &c0, cell.input_weight(), cell.hidden_weight(), cell.bias()},
          [&, proj](Tape& t) {
            const LstmState st = cell(t.param(h), {t.param(h), t.param(c0)});
            return add(sum(mul(st.h, t.constant(*proj))), sum(mul(st.c, t.constant(*proj))));
          });

  AttnPooling pool(store, "pool", d, rng);
  auto proj_row = std::make_shared<Tensor>(uniform({1, d}, 1.0, rng));
  s.check("layer/attn_pooling", kTolerance, {&h, pool.projection(), pool.context()},
          [&, proj_row](Tape& t) { return sum(mul(pool(t.param(h)), t.constant(*proj_row))); });

  MultiHeadAttention mha(store, "mha", d, 2, rng);
  Parameter& mem = store.add("mem", away_from_zero({3, d}, rng));
  const Mask cross = {1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 1, 1};
  auto proj_q = std::make_shared<Tensor>(uniform({n, d}, 1.0, rng));
  std::vector<Parameter*> mha_params = {&h, &mem};
  for (Parameter* p : store.with_prefix("mha")) mha_params.push_back(p);
  s.check("layer/multi_head_attention", kTolerance, mha_params, [&, cross, proj_q](Tape& t) {
    return sum(mul(mha(t.param(h), t.param(mem), cross), t.constant(*proj_q)));
  });

  EncoderBlock enc(store, "encblk", d, 2, 8, rng);
  std::vector<Parameter*> enc_params = {&h};
  for (Parameter* p : store.with_prefix("encblk")) enc_params.push_back(p);
  s.check("layer/encoder_block", kTolerance, enc_params, [&, proj_q](Tape& t) {
    return sum(mul(enc(t.param(h)), t.constant(*proj_q)));
  });

  DecoderBlock dec(store, "decblk", d, 2, 8, rng);
  std::vector<Parameter*> dec_params = {&h, &mem};
  for (Parameter* p : store.with_prefix("decblk")) dec_params.push_back(p);
  const Mask causal = causal_mask(n);
  s.check("layer/decoder_block", kTolerance, dec_params, [&, causal, proj_q](Tape& t) {
    return sum(mul(dec(t.param(h), t.param(mem), causal, Mask{}), t.constant(*proj_q)));
  });
}

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 24;
  c.embedding_dim = 6;
  c.hidden_dim = 8;
  c.heads = 2;
  c.ffn_dim = 12;
  c.max_decode_length = 6;
  return c;
}

// Five-node sub-graph: three keywords, one query word, one associated word.
SubGraph small_subgraph() {
  Akwg graph(24, 1.0, 20);
  graph.add_edge(4, 5, 1.4);
  graph.add_edge(5, 6, 1.1);
  graph.add_edge(6, 8, 2.0);
  graph.add_edge(7, 8, 1.3);
  graph.sort_neighbors();
  const std::vector<TypedWord> words = {
      {4, NodeType::kKeyword}, {5, NodeType::kKeyword}, {6, NodeType::kKeyword},
      {7, NodeType::kQuery}};
  const std::vector<WordId> chosen = {8};
  return extend_subgraph(build_subgraph(words, graph), chosen, graph);
}

void model_cases(Suite& s) {
  const ModelConfig config = small_config();
  const SubGraph sub = small_subgraph();
  {
    ParamStore store;
    Rng rng(s.rng()());
    AssociationModule assoc(store, config, rng);
    const std::vector<WordId> cands = {9, 10, 11};
    auto weights = std::make_shared<Tensor>(uniform({1, 3}, 1.0, rng));
    // The softmax over scores cancels the global term, so the head also reads
    // g^L directly to exercise the encoder path.
    auto gw = std::make_shared<Tensor>(uniform({1, config.hidden_dim}, 1.0, rng));
    s.check("model/gated_gcn_score_head", kTolerance, store.all(), [&, weights, gw](Tape& t) {
      const auto enc = assoc.encode(t, sub);
      const Var scores = assoc.score(enc.global, cands);
      return add(sum(mul(scores, t.constant(*weights))), sum(mul(enc.global, t.constant(*gw))));
    });
  }
  {
    ParamStore store;
    Rng rng(s.rng()());
    GenerationModule gen(store, config, rng);
    const std::vector<WordId> target = {kBos, 12, 13, 14, kEos};
    s.check("model/encode_graph_decode_train", kTolerance, store.all(), [&](Tape& t) {
      return gen.decode_train(gen.encode_graph(t, sub), target).loss;
    });
  }
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed) {
  Suite suite(seed);
  op_cases(suite);
  layer_cases(suite);
  model_cases(suite);
  return suite.take();
}

}  // namespace qvad
